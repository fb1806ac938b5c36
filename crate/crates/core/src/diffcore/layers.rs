//! Parameterized building blocks. Each layer owns only its parameter names
//! and sizes; values live in a [`ParamStore`] and are read through a [`Ctx`].

use rand::Rng;

use super::ops::{AttentionSpec, MapLayout};
use super::params::{Ctx, ParamKind, ParamStore};
use super::tape::{concat_cols, concat_rows, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn check_cols(layer: &str, x: &Var<'_>, expected: usize) -> Result<()> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != expected {
        return Err(Error::dim(layer, format!("expected input [*, {expected}] (axis 1), got {shape:?}")));
    }
    Ok(())
}

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(&[rows, cols], bound, rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Self { name: name.into(), input, output }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        store.add(format!("{}.weight", self.name), xavier(self.input, self.output, rng), ParamKind::Trainable)?;
        store.add(format!("{}.bias", self.name), Tensor::zeros(&[self.output]), ParamKind::Trainable)
    }

    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, x: Var<'a>) -> Result<Var<'a>> {
        check_cols(&self.name, &x, self.input)?;
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let b = ctx.param(&format!("{}.bias", self.name))?;
        Ok(x.matmul(w).add_row(b))
    }
}

/// 3x3 same-padding convolution over a ragged batch of maps.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Conv3x3 {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Self { name: name.into(), input, output }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let fan_in = 9 * self.input;
        let w = Tensor::randn(&[fan_in, self.output], (2.0 / fan_in as f64).sqrt(), rng);
        store.add(format!("{}.weight", self.name), w, ParamKind::Trainable)?;
        store.add(format!("{}.bias", self.name), Tensor::zeros(&[self.output]), ParamKind::Trainable)
    }

    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, x: Var<'a>, layout: &MapLayout) -> Result<Var<'a>> {
        check_cols(&self.name, &x, self.input)?;
        if x.shape()[0] != layout.positions() {
            return Err(Error::dim(
                &self.name,
                format!("axis 0 has {} rows but layout covers {} positions", x.shape()[0], layout.positions()),
            ));
        }
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let b = ctx.param(&format!("{}.bias", self.name))?;
        Ok(x.conv3x3(w, b, layout))
    }
}

/// Per-channel batch normalization over rows.
///
/// Training uses batch statistics and folds them into running buffers as
/// `running = momentum * running + (1 - momentum) * batch`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self { name: name.into(), channels, eps: 1e-5, momentum: 0.9 }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        let c = self.channels;
        store.add(format!("{}.gamma", self.name), Tensor::full(&[c], 1.0), ParamKind::Trainable)?;
        store.add(format!("{}.beta", self.name), Tensor::zeros(&[c]), ParamKind::Trainable)?;
        store.add(format!("{}.running_mean", self.name), Tensor::zeros(&[c]), ParamKind::Buffer)?;
        store.add(format!("{}.running_var", self.name), Tensor::full(&[c], 1.0), ParamKind::Buffer)
    }

    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, x: Var<'a>) -> Result<Var<'a>> {
        check_cols(&self.name, &x, self.channels)?;
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        let mean_name = format!("{}.running_mean", self.name);
        let var_name = format!("{}.running_var", self.name);
        let running_mean = ctx.params.value(&mean_name)?;
        let running_var = ctx.params.value(&var_name)?;
        if ctx.training() {
            let (y, mean, var) = x.batch_norm_train(gamma, beta, self.eps);
            let m = self.momentum;
            let blend = |old: &Tensor, new: &[f64]| {
                Tensor::vector(old.data().iter().zip(new).map(|(o, n)| m * o + (1.0 - m) * n).collect())
            };
            ctx.record_stat(mean_name, blend(running_mean, &mean));
            ctx.record_stat(var_name, blend(running_var, &var));
            Ok(y)
        } else {
            Ok(x.batch_norm_eval(gamma, beta, running_mean.data(), running_var.data(), self.eps))
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim, eps: 1e-5 }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        store.add(format!("{}.gamma", self.name), Tensor::full(&[self.dim], 1.0), ParamKind::Trainable)?;
        store.add(format!("{}.beta", self.name), Tensor::zeros(&[self.dim]), ParamKind::Trainable)
    }

    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, x: Var<'a>) -> Result<Var<'a>> {
        check_cols(&self.name, &x, self.dim)?;
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        Ok(x.layer_norm(gamma, beta, self.eps))
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub name: String,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, rows: usize, dim: usize) -> Self {
        Self { name: name.into(), rows, dim }
    }

    pub fn table_name(&self) -> String {
        format!("{}.table", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        store.add(self.table_name(), Tensor::randn(&[self.rows, self.dim], 0.1, rng), ParamKind::Trainable)
    }

    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, indices: &[usize]) -> Result<Var<'a>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.rows) {
            return Err(Error::Lookup(format!("{}: index {bad} outside table of {} rows", self.name, self.rows)));
        }
        if indices.is_empty() {
            return Err(Error::dim(&self.name, "empty index list"));
        }
        Ok(ctx.param(&self.table_name())?.gather_rows(indices))
    }
}

/// Gated recurrent unit with gate order (reset, update, candidate):
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self { name: name.into(), input, hidden }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let h = self.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        store.add(format!("{}.w_ih", self.name), Tensor::uniform(&[self.input, 3 * h], bound, rng), ParamKind::Trainable)?;
        store.add(format!("{}.w_hh", self.name), Tensor::uniform(&[h, 3 * h], bound, rng), ParamKind::Trainable)?;
        store.add(format!("{}.b_ih", self.name), Tensor::uniform(&[3 * h], bound, rng), ParamKind::Trainable)?;
        store.add(format!("{}.b_hh", self.name), Tensor::uniform(&[3 * h], bound, rng), ParamKind::Trainable)
    }

    /// Input projections `x W_ih + b_ih` for any number of rows.
    pub fn project_input<'a>(&self, ctx: &Ctx<'a, '_>, x: Var<'a>) -> Result<Var<'a>> {
        check_cols(&self.name, &x, self.input)?;
        let w = ctx.param(&format!("{}.w_ih", self.name))?;
        let b = ctx.param(&format!("{}.b_ih", self.name))?;
        Ok(x.matmul(w).add_row(b))
    }

    /// One update from pre-projected input `[B, 3h]` and state `[B, h]`.
    pub fn step_projected<'a>(&self, ctx: &Ctx<'a, '_>, xi: Var<'a>, h: Var<'a>) -> Result<Var<'a>> {
        check_cols(&self.name, &h, self.hidden)?;
        let hd = self.hidden;
        let w = ctx.param(&format!("{}.w_hh", self.name))?;
        let b = ctx.param(&format!("{}.b_hh", self.name))?;
        let hp = h.matmul(w).add_row(b);
        let r = xi.cols(0, hd).add(hp.cols(0, hd)).sigmoid();
        let z = xi.cols(hd, hd).add(hp.cols(hd, hd)).sigmoid();
        let n = xi.cols(2 * hd, hd).add(r.mul(hp.cols(2 * hd, hd))).tanh();
        Ok(z.one_minus().mul(n).add(z.mul(h)))
    }

    pub fn step<'a>(&self, ctx: &Ctx<'a, '_>, x: Var<'a>, h: Var<'a>) -> Result<Var<'a>> {
        let xi = self.project_input(ctx, x)?;
        self.step_projected(ctx, xi, h)
    }
}

/// Stacked bidirectional GRU over a padded batch laid out time-major:
/// row `t * batch + b` holds step `t` of sequence `b`.
///
/// Steps beyond a sequence's length carry the previous state unchanged, so
/// the backward direction starts from zeros at each sequence's true end.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl BiGru {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize, layers: usize) -> Self {
        Self { name: name.into(), input, hidden, layers }
    }

    fn cells(&self, layer: usize) -> (GruCell, GruCell) {
        let input = if layer == 0 { self.input } else { 2 * self.hidden };
        (
            GruCell::new(format!("{}.l{layer}.fwd", self.name), input, self.hidden),
            GruCell::new(format!("{}.l{layer}.bwd", self.name), input, self.hidden),
        )
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for l in 0..self.layers {
            let (f, b) = self.cells(l);
            f.init(store, rng)?;
            b.init(store, rng)?;
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, x: Var<'a>, lengths: &[usize]) -> Result<Var<'a>> {
        check_cols(&self.name, &x, self.input)?;
        let batch = lengths.len();
        let rows = x.shape()[0];
        if batch == 0 || rows % batch != 0 {
            return Err(Error::dim(&self.name, format!("{rows} rows do not split into {batch} sequences")));
        }
        let steps = rows / batch;
        if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > steps) {
            return Err(Error::dim(&self.name, format!("sequence length {bad} outside 1..={steps}")));
        }
        let masks: Vec<Vec<bool>> = (0..steps).map(|t| lengths.iter().map(|&l| t < l).collect()).collect();
        let mut layer_in = x;
        for l in 0..self.layers {
            let (fc, bc) = self.cells(l);
            let run = |cell: &GruCell, order: Box<dyn Iterator<Item = usize>>| -> Result<Var<'a>> {
                let xi = cell.project_input(ctx, layer_in)?;
                let mut h = ctx.tape.constant(Tensor::zeros(&[batch, self.hidden]));
                let mut outs: Vec<Option<Var<'a>>> = vec![None; steps];
                for t in order {
                    let cand = cell.step_projected(ctx, xi.rows(t * batch, batch), h)?;
                    h = if masks[t].iter().all(|&m| m) { cand } else { cand.where_rows(&masks[t], h) };
                    outs[t] = Some(h);
                }
                let outs: Vec<Var<'a>> = outs.into_iter().map(|o| o.expect("every step visited")).collect();
                Ok(concat_rows(&outs))
            };
            let fwd = run(&fc, Box::new(0..steps))?;
            let bwd = run(&bc, Box::new((0..steps).rev()))?;
            layer_in = concat_cols(&[fwd, bwd]);
        }
        Ok(layer_in)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize) -> Self {
        Self { name: name.into(), dim, heads }
    }

    fn proj(&self, which: &str) -> Linear {
        Linear::new(format!("{}.{which}", self.name), self.dim, self.dim)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!("{}: width {} not divisible by {} heads", self.name, self.dim, self.heads)));
        }
        for w in ["q", "k", "v", "o"] {
            self.proj(w).init(store, rng)?;
        }
        Ok(())
    }

    /// `spec.heads` is overridden with this layer's head count.
    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, query: Var<'a>, context: Var<'a>, spec: &AttentionSpec) -> Result<Var<'a>> {
        let q = self.proj("q").forward(ctx, query)?;
        let k = self.proj("k").forward(ctx, context)?;
        let v = self.proj("v").forward(ctx, context)?;
        let mut spec = spec.clone();
        spec.heads = self.heads;
        let (qr, kr) = (query.shape()[0], context.shape()[0]);
        for &(qo, ql, ko, kl) in &spec.segments {
            if qo + ql > qr || ko + kl > kr {
                return Err(Error::dim(&self.name, format!("segment ({qo},{ql},{ko},{kl}) exceeds {qr} query / {kr} key rows")));
            }
        }
        self.proj("o").forward(ctx, q.attention(k, v, &spec))
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub name: String,
    pub dim: usize,
    pub hidden: usize,
}

impl FeedForward {
    pub fn new(name: impl Into<String>, dim: usize, hidden: usize) -> Self {
        Self { name: name.into(), dim, hidden }
    }

    fn layers(&self) -> (Linear, Linear) {
        (
            Linear::new(format!("{}.in", self.name), self.dim, self.hidden),
            Linear::new(format!("{}.out", self.name), self.hidden, self.dim),
        )
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let (a, b) = self.layers();
        a.init(store, rng)?;
        b.init(store, rng)
    }

    pub fn forward<'a>(&self, ctx: &Ctx<'a, '_>, x: Var<'a>) -> Result<Var<'a>> {
        let (a, b) = self.layers();
        b.forward(ctx, a.forward(ctx, x)?.relu())
    }
}

/// Pre-norm transformer block; with `cross` it also attends to a memory.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub cross: bool,
}

impl TransformerBlock {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize, ff_hidden: usize, cross: bool) -> Self {
        Self { name: name.into(), dim, heads, ff_hidden, cross }
    }

    fn parts(&self) -> (LayerNorm, MultiHeadAttention, LayerNorm, MultiHeadAttention, LayerNorm, FeedForward) {
        let n = &self.name;
        (
            LayerNorm::new(format!("{n}.ln_self"), self.dim),
            MultiHeadAttention::new(format!("{n}.self_attn"), self.dim, self.heads),
            LayerNorm::new(format!("{n}.ln_cross"), self.dim),
            MultiHeadAttention::new(format!("{n}.cross_attn"), self.dim, self.heads),
            LayerNorm::new(format!("{n}.ln_ff"), self.dim),
            FeedForward::new(format!("{n}.ff"), self.dim, self.ff_hidden),
        )
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let (ln1, sa, ln2, ca, ln3, ff) = self.parts();
        ln1.init(store)?;
        sa.init(store, rng)?;
        if self.cross {
            ln2.init(store)?;
            ca.init(store, rng)?;
        }
        ln3.init(store)?;
        ff.init(store, rng)
    }

    pub fn forward<'a>(
        &self,
        ctx: &Ctx<'a, '_>,
        x: Var<'a>,
        self_spec: &AttentionSpec,
        memory: Option<(Var<'a>, &AttentionSpec)>,
    ) -> Result<Var<'a>> {
        let (ln1, sa, ln2, ca, ln3, ff) = self.parts();
        let h = ln1.forward(ctx, x)?;
        let mut x = x.add(sa.forward(ctx, h, h, self_spec)?);
        match (self.cross, memory) {
            (true, Some((mem, spec))) => {
                let h = ln2.forward(ctx, x)?;
                x = x.add(ca.forward(ctx, h, mem, spec)?);
            }
            (false, None) => {}
            (true, None) => return Err(Error::Input(format!("{}: cross-attention block needs a memory", self.name))),
            (false, Some(_)) => return Err(Error::Input(format!("{}: block has no cross-attention", self.name))),
        }
        let h = ln3.forward(ctx, x)?;
        Ok(x.add(ff.forward(ctx, h)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::params::Mode;
    use crate::diffcore::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn embedding_returns_table_row() {
        let mut store = ParamStore::new();
        let emb = Embedding::new("emb", 4, 3);
        emb.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let table = store.value("emb.table").unwrap().clone();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval);
        let out = emb.forward(&ctx, &[2]).unwrap().value();
        assert_eq!(out.shape(), &[1, 3]);
        assert_eq!(out.data(), table.row(2));
        assert!(matches!(emb.forward(&ctx, &[4]), Err(Error::Lookup(_))));
    }

    #[test]
    fn max_pool_of_constants() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = x.max_pool2x2(&MapLayout::new(vec![(2, 2)]));
        assert_eq!(y.value().data(), &[4.0]);
        assert!(!tape.hit_nondifferentiable_point());
    }

    #[test]
    fn zero_weight_gru_follows_biases() {
        let mut store = ParamStore::new();
        let cell = GruCell::new("g", 2, 1);
        cell.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        store.set_value("g.w_ih", Tensor::zeros(&[2, 3])).unwrap();
        store.set_value("g.w_hh", Tensor::zeros(&[1, 3])).unwrap();
        store.set_value("g.b_ih", Tensor::vector(vec![0.5, -1.0, 0.3])).unwrap();
        store.set_value("g.b_hh", Tensor::vector(vec![0.2, 0.4, -0.6])).unwrap();

        // hand evaluation of the gate equations
        let r = sigmoid(0.5 + 0.2);
        let z = sigmoid(-1.0 + 0.4);
        let n = (0.3 + r * -0.6f64).tanh();
        let expect = |h: f64| (1.0 - z) * n + z * h;

        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval);
        let x = tape.constant(Tensor::matrix(2, 2, vec![3.0, -7.0, 0.1, 100.0]).unwrap());
        let h = tape.constant(Tensor::matrix(2, 1, vec![0.8, -0.4]).unwrap());
        let out = cell.step(&ctx, x, h).unwrap().value();
        let frozen = [0.218540325776688, -0.20667210675235748];
        for ((got, h0), want) in out.data().iter().zip([0.8, -0.4]).zip(frozen) {
            assert!((got - expect(h0)).abs() < 1e-15);
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let mut store = ParamStore::new();
        let lin = Linear::new("proj", 3, 2);
        lin.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval);
        let err = lin.forward(&ctx, tape.constant(Tensor::zeros(&[2, 4]))).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Dimension { .. }));
        assert!(msg.contains("proj") && msg.contains("axis 1"), "{msg}");
    }

    #[test]
    fn batch_norm_running_stats_blend() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new("bn", 1);
        bn.init(&mut store).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Train);
        bn.forward(&ctx, tape.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 6.0]).unwrap())).unwrap();
        let mut rec = ctx.finish();
        store.commit_stats(&mut rec);
        // batch mean 3, unbiased variance 7; running = 0.9 * old + 0.1 * batch
        assert!((store.value("bn.running_mean").unwrap().data()[0] - 0.3).abs() < 1e-12);
        assert!((store.value("bn.running_var").unwrap().data()[0] - (0.9 + 0.7)).abs() < 1e-12);
    }

    #[test]
    fn forward_is_pure() {
        let mut store = ParamStore::new();
        let block = TransformerBlock::new("b", 8, 2, 16, false);
        block.init(&mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = Tensor::randn(&[6, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let spec = AttentionSpec::uniform(2, 3, 3, 2);
        let run = || {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store, Mode::Eval);
            block.forward(&ctx, tape.constant(x.clone()), &spec, None).unwrap().value().data().to_vec()
        };
        let a = run();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), run().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
