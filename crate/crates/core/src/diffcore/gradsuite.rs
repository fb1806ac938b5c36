//! Finite-difference checks of every differentiable operation, both
//! losses and every layer, each on three shapes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{gradient_check, CheckStatus, GradCheckReport};
use super::layers::{BatchNorm, BiGru, Conv3x3, Embedding, FeedForward, GruCell, LayerNorm, Linear, MultiHeadAttention, TransformerBlock};
use super::{concat_cols, concat_rows, AttentionSpec, Ctx, MapLayout, Mode, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

pub const SUITE_EPS: f64 = 1e-6;
pub const SUITE_TOL: f64 = 1e-4;

#[derive(Clone, Debug, serde::Serialize)]
pub struct SuiteEntry {
    pub name: String,
    /// Index of the shape configuration for this name.
    pub case: usize,
    pub max_relative_error: f64,
    pub status: CheckStatus,
    /// Set when the check itself could not run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// Reduces any output to a scalar with fixed random weights so every output
/// element contributes a distinct gradient.
fn probe<'t>(y: Var<'t>) -> Var<'t> {
    let shape = y.shape();
    let w = y.tape().constant(randn(&shape, 999 + shape.iter().sum::<usize>() as u64));
    y.mul(w).sum()
}

#[derive(Default)]
struct Suite {
    entries: Vec<SuiteEntry>,
}

impl Suite {
    fn record(&mut self, what: &str, report: Result<GradCheckReport>) {
        let case = self.entries.iter().filter(|e| e.name == what).count();
        let entry = match report {
            Ok(r) => {
                let status = if r.excluded() {
                    CheckStatus::Excluded
                } else if r.passed() {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                };
                SuiteEntry { name: what.into(), case, max_relative_error: r.max_relative_error, status, error: None }
            }
            Err(e) => SuiteEntry { name: what.into(), case, max_relative_error: f64::NAN, status: CheckStatus::Fail, error: Some(e.to_string()) },
        };
        self.entries.push(entry);
    }

    fn op<F>(&mut self, what: &str, inputs: &[Tensor], f: F)
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        self.record(what, gradient_check(|t, v| Ok(probe(f(t, v)?)), inputs, SUITE_EPS, SUITE_TOL));
    }

    /// Checks a layer with respect to its input (when differentiable) and
    /// every trainable parameter.
    fn layer<F>(&mut self, what: &str, store: &ParamStore, input: Option<Tensor>, forward: F)
    where
        F: for<'t> Fn(&Ctx<'t, '_>, Option<Var<'t>>) -> Result<Var<'t>>,
    {
        let names: Vec<String> = store.iter().filter(|p| p.is_trainable()).map(|p| p.name.clone()).collect();
        let offset = input.is_some() as usize;
        let mut inputs: Vec<Tensor> = input.into_iter().collect();
        inputs.extend(names.iter().map(|n| store.value(n).expect("listed above").clone()));
        let report = gradient_check(
            |tape, v| {
                let ctx = Ctx::new(tape, store, Mode::Train);
                for (k, n) in names.iter().enumerate() {
                    ctx.bind(n, v[offset + k]);
                }
                Ok(probe(forward(&ctx, (offset == 1).then(|| v[0]))?))
            },
            &inputs,
            SUITE_EPS,
            SUITE_TOL,
        );
        self.record(what, report);
    }
}

const SHAPES: [(usize, usize); 3] = [(1, 3), (4, 2), (3, 5)];

fn elementwise_ops(suite: &mut Suite) {
    for (i, &(r, c)) in SHAPES.iter().enumerate() {
        let s = i as u64 * 10;
        let a = randn(&[r, c], s);
        let b = randn(&[r, c], s + 1);
        let pos = a.map(|v| v.abs() + 0.5);
        suite.op("add", &[a.clone(), b.clone()], |_, v| Ok(v[0].add(v[1])));
        suite.op("sub", &[a.clone(), b.clone()], |_, v| Ok(v[0].sub(v[1])));
        suite.op("mul", &[a.clone(), b.clone()], |_, v| Ok(v[0].mul(v[1])));
        suite.op("mul_self", &[a.clone()], |_, v| Ok(v[0].mul(v[0])));
        suite.op("scale", &[a.clone()], |_, v| Ok(v[0].scale(-2.5)));
        suite.op("neg", &[a.clone()], |_, v| Ok(v[0].neg()));
        suite.op("mul_scalar", &[a.clone(), Tensor::scalar(1.7)], |_, v| Ok(v[0].mul_scalar(v[1])));
        suite.op("relu", &[a.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v })], |_, v| Ok(v[0].relu()));
        suite.op("sigmoid", &[a.clone()], |_, v| Ok(v[0].sigmoid()));
        suite.op("tanh", &[a.clone()], |_, v| Ok(v[0].tanh()));
        suite.op("exp", &[a.clone()], |_, v| Ok(v[0].exp()));
        suite.op("ln", &[pos], |_, v| Ok(v[0].ln()));
        suite.op("one_minus", &[a.clone()], |_, v| Ok(v[0].one_minus()));
        suite.op("sum", &[a.clone()], |_, v| Ok(v[0].sum()));
        suite.op("mean", &[a.clone()], |_, v| Ok(v[0].mean()));
        suite.op("add_row", &[a.clone(), randn(&[c], s + 2)], |_, v| Ok(v[0].add_row(v[1])));
    }
}

fn matrix_ops(suite: &mut Suite) {
    for (i, &(r, c)) in SHAPES.iter().enumerate() {
        let s = 100 + i as u64 * 10;
        let a = randn(&[r, c], s);
        suite.op("matmul", &[a.clone(), randn(&[c, r + 1], s + 1)], |_, v| Ok(v[0].matmul(v[1])));
        suite.op("matmul_t", &[a.clone(), randn(&[r + 2, c], s + 2)], |_, v| Ok(v[0].matmul_t(v[1])));
        suite.op("transpose", &[a.clone()], |_, v| Ok(v[0].transpose()));
        suite.op("reshape", &[a.clone()], move |_, v| Ok(v[0].reshape(&[c, r])));
        suite.op("log_softmax", &[a.clone()], |_, v| Ok(v[0].log_softmax()));
        suite.op("softmax", &[a.clone()], |_, v| Ok(v[0].softmax()));
        suite.op("rows", &[a.clone()], move |_, v| Ok(v[0].rows(r - 1, 1)));
        suite.op("cols", &[a.clone()], move |_, v| Ok(v[0].cols(c / 2, c - c / 2)));
        let idx: Vec<usize> = (0..r + 2).map(|k| (k * 7) % r).collect();
        suite.op("gather_rows", &[a.clone()], move |_, v| Ok(v[0].gather_rows(&idx)));
        let mask: Vec<bool> = (0..r).map(|k| k % 2 == 0).collect();
        suite.op("where_rows", &[a.clone(), randn(&[r, c], s + 3)], move |_, v| Ok(v[0].where_rows(&mask, v[1])));
        suite.op("concat_rows", &[a.clone(), randn(&[2, c], s + 4)], |_, v| Ok(concat_rows(&[v[0], v[1], v[0]])));
        suite.op("concat_cols", &[a.clone(), randn(&[r, 3], s + 5)], |_, v| Ok(concat_cols(&[v[1], v[0]])));
        suite.op("l2_normalize_rows", &[a.clone()], |_, v| Ok(v[0].l2_normalize_rows()));
        suite.op("layer_norm", &[a.map(|x| x * 3.0), randn(&[c], s + 6), randn(&[c], s + 7)], |_, v| {
            Ok(v[0].layer_norm(v[1], v[2], 1e-5))
        });
    }
}

fn losses(suite: &mut Suite) {
    for (i, &(r, c)) in SHAPES.iter().enumerate() {
        let s = 200 + i as u64 * 10;
        let logits = randn(&[r, c + 1], s);
        let targets: Vec<Option<usize>> = (0..r).map(|k| if k == 1 { None } else { Some(k % (c + 1)) }).collect();
        suite.op("cross_entropy", &[logits.clone()], move |_, v| Ok(v[0].cross_entropy(&targets)));
        let y = Tensor::new(vec![r, c + 1], (0..r * (c + 1)).map(|k| (k % 3 == 0) as u8 as f64).collect()).expect("fixture");
        suite.op("bce_with_logits", &[logits.clone()], move |_, v| Ok(v[0].bce_with_logits(&y)));
        let n = c + 1;
        suite.op("info_nce", &[randn(&[n, n], s + 1)], |_, v| Ok(v[0].info_nce()));
    }
}

/// InfoNCE through normalized embeddings and a learnable temperature, on
/// three batch sizes.
fn info_nce_through_embeddings(suite: &mut Suite) {
    for (i, (n, d)) in [(2, 3), (4, 6), (5, 2)].into_iter().enumerate() {
        let s = 300 + i as u64 * 10;
        let report = gradient_check(
            |_, v| {
                let a = v[0].l2_normalize_rows();
                let t = v[1].l2_normalize_rows();
                let inv_temp = v[2].neg().exp();
                Ok(a.matmul_t(t).mul_scalar(inv_temp).info_nce())
            },
            &[randn(&[n, d], s), randn(&[n, d], s + 1), Tensor::scalar(0.07f64.ln())],
            SUITE_EPS,
            SUITE_TOL,
        );
        suite.record("info_nce_embeddings", report);
    }
}

fn layouts() -> [MapLayout; 3] {
    [MapLayout::new(vec![(2, 2)]), MapLayout::new(vec![(4, 2), (2, 4)]), MapLayout::new(vec![(3, 4), (4, 4), (2, 2)])]
}

fn map_ops(suite: &mut Suite) {
    for (i, layout) in layouts().into_iter().enumerate() {
        let s = 400 + i as u64 * 10;
        let p = layout.positions();
        let cin = i + 1;
        let x = randn(&[p, cin], s);
        let l = layout.clone();
        suite.op("conv3x3", &[x.clone(), randn(&[9 * cin, 3], s + 1), randn(&[3], s + 2)], move |_, v| {
            Ok(v[0].conv3x3(v[1], v[2], &l))
        });
        let l = layout.clone();
        suite.op("max_pool2x2", &[x.clone()], move |_, v| Ok(v[0].max_pool2x2(&l)));
        let sizes = layout.sizes();
        suite.op("segment_mean", &[x.clone()], move |_, v| Ok(v[0].segment_mean(&sizes)));
        let sizes = layout.sizes();
        suite.op("segment_max", &[x.clone()], move |_, v| Ok(v[0].segment_max(&sizes)));
        suite.op("batch_norm_train", &[x.clone(), randn(&[cin], s + 3), randn(&[cin], s + 4)], |_, v| {
            Ok(v[0].batch_norm_train(v[1], v[2], 1e-5).0)
        });
        let mean = vec![0.3; cin];
        let var = vec![1.7; cin];
        suite.op("batch_norm_eval", &[x.clone(), randn(&[cin], s + 5), randn(&[cin], s + 6)], move |_, v| {
            Ok(v[0].batch_norm_eval(v[1], v[2], &mean, &var, 1e-5))
        });
    }
}

fn attention_op(suite: &mut Suite) {
    let specs = [
        AttentionSpec::uniform(1, 3, 3, 1),
        AttentionSpec::uniform(2, 2, 3, 2).with_key_mask(vec![true, true, false, true, false, true]),
        AttentionSpec { segments: vec![(0, 3, 0, 3), (3, 2, 3, 2)], key_mask: None, causal: true, heads: 2 },
    ];
    for (i, spec) in specs.into_iter().enumerate() {
        let s = 500 + i as u64 * 10;
        let q_rows = spec.segments.iter().map(|g| g.0 + g.1).max().expect("fixture");
        let k_rows = spec.segments.iter().map(|g| g.2 + g.3).max().expect("fixture");
        let d = 4;
        suite.op(
            "attention",
            &[randn(&[q_rows, d], s), randn(&[k_rows, d], s + 1), randn(&[k_rows, d], s + 2)],
            move |_, v| Ok(v[0].attention(v[1], v[2], &spec)),
        );
    }
}

fn layers(suite: &mut Suite) {
    for (i, &(r, c)) in SHAPES.iter().enumerate() {
        let s = 600 + i as u64 * 10;
        let mut g = rng(s);

        let mut st = ParamStore::new();
        let lin = Linear::new("lin", c, 3);
        lin.init(&mut st, &mut g).expect("fixture");
        suite.layer("layer/linear", &st, Some(randn(&[r, c], s + 1)), |ctx, x| lin.forward(ctx, x.expect("input given")));

        let mut st = ParamStore::new();
        let ln = LayerNorm::new("ln", c + 1);
        ln.init(&mut st).expect("fixture");
        suite.layer("layer/layer_norm", &st, Some(randn(&[r, c + 1], s + 2)), |ctx, x| ln.forward(ctx, x.expect("input given")));

        let mut st = ParamStore::new();
        let bn = BatchNorm::new("bn", c);
        bn.init(&mut st).expect("fixture");
        suite.layer("layer/batch_norm", &st, Some(randn(&[r + 1, c], s + 3)), |ctx, x| bn.forward(ctx, x.expect("input given")));

        let mut st = ParamStore::new();
        let emb = Embedding::new("emb", 4, c);
        emb.init(&mut st, &mut g).expect("fixture");
        let idx: Vec<usize> = (0..r + 1).map(|k| (k * 3) % 4).collect();
        suite.layer("layer/embedding", &st, None, |ctx, _| emb.forward(ctx, &idx));

        let mut st = ParamStore::new();
        let ff = FeedForward::new("ff", c, 4);
        ff.init(&mut st, &mut g).expect("fixture");
        suite.layer("layer/feed_forward", &st, Some(randn(&[r, c], s + 4)), |ctx, x| ff.forward(ctx, x.expect("input given")));

        let mut st = ParamStore::new();
        let cell = GruCell::new("gru", c, 3);
        cell.init(&mut st, &mut g).expect("fixture");
        let h0 = randn(&[r, 3], s + 5).map(|v| v * 0.5);
        suite.layer("layer/gru_cell", &st, Some(randn(&[r, c], s + 6)), move |ctx, x| {
            cell.step(ctx, x.expect("input given"), ctx.tape.constant(h0.clone()))
        });
    }
}

fn composite_layers(suite: &mut Suite) {
    let conv_cases = [(1, 2), (2, 3), (3, 1)];
    for (i, (layout, (cin, cout))) in layouts().into_iter().zip(conv_cases).enumerate() {
        let s = 700 + i as u64 * 10;
        let mut st = ParamStore::new();
        let conv = Conv3x3::new("conv", cin, cout);
        conv.init(&mut st, &mut rng(s)).expect("fixture");
        let x = randn(&[layout.positions(), cin], s + 1);
        suite.layer("layer/conv3x3", &st, Some(x), move |ctx, x| conv.forward(ctx, x.expect("input given"), &layout));
    }

    let gru_cases: [(usize, Vec<usize>); 3] = [(1, vec![3]), (2, vec![3, 1]), (1, vec![2, 4, 1])];
    for (i, (layers, lengths)) in gru_cases.into_iter().enumerate() {
        let s = 800 + i as u64 * 10;
        let mut st = ParamStore::new();
        let gru = BiGru::new("bigru", 2, 2, layers);
        gru.init(&mut st, &mut rng(s)).expect("fixture");
        let steps = *lengths.iter().max().expect("fixture");
        let x = randn(&[steps * lengths.len(), 2], s + 1);
        suite.layer("layer/bigru", &st, Some(x), move |ctx, x| gru.forward(ctx, x.expect("input given"), &lengths));
    }

    let attn_cases = [(1, 3, 1), (2, 2, 2), (3, 2, 4)];
    for (i, (batch, len, heads)) in attn_cases.into_iter().enumerate() {
        let s = 900 + i as u64 * 10;
        let d = 4;
        let mut st = ParamStore::new();
        let mha = MultiHeadAttention::new("mha", d, heads);
        mha.init(&mut st, &mut rng(s)).expect("fixture");
        let spec = AttentionSpec::uniform(batch, len, len, heads);
        suite.layer("layer/multi_head_attention", &st, Some(randn(&[batch * len, d], s + 1)), |ctx, x| {
            let x = x.expect("input given");
            mha.forward(ctx, x, x, &spec)
        });

        let mut st = ParamStore::new();
        let block = TransformerBlock::new("blk", d, heads, 6, true);
        block.init(&mut st, &mut rng(s + 2)).expect("fixture");
        let self_spec = AttentionSpec::uniform(batch, len, len, heads).causal();
        let mem_spec = AttentionSpec::uniform(batch, len, 2, heads);
        let memory = randn(&[batch * 2, d], s + 3);
        suite.layer("layer/transformer_block", &st, Some(randn(&[batch * len, d], s + 4)), move |ctx, x| {
            let mem = ctx.tape.constant(memory.clone());
            block.forward(ctx, x.expect("input given"), &self_spec, Some((mem, &mem_spec)))
        });
    }
}

/// Runs every check. Failures are reported, not raised.
pub fn gradient_suite() -> Vec<SuiteEntry> {
    let mut suite = Suite::default();
    elementwise_ops(&mut suite);
    matrix_ops(&mut suite);
    losses(&mut suite);
    info_nce_through_embeddings(&mut suite);
    map_ops(&mut suite);
    attention_op(&mut suite);
    layers(&mut suite);
    composite_layers(&mut suite);
    suite.entries
}
