use std::cell::RefCell;
use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Carried state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub kind: ParamKind,
    pub frozen: bool,
}

impl Parameter {
    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable && !self.frozen
    }
}

/// Named parameters of one model, kept in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value, grad: None, kind, frozen: false });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.value).ok_or_else(|| Error::Lookup(format!("no parameter `{name}`")))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.get_mut(name).ok_or_else(|| Error::Lookup(format!("no parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::dim(name, format!("expected {:?}, got {:?}", p.value.shape(), value.shape())));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    /// Hash over names, shapes and value bytes of parameters matching `prefix`.
    pub fn fingerprint(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            h.update(p.name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(p.value.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Adds gradients of the parameters bound during a forward pass into
    /// their gradient buffers.
    pub fn accumulate(&mut self, rec: &Recorded, mut grads: Gradients) {
        for (name, id) in &rec.bound {
            let Some(g) = grads.take(*id) else { continue };
            let p = self.get_mut(name).expect("bound parameter exists");
            match &mut p.grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
    }

    /// Applies running-statistics updates collected during a training forward.
    pub fn commit_stats(&mut self, rec: &mut Recorded) {
        for (name, value) in rec.stats.drain(..) {
            if let Some(p) = self.get_mut(&name) {
                p.value = value;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What a forward pass touched: parameter-to-tape bindings and pending
/// running-statistics updates.
#[derive(Debug, Default)]
pub struct Recorded {
    bound: Vec<(String, usize)>,
    stats: Vec<(String, Tensor)>,
}

/// Forward-pass context: a tape, the parameters it reads and the mode.
///
/// Parameters are copied onto the tape on first use and cached by name.
pub struct Ctx<'a, 'p> {
    pub tape: &'a Tape,
    pub params: &'p ParamStore,
    pub mode: Mode,
    bound: RefCell<Vec<(String, usize)>>,
    lookup: RefCell<HashMap<String, usize>>,
    stats: RefCell<Vec<(String, Tensor)>>,
}

impl<'a, 'p> Ctx<'a, 'p> {
    pub fn new(tape: &'a Tape, params: &'p ParamStore, mode: Mode) -> Self {
        Self {
            tape,
            params,
            mode,
            bound: RefCell::new(Vec::new()),
            lookup: RefCell::new(HashMap::new()),
            stats: RefCell::new(Vec::new()),
        }
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Tape variable for a named parameter.
    pub fn param(&self, name: &str) -> Result<Var<'a>> {
        if let Some(&id) = self.lookup.borrow().get(name) {
            return Ok(Var { tape: self.tape, id });
        }
        let p = self.params.get(name).ok_or_else(|| Error::Lookup(format!("no parameter `{name}`")))?;
        let var = if p.is_trainable() { self.tape.leaf(p.value.clone()) } else { self.tape.constant(p.value.clone()) };
        self.lookup.borrow_mut().insert(name.to_string(), var.id);
        self.bound.borrow_mut().push((name.to_string(), var.id));
        Ok(var)
    }

    /// Routes a parameter name to an existing variable (used by gradient checks).
    pub fn bind(&self, name: &str, var: Var<'a>) {
        self.lookup.borrow_mut().insert(name.to_string(), var.id);
    }

    /// Ends the forward pass, releasing the borrow of the parameter store.
    pub fn finish(self) -> Recorded {
        Recorded { bound: self.bound.into_inner(), stats: self.stats.into_inner() }
    }

    pub(crate) fn record_stat(&self, name: String, value: Tensor) {
        self.stats.borrow_mut().push((name, value));
    }
}
