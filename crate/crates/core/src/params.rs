//! Named parameter storage, per-forward binding onto a tape, and the small
//! layer types built on top of it.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use qtensor::{Gradients, Tape, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.trainable_ids().iter().map(|&id| self.get(id).numel()).sum()
    }

    /// Replaces every value, checking names and shapes.
    pub fn load_values(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        let mut conflicts = Vec::new();
        if entries.len() != self.len() {
            conflicts.push(format!("expected {} parameters, found {}", self.len(), entries.len()));
        }
        for (name, t) in &entries {
            match self.by_name(name) {
                None => conflicts.push(format!("{name}: not part of this model")),
                Some(id) if self.get(id).shape() != t.shape() => conflicts.push(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    self.get(id).shape(),
                    t.shape()
                )),
                _ => {}
            }
        }
        if !conflicts.is_empty() {
            return Err(Error::Checkpoint(format!("shape conflicts: {}", conflicts.join("; "))));
        }
        for (name, t) in entries {
            let id = self.by_name(&name).expect("checked above");
            self.values[id.0] = t;
        }
        Ok(())
    }
}

/// One forward pass: a tape plus lazily bound parameters.
pub struct Graph<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    /// Trainable parameters whose values are replaced for this pass.
    overrides: Option<&'a [Tensor]>,
    override_ids: &'a [ParamId],
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            overrides: None,
            override_ids: &[],
        }
    }

    /// Binds `values[k]` in place of parameter `ids[k]`; used by finite differences.
    pub fn with_overrides(store: &'a ParamStore, ids: &'a [ParamId], values: &'a [Tensor]) -> Self {
        let mut g = Self::new(store);
        g.overrides = Some(values);
        g.override_ids = ids;
        g
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let value = match self.overrides {
            Some(vals) => match self.override_ids.iter().position(|&o| o == id) {
                Some(k) => vals[k].clone(),
                None => self.store.get(id).clone(),
            },
            None => self.store.get(id).clone(),
        };
        let v = self
            .tape
            .leaf(value, self.store.is_trainable(id))
            .expect("stored parameters are finite");
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        Ok(self.tape.constant(t)?)
    }

    /// Gradient of `loss` for every trainable parameter (zero when unused).
    pub fn gradients(&self, loss: Var) -> Result<Vec<(ParamId, Tensor)>> {
        let grads: Gradients = self.tape.backward(loss)?;
        Ok(self
            .store
            .trainable_ids()
            .into_iter()
            .map(|id| {
                let g = self.bound[id.0]
                    .and_then(|v| grads.get(v))
                    .unwrap_or_else(|| Tensor::zeros(self.store.get(id).shape()));
                (id, g)
            })
            .collect())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }
}

/// Shape-aware initialisation helper threaded through model construction.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn glorot(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.random_range(-a..a)).collect();
        self.store.add(name, Tensor::new(vec![fan_in, fan_out], data).expect("sized"), true)
    }

    pub fn filled(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, value), true)
    }

    pub fn tensor(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        self.store.add(name, value, trainable)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: init.glorot(&format!("{name}.w"), fan_in, fan_out),
            b: init.filled(&format!("{name}.b"), &[fan_out], 0.0),
        }
    }

    pub fn identity(init: &mut Init, name: &str, dim: usize) -> Self {
        Self {
            w: init.tensor(&format!("{name}.w"), Tensor::identity(dim), true),
            b: init.filled(&format!("{name}.b"), &[dim], 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.p(self.w), g.p(self.b));
        let y = g.tape.matmul(x, w)?;
        Ok(g.tape.add_row(y, b)?)
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Clone, Copy, Debug)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn new(init: &mut Init, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            l1: Linear::new(init, &format!("{name}.0"), d_in, hidden),
            l2: Linear::new(init, &format!("{name}.1"), hidden, d_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, x)?;
        let h = g.tape.relu(h)?;
        self.l2.forward(g, h)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize, eps: f64) -> Self {
        Self {
            gamma: init.filled(&format!("{name}.gamma"), &[dim], 1.0),
            beta: init.filled(&format!("{name}.beta"), &[dim], 0.0),
            eps,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gm, bt) = (g.p(self.gamma), g.p(self.beta));
        Ok(g.tape.layer_norm(x, gm, bt, self.eps)?)
    }
}

/// Single-head scaled dot-product attention without biases.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

pub struct AttentionOut {
    pub out: Var,
    pub weights: Var,
}

impl Attention {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Self {
        Self {
            wq: init.glorot(&format!("{name}.wq"), dim, dim),
            wk: init.glorot(&format!("{name}.wk"), dim, dim),
            wv: init.glorot(&format!("{name}.wv"), dim, dim),
        }
    }

    /// `softmax(q Wq (k Wk)ᵀ / √D + bias + mask) · v Wv`.
    pub fn forward(
        &self,
        g: &mut Graph,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        mask: Option<&Tensor>,
    ) -> Result<AttentionOut> {
        let (wq, wk, wv) = (g.p(self.wq), g.p(self.wk), g.p(self.wv));
        let d = g.value(wq).cols() as f64;
        let qp = g.tape.matmul(q, wq)?;
        let kp = g.tape.matmul(k, wk)?;
        let vp = g.tape.matmul(v, wv)?;
        let logits = g.tape.matmul_nt(qp, kp)?;
        let mut logits = g.tape.scale(logits, 1.0 / d.sqrt())?;
        if let Some(b) = bias {
            logits = g.tape.add(logits, b)?;
        }
        let weights = g.tape.softmax_masked(logits, mask)?;
        let out = g.tape.matmul(weights, vp)?;
        Ok(AttentionOut { out, weights })
    }
}
