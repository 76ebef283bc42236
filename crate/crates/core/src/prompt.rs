//! Unified prompt encoding into `T×D` tokens.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use qtensor::{Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{Graph, Init, Linear, ParamId};
use crate::tasks::PromptSpec;
use crate::vocab::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptKind {
    Text,
    Visual,
    Numerical,
}

/// Rows are unit vectors; each block of `dim` consecutive rows is mutually
/// orthogonal (the whole table is orthonormal when `rows <= dim`).
pub fn orthonormal_table(rows: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rows * dim);
    let mut block: Vec<Vec<f64>> = Vec::new();
    while data.len() < rows * dim {
        if block.len() == dim {
            block.clear();
        }
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &block {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        data.extend_from_slice(&v);
        block.push(v);
    }
    Tensor::new(vec![rows, dim], data).expect("sized")
}

/// Unit-norm sinusoidal vector for sequence position `pos`.
pub fn position_vector(pos: usize, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|i| {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = (pos as f64 + 1.0) * rate;
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

#[derive(Clone, Debug)]
pub struct PromptEncoder {
    /// Frozen V×D token table.
    pub table: ParamId,
    pub proj: Linear,
    pub location: Linear,
    pub bbox: Linear,
}

impl PromptEncoder {
    pub fn new(init: &mut Init, vocab: &Vocab, dim: usize, seed: u64) -> Self {
        let table = orthonormal_table(vocab.len(), dim, seed ^ 0x0e1b_ed);
        Self {
            table: init.tensor("prompt.table", table, false),
            proj: Linear::identity(init, "prompt.proj", dim),
            location: Linear::new(init, "prompt.location", 3, dim),
            bbox: Linear::new(init, "prompt.box", 6, dim),
        }
    }

    /// Table rows for `ids`, one per row, before projection.
    fn embed_rows(&self, table: &Tensor, rows: &[Option<&[f64]>], ids: &[usize]) -> Tensor {
        let d = table.cols();
        let mut data = Vec::with_capacity(rows.len() * d);
        for (pos, (slot, &id)) in rows.iter().zip(ids).enumerate() {
            let base = slot.unwrap_or_else(|| table.row(id));
            let pv = position_vector(pos, d);
            data.extend(base.iter().zip(&pv).map(|(a, b)| a + b));
        }
        Tensor::new(vec![rows.len(), d], data).expect("sized")
    }

    fn sequence(&self, g: &mut Graph, ids: &[usize], slot: Option<(usize, &[f64])>) -> Result<Var> {
        let rows: Vec<Option<&[f64]>> = (0..ids.len())
            .map(|k| slot.and_then(|(pos, f)| (pos == k).then_some(f)))
            .collect();
        let table = g.store().get(self.table);
        let x = self.embed_rows(table, &rows, ids);
        let x = g.constant(x)?;
        self.proj.forward(g, x)
    }

    /// `[SOS] ids [EOS]`, so `T = len + 2`.
    pub fn encode_text(&self, g: &mut Graph, vocab: &Vocab, ids: &[usize]) -> Result<Var> {
        vocab.check_ids(ids)?;
        let mut seq = Vec::with_capacity(ids.len() + 2);
        seq.push(vocab.sos());
        seq.extend_from_slice(ids);
        seq.push(vocab.eos());
        self.sequence(g, &seq, None)
    }

    /// `[SOS] [object] [EOS]` with the object slot replaced by `feature`.
    pub fn encode_visual(&self, g: &mut Graph, vocab: &Vocab, feature: &[f64]) -> Result<Var> {
        let d = g.store().get(self.table).cols();
        if feature.len() != d {
            return Err(Error::Invalid(format!("visual prompt must have {d} values, got {}", feature.len())));
        }
        if feature.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("visual prompt is not finite".into()));
        }
        let seq = [vocab.sos(), vocab.object_slot(), vocab.eos()];
        self.sequence(g, &seq, Some((1, feature)))
    }

    /// One token from a 3D location or a center+size box.
    pub fn encode_numerical(&self, g: &mut Graph, payload: &[f64]) -> Result<Var> {
        let lin = match payload.len() {
            3 => self.location,
            6 => self.bbox,
            n => return Err(Error::Invalid(format!("numerical prompt needs 3 or 6 values, got {n}"))),
        };
        if payload.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("numerical prompt is not finite".into()));
        }
        let x = g.constant(Tensor::new(vec![1, payload.len()], payload.to_vec())?)?;
        lin.forward(g, x)
    }

    pub fn encode(&self, g: &mut Graph, vocab: &Vocab, spec: &PromptSpec) -> Result<Var> {
        match spec {
            PromptSpec::Text(ids) => self.encode_text(g, vocab, ids),
            PromptSpec::Visual(f) => self.encode_visual(g, vocab, f),
            PromptSpec::Numerical(p) => self.encode_numerical(g, p),
        }
    }
}

pub fn kind_of(spec: &PromptSpec) -> PromptKind {
    match spec {
        PromptSpec::Text(_) => PromptKind::Text,
        PromptSpec::Visual(_) => PromptKind::Visual,
        PromptSpec::Numerical(_) => PromptKind::Numerical,
    }
}
