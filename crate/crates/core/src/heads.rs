//! Mask, grounding and generation heads.

use qtensor::{Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{Attention, Graph, Init, LayerNorm, Linear, Mlp2, ParamId};
use crate::vocab::Vocab;

#[derive(Clone, Debug)]
pub struct MaskHead {
    pub fs: Linear,
    pub fq: Linear,
}

impl MaskHead {
    pub fn new(init: &mut Init, dim: usize) -> Self {
        Self {
            fs: Linear::new(init, "head.mask.fs", dim, dim),
            fq: Linear::new(init, "head.mask.fq", dim, dim),
        }
    }

    /// `σ(f_s(F) · f_q(Q)ᵀ)` as an M×Q matrix.
    pub fn forward(&self, g: &mut Graph, feature_sum: Var, queries: Var) -> Result<Var> {
        let s = self.fs.forward(g, feature_sum)?;
        let q = self.fq.forward(g, queries)?;
        let logits = g.tape.matmul_nt(s, q)?;
        Ok(g.tape.sigmoid(logits)?)
    }
}

#[derive(Clone, Debug)]
pub struct GroundingHead {
    pub mlp: Mlp2,
}

pub struct GroundingOut {
    /// Q×1 pre-sigmoid scores.
    pub logits: Var,
    pub probs: Var,
}

impl GroundingHead {
    pub fn new(init: &mut Init, dim: usize) -> Self {
        Self {
            mlp: Mlp2::new(init, "head.grounding", dim, dim / 2, 1),
        }
    }

    pub fn forward(&self, g: &mut Graph, queries: Var) -> Result<GroundingOut> {
        let logits = self.mlp.forward(g, queries)?;
        let probs = g.tape.sigmoid(logits)?;
        Ok(GroundingOut { logits, probs })
    }
}

#[derive(Clone, Debug)]
pub struct GenBlock {
    pub self_attn: Attention,
    pub ln1: LayerNorm,
    pub cross_attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: Mlp2,
    pub ln3: LayerNorm,
}

/// Small autoregressive decoder reading the final instance queries.
#[derive(Clone, Debug)]
pub struct Generator {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub blocks: Vec<GenBlock>,
    pub out: Linear,
    pub max_len: usize,
}

/// Additive causal mask: position i sees positions `0..=i`.
pub fn causal_mask(t: usize) -> Tensor {
    let mut m = Tensor::zeros(&[t, t]);
    for i in 0..t {
        for j in i + 1..t {
            m.data_mut()[i * t + j] = f64::NEG_INFINITY;
        }
    }
    m
}

impl Generator {
    pub fn new(init: &mut Init, vocab_len: usize, dim: usize, blocks: usize, max_len: usize, eps: f64) -> Self {
        let tokens = init.glorot("head.gen.tokens", vocab_len, dim);
        let positions = init.glorot("head.gen.positions", max_len, dim);
        let blocks = (0..blocks)
            .map(|b| {
                let n = format!("head.gen.block{b}");
                GenBlock {
                    self_attn: Attention::new(init, &format!("{n}.self"), dim),
                    ln1: LayerNorm::new(init, &format!("{n}.ln1"), dim, eps),
                    cross_attn: Attention::new(init, &format!("{n}.cross"), dim),
                    ln2: LayerNorm::new(init, &format!("{n}.ln2"), dim, eps),
                    ffn: Mlp2::new(init, &format!("{n}.ffn"), dim, 4 * dim, dim),
                    ln3: LayerNorm::new(init, &format!("{n}.ln3"), dim, eps),
                }
            })
            .collect();
        Self {
            tokens,
            positions,
            blocks,
            out: Linear::new(init, "head.gen.out", dim, vocab_len),
            max_len,
        }
    }

    /// Per-position vocabulary logits (T×V) for the input prefix.
    pub fn logits(&self, g: &mut Graph, queries: Var, input: &[usize]) -> Result<Var> {
        let t = input.len();
        if t == 0 || t > self.max_len {
            return Err(Error::Invalid(format!("generator input length {t} outside 1..={}", self.max_len)));
        }
        let vocab_len = g.store().get(self.tokens).rows();
        if let Some(bad) = input.iter().find(|&&i| i >= vocab_len) {
            return Err(Error::UnknownToken(format!("#{bad}")));
        }
        let (tok, pos) = (g.p(self.tokens), g.p(self.positions));
        let e = g.tape.gather_rows(tok, input)?;
        let idx: Vec<usize> = (0..t).collect();
        let p = g.tape.gather_rows(pos, &idx)?;
        let mut x = g.tape.add(e, p)?;
        let mask = causal_mask(t);
        for b in &self.blocks {
            let a = b.self_attn.forward(g, x, x, x, None, Some(&mask))?.out;
            let r = g.tape.add(x, a)?;
            x = b.ln1.forward(g, r)?;
            let c = b.cross_attn.forward(g, x, queries, queries, None, None)?.out;
            let r = g.tape.add(x, c)?;
            x = b.ln2.forward(g, r)?;
            let f = b.ffn.forward(g, x)?;
            let r = g.tape.add(x, f)?;
            x = b.ln3.forward(g, r)?;
        }
        self.out.forward(g, x)
    }

    /// Mean cross-entropy of `target` (ending in the end marker) under
    /// teacher forcing.
    pub fn loss(&self, g: &mut Graph, queries: Var, vocab: &Vocab, target: &[usize]) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::Invalid("empty generation target".into()));
        }
        vocab.check_ids(target)?;
        let mut input = vec![vocab.sos()];
        input.extend_from_slice(&target[..target.len() - 1]);
        let logits = self.logits(g, queries, &input)?;
        let logp = g.tape.log_softmax(logits)?;
        let v = vocab.len();
        let picks: Vec<usize> = target.iter().enumerate().map(|(i, &t)| i * v + t).collect();
        let chosen = g.tape.select(logp, &picks)?;
        let mean = g.tape.mean_all(chosen)?;
        Ok(g.tape.scale(mean, -1.0)?)
    }

    /// Greedy rollout; stops after emitting the end marker or `max_len` tokens.
    pub fn greedy(&self, g: &mut Graph, queries: Var, vocab: &Vocab) -> Result<Vec<usize>> {
        let mut input = vec![vocab.sos()];
        let mut out = Vec::new();
        while out.len() < self.max_len {
            let logits = self.logits(g, queries, &input)?;
            let lv = g.value(logits);
            let row = lv.row(lv.rows() - 1);
            let mut best = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = k;
                }
            }
            out.push(best);
            if best == vocab.eos() {
                break;
            }
            input.push(best);
        }
        Ok(out)
    }
}
