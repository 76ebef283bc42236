//! Prompt-guided query decoder with masked cross-attention over segment features.

use qtensor::{Tensor, Var};

use crate::config::{LossWeights, ModelConfig, Structure};
use crate::error::{Error, Result};
use crate::features::{Rep, SegmentVars};
use crate::heads::MaskHead;
use crate::hungarian::hungarian;
use crate::losses::matching_cost;
use crate::params::{Attention, Graph, Init, LayerNorm, Mlp2};
use crate::scene::Vec3;

/// Hidden width of the pairwise distance-bias MLP.
pub const BIAS_HIDDEN: usize = 8;
/// Initial slope of the distance bias, `b(d) = −SPATIAL_DECAY · d`.
pub const SPATIAL_DECAY: f64 = 4.0;

#[derive(Clone, Debug, Default)]
pub struct SafeguardLog {
    /// (layer, query) pairs whose visible set was empty and got reset.
    pub resets: Vec<(usize, usize)>,
}

/// Additive Q×M attention mask from an M×Q probability matrix. Entries at or
/// above `threshold` are visible; queries with nothing visible see everything.
pub fn build_attention_mask(p_mask: &Tensor, threshold: f64) -> (Tensor, Vec<usize>) {
    let (m, q) = (p_mask.rows(), p_mask.cols());
    let mut out = vec![f64::NEG_INFINITY; q * m];
    let mut reset = Vec::new();
    for j in 0..q {
        let mut any = false;
        for s in 0..m {
            if p_mask.at(s, j) >= threshold {
                out[j * m + s] = 0.0;
                any = true;
            }
        }
        if !any {
            out[j * m..(j + 1) * m].fill(0.0);
            reset.push(j);
        }
    }
    (Tensor::new(vec![q, m], out).expect("sized"), reset)
}

/// Where the attention masks of layers `1..N` come from.
#[derive(Clone, Copy)]
pub enum MaskPolicy<'a> {
    /// Thresholded predictions of the previous layer.
    Predicted,
    /// Masks recorded from an earlier pass, one Q×M tensor per layer `1..N`.
    Fixed(&'a [Tensor]),
    /// Ground-truth masks of the instances matched to each query; unmatched
    /// queries keep their predicted mask.
    GroundTruth { gt: &'a Tensor, weights: &'a LossWeights },
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub attn_v: Attention,
    pub attn_i: Attention,
    pub attn_p: Attention,
    pub attn_t: Attention,
    pub attn_s: Attention,
    pub norms: Vec<LayerNorm>,
    pub ffns: Vec<Mlp2>,
    pub bias: Mlp2,
}

impl DecoderLayer {
    fn attn_for(&self, rep: Rep) -> &Attention {
        match rep {
            Rep::Voxel => &self.attn_v,
            Rep::Image => &self.attn_i,
            Rep::Point => &self.attn_p,
        }
    }
}

pub fn block_count(structure: Structure) -> usize {
    match structure {
        Structure::Main => 3,
        Structure::Parallel => 2,
        Structure::Sequential => 5,
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub structure: Structure,
    pub extra_residuals: bool,
    pub threshold: f64,
}

pub struct DecoderOut {
    pub queries: Var,
    /// Sum of the active segment features (M×D) fed to the mask head.
    pub feature_sum: Var,
    /// Mask-head output after every layer (M×Q); a single entry for the
    /// initial queries when there are no layers.
    pub p_masks: Vec<Var>,
    /// Additive masks used by layers `1..N` (Q×M).
    pub attn_masks: Vec<Tensor>,
    /// Cross-attention weights over segments, per layer and representation.
    pub scene_attention: Vec<Vec<(Rep, Var)>>,
    pub safeguard: SafeguardLog,
}

/// Inputs shared by all decoder layers.
pub struct DecoderInput<'a> {
    pub feats: &'a SegmentVars,
    pub reps: &'a [Rep],
    pub prompt: Var,
    /// Q×D positional encoding of the query positions.
    pub query_pe: Var,
    pub positions: &'a [Vec3],
}

impl Decoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        let d = cfg.hidden_dim;
        let blocks = block_count(cfg.structure);
        let layers = (0..cfg.decoder_layers)
            .map(|l| {
                let n = format!("decoder.layer{l}");
                let bias = Mlp2::new(init, &format!("{n}.bias"), 1, BIAS_HIDDEN, 1);
                *init.store.get_mut(bias.l1.w) = Tensor::full(&[1, BIAS_HIDDEN], 1.0);
                *init.store.get_mut(bias.l2.w) = Tensor::full(&[BIAS_HIDDEN, 1], -SPATIAL_DECAY / BIAS_HIDDEN as f64);
                DecoderLayer {
                    attn_v: Attention::new(init, &format!("{n}.attn_v"), d),
                    attn_i: Attention::new(init, &format!("{n}.attn_i"), d),
                    attn_p: Attention::new(init, &format!("{n}.attn_p"), d),
                    attn_t: Attention::new(init, &format!("{n}.attn_t"), d),
                    attn_s: Attention::new(init, &format!("{n}.attn_s"), d),
                    norms: (0..blocks)
                        .map(|b| LayerNorm::new(init, &format!("{n}.norm{b}"), d, cfg.ln_eps))
                        .collect(),
                    ffns: (0..blocks)
                        .map(|b| Mlp2::new(init, &format!("{n}.ffn{b}"), d, 4 * d, d))
                        .collect(),
                    bias,
                }
            })
            .collect();
        Self {
            layers,
            structure: cfg.structure,
            extra_residuals: cfg.extra_residuals,
            threshold: cfg.mask_threshold,
        }
    }

    /// `FFN(Norm(x))`, with residuals around the FFN when enabled.
    fn block(&self, g: &mut Graph, layer: &DecoderLayer, b: usize, x: Var) -> Result<Var> {
        let n = layer.norms[b].forward(g, x)?;
        let f = layer.ffns[b].forward(g, n)?;
        if self.extra_residuals {
            Ok(g.tape.add(n, f)?)
        } else {
            Ok(f)
        }
    }

    fn spatial_bias(&self, g: &mut Graph, layer: &DecoderLayer, positions: &[Vec3]) -> Result<Var> {
        let q = positions.len();
        let mut d = Vec::with_capacity(q * q);
        for a in positions {
            for b in positions {
                d.push(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt());
            }
        }
        let x = g.constant(Tensor::new(vec![q * q, 1], d)?)?;
        let y = layer.bias.forward(g, x)?;
        Ok(g.tape.reshape(y, &[q, q])?)
    }

    /// Self-attention over queries with the pairwise distance bias.
    pub fn spatial_self_attn(&self, g: &mut Graph, layer: &DecoderLayer, q: Var, positions: &[Vec3]) -> Result<Var> {
        let bias = self.spatial_bias(g, layer, positions)?;
        Ok(layer.attn_s.forward(g, q, q, q, Some(bias), None)?.out)
    }

    fn scene_attn(
        &self,
        g: &mut Graph,
        layer: &DecoderLayer,
        rep: Rep,
        q: Var,
        inp: &DecoderInput,
        keys: Var,
        mask: Option<&Tensor>,
    ) -> Result<(Var, Var)> {
        let qt = g.tape.add(q, inp.query_pe)?;
        let a = layer.attn_for(rep).forward(g, qt, keys, inp.feats.get(rep), None, mask)?;
        Ok((a.out, a.weights))
    }

    fn prompt_attn(&self, g: &mut Graph, layer: &DecoderLayer, q: Var, inp: &DecoderInput) -> Result<Var> {
        let qt = g.tape.add(q, inp.query_pe)?;
        Ok(layer.attn_t.forward(g, qt, inp.prompt, inp.prompt, None, None)?.out)
    }

    fn ssa_block(&self, g: &mut Graph, layer: &DecoderLayer, b: usize, q: Var, inp: &DecoderInput) -> Result<Var> {
        let s = self.spatial_self_attn(g, layer, q, inp.positions)?;
        let s = if self.extra_residuals { g.tape.add(q, s)? } else { s };
        self.block(g, layer, b, s)
    }

    fn layer_forward(
        &self,
        g: &mut Graph,
        layer: &DecoderLayer,
        q: Var,
        inp: &DecoderInput,
        keys: &[(Rep, Var)],
        mask: Option<&Tensor>,
        attn_log: &mut Vec<(Rep, Var)>,
    ) -> Result<Var> {
        match self.structure {
            Structure::Main => {
                let mut acc = q;
                for &(rep, k) in keys {
                    let (o, w) = self.scene_attn(g, layer, rep, q, inp, k, mask)?;
                    attn_log.push((rep, w));
                    acc = g.tape.add(acc, o)?;
                }
                let q1 = self.block(g, layer, 0, acc)?;
                let c = self.prompt_attn(g, layer, q1, inp)?;
                let r = g.tape.add(q1, c)?;
                let q2 = self.block(g, layer, 1, r)?;
                self.ssa_block(g, layer, 2, q2, inp)
            }
            Structure::Parallel => {
                let mut acc = q;
                for &(rep, k) in keys {
                    let (o, w) = self.scene_attn(g, layer, rep, q, inp, k, mask)?;
                    attn_log.push((rep, w));
                    acc = g.tape.add(acc, o)?;
                }
                let c = self.prompt_attn(g, layer, q, inp)?;
                acc = g.tape.add(acc, c)?;
                let q1 = self.block(g, layer, 0, acc)?;
                self.ssa_block(g, layer, 1, q1, inp)
            }
            Structure::Sequential => {
                let mut cur = q;
                for (b, rep) in Rep::ALL.into_iter().enumerate() {
                    let Some(&(_, k)) = keys.iter().find(|(r, _)| *r == rep) else { continue };
                    let (o, w) = self.scene_attn(g, layer, rep, cur, inp, k, mask)?;
                    attn_log.push((rep, w));
                    let r = g.tape.add(cur, o)?;
                    cur = self.block(g, layer, b, r)?;
                }
                let c = self.prompt_attn(g, layer, cur, inp)?;
                let r = g.tape.add(cur, c)?;
                let q4 = self.block(g, layer, 3, r)?;
                self.ssa_block(g, layer, 4, q4, inp)
            }
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        inp: &DecoderInput,
        mask_head: &MaskHead,
        policy: MaskPolicy,
    ) -> Result<DecoderOut> {
        if inp.reps.is_empty() {
            return Err(Error::Invalid("decoder needs at least one scene representation".into()));
        }
        let d = g.value(inp.query_pe).cols();
        let nq = inp.positions.len();
        let mut reps = inp.reps.to_vec();
        reps.sort();
        reps.dedup();
        let mut keys = Vec::with_capacity(reps.len());
        let mut feature_sum: Option<Var> = None;
        for &rep in &reps {
            let f = inp.feats.get(rep);
            keys.push((rep, g.tape.add(f, inp.feats.l)?));
            feature_sum = Some(match feature_sum {
                None => f,
                Some(s) => g.tape.add(s, f)?,
            });
        }
        let feature_sum = feature_sum.expect("nonempty");

        let mut q = g.constant(Tensor::zeros(&[nq, d]))?;
        let mut out = DecoderOut {
            queries: q,
            feature_sum,
            p_masks: Vec::with_capacity(self.layers.len()),
            attn_masks: Vec::new(),
            scene_attention: Vec::with_capacity(self.layers.len()),
            safeguard: SafeguardLog::default(),
        };
        for (l, layer) in self.layers.iter().enumerate() {
            let mask = if l == 0 {
                None
            } else {
                let prev = g.value(out.p_masks[l - 1]).clone();
                let m = match policy {
                    MaskPolicy::Fixed(masks) => masks
                        .get(l - 1)
                        .cloned()
                        .ok_or_else(|| Error::Invalid(format!("no fixed mask for layer {l}")))?,
                    MaskPolicy::Predicted => self.predicted_mask(&prev, l, &mut out.safeguard),
                    MaskPolicy::GroundTruth { gt, weights } => {
                        let mut guided = prev.clone();
                        if gt.cols() > 0 {
                            let pairs = hungarian(&matching_cost(&prev, gt, weights))?;
                            for (qi, k) in pairs {
                                for s in 0..gt.rows() {
                                    guided.data_mut()[s * nq + qi] = gt.at(s, k);
                                }
                            }
                        }
                        self.predicted_mask(&guided, l, &mut out.safeguard)
                    }
                };
                out.attn_masks.push(m);
                out.attn_masks.last()
            };
            let mut log = Vec::new();
            let mask_owned = mask.cloned();
            q = self.layer_forward(g, layer, q, inp, &keys, mask_owned.as_ref(), &mut log)?;
            out.scene_attention.push(log);
            out.p_masks.push(mask_head.forward(g, feature_sum, q)?);
        }
        out.queries = q;
        if out.p_masks.is_empty() {
            out.p_masks.push(mask_head.forward(g, feature_sum, q)?);
        }
        Ok(out)
    }

    fn predicted_mask(&self, p: &Tensor, layer: usize, log: &mut SafeguardLog) -> Tensor {
        let (m, reset) = build_attention_mask(p, self.threshold);
        for &j in &reset {
            log::debug!("layer {layer}: query {j} had no visible segment, attending to all");
            log.resets.push((layer, j));
        }
        m
    }
}
