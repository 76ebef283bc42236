//! Matching costs and the mask / grounding losses.

use qtensor::{Tensor, Var};

use crate::config::LossWeights;
use crate::error::Result;
use crate::params::Graph;

/// Mean binary cross-entropy of predictions `p` against labels `g`.
pub fn bce(p: &[f64], g: &[f64], clamp: f64) -> f64 {
    let total: f64 = p
        .iter()
        .zip(g)
        .map(|(&p, &g)| {
            let p = p.clamp(clamp, 1.0 - clamp);
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    total / p.len() as f64
}

/// `1 − (2 Σ p·g + ε) / (Σ p + Σ g + ε)`.
pub fn dice(p: &[f64], g: &[f64], smooth: f64) -> f64 {
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let sp: f64 = p.iter().sum();
    let sg: f64 = g.iter().sum();
    1.0 - (2.0 * inter + smooth) / (sp + sg + smooth)
}

/// Q×G matching cost between predicted mask columns (`p_mask` is M×Q) and
/// ground-truth mask columns (`gt` is M×G).
pub fn matching_cost(p_mask: &Tensor, gt: &Tensor, w: &LossWeights) -> Vec<Vec<f64>> {
    let pt = p_mask.transpose();
    let gtt = gt.transpose();
    (0..pt.rows())
        .map(|q| {
            (0..gtt.rows())
                .map(|k| {
                    w.bce * bce(pt.row(q), gtt.row(k), w.bce_clamp)
                        + w.dice * dice(pt.row(q), gtt.row(k), w.dice_smooth)
                })
                .collect()
        })
        .collect()
}

/// Row-wise BCE (K×1) of probabilities `p` (K×M) against constant labels.
pub fn bce_rows(g: &mut Graph, p: Var, labels: &Tensor, clamp: f64) -> Result<Var> {
    let m = labels.cols() as f64;
    let t = &mut g.tape;
    let pc = t.clamp(p, clamp, 1.0 - clamp)?;
    let lp = t.ln(pc)?;
    let neg = t.scale(pc, -1.0)?;
    let one_minus = t.add_scalar(neg, 1.0)?;
    let lq = t.ln(one_minus)?;
    let y = t.constant(labels.clone())?;
    let inv = t.constant(Tensor::new(labels.shape().to_vec(), labels.data().iter().map(|x| 1.0 - x).collect())?)?;
    let a = t.mul(y, lp)?;
    let b = t.mul(inv, lq)?;
    let s = t.add(a, b)?;
    let rows = t.sum_cols(s)?;
    Ok(t.scale(rows, -1.0 / m)?)
}

/// Row-wise smoothed Dice loss (K×1).
pub fn dice_rows(g: &mut Graph, p: Var, labels: &Tensor, smooth: f64) -> Result<Var> {
    let t = &mut g.tape;
    let y = t.constant(labels.clone())?;
    let inter = t.mul(p, y)?;
    let inter = t.sum_cols(inter)?;
    let num = t.scale(inter, 2.0)?;
    let num = t.add_scalar(num, smooth)?;
    let sp = t.sum_cols(p)?;
    let sg: Vec<f64> = (0..labels.rows()).map(|r| labels.row(r).iter().sum::<f64>() + smooth).collect();
    let sg = t.constant(Tensor::new(vec![labels.rows(), 1], sg)?)?;
    let den = t.add(sp, sg)?;
    let ratio = t.div(num, den)?;
    let neg = t.scale(ratio, -1.0)?;
    Ok(t.add_scalar(neg, 1.0)?)
}

/// Mask loss for one sample: matched pairs averaged, plus the weighted
/// empty-mask BCE averaged over unmatched queries.
pub fn mask_loss(
    g: &mut Graph,
    p_mask: Var,
    gt: &Tensor,
    pairs: &[(usize, usize)],
    w: &LossWeights,
) -> Result<Var> {
    let q = g.value(p_mask).cols();
    let m = g.value(p_mask).rows();
    let pt = g.tape.transpose(p_mask)?;
    let mut terms: Vec<Var> = Vec::new();
    if !pairs.is_empty() {
        let qs: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let gtt = gt.transpose();
        let mut labels = Vec::with_capacity(pairs.len() * m);
        for &(_, k) in pairs {
            labels.extend_from_slice(gtt.row(k));
        }
        let labels = Tensor::new(vec![pairs.len(), m], labels)?;
        let rows = g.tape.gather_rows(pt, &qs)?;
        let b = bce_rows(g, rows, &labels, w.bce_clamp)?;
        let d = dice_rows(g, rows, &labels, w.dice_smooth)?;
        let b = g.tape.scale(b, w.bce)?;
        let d = g.tape.scale(d, w.dice)?;
        let s = g.tape.add(b, d)?;
        terms.push(g.tape.mean_all(s)?);
    }
    let unmatched: Vec<usize> = (0..q).filter(|i| pairs.iter().all(|p| p.0 != *i)).collect();
    if !unmatched.is_empty() && w.no_object > 0.0 {
        let rows = g.tape.gather_rows(pt, &unmatched)?;
        let zeros = Tensor::zeros(&[unmatched.len(), m]);
        let b = bce_rows(g, rows, &zeros, w.bce_clamp)?;
        let b = g.tape.mean_all(b)?;
        terms.push(g.tape.scale(b, w.no_object)?);
    }
    sum_vars(g, &terms)
}

/// BCE over all queries with label 1 for queries matched to a target.
pub fn grounding_loss(g: &mut Graph, probs: Var, labels: &[f64], clamp: f64) -> Result<Var> {
    let pt = g.tape.transpose(probs)?;
    let y = Tensor::new(vec![1, labels.len()], labels.to_vec())?;
    let b = bce_rows(g, pt, &y, clamp)?;
    Ok(g.tape.reshape(b, &[1])?)
}

pub fn sum_vars(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    match terms.split_first() {
        None => g.constant(Tensor::scalar(0.0)),
        Some((first, rest)) => {
            let mut acc = g.tape.reshape(*first, &[1])?;
            for &t in rest {
                let t = g.tape.reshape(t, &[1])?;
                acc = g.tape.add(acc, t)?;
            }
            Ok(acc)
        }
    }
}

/// Loss terms of one sample; `None` marks a head without supervision.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Components {
    pub mask: Option<f64>,
    pub grounding: Option<f64>,
    pub generation: Option<f64>,
}

/// `λ_mask·L_mask + λ_grd·L_grd + λ_gen·L_gen` over the present terms.
pub fn total_loss(c: &Components, w: &LossWeights) -> f64 {
    c.mask.map_or(0.0, |x| w.mask * x) + c.grounding.map_or(0.0, |x| w.grounding * x) + c.generation.map_or(0.0, |x| w.generation * x)
}
