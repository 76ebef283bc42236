//! Task metrics over point-index sets.

use crate::hungarian::hungarian;

/// `|a ∩ b| / |a ∪ b|` for sorted, deduplicated index lists; two empty sets
/// score 1.
pub fn mask_iou(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Index of the largest score; the lowest index wins ties.
pub fn top1(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Fraction of top-1 IoUs at or above `tau` (0 for no samples).
pub fn grounding_accuracy(top1_ious: &[f64], tau: f64) -> f64 {
    if top1_ious.is_empty() {
        return 0.0;
    }
    top1_ious.iter().filter(|&&x| x >= tau).count() as f64 / top1_ious.len() as f64
}

/// F1 of one multi-target prompt after an IoU-maximising one-to-one match.
pub fn sample_f1(preds: &[Vec<usize>], gts: &[Vec<usize>], tau: f64) -> f64 {
    if preds.is_empty() && gts.is_empty() {
        return 1.0;
    }
    if preds.is_empty() || gts.is_empty() {
        return 0.0;
    }
    let iou: Vec<Vec<f64>> = preds.iter().map(|p| gts.iter().map(|g| mask_iou(p, g)).collect()).collect();
    let cost: Vec<Vec<f64>> = iou.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
    let pairs = hungarian(&cost).expect("finite nonempty cost");
    let tp = pairs.iter().filter(|&&(i, j)| iou[i][j] >= tau).count() as f64;
    let fp = preds.len() as f64 - tp;
    let fneg = gts.len() as f64 - tp;
    2.0 * tp / (2.0 * tp + fp + fneg)
}

/// Mean per-sample F1 (0 for no samples).
pub fn multi_f1(samples: &[(Vec<Vec<usize>>, Vec<Vec<usize>>)], tau: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|(p, g)| sample_f1(p, g, tau)).sum::<f64>() / samples.len() as f64
}

/// A scored prediction with its IoU against every ground truth it may match
/// (`(gt index, IoU)`, GT indices global to the evaluation).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPrediction {
    pub confidence: f64,
    pub ious: Vec<(usize, f64)>,
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn ap_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

/// Greedy confidence-ordered matching; returns the TP flag of each
/// prediction in ranked order.
fn ranked_hits(preds: &[ScoredPrediction], num_gt: usize, t: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
    let mut used = vec![false; num_gt];
    order
        .iter()
        .map(|&k| {
            let mut best: Option<(usize, f64)> = None;
            for &(g, iou) in &preds[k].ious {
                if !used[g] && iou >= t && best.is_none_or(|(bg, bi)| iou > bi || (iou == bi && g < bg)) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    used[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// 101-point interpolated average precision at one IoU threshold.
pub fn average_precision(preds: &[ScoredPrediction], num_gt: usize, t: f64) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let hits = ranked_hits(preds, num_gt, t);
    let mut pr = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        pr.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut total = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        total += pr.iter().filter(|(rec, _)| *rec >= level).map(|(_, p)| *p).fold(0.0, f64::max);
    }
    total / 101.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApSummary {
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
}

pub fn instance_ap(preds: &[ScoredPrediction], num_gt: usize) -> ApSummary {
    let ap = ap_thresholds().iter().map(|&t| average_precision(preds, num_gt, t)).sum::<f64>() / 10.0;
    ApSummary {
        ap,
        ap50: average_precision(preds, num_gt, 0.5),
        ap25: average_precision(preds, num_gt, 0.25),
    }
}

/// Sequence equality after truncating both sides at the first `eos`.
pub fn exact_match(pred: &[usize], gt: &[usize], eos: usize) -> bool {
    let cut = |s: &[usize]| s.iter().position(|&t| t == eos).map_or(s.len(), |i| i);
    pred[..cut(pred)] == gt[..cut(gt)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        assert_eq!(mask_iou(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(mask_iou(&[1, 2], &[1, 2]), 1.0);
        assert_eq!(mask_iou(&[1], &[2]), 0.0);
        assert_eq!(mask_iou(&[], &[]), 1.0);
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(top1(&[0.2, 0.7, 0.7]), Some(1));
        assert_eq!(top1(&[]), None);
    }

    #[test]
    fn exact_match_truncates() {
        assert!(exact_match(&[4, 5, 1, 9, 9], &[4, 5, 1], 1));
        assert!(!exact_match(&[4, 5, 6, 1], &[4, 5, 1], 1));
        assert!(exact_match(&[4, 5], &[4, 5], 1));
    }
}
