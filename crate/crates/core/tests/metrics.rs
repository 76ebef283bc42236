use proptest::prelude::*;

use promptq::metrics::{
    average_precision, exact_match, grounding_accuracy, instance_ap, mask_iou, multi_f1, sample_f1, top1,
    ScoredPrediction,
};

fn pred(confidence: f64, ious: &[(usize, f64)]) -> ScoredPrediction {
    ScoredPrediction {
        confidence,
        ious: ious.to_vec(),
    }
}

#[test]
fn single_prediction_ap() {
    let p = [pred(0.9, &[(0, 0.6)])];
    let s = instance_ap(&p, 1);
    assert_eq!(s.ap50, 1.0);
    assert_eq!(s.ap25, 1.0);
    assert!((s.ap - 0.3).abs() < 1e-15, "{}", s.ap);
}

#[test]
fn ap_edge_cases() {
    let s = instance_ap(&[], 2);
    assert_eq!((s.ap, s.ap50, s.ap25), (0.0, 0.0, 0.0));
    let perfect = [pred(0.5, &[(0, 1.0), (1, 0.0)]), pred(0.4, &[(0, 0.0), (1, 1.0)])];
    let s = instance_ap(&perfect, 2);
    assert_eq!((s.ap, s.ap50, s.ap25), (1.0, 1.0, 1.0));
}

#[test]
fn f1_examples() {
    let gt = vec![vec![0, 1, 2, 3, 4], vec![10, 11]];
    // IoU 0.6 with the first GT
    let p = vec![vec![0, 1, 2]];
    assert!((mask_iou(&p[0], &gt[0]) - 0.6).abs() < 1e-15);
    assert!((sample_f1(&p, &gt, 0.5) - 2.0 / 3.0).abs() < 1e-15);
    let zt: Vec<Vec<usize>> = Vec::new();
    assert_eq!(sample_f1(&[], &zt, 0.5), 1.0);
    assert_eq!(sample_f1(&[vec![3]], &zt, 0.5), 0.0);
    assert_eq!(multi_f1(&[], 0.5), 0.0);
}

#[test]
fn grounding_accuracy_thresholds() {
    assert_eq!(grounding_accuracy(&[0.6], 0.5), 1.0);
    assert_eq!(grounding_accuracy(&[0.6], 0.25), 1.0);
    assert_eq!(grounding_accuracy(&[0.2], 0.5), 0.0);
    assert_eq!(grounding_accuracy(&[0.2], 0.25), 0.0);
    assert_eq!(grounding_accuracy(&[0.5, 0.1], 0.5), 0.5);
    assert_eq!(top1(&[0.5, 0.5]), Some(0));
}

#[test]
fn exact_match_rules() {
    assert!(exact_match(&[3, 4, 1], &[3, 4, 1], 1));
    assert!(!exact_match(&[3, 4, 5], &[3, 4], 1));
    assert!(exact_match(&[3, 4, 1, 7, 7], &[3, 4, 1], 1));
}

/// Reference AP: explicit ranking, greedy matching, and integer recall tests.
fn brute_ap(preds: &[ScoredPrediction], num_gt: usize, t: f64) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut ranked: Vec<(f64, usize)> = preds.iter().enumerate().map(|(i, p)| (p.confidence, i)).collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut taken = vec![false; num_gt];
    let mut curve = Vec::new();
    let mut tp = 0usize;
    for (rank, &(_, i)) in ranked.iter().enumerate() {
        let mut pick: Option<(usize, f64)> = None;
        for &(g, iou) in &preds[i].ious {
            if taken[g] || iou < t {
                continue;
            }
            match pick {
                Some((pg, pi)) if iou < pi || (iou == pi && g > pg) => {}
                _ => pick = Some((g, iou)),
            }
        }
        if let Some((g, _)) = pick {
            taken[g] = true;
            tp += 1;
        }
        curve.push((tp, rank + 1));
    }
    let mut sum = 0.0;
    for r in 0..=100usize {
        let mut best = 0.0f64;
        for &(tp, n) in &curve {
            if tp * 100 >= r * num_gt {
                best = best.max(tp as f64 / n as f64);
            }
        }
        sum += best;
    }
    sum / 101.0
}

fn scored_cases() -> impl Strategy<Value = (Vec<ScoredPrediction>, usize)> {
    (1usize..=3).prop_flat_map(|g| {
        let p = prop::collection::vec(
            (0u8..10, prop::collection::vec(0u8..=20, g)).prop_map(move |(c, ious)| ScoredPrediction {
                confidence: c as f64 / 10.0,
                ious: ious.into_iter().enumerate().map(|(k, x)| (k, x as f64 / 20.0)).collect(),
            }),
            0..=5,
        );
        (p, Just(g))
    })
}

fn all_matchings(p: usize, g: usize) -> Vec<Vec<(usize, usize)>> {
    // every injective map from the smaller side into the larger, as (pred, gt)
    fn go(i: usize, n: usize, m: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                go(i + 1, n, m, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let (n, m) = (p.min(g), p.max(g));
    let mut out = Vec::new();
    go(0, n, m, &mut vec![false; m], &mut Vec::new(), &mut out);
    out.into_iter()
        .map(|v| v.into_iter().enumerate().map(|(a, b)| if p <= g { (a, b) } else { (b, a) }).collect())
        .collect()
}

fn masks(max: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::btree_set(0usize..12, 0..8).prop_map(|s| s.into_iter().collect()), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ap_matches_reference((preds, g) in scored_cases(), t in prop::sample::select(vec![0.25, 0.5, 0.55, 0.7, 0.95])) {
        let got = average_precision(&preds, g, t);
        let want = brute_ap(&preds, g, t);
        prop_assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn f1_uses_a_maximum_iou_matching(preds in masks(6), gts in masks(6), tau in 0.1..0.9f64) {
        let f1 = sample_f1(&preds, &gts, tau);
        prop_assert!((0.0..=1.0).contains(&f1));
        let iou = |a: usize, b: usize| mask_iou(&preds[a], &gts[b]);
        let options = all_matchings(preds.len(), gts.len());
        let best = options.iter().map(|m| m.iter().map(|&(a, b)| iou(a, b)).sum::<f64>()).fold(f64::MIN, f64::max);
        let reachable = options.iter().any(|m| {
            let total: f64 = m.iter().map(|&(a, b)| iou(a, b)).sum();
            let tp = m.iter().filter(|&&(a, b)| iou(a, b) >= tau).count() as f64;
            let f = 2.0 * tp / (preds.len() + gts.len()) as f64;
            (total - best).abs() < 1e-9 && (f - f1).abs() < 1e-12
        });
        prop_assert!(reachable);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in masks(1), b in masks(1)) {
        let x = mask_iou(&a[0], &b[0]);
        prop_assert_eq!(x, mask_iou(&b[0], &a[0]));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(mask_iou(&a[0], &a[0]), 1.0);
    }
}
