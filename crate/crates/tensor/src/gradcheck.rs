//! Central finite-difference gradient checking.

use rayon::prelude::*;

use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Per-parameter outcome of a check.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_err: f64,
    /// Flat coordinate that produced `max_rel_err`.
    pub worst_coord: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `analytic` gradients against central differences of `f` at
/// `params`, perturbing every coordinate of every tensor by `±h`.
///
/// `f` must be a pure function of its inputs. Coordinates are evaluated in
/// parallel; the report does not depend on scheduling.
pub fn grad_check<F>(f: F, params: &[Tensor], analytic: &[Tensor], h: f64) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> f64 + Sync,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len(), "one gradient per parameter");
    let mut out = Vec::with_capacity(params.len());
    for (pi, (p, a)) in params.iter().zip(analytic).enumerate() {
        assert_eq!(p.shape(), a.shape(), "gradient shape for parameter {pi}");
        let errs: Vec<f64> = (0..p.numel())
            .into_par_iter()
            .map(|c| {
                let mut local = params.to_vec();
                let x0 = p.data()[c];
                local[pi].data_mut()[c] = x0 + h;
                let plus = f(&local);
                local[pi].data_mut()[c] = x0 - h;
                let minus = f(&local);
                relative_error(a.data()[c], (plus - minus) / (2.0 * h))
            })
            .collect();
        let (worst_coord, max_rel_err) = errs
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
        out.push(ParamCheck {
            index: pi,
            max_rel_err,
            worst_coord,
        });
    }
    let max_rel_err = out.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    GradCheckReport {
        params: out,
        max_rel_err,
    }
}
