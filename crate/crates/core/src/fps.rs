use crate::error::{Error, Result};
use crate::scene::Vec3;

fn sq_dist(a: &Vec3, b: &Vec3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Greedy farthest-point sampling. Each step picks the unselected point with
/// the largest distance to the selected set, lowest index on ties.
pub fn fps(points: &[Vec3], n: usize, start: usize) -> Result<Vec<usize>> {
    let total = points.len();
    if n == 0 || n > total {
        return Err(Error::Invalid(format!("cannot sample {n} of {total} points")));
    }
    if start >= total {
        return Err(Error::Invalid(format!("start index {start} out of range for {total} points")));
    }
    let mut chosen = vec![false; total];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[start])).collect();
    let mut out = Vec::with_capacity(n);
    out.push(start);
    chosen[start] = true;
    while out.len() < n {
        let mut best: Option<usize> = None;
        for i in 0..total {
            if !chosen[i] && best.is_none_or(|b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("unselected points remain");
        chosen[next] = true;
        out.push(next);
        for i in 0..total {
            let d = sq_dist(&points[i], &points[next]);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    Ok(out)
}
