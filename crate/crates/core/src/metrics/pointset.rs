//! Farthest point sampling and set-to-set matching distances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::par;
use crate::rng::{stream, substream};

fn dist2(a: &Point3, b: &Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Greedy farthest point sampling. The first index is drawn from `seed`; each
/// later pick maximizes the distance to the selected set, ties going to the
/// lowest index. Returns indices in selection order.
pub fn farthest_point_indices(cloud: &PointCloud, n: usize, seed: u64) -> Result<Vec<usize>> {
    let pts = cloud.points();
    if n == 0 || n > pts.len() {
        return Err(Error::invalid(format!(
            "cannot sample {n} points from a cloud of {}",
            pts.len()
        )));
    }
    let first = substream(seed, stream::METRICS).gen_range(0..pts.len());
    farthest_point_indices_from(pts, n, first)
}

/// Farthest point sampling with a fixed first pick.
pub fn farthest_point_indices_from(pts: &[Point3], n: usize, first: usize) -> Result<Vec<usize>> {
    if n == 0 || n > pts.len() || first >= pts.len() {
        return Err(Error::invalid("farthest point sampling out of range"));
    }
    let mut picked = Vec::with_capacity(n);
    let mut best = vec![f64::INFINITY; pts.len()];
    let mut cur = first;
    for _ in 0..n {
        picked.push(cur);
        best[cur] = f64::NEG_INFINITY;
        let mut next = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in pts.iter().enumerate() {
            if best[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(p, &pts[cur]);
            if d < best[i] {
                best[i] = d;
            }
            if best[i] > next.0 {
                next = (best[i], i);
            }
        }
        cur = next.1;
    }
    Ok(picked)
}

pub fn farthest_point_sample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    Ok(cloud.select(&farthest_point_indices(cloud, n, seed)?))
}

/// Base distance for the minimum-matching metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchBase {
    /// Mean nearest-neighbour distance in both directions, summed.
    #[default]
    Chamfer,
    /// Mean distance under the optimal one-to-one assignment (equal sizes).
    Emd,
}

pub fn chamfer(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let one_way = |x: &[Point3], y: &[Point3]| -> f64 {
        x.iter()
            .map(|p| y.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min).sqrt())
            .sum::<f64>()
            / x.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

/// Minimum-cost perfect matching on a square cost matrix (row-major), by the
/// shortest augmenting path method with potentials, O(n^3). Returns the column
/// assigned to each row.
pub fn assignment(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::shape("assignment", &[cost.len()], &[n, n]));
    }
    // 1-based arrays; index 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(Error::Numerical("assignment costs must be finite".into()));
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[owner[j] - 1] = j - 1;
    }
    Ok(out)
}

pub fn emd(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if a.len() != b.len() {
        return Err(Error::shape("emd", &[a.len()], &[b.len()]));
    }
    let n = a.len();
    let cost: Vec<f64> = a.iter().flat_map(|p| b.iter().map(move |q| dist2(p, q).sqrt())).collect();
    let asg = assignment(&cost, n)?;
    Ok(asg.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64)
}

pub fn match_distance(a: &[Point3], b: &[Point3], base: MatchBase) -> Result<f64> {
    match base {
        MatchBase::Chamfer => chamfer(a, b),
        MatchBase::Emd => emd(a, b),
    }
}

/// Mean over generated clouds of the smallest distance to any real cloud.
/// Clouds are used as given; subsample beforehand.
pub fn min_matching_distance(gen: &[PointCloud], real: &[PointCloud], base: MatchBase) -> Result<f64> {
    if gen.is_empty() || real.is_empty() {
        return Err(Error::invalid("minimum matching distance needs two non-empty sets"));
    }
    let per_gen = par::map_indexed(gen.len(), |i| -> Result<f64> {
        let mut best = f64::INFINITY;
        for r in real {
            best = best.min(match_distance(gen[i].points(), r.points(), base)?);
        }
        Ok(best)
    });
    let mut total = 0.0;
    for d in per_gen {
        total += d?;
    }
    Ok(total / gen.len() as f64)
}
