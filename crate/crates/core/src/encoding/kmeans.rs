use rand::{RngExt, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{MopError, Result};

/// `k × dim` matrix of cluster centers, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    centers: Vec<f64>,
    k: usize,
    dim: usize,
}

impl Codebook {
    pub fn new(k: usize, dim: usize, centers: Vec<f64>) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(MopError::invalid("codebook needs k >= 1 and dim >= 1"));
        }
        if centers.len() != k * dim {
            return Err(MopError::invalid(format!(
                "codebook has {} values, expected {k}x{dim}",
                centers.len()
            )));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(MopError::Numerical("codebook centers must be finite".into()));
        }
        Ok(Codebook { centers, k, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut centers = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.as_ref().len() != dim {
                return Err(MopError::invalid("codebook rows differ in length"));
            }
            centers.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), dim, centers)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest center and its squared distance; ties go to the lower index.
    pub fn nearest(&self, p: &[f64]) -> (usize, f64) {
        nearest(&self.centers, self.dim, p)
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[f64], dim: usize, p: &[f64]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, c) in centers.chunks_exact(dim).enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Relative inertia improvement below which iteration stops.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iters() -> usize {
    100
}

fn default_tol() -> f64 {
    1e-6
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iters: default_max_iters(),
            tol: default_tol(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Inertia of the seeding followed by one entry per accepted Lloyd step;
    /// non-increasing.
    pub inertia_history: Vec<f64>,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("history is never empty")
    }

    pub fn iterations(&self) -> usize {
        self.inertia_history.len() - 1
    }
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// Randomness comes from SplitMix64 seeded with `cfg.seed`: the first center
/// is a uniform index, later ones are drawn with probability proportional
/// to squared distance from the chosen set. A cluster left empty after an
/// assignment is moved onto the point farthest from its current center
/// (points already used for a repair in the same step are skipped).
/// Iteration stops after `max_iters` updates, once the relative inertia
/// improvement drops under `tol`, or when an update would raise inertia
/// through rounding; the returned centers always match the last recorded
/// inertia.
pub fn kmeans_fit<R: AsRef<[f64]> + Sync>(samples: &[R], cfg: &KMeansConfig) -> Result<KMeansFit> {
    let n = samples.len();
    let k = cfg.k;
    if k == 0 {
        return Err(MopError::invalid("codebook: k must be >= 1"));
    }
    if n < k {
        return Err(MopError::invalid(format!("codebook: N < k ({n} < {k})")));
    }
    let dim = samples[0].as_ref().len();
    if dim == 0 {
        return Err(MopError::invalid("codebook: samples must be non-empty vectors"));
    }
    for (i, s) in samples.iter().enumerate() {
        let s = s.as_ref();
        if s.len() != dim {
            return Err(MopError::invalid(format!(
                "codebook: sample {i} has length {}, expected {dim}",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(MopError::Numerical(format!("codebook: sample {i} is not finite")));
        }
    }

    let mut rng = SplitMix64::seed_from_u64(cfg.seed);
    let mut centers = kmeanspp(samples, k, dim, &mut rng);
    let (mut assign, mut dists) = assign_all(samples, &centers, dim);
    let mut inertia: f64 = dists.iter().sum();
    let mut history = vec![inertia];
    let tol = cfg.tol;

    for _ in 0..cfg.max_iters {
        if inertia == 0.0 {
            break;
        }
        let updated = update_centers(samples, &assign, &dists, k, dim);
        let (new_assign, new_dists) = assign_all(samples, &updated, dim);
        let new_inertia: f64 = new_dists.iter().sum();
        if new_inertia > inertia {
            break;
        }
        let improvement = (inertia - new_inertia) / inertia;
        centers = updated;
        assign = new_assign;
        dists = new_dists;
        inertia = new_inertia;
        history.push(inertia);
        if improvement < tol {
            break;
        }
    }

    Ok(KMeansFit {
        codebook: Codebook::new(k, dim, centers)?,
        inertia_history: history,
    })
}

fn kmeanspp<R: AsRef<[f64]>>(samples: &[R], k: usize, dim: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let n = samples.len();
    let mut chosen = vec![false; n];
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centers.extend_from_slice(samples[first].as_ref());
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|s| squared_distance(s.as_ref(), samples[first].as_ref()))
        .collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` just under `target`
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every point coincides with a chosen center
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = samples[pick].as_ref();
        centers.extend_from_slice(c);
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(squared_distance(s.as_ref(), c));
        }
    }
    centers
}

fn assign_all<R: AsRef<[f64]> + Sync>(samples: &[R], centers: &[f64], dim: usize) -> (Vec<usize>, Vec<f64>) {
    use rayon::prelude::*;
    samples
        .par_iter()
        .map(|s| nearest(centers, dim, s.as_ref()))
        .unzip()
}

fn update_centers<R: AsRef<[f64]>>(
    samples: &[R],
    assign: &[usize],
    dists: &[f64],
    k: usize,
    dim: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (s, &c) in samples.iter().zip(assign) {
        counts[c] += 1;
        for (acc, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(s.as_ref()) {
            *acc += v;
        }
    }
    let mut used = vec![false; samples.len()];
    for c in 0..k {
        if counts[c] > 0 {
            let inv = counts[c] as f64;
            sums[c * dim..(c + 1) * dim].iter_mut().for_each(|v| *v /= inv);
            continue;
        }
        let far = (0..samples.len())
            .filter(|&i| !used[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("N >= k leaves a point for every empty cluster");
        used[far] = true;
        sums[c * dim..(c + 1) * dim].copy_from_slice(samples[far].as_ref());
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive optimum over all assignments of points to `k` labels.
    fn brute_force_inertia(points: &[f64], k: usize) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for code in 0..k.pow(n as u32) {
            let mut labels = vec![0; n];
            let mut c = code;
            for l in labels.iter_mut() {
                *l = c % k;
                c /= k;
            }
            let mut cost = 0.0;
            for cl in 0..k {
                let members: Vec<f64> = (0..n).filter(|&i| labels[i] == cl).map(|i| points[i]).collect();
                if members.is_empty() {
                    continue;
                }
                let m = members.iter().sum::<f64>() / members.len() as f64;
                cost += members.iter().map(|x| (x - m).powi(2)).sum::<f64>();
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn one_dimensional_two_clusters() {
        let pts = [0.0, 1.0, 10.0, 11.0];
        assert_eq!(brute_force_inertia(&pts, 2), 1.0);
        let rows: Vec<Vec<f64>> = pts.iter().map(|&p| vec![p]).collect();
        for seed in 0..20 {
            let fit = kmeans_fit(&rows, &KMeansConfig::new(2, seed)).unwrap();
            let mut c: Vec<f64> = fit.codebook.centers().to_vec();
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(c, vec![0.5, 10.5], "seed {seed}");
            assert_eq!(fit.inertia(), 1.0);
        }
    }

    #[test]
    fn n_equals_k_recovers_points() {
        let rows = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![4.0, 4.0]];
        let fit = kmeans_fit(&rows, &KMeansConfig::new(3, 7)).unwrap();
        assert_eq!(fit.inertia(), 0.0);
        let mut got: Vec<Vec<f64>> = (0..3).map(|i| fit.codebook.center(i).to_vec()).collect();
        let mut want = rows.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn deterministic_for_seed() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i * 37 % 11) as f64, (i * 13 % 7) as f64]).collect();
        let a = kmeans_fit(&rows, &KMeansConfig::new(5, 3)).unwrap();
        let b = kmeans_fit(&rows, &KMeansConfig::new(5, 3)).unwrap();
        assert_eq!(a.codebook, b.codebook);
        assert_eq!(a.inertia_history, b.inertia_history);
    }

    #[test]
    fn too_few_samples() {
        let rows = vec![vec![0.0]; 99];
        match kmeans_fit(&rows, &KMeansConfig::new(100, 0)) {
            Err(MopError::InvalidArgument(msg)) => assert!(msg.contains("N < k")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_points_do_not_panic() {
        let rows = vec![vec![1.0]; 5];
        let fit = kmeans_fit(&rows, &KMeansConfig::new(3, 0)).unwrap();
        assert_eq!(fit.inertia(), 0.0);
    }

    #[test]
    fn empty_cluster_is_repaired_onto_farthest_point() {
        // cluster 1 owns nothing; point 3 is farthest from its center
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![9.0]];
        let assign = vec![0, 0, 0, 0];
        let dists: Vec<f64> = rows.iter().map(|r| (r[0] - 3.0f64).powi(2)).collect();
        let c = update_centers(&rows, &assign, &dists, 2, 1);
        assert_eq!(c, vec![3.0, 9.0]);
    }

    #[test]
    fn nearest_prefers_lower_index_on_ties() {
        let book = Codebook::new(2, 1, vec![-1.0, 1.0]).unwrap();
        assert_eq!(book.nearest(&[0.0]).0, 0);
    }
}
