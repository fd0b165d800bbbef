use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{MopError, Result};

pub const DEFAULT_WHITEN_EPSILON: f64 = 1e-9;

/// Fitted linear projection onto the leading principal directions.
///
/// `components` is `output_dim × input_dim`, row-major, with orthonormal
/// rows ordered by non-increasing eigenvalue. Each row is sign-fixed so its
/// largest-magnitude entry (first one on ties) is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub(crate) mean: Vec<f64>,
    pub(crate) components: Vec<f64>,
    pub(crate) eigenvalues: Vec<f64>,
    pub(crate) whiten: bool,
    pub(crate) epsilon: f64,
}

impl PcaModel {
    /// Assembles a model from parts, checking shapes.
    pub fn from_parts(
        mean: Vec<f64>,
        components: Vec<f64>,
        eigenvalues: Vec<f64>,
        whiten: bool,
        epsilon: f64,
    ) -> Result<Self> {
        let d_in = mean.len();
        let d_out = eigenvalues.len();
        if d_in == 0 || components.len() != d_in * d_out {
            return Err(MopError::invalid(format!(
                "PCA components have {} values, expected {d_out}x{d_in}",
                components.len()
            )));
        }
        if !(epsilon >= 0.0) {
            return Err(MopError::invalid("PCA epsilon must be >= 0"));
        }
        Ok(PcaModel {
            mean,
            components,
            eigenvalues,
            whiten,
            epsilon,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.components[i * d..(i + 1) * d]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn whiten(&self) -> bool {
        self.whiten
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_whitening(mut self, whiten: bool) -> Self {
        self.whiten = whiten;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(MopError::invalid(format!(
                "PCA input has length {}, model expects {}",
                v.len(),
                self.input_dim()
            )));
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.output_dim())
            .map(|i| {
                let proj: f64 = self
                    .component(i)
                    .iter()
                    .zip(&centered)
                    .map(|(c, x)| c * x)
                    .sum();
                if self.whiten {
                    proj / (self.eigenvalues[i] + self.epsilon).sqrt()
                } else {
                    proj
                }
            })
            .collect())
    }

    /// Maps a (non-whitened) projection back to the input space.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (i, &c) in coords.iter().enumerate().take(self.output_dim()) {
            for (o, w) in out.iter_mut().zip(self.component(i)) {
                *o += c * w;
            }
        }
        out
    }
}

/// Fits PCA with the sample covariance (divisor `N - 1`).
///
/// The requested dimension is clamped to `min(N - 1, D)`; the effective
/// value is `output_dim()` of the result. When `D > N` the eigenproblem is
/// solved on the `N × N` Gram matrix instead of the `D × D` covariance.
pub fn pca_fit<R: AsRef<[f64]>>(samples: &[R], d_out: usize) -> Result<PcaModel> {
    let n = samples.len();
    if n < 2 {
        return Err(MopError::invalid(format!("PCA needs at least 2 samples, got {n}")));
    }
    let d = samples[0].as_ref().len();
    if d == 0 {
        return Err(MopError::invalid("PCA samples must be non-empty vectors"));
    }
    if d_out == 0 {
        return Err(MopError::invalid("PCA output dimension must be >= 1"));
    }
    let mut mean = vec![0.0; d];
    for (i, s) in samples.iter().enumerate() {
        let s = s.as_ref();
        if s.len() != d {
            return Err(MopError::invalid(format!(
                "PCA sample {i} has length {}, expected {d}",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(MopError::Numerical(format!("PCA sample {i} is not finite")));
        }
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let bound = (n - 1).min(d);
    let k = if d_out > bound {
        warn!("PCA output dimension {d_out} clamped to {bound} (N = {n}, D = {d})");
        bound
    } else {
        d_out
    };

    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, s) in samples.iter().enumerate() {
        for (j, (v, m)) in s.as_ref().iter().zip(&mean).enumerate() {
            centered[(i, j)] = v - m;
        }
    }
    let denom = (n - 1) as f64;

    let (eigenvalues, mut rows) = if d <= n {
        let cov = (centered.transpose() * &centered) / denom;
        let (vals, vecs) = sorted_eigen(cov, k);
        let rows: Vec<Vec<f64>> = vecs
            .iter()
            .map(|col| col_to_vec(col, d))
            .collect::<Vec<_>>();
        (vals, rows)
    } else {
        let gram = (&centered * centered.transpose()) / denom;
        let (vals, vecs) = sorted_eigen(gram, k);
        let rows = vals
            .iter()
            .zip(&vecs)
            .map(|(&lambda, u)| {
                let u = DMatrix::from_column_slice(n, 1, u.as_slice());
                let v = centered.transpose() * u;
                let scale = (denom * lambda).sqrt();
                let mut row: Vec<f64> = v.iter().copied().collect();
                if scale > 0.0 {
                    row.iter_mut().for_each(|x| *x /= scale);
                }
                row
            })
            .collect();
        (vals, rows)
    };

    orthonormalize(&mut rows);
    for row in rows.iter_mut() {
        sign_fix(row);
    }
    let components = rows.into_iter().flatten().collect();
    PcaModel::from_parts(mean, components, eigenvalues, false, DEFAULT_WHITEN_EPSILON)
}

/// Top-`k` eigenpairs of a symmetric matrix, eigenvalues non-increasing and
/// clamped at zero. Ties keep nalgebra's index order.
fn sorted_eigen(m: DMatrix<f64>, k: usize) -> (Vec<f64>, Vec<nalgebra::DVector<f64>>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    let vals = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vecs = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    (vals, vecs)
}

fn col_to_vec(col: &nalgebra::DVector<f64>, d: usize) -> Vec<f64> {
    debug_assert_eq!(col.len(), d);
    col.iter().copied().collect()
}

/// Modified Gram-Schmidt over the rows. A row that collapses (it came from
/// a null direction of the data) is replaced by the first standard basis
/// vector that is still independent of the rows before it.
fn orthonormalize(rows: &mut [Vec<f64>]) {
    let d = rows.first().map_or(0, Vec::len);
    let mut next_basis = 0usize;
    for i in 0..rows.len() {
        let (done, rest) = rows.split_at_mut(i);
        let row = &mut rest[0];
        if !project_out_and_normalize(row, done) {
            loop {
                assert!(next_basis < d, "ran out of basis vectors");
                let mut e = vec![0.0; d];
                e[next_basis] = 1.0;
                next_basis += 1;
                if project_out_and_normalize(&mut e, done) {
                    *row = e;
                    break;
                }
            }
        }
    }
}

fn project_out_and_normalize(row: &mut [f64], basis: &[Vec<f64>]) -> bool {
    let before = norm(row);
    for _ in 0..2 {
        for b in basis {
            let dot: f64 = row.iter().zip(b).map(|(x, y)| x * y).sum();
            row.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
    }
    let after = norm(row);
    if before == 0.0 || after <= 1e-8 * before.max(1.0) {
        return false;
    }
    row.iter_mut().for_each(|x| *x /= after);
    true
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sign_fix(row: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = i;
        }
    }
    if row[best] < 0.0 {
        row.iter_mut().for_each(|x| *x = -*x);
    }
}
