use serde::{Deserialize, Serialize};

use super::kmeans::{squared_distance, Codebook};
use crate::error::{MopError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VladConfig {
    /// Number of nearest centers each patch contributes to.
    #[serde(default = "default_r")]
    pub r: usize,
    /// Standard deviation of the Gaussian assignment kernel.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Exponent of the signed power normalization.
    #[serde(default = "default_alpha")]
    pub power_alpha: f64,
}

fn default_r() -> usize {
    5
}

fn default_sigma() -> f64 {
    10.0
}

fn default_alpha() -> f64 {
    0.5
}

impl Default for VladConfig {
    fn default() -> Self {
        VladConfig {
            r: default_r(),
            sigma: default_sigma(),
            power_alpha: default_alpha(),
        }
    }
}

impl VladConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(MopError::invalid("VLAD r must be >= 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(MopError::invalid(format!("VLAD sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.power_alpha > 0.0 && self.power_alpha <= 1.0) {
            return Err(MopError::invalid(format!(
                "power exponent must be in (0, 1], got {}",
                self.power_alpha
            )));
        }
        Ok(())
    }

    fn validate_for(&self, book: &Codebook) -> Result<()> {
        self.validate()?;
        if self.r > book.k() {
            return Err(MopError::invalid(format!(
                "VLAD r = {} exceeds codebook size {}",
                self.r,
                book.k()
            )));
        }
        Ok(())
    }
}

/// Weights of the `r` nearest centers of `p`.
///
/// Centers are ranked by Euclidean distance with ties going to the lower
/// index. Raw weights are `exp(-d² / (2σ²))` normalized to sum to one; if
/// every raw weight underflows, the `r` centers share weight `1 / r`.
pub fn soft_assign(cfg: &VladConfig, book: &Codebook, p: &[f64]) -> Result<Vec<(usize, f64)>> {
    cfg.validate_for(book)?;
    if p.len() != book.dim() {
        return Err(MopError::invalid(format!(
            "descriptor has length {}, codebook expects {}",
            p.len(),
            book.dim()
        )));
    }
    Ok(assign_unchecked(cfg, book, p))
}

fn assign_unchecked(cfg: &VladConfig, book: &Codebook, p: &[f64]) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = (0..book.k())
        .map(|i| (i, squared_distance(p, book.center(i))))
        .collect();
    if cfg.r == 1 {
        let best = ranked
            .iter()
            .fold(ranked[0], |b, &c| if c.1 < b.1 { c } else { b });
        return vec![(best.0, 1.0)];
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked.truncate(cfg.r);

    let two_var = 2.0 * cfg.sigma * cfg.sigma;
    let raw: Vec<f64> = ranked.iter().map(|&(_, d2)| (-d2 / two_var).exp()).collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 && total.is_finite() {
        ranked
            .iter()
            .zip(raw)
            .map(|(&(i, _), w)| (i, w / total))
            .collect()
    } else {
        let uniform = 1.0 / cfg.r as f64;
        ranked.iter().map(|&(i, _)| (i, uniform)).collect()
    }
}

/// Soft-assignment VLAD: one `dim`-length residual block per center.
///
/// Block `i` sums `w_ji (p_j - c_i)` over the patches that have center `i`
/// among their `r` nearest, accumulated in patch-list order. No
/// normalization is applied.
pub fn vlad_encode<R: AsRef<[f64]>>(cfg: &VladConfig, book: &Codebook, patches: &[R]) -> Result<Vec<f64>> {
    cfg.validate_for(book)?;
    if patches.is_empty() {
        return Err(MopError::invalid("VLAD needs at least one patch"));
    }
    let dim = book.dim();
    let mut out = vec![0.0; book.k() * dim];
    for (j, p) in patches.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(MopError::invalid(format!(
                "patch {j} has length {}, codebook expects {dim}",
                p.len()
            )));
        }
        for (i, w) in assign_unchecked(cfg, book, p) {
            let cell = &mut out[i * dim..(i + 1) * dim];
            for ((acc, x), c) in cell.iter_mut().zip(p).zip(book.center(i)) {
                *acc += w * (x - c);
            }
        }
    }
    Ok(out)
}

/// Signed power normalization followed by L2 normalization. The zero
/// vector is returned unchanged.
pub fn normalize_chain(v: &[f64], alpha: f64) -> Vec<f64> {
    let powered: Vec<f64> = if alpha == 1.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x.signum() * x.abs().powf(alpha)).collect()
    };
    l2_normalize(powered)
}

pub fn l2_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        // keep -0.0 and friends out of the output
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    v
}
