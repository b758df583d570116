//! Thin wrappers over nalgebra's SVD with the conventions used throughout:
//! singular values sorted non-increasing, thin factors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub struct Svd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl Svd {
    /// Number of singular values above `rel * sigma_max` (and above `abs`).
    pub fn rank(&self, rel: f64, abs: f64) -> usize {
        let smax = self.sigma.iter().cloned().fold(0.0, f64::max);
        let cut = (rel * smax).max(abs);
        self.sigma.iter().filter(|&&s| s > cut).count()
    }

    pub fn u_cols(&self, r: usize) -> DMatrix<f64> {
        self.u.columns(0, r).into_owned()
    }

    pub fn v_cols(&self, r: usize) -> DMatrix<f64> {
        self.v_t.rows(0, r).transpose()
    }
}

pub fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("SVD of a non-finite matrix".into()));
    }
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Ok(Svd { u: DMatrix::zeros(r, 0), sigma: DVector::zeros(0), v_t: DMatrix::zeros(0, c) });
    }
    // faer rather than nalgebra: nalgebra's implicit-QR SVD can return
    // factors that do not reconstruct `m` when singular values repeat, which
    // the block matrices here do by construction.
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let s = fm.thin_svd().map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    let (u, sv, v) = (s.U(), s.S().column_vector(), s.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    Ok(Svd {
        u: DMatrix::from_fn(r, k, |i, j| u[(i, order[j])]),
        sigma: DVector::from_fn(k, |i, _| sv[order[i]]),
        v_t: DMatrix::from_fn(k, c, |i, j| v[(j, order[i])]),
    })
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(svd(m)?.sigma.sum())
}

pub fn op_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(svd(m)?.sigma.iter().cloned().fold(0.0, f64::max))
}

/// Effective rank with a cutoff relative to `sigma_max` and an absolute floor.
pub fn effective_rank(m: &DMatrix<f64>, rel: f64, abs: f64) -> Result<usize> {
    Ok(svd(m)?.rank(rel, abs))
}

/// Moore-Penrose pseudo-inverse; singular values at or below `rel * sigma_max`
/// are dropped.
pub fn pinv(m: &DMatrix<f64>, rel: f64) -> Result<DMatrix<f64>> {
    let s = svd(m)?;
    let smax = s.sigma.iter().cloned().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    if smax == 0.0 {
        return Ok(out);
    }
    for i in 0..s.sigma.len() {
        if s.sigma[i] > rel * smax {
            out += (s.v_t.row(i).transpose() * s.u.column(i).transpose()) / s.sigma[i];
        }
    }
    Ok(out)
}

pub fn logsumexp(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = x.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + x.map(|v| (v - mx).exp()).sum::<f64>().ln()
}
