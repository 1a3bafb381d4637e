//! Reconstruction and distinction losses.
//!
//! All norms are root-mean-square: the L2 norm divided by the square root of
//! the element count (the masked element count for the distinction terms).

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the distinction term.
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 1.0, epsilon: 1e-6 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be >= 0");
        contract!(self.epsilon > 0.0 && self.epsilon.is_finite(), "epsilon must be > 0");
        Ok(())
    }
}

/// `sqrt(mean((target - pred)^2))`.
pub fn recon_loss(target: &Tensor, pred: &Tensor) -> Result<f64> {
    Ok(recon_loss_grad(target, pred)?.0)
}

/// Reconstruction loss and its gradient w.r.t. `pred`.
pub fn recon_loss_grad(target: &Tensor, pred: &Tensor) -> Result<(f64, Tensor)> {
    target.check_same_shape(pred)?;
    let n = target.len() as f64;
    let sq: f64 = target.data().iter().zip(pred.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let loss = (sq / n).sqrt();
    let grad = if loss > 0.0 {
        target.zip_map(pred, |t, p| (p - t) / (n * loss))?
    } else {
        Tensor::zeros(pred.shape())
    };
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistinctionTerms {
    /// Masked RMS distance between the normal frame and the reconstruction of
    /// the pseudo-anomalous clip.
    pub p: f64,
    /// Masked RMS distance between the pseudo-anomalous frame and that same
    /// reconstruction.
    pub n: f64,
    /// `(p + eps) / (n + eps)`.
    pub dist: f64,
}

pub struct DistinctionGrad {
    pub terms: DistinctionTerms,
    /// d dist / d reconstruction
    pub d_recon: Tensor,
    /// d dist / d pseudo-anomalous middle frame
    pub d_pseudo: Tensor,
}

fn check_mask(mask: &Tensor) -> Result<()> {
    contract!(
        mask.data().iter().all(|&m| m == 0.0 || m == 1.0),
        "mask entries must be exactly 0 or 1"
    );
    Ok(())
}

pub fn distinction_loss(
    normal: &Tensor,
    pseudo: &Tensor,
    recon: &Tensor,
    mask: &Tensor,
    eps: f64,
) -> Result<DistinctionTerms> {
    Ok(distinction_loss_grad(normal, pseudo, recon, mask, eps)?.terms)
}

/// Distinction loss with gradients w.r.t. the reconstruction and the
/// pseudo-anomalous frame.
///
/// An empty mask gives `p = n = 0` and `dist = 1` with zero gradients.
pub fn distinction_loss_grad(
    normal: &Tensor,
    pseudo: &Tensor,
    recon: &Tensor,
    mask: &Tensor,
    eps: f64,
) -> Result<DistinctionGrad> {
    normal.check_same_shape(pseudo)?;
    normal.check_same_shape(recon)?;
    normal.check_same_shape(mask)?;
    check_mask(mask)?;
    contract!(eps > 0.0, "epsilon must be positive");
    let count = mask.sum();
    let mut d_recon = Tensor::zeros(recon.shape());
    let mut d_pseudo = Tensor::zeros(recon.shape());
    if count == 0.0 {
        return Ok(DistinctionGrad {
            terms: DistinctionTerms { p: 0.0, n: 0.0, dist: 1.0 },
            d_recon,
            d_pseudo,
        });
    }
    let (mut sp, mut sn) = (0.0, 0.0);
    for (((&x, &xa), &f), &m) in normal.data().iter().zip(pseudo.data()).zip(recon.data()).zip(mask.data()) {
        sp += m * (x - f) * (x - f);
        sn += m * (xa - f) * (xa - f);
    }
    let p = (sp / count).sqrt();
    let n = (sn / count).sqrt();
    let dist = (p + eps) / (n + eps);
    let dd_dp = 1.0 / (n + eps);
    let dd_dn = -(p + eps) / ((n + eps) * (n + eps));
    let it = normal.data().iter().zip(pseudo.data()).zip(recon.data()).zip(mask.data());
    for (i, (((&x, &xa), &f), &m)) in it.enumerate() {
        if m == 0.0 {
            continue;
        }
        let dp_df = if p > 0.0 { (f - x) / (count * p) } else { 0.0 };
        let dn_df = if n > 0.0 { (f - xa) / (count * n) } else { 0.0 };
        d_recon.data_mut()[i] = dd_dp * dp_df + dd_dn * dn_df;
        d_pseudo.data_mut()[i] = -dd_dn * dn_df;
    }
    Ok(DistinctionGrad { terms: DistinctionTerms { p, n, dist }, d_recon, d_pseudo })
}

/// Batch-averaged loss components. The distinction fields are `None` when
/// the pseudo-anomaly branch is disabled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub p: Option<f64>,
    pub n: Option<f64>,
    pub dist: Option<f64>,
    pub total: f64,
}

/// `recon + lambda * dist`, or just `recon` without a distinction term.
pub fn total_loss(recon: f64, distinction: Option<DistinctionTerms>, cfg: &LossConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    Ok(match distinction {
        Some(d) => LossBreakdown {
            recon,
            p: Some(d.p),
            n: Some(d.n),
            dist: Some(d.dist),
            total: recon + cfg.lambda * d.dist,
        },
        None => LossBreakdown { recon, p: None, n: None, dist: None, total: recon },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn recon_examples() {
        assert_eq!(recon_loss(&t(&[0.3, 0.2]), &t(&[0.3, 0.2])).unwrap(), 0.0);
        assert_eq!(recon_loss(&t(&[1.0, 1.0]), &t(&[0.0, 0.0])).unwrap(), 1.0);
        assert!((recon_loss(&t(&[1.0, 0.0]), &t(&[0.0, 0.0])).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(recon_loss(&t(&[1.0]), &t(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn distinction_scalar_case() {
        let d = distinction_loss(&t(&[1.0]), &t(&[0.5]), &t(&[0.9]), &t(&[1.0]), 1e-6).unwrap();
        assert!((d.p - 0.1).abs() < 1e-12);
        assert!((d.n - 0.4).abs() < 1e-12);
        assert!((d.dist - (0.1 + 1e-6) / (0.4 + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_neutral() {
        let g = distinction_loss_grad(&t(&[1.0, 0.0]), &t(&[0.2, 0.5]), &t(&[0.3, 0.3]), &t(&[0.0, 0.0]), 1e-6).unwrap();
        assert_eq!(g.terms.dist, 1.0);
        assert_eq!(g.terms.p, 0.0);
        assert!(g.d_recon.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_binary_mask() {
        assert!(distinction_loss(&t(&[1.0]), &t(&[0.5]), &t(&[0.9]), &t(&[0.5]), 1e-6).is_err());
    }

    #[test]
    fn total_combines_terms() {
        let cfg = LossConfig::default();
        let d = DistinctionTerms { p: 0.1, n: 0.2, dist: 0.5 };
        let b = total_loss(0.2, Some(d), &cfg).unwrap();
        assert!((b.total - 0.7).abs() < 1e-15);
        let b0 = total_loss(0.2, Some(d), &LossConfig { lambda: 0.0, ..cfg.clone() }).unwrap();
        assert_eq!(b0.total, 0.2);
        let none = total_loss(0.2, None, &cfg).unwrap();
        assert_eq!(none.total, 0.2);
        assert!(none.dist.is_none());
    }
}
