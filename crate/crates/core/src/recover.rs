//! Private-value curves recovered from fits, and distribution functionals.

use serde::{Deserialize, Serialize};

use crate::aqr::{ols_bids, AqrFit};
use crate::basis::Kernel;
use crate::error::{Error, Result};
use crate::model::AuctionSample;
use crate::quadrature::trapezoid_weights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub x: Vec<f64>,
    pub bidders: u32,
    pub nu: f64,
    /// Number of observations behind the curve, used by rule-of-thumb bandwidths.
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub provenance: Provenance,
    /// Set when `values` is known to be nondecreasing.
    pub monotone: bool,
}

impl ValueCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("curve grid must be nonempty and strictly increasing".into()));
        }
        let monotone = values.windows(2).all(|w| w[1] >= w[0]);
        Ok(Self { grid, values, provenance, monotone })
    }

    /// Curve from a known function, for oracles and truth-fed checks.
    pub fn from_fn<F: Fn(f64) -> f64>(grid: Vec<f64>, f: F, n_obs: usize) -> Result<Self> {
        let values = grid.iter().map(|&a| f(a)).collect();
        let provenance = Provenance { source: "function".into(), x: vec![], bidders: 2, nu: 1.0, n_obs };
        Self::new(grid, values, provenance)
    }

    /// Linear interpolation, constant beyond the grid ends.
    pub fn eval(&self, alpha: f64) -> f64 {
        let g = &self.grid;
        let n = g.len();
        if alpha <= g[0] {
            return self.values[0];
        }
        if alpha >= g[n - 1] {
            return self.values[n - 1];
        }
        let k = g.partition_point(|&v| v <= alpha) - 1;
        let w = (alpha - g[k]) / (g[k + 1] - g[k]);
        self.values[k] + w * (self.values[k + 1] - self.values[k])
    }

    fn weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.grid)
    }

    /// `∫ V̂ dα` and `(∫ (V̂ - mean)² dα)^{1/2}` on the grid.
    pub fn mean_sd(&self) -> (f64, f64) {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        let mean = w.iter().zip(&self.values).map(|(w, v)| w * v).sum::<f64>() / total;
        let var = w.iter().zip(&self.values).map(|(w, v)| w * (v - mean).powi(2)).sum::<f64>() / total;
        (mean, var.sqrt())
    }
}

/// `V̂(α|x)` with markup scaled by `ν`.
pub fn private_value(fit: &AqrFit, alpha: f64, x: &[f64], nu: f64) -> Result<f64> {
    fit.value(alpha, x, nu)
}

/// `V̂(·|x)` on the fit grid.
pub fn value_curve(fit: &AqrFit, x: &[f64], nu: f64) -> Result<ValueCurve> {
    let values = fit.grid.iter().map(|&a| fit.value(a, x, nu)).collect::<Result<Vec<_>>>()?;
    let provenance = Provenance { source: "aqr".into(), x: x.to_vec(), bidders: fit.bidders, nu, n_obs: fit.n_obs };
    ValueCurve::new(fit.grid.clone(), values, provenance)
}

/// `B̂(·|x)` on the fit grid.
pub fn bid_curve(fit: &AqrFit, x: &[f64]) -> Result<ValueCurve> {
    let values = fit.grid.iter().map(|&a| fit.bid(a, x)).collect::<Result<Vec<_>>>()?;
    let provenance = Provenance { source: "aqr-bid".into(), x: x.to_vec(), bidders: fit.bidders, nu: 1.0, n_obs: fit.n_obs };
    ValueCurve::new(fit.grid.clone(), values, provenance)
}

/// Monotone rearrangement: values sorted over the same grid.
pub fn rearrange(curve: &ValueCurve) -> ValueCurve {
    let mut values = curve.values.clone();
    values.sort_by(f64::total_cmp);
    ValueCurve { values, monotone: true, ..curve.clone() }
}

/// `∫ 1[V̂(α) ≤ v] dα` with trapezoid weights.
pub fn cdf_indicator(curve: &ValueCurve, v: f64) -> f64 {
    curve
        .weights()
        .iter()
        .zip(&curve.values)
        .filter(|(_, &val)| val <= v)
        .map(|(w, _)| w)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("smoothing parameter {eta} must be positive")))
    }
}

/// `∫ 𝕀_η(v - V̂(α)) dα` with `𝕀_η(t) = ∫_{-∞}^{t/η} k`.
pub fn cdf_smoothed(curve: &ValueCurve, v: f64, eta: f64, kernel: Kernel) -> Result<f64> {
    check_eta(eta)?;
    Ok(curve.weights().iter().zip(&curve.values).map(|(w, val)| w * kernel.cdf((v - val) / eta)).sum())
}

/// `(1/η) ∫ k((v - V̂(α))/η) dα`.
pub fn pdf_smoothed(curve: &ValueCurve, v: f64, eta: f64, kernel: Kernel) -> Result<f64> {
    check_eta(eta)?;
    Ok(curve.weights().iter().zip(&curve.values).map(|(w, val)| w * kernel.eval((v - val) / eta)).sum::<f64>() / eta)
}

/// Rule-of-thumb bandwidth `3 (LI)^{-1/5} sd_α(V̂)`.
pub fn aqr_pdf_bandwidth(curve: &ValueCurve) -> Result<f64> {
    let (_, sd) = curve.mean_sd();
    let scale = curve.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    // Below the solver tolerance a curve is constant.
    if !(sd > 1e-8 * scale) {
        return Err(Error::Degenerate("degenerate rule-of-thumb bandwidth: the value curve is constant".into()));
    }
    let n = curve.provenance.n_obs.max(1) as f64;
    Ok(3.0 * n.powf(-0.2) * sd)
}

/// Triweight pdf estimate with the rule-of-thumb bandwidth.
pub fn aqr_pdf(curve: &ValueCurve, v: f64) -> Result<f64> {
    let h = aqr_pdf_bandwidth(curve)?;
    pdf_smoothed(curve, v, h, Kernel::Triweight)
}

pub(crate) fn median_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Sample standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoValue {
    pub auction_id: u64,
    pub bid: f64,
    pub value: f64,
    pub cdf: f64,
    pub density: f64,
    /// Excluded downstream: density below the floor or bid within one
    /// bandwidth of the sample boundary.
    pub trimmed: bool,
}

pub const GPV_DENSITY_FLOOR: f64 = 1e-6;

/// Two-step pseudo-values `B + Ĝ(B)/((I-1)ĝ(B))` on homogenized bids.
///
/// `bandwidth = None` uses `2.978 · 1.06 · sd · n^{-1/5}`, the normal
/// reference rule rescaled to the triweight kernel.
pub fn gpv_pseudo_values(sample: &AuctionSample, bidders: u32, bandwidth: Option<f64>) -> Result<Vec<PseudoValue>> {
    let records = sample.with_bidders(bidders)?;
    let slopes = if sample.dim() > 0 { ols_bids(sample, bidders)?[1..].to_vec() } else { vec![] };
    let mut obs = Vec::new();
    for r in &records {
        let shift: f64 = slopes.iter().zip(&r.x).map(|(a, b)| a * b).sum();
        for &b in &r.bids {
            obs.push((r.id, shift, b - shift));
        }
    }
    let homog: Vec<f64> = obs.iter().map(|o| o.2).collect();
    let n = homog.len();
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(Error::InvalidParameter(format!("bandwidth {h} must be positive"))),
        None => 2.978 * 1.06 * std_dev(&homog) * (n as f64).powf(-0.2),
    };
    if !(h > 0.0) {
        return Err(Error::Degenerate("bids have no spread".into()));
    }
    let mut sorted = homog.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let i1 = f64::from(bidders - 1);
    Ok(obs
        .iter()
        .map(|&(id, shift, b)| {
            let cdf = sorted.partition_point(|&v| v <= b) as f64 / n as f64;
            let density = homog.iter().map(|&v| Kernel::Triweight.eval((b - v) / h)).sum::<f64>() / (n as f64 * h);
            let trimmed = density < GPV_DENSITY_FLOOR || b < lo + h || b > hi - h;
            let markup = if density > 0.0 { cdf / (i1 * density) } else { f64::INFINITY };
            PseudoValue { auction_id: id, bid: b + shift, value: b + shift + markup, cdf, density, trimmed }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aqr::uniform_grid;

    fn identity_curve() -> ValueCurve {
        ValueCurve::from_fn(uniform_grid(100), |a| a, 1000).unwrap()
    }

    #[test]
    fn rearrangement_sorts() {
        let c = ValueCurve::from_fn(vec![0.0, 0.5, 1.0], |a| [3.0, 1.0, 2.0][(a * 2.0) as usize], 10).unwrap();
        assert!(!c.monotone);
        let r = rearrange(&c);
        assert_eq!(r.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(rearrange(&r), r);
        let id = identity_curve();
        assert_eq!(rearrange(&id).values, id.values);
    }

    #[test]
    fn indicator_cdf() {
        let c = identity_curve();
        assert!((cdf_indicator(&c, 0.5) - 0.5).abs() <= 0.01);
        assert_eq!(cdf_indicator(&c, -1.0), 0.0);
        assert_eq!(cdf_indicator(&c, 2.0), 1.0);
    }

    #[test]
    fn smoothed_functionals() {
        let c = identity_curve();
        let f = cdf_smoothed(&c, 0.5, 0.1, Kernel::Epanechnikov).unwrap();
        assert!((f - 0.5).abs() < 1e-14);
        let fine = ValueCurve::from_fn(uniform_grid(2000), |a| a, 1000).unwrap();
        let d = pdf_smoothed(&fine, 0.4, 0.02, Kernel::Triweight).unwrap();
        assert!((d - 1.0).abs() < 0.02);
        assert!(pdf_smoothed(&c, 0.4, 0.0, Kernel::Triweight).is_err());
    }

    #[test]
    fn constant_curve_has_no_pdf_bandwidth() {
        let c = ValueCurve::from_fn(uniform_grid(10), |_| 2.0, 100).unwrap();
        assert!(matches!(aqr_pdf(&c, 2.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn aqr_pdf_integrates_to_one() {
        let c = ValueCurve::from_fn(uniform_grid(100), crate::model::trig_quantile, 200).unwrap();
        let h = aqr_pdf_bandwidth(&c).unwrap();
        let (lo, hi) = (0.5 - 3.0 * h, std::f64::consts::FRAC_PI_2 + 3.0 * h);
        let n = 512;
        let step = (hi - lo) / (n - 1) as f64;
        let total: f64 = (0..n).map(|k| aqr_pdf(&c, lo + k as f64 * step).unwrap() * step).sum();
        assert!((total - 1.0).abs() < 0.02, "{total}");
    }
}
