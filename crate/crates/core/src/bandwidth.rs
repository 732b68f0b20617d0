//! IMSE-optimal quantile bandwidth with a parametric pilot.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aqr::{standard_qr, uniform_grid};
use crate::basis::{kernel_constants, Kernel};
use crate::error::{Error, Result};
use crate::model::{augmented, AuctionSample};
use crate::quadrature::trapezoid_weights;

pub const H_MIN: f64 = 0.05;
pub const H_MAX: f64 = 0.95;

/// `(Σ_I / (2(s+1) Bias²_I) / (LI))^{1/(2s+3)}`.
pub fn optimal_bandwidth(sigma: f64, bias2: f64, s: usize, l: usize, bidders: u32) -> Result<f64> {
    if !(sigma > 0.0 && bias2 > 0.0 && sigma.is_finite() && bias2.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth constants must be positive, got {sigma} and {bias2}")));
    }
    if l == 0 || bidders == 0 {
        return Err(Error::InvalidParameter("bandwidth needs a nonempty sample".into()));
    }
    let li = l as f64 * f64::from(bidders);
    let s1 = s as f64 + 1.0;
    Ok((sigma / (2.0 * s1 * bias2) / li).powf(1.0 / (2.0 * s as f64 + 3.0)))
}

/// Bid coefficients as polynomials in `α`: `β_j(α) = Σ_k c_jk α^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyPilot {
    pub coefs: Vec<Vec<f64>>,
}

impl PolyPilot {
    /// `d^r/dα^r x̃'β(α)`.
    pub fn derivative(&self, alpha: f64, x: &[f64], r: usize) -> f64 {
        let xa = augmented(x);
        xa.iter()
            .zip(&self.coefs)
            .map(|(xj, c)| {
                let d: f64 = c
                    .iter()
                    .enumerate()
                    .skip(r)
                    .map(|(k, ck)| {
                        let falling: f64 = (k - r + 1..=k).map(|v| v as f64).product();
                        ck * falling * alpha.powi((k - r) as i32)
                    })
                    .sum();
                xj * d
            })
            .sum()
    }
}

pub const PILOT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Standard quantile regression at nine levels, each coefficient then
/// least-squares fitted by a polynomial of degree `s + 2` in `α`.
pub fn poly_pilot(sample: &AuctionSample, bidders: u32, s: usize) -> Result<PolyPilot> {
    let degree = s + 2;
    if degree + 1 > PILOT_LEVELS.len() {
        return Err(Error::InvalidParameter(format!("order s = {s} is too large for the pilot")));
    }
    let qr = PILOT_LEVELS.iter().map(|&a| standard_qr(sample, bidders, a)).collect::<Result<Vec<_>>>()?;
    let vander = DMatrix::from_fn(PILOT_LEVELS.len(), degree + 1, |i, k| PILOT_LEVELS[i].powi(k as i32));
    let normal = vander.transpose() * &vander;
    let chol = normal.cholesky().ok_or_else(|| Error::Singular("pilot polynomial design".into()))?;
    let dim = qr[0].len();
    let coefs = (0..dim)
        .map(|j| {
            let y = DVector::from_iterator(qr.len(), qr.iter().map(|c| c[j]));
            chol.solve(&(vander.transpose() * y)).iter().copied().collect()
        })
        .collect();
    Ok(PolyPilot { coefs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotConstants {
    pub sigma: f64,
    pub bias2: f64,
    /// Set when a pilot bid derivative was nonpositive and floored.
    pub floored_derivative: bool,
}

// Small relative to any bid slope seen at unit scale.
const DERIVATIVE_FLOOR: f64 = 1e-3;

/// `Σ_I` and `Bias²_I` implied by a pilot, with `∫dx` replaced by the mean
/// over `xs` and interior kernel constants.
pub fn pilot_constants(pilot: &PolyPilot, xs: &[Vec<f64>], bidders: u32, s: usize, kernel: Kernel) -> Result<PilotConstants> {
    if xs.is_empty() {
        return Err(Error::InvalidParameter("empty covariate sample".into()));
    }
    if bidders < 2 {
        return Err(Error::InvalidParameter("bidder count must be at least 2".into()));
    }
    let interior = kernel_constants(kernel, s, 0.5, 0.25)?;
    let grid = uniform_grid(100);
    let w = trapezoid_weights(&grid);
    let i1 = f64::from(bidders - 1);
    let n = xs.len() as f64;
    let aug: Vec<DVector<f64>> = xs.iter().map(|x| DVector::from_vec(augmented(x))).collect();
    let d = aug[0].len();
    let mut p = DMatrix::zeros(d, d);
    for xa in &aug {
        p += xa * xa.transpose() / n;
    }
    let mut floored = false;
    let (mut sigma, mut bias2) = (0.0, 0.0);
    for (&a, &wa) in grid.iter().zip(&w) {
        let mut q = DMatrix::zeros(d, d);
        for (x, xa) in xs.iter().zip(&aug) {
            let mut b1 = pilot.derivative(a, x, 1);
            if b1 < DERIVATIVE_FLOOR {
                b1 = DERIVATIVE_FLOOR;
                floored = true;
            }
            q += xa * xa.transpose() / (n * b1);
            let bias = a * pilot.derivative(a, x, s + 2) / i1 * interior.bias_factor;
            bias2 += wa * bias * bias / n;
        }
        let qinv = q.try_inverse().ok_or_else(|| Error::Singular("pilot covariate moment matrix".into()))?;
        let cov = &qinv * &p * &qinv * (a * a * interior.v2 / (i1 * i1));
        sigma += wa * aug.iter().map(|xa| (xa.transpose() * &cov * xa)[(0, 0)]).sum::<f64>() / n;
    }
    Ok(PilotConstants { sigma, bias2, floored_derivative: floored })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub h_star: f64,
    /// The formula value before clamping; `None` when the pilot bias vanishes.
    pub h_unclamped: Option<f64>,
    pub clamped: bool,
    pub sigma: f64,
    pub bias2: f64,
    pub s: usize,
    pub l: usize,
    pub bidders: u32,
    pub pilot: String,
    pub pilot_coefs: PolyPilot,
    pub floored_derivative: bool,
}

// Below this, relative to Σ_I, the pilot bias is treated as zero.
const ZERO_BIAS: f64 = 1e-14;

pub fn bandwidth_from_pilot(pilot: PolyPilot, xs: &[Vec<f64>], l: usize, bidders: u32, s: usize, kernel: Kernel) -> Result<BandwidthReport> {
    let c = pilot_constants(&pilot, xs, bidders, s, kernel)?;
    let unclamped = if c.bias2 > ZERO_BIAS * c.sigma.max(1.0) { Some(optimal_bandwidth(c.sigma, c.bias2, s, l, bidders)?) } else { None };
    let h_star = unclamped.map_or(H_MAX, |h| h.clamp(H_MIN, H_MAX));
    Ok(BandwidthReport {
        h_star,
        clamped: unclamped != Some(h_star),
        h_unclamped: unclamped,
        sigma: c.sigma,
        bias2: c.bias2,
        s,
        l,
        bidders,
        pilot: format!("degree-{} polynomial quantile regression at {} levels", s + 2, PILOT_LEVELS.len()),
        pilot_coefs: pilot,
        floored_derivative: c.floored_derivative,
    })
}

/// Pilot-based `h*` for the auctions with `bidders` bidders.
pub fn select_bandwidth(sample: &AuctionSample, bidders: u32, s: usize, kernel: Kernel) -> Result<BandwidthReport> {
    let pilot = poly_pilot(sample, bidders, s)?;
    let records = sample.with_bidders(bidders)?;
    let xs: Vec<Vec<f64>> = records.iter().map(|r| r.x.clone()).collect();
    bandwidth_from_pilot(pilot, &xs, records.len(), bidders, s, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::trig_spec;
    use crate::simulate::{simulate_first_price, SimConfig};
    use approx::assert_abs_diff_eq;

    #[test]
    fn formula_examples() {
        let h = optimal_bandwidth(1.0, 1.0, 1, 50, 2).unwrap();
        assert_abs_diff_eq!(h, (1.0f64 / 400.0).powf(0.2), epsilon = 1e-12);
        assert_abs_diff_eq!(h, 0.3017, epsilon = 1e-4);
        let h4 = optimal_bandwidth(1.0, 1.0, 1, 200, 2).unwrap();
        assert_abs_diff_eq!(h4 / h, 4f64.powf(-0.2), epsilon = 1e-12);
        assert!(optimal_bandwidth(1.0, 100.0, 1, 50, 2).unwrap() < h);
        assert!(optimal_bandwidth(100.0, 1.0, 1, 50, 2).unwrap() > h);
        assert!(optimal_bandwidth(0.0, 1.0, 1, 50, 2).is_err());
    }

    #[test]
    fn exact_linear_pilot_caps_bandwidth() {
        let pilot = PolyPilot { coefs: vec![vec![0.0, 0.5, 0.0, 0.0]] };
        let r = bandwidth_from_pilot(pilot, &[vec![]], 100, 2, 1, Kernel::Epanechnikov).unwrap();
        assert_abs_diff_eq!(r.bias2, 0.0, epsilon = 1e-20);
        assert!(r.sigma > 0.0);
        assert_eq!(r.h_star, H_MAX);
        assert!(r.clamped && r.h_unclamped.is_none());
    }

    #[test]
    fn pilot_derivatives() {
        let p = PolyPilot { coefs: vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0, 0.0, 0.0]] };
        let a = 0.3;
        assert_abs_diff_eq!(p.derivative(a, &[2.0], 0), 1.0 + 2.0 * a + 3.0 * a * a + 4.0 * a.powi(3) + 2.0 * a, epsilon = 1e-14);
        assert_abs_diff_eq!(p.derivative(a, &[2.0], 1), 2.0 + 6.0 * a + 12.0 * a * a + 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.derivative(a, &[2.0], 3), 24.0, epsilon = 1e-14);
    }

    #[test]
    fn trig_pilot_is_positive_and_relabeling_invariant() {
        let spec = trig_spec().unwrap();
        let sim = simulate_first_price(&spec, &SimConfig::new(200, 2, 0, 4)).unwrap();
        let r = select_bandwidth(&sim.sample, 2, 1, Kernel::Epanechnikov).unwrap();
        assert!(r.sigma > 0.0 && r.bias2 > 0.0);
        assert!((H_MIN..=H_MAX).contains(&r.h_star));

        let pilot = PolyPilot { coefs: vec![vec![0.1, 1.0, 0.5, 0.2], vec![0.0, 0.3, 0.1, 0.05], vec![0.2, 0.1, 0.0, 0.3]] };
        let xs: Vec<Vec<f64>> = (0..20).map(|k| vec![k as f64 / 20.0, (k * 7 % 20) as f64 / 20.0]).collect();
        let swapped_pilot = PolyPilot { coefs: vec![pilot.coefs[0].clone(), pilot.coefs[2].clone(), pilot.coefs[1].clone()] };
        let swapped_xs: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[1], x[0]]).collect();
        let a = pilot_constants(&pilot, &xs, 2, 1, Kernel::Epanechnikov).unwrap();
        let b = pilot_constants(&swapped_pilot, &swapped_xs, 2, 1, Kernel::Epanechnikov).unwrap();
        assert_abs_diff_eq!(a.sigma, b.sigma, epsilon = 1e-12 * a.sigma);
        assert_abs_diff_eq!(a.bias2, b.bias2, epsilon = 1e-12 * a.bias2);
    }
}
