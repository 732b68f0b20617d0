//! Plug-in functionals: seller revenue, optimal reserve, CRRA risk aversion
//! and generic integral functionals of bid quantile paths.

use serde::{Deserialize, Serialize};

use crate::aqr::{AqrFit, HomogenizedFit};
use crate::error::{Error, Result};
use crate::model::{CrraParams, QuantileSpec};
use crate::quadrature::{composite, trapezoid_weights};

/// A bid quantile path `α ↦ B(α|x, I)` with its quantile derivative.
pub trait BidQuantile: Sync {
    fn bidders(&self) -> u32;
    fn bid(&self, alpha: f64, x: &[f64]) -> Result<f64>;
    fn bid_derivative(&self, alpha: f64, x: &[f64]) -> Result<f64>;
}

impl BidQuantile for AqrFit {
    fn bidders(&self) -> u32 {
        self.bidders
    }

    fn bid(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        AqrFit::bid(self, alpha, x)
    }

    fn bid_derivative(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        AqrFit::bid_derivative(self, alpha, x)
    }
}

impl BidQuantile for HomogenizedFit {
    fn bidders(&self) -> u32 {
        self.residual_fit.bidders
    }

    fn bid(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        HomogenizedFit::bid(self, alpha, x)
    }

    fn bid_derivative(&self, alpha: f64, _x: &[f64]) -> Result<f64> {
        self.residual_fit.bid_derivative(alpha, &[])
    }
}

/// Equilibrium bids implied by a value specification.
#[derive(Debug, Clone, Copy)]
pub struct TrueBids<'a> {
    pub spec: &'a QuantileSpec,
    pub bidders: u32,
    pub crra: CrraParams,
}

impl BidQuantile for TrueBids<'_> {
    fn bidders(&self) -> u32 {
        self.bidders
    }

    fn bid(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        self.spec.bid_quantile_crra(alpha, x, self.bidders, self.crra)
    }

    fn bid_derivative(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        self.spec.bid_quantile_derivative(alpha, x, self.bidders, self.crra)
    }
}

/// A bid path given by closures.
pub struct BidFns<B, D> {
    pub bidders: u32,
    pub bid: B,
    pub derivative: D,
}

impl<B, D> BidQuantile for BidFns<B, D>
where
    B: Fn(f64, &[f64]) -> f64 + Sync,
    D: Fn(f64, &[f64]) -> f64 + Sync,
{
    fn bidders(&self) -> u32 {
        self.bidders
    }

    fn bid(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        Ok((self.bid)(alpha, x))
    }

    fn bid_derivative(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        Ok((self.derivative)(alpha, x))
    }
}

fn check_nu(nu: f64) -> Result<()> {
    CrraParams::new(nu).map(|_| ())
}

const REVENUE_PANELS: usize = 64;
const REVENUE_ORDER: usize = 8;

/// `(1 - a^e)/e`, continuous at `e = 0`.
fn phi(a: f64, e: f64) -> f64 {
    if a <= 0.0 {
        return if e > 0.0 { 1.0 / e } else { f64::INFINITY };
    }
    if e == 0.0 {
        -a.ln()
    } else {
        -(e * a.ln()).exp_m1() / e
    }
}

/// Seller expected revenue at screening level `alpha_r` with seller value 0.
pub fn expected_revenue<V: Fn(f64) -> f64>(value: V, alpha_r: f64, bidders: u32, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    if !(0.0..=1.0).contains(&alpha_r) {
        return Err(Error::AlphaOutOfRange(alpha_r));
    }
    if bidders < 2 {
        return Err(Error::InvalidParameter(format!("revenue needs at least 2 bidders, got {bidders}")));
    }
    if alpha_r == 1.0 {
        return Ok(0.0);
    }
    let i = f64::from(bidders);
    let k = (i - 1.0) / nu;
    let e = (i - 1.0) * (nu - 1.0) / nu + 1.0;
    let head = if alpha_r > 0.0 { i * value(alpha_r) * alpha_r.powf(k) * phi(alpha_r, e) } else { 0.0 };
    let tail = composite(alpha_r, 1.0, REVENUE_PANELS, REVENUE_ORDER, |a| a.powf(k - 1.0) * phi(a, e) * value(a));
    let er = head + i * (i - 1.0) / nu * tail;
    if !er.is_finite() {
        return Err(Error::Quadrature { estimate: er });
    }
    Ok(er)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueCurve {
    pub alpha_r: Vec<f64>,
    pub revenue: Vec<f64>,
    pub alpha_star: f64,
    /// `V(α*)`.
    pub reserve: f64,
    pub bidders: u32,
    pub nu: f64,
}

/// Grid argmax of expected revenue; ties go to the smaller level.
pub fn optimal_reserve<V: Fn(f64) -> f64>(value: V, bidders: u32, nu: f64, grid: &[f64]) -> Result<RevenueCurve> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty screening grid".into()));
    }
    let revenue = grid.iter().map(|&a| expected_revenue(&value, a, bidders, nu)).collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (k, r) in revenue.iter().enumerate() {
        if *r > revenue[best] {
            best = k;
        }
    }
    let alpha_star = grid[best];
    Ok(RevenueCurve { alpha_r: grid.to_vec(), revenue, alpha_star, reserve: value(alpha_star), bidders, nu })
}

/// Grid points inside `range` with their trapezoid weights.
fn restricted(grid: &[f64], range: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
    let pts: Vec<f64> = grid.iter().copied().filter(|a| (range.0..=range.1).contains(a)).collect();
    if pts.len() < 2 {
        return Err(Error::InvalidParameter(format!("fewer than two grid points in [{}, {}]", range.0, range.1)));
    }
    let w = trapezoid_weights(&pts);
    Ok((pts, w))
}

fn markup<P: BidQuantile + ?Sized>(path: &P, alpha: f64, x: &[f64]) -> Result<f64> {
    Ok(alpha * path.bid_derivative(alpha, x)? / f64::from(path.bidders() - 1))
}

const DEGENERATE_DENOMINATOR: f64 = 1e-12;

/// Risk aversion from first-price samples with two bidder counts.
pub fn crra_fp<P0, P1>(fit0: &P0, fit1: &P1, xs: &[Vec<f64>], grid: &[f64], range: (f64, f64)) -> Result<f64>
where
    P0: BidQuantile + ?Sized,
    P1: BidQuantile + ?Sized,
{
    if fit0.bidders() == fit1.bidders() {
        return Err(Error::InvalidParameter("risk aversion needs two distinct bidder counts".into()));
    }
    if xs.is_empty() {
        return Err(Error::InvalidParameter("empty covariate sample".into()));
    }
    let (pts, w) = restricted(grid, range)?;
    let (mut num, mut den) = (0.0, 0.0);
    for x in xs {
        for (&a, &wa) in pts.iter().zip(&w) {
            let diff = fit1.bid(a, x)? - fit0.bid(a, x)?;
            let d = markup(fit0, a, x)? - markup(fit1, a, x)?;
            num += wa * diff * d;
            den += wa * d * d;
        }
    }
    ratio(num, den, xs.len())
}

fn ratio(num: f64, den: f64, n: usize) -> Result<f64> {
    let (num, den) = (num / n as f64, den / n as f64);
    if !(den >= DEGENERATE_DENOMINATOR) {
        return Err(Error::Degenerate("denominator degenerate".into()));
    }
    Ok(num / den)
}

/// Risk aversion from ascending values and first-price bids.
pub fn crra_asc<V, P>(v_asc: V, fp: &P, xs: &[Vec<f64>], grid: &[f64], range: (f64, f64)) -> Result<f64>
where
    V: Fn(f64, &[f64]) -> Result<f64>,
    P: BidQuantile + ?Sized,
{
    if xs.is_empty() {
        return Err(Error::InvalidParameter("empty covariate sample".into()));
    }
    let (pts, w) = restricted(grid, range)?;
    let (mut num, mut den) = (0.0, 0.0);
    for x in xs {
        for (&a, &wa) in pts.iter().zip(&w) {
            let m = markup(fp, a, x)?;
            num += wa * (v_asc(a, x)? - fp.bid(a, x)?) * m;
            den += wa * m * m;
        }
    }
    ratio(num, den, xs.len())
}

pub const DEFAULT_CRRA_RANGE: (f64, f64) = (0.0, 0.8);

/// `θ̂(x) = ∫ F[α, x, (B̂_I, B̂_I^{(1)})_I] dα` by trapezoid sums on `grid`.
pub fn theta_plugin<F>(paths: &[&dyn BidQuantile], x: &[f64], grid: &[f64], integrand: F) -> Result<f64>
where
    F: Fn(f64, &[f64], &[(f64, f64)]) -> f64,
{
    let (pts, w) = restricted(grid, (0.0, 1.0))?;
    let mut total = 0.0;
    let mut vals = Vec::with_capacity(paths.len());
    for (&a, &wa) in pts.iter().zip(&w) {
        vals.clear();
        for p in paths {
            vals.push((p.bid(a, x)?, p.bid_derivative(a, x)?));
        }
        let f = integrand(a, x, &vals);
        if !f.is_finite() {
            return Err(Error::InvalidParameter(format!("integrand is not finite at alpha = {a}")));
        }
        total += wa * f;
    }
    Ok(total)
}

/// Sample mean of `θ̂(x)` over covariates.
pub fn theta_mean<F>(paths: &[&dyn BidQuantile], xs: &[Vec<f64>], grid: &[f64], integrand: F) -> Result<f64>
where
    F: Fn(f64, &[f64], &[(f64, f64)]) -> f64,
{
    if xs.is_empty() {
        return Err(Error::InvalidParameter("empty covariate sample".into()));
    }
    let mut sum = 0.0;
    for x in xs {
        sum += theta_plugin(paths, x, grid, &integrand)?;
    }
    Ok(sum / xs.len() as f64)
}
