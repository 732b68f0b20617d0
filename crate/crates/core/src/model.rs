//! Private-value quantile specifications and the exact value/bid mappings.
//!
//! A specification is linear in the augmented covariates:
//! `V(α|x) = γ₀(α) + Σ_j x_j γ_j(α)`. The equilibrium bid quantile is the
//! weighted average `B(α) = k ∫₀¹ u^{k-1} V(αu) du` with `k = (I-1)/ν`,
//! which stays regular at `α = 0` where the unsubstituted form is `0/0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_jacobi_unit;

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch { expected: xs.len(), got: ys.len() });
        }
        if xs.len() < 2 {
            return Err(Error::InvalidParameter("tabulated coefficient needs at least two points".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("tabulated grid must be finite and strictly increasing".into()));
        }
        let n = xs.len();
        let d: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes = vec![d[0], d[0]];
        } else {
            for k in 1..n - 1 {
                if d[k - 1] * d[k] > 0.0 {
                    let h0 = xs[k] - xs[k - 1];
                    let h1 = xs[k + 1] - xs[k];
                    let w1 = 2.0 * h1 + h0;
                    let w2 = h1 + 2.0 * h0;
                    slopes[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
                }
            }
            slopes[0] = end_slope(xs[1] - xs[0], xs[2] - xs[1], d[0], d[1]);
            slopes[n - 1] = end_slope(xs[n - 1] - xs[n - 2], xs[n - 2] - xs[n - 3], d[n - 2], d[n - 3]);
        }
        Ok(Self { xs, ys, slopes })
    }

    fn locate(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.locate(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let k = self.locate(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * self.ys[k] + (-6.0 * t2 + 6.0 * t) * self.ys[k + 1]) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * self.slopes[k]
            + (3.0 * t2 - 2.0 * t) * self.slopes[k + 1]
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

/// One slope function `γ_j: [0, 1] → ℝ`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
    /// `offset + scale·((fπ+1)α + cos(fπα))`.
    Trig { offset: f64, scale: f64, freq: f64 },
    /// `offset + scale·exp(rate·(α-1))`.
    ExpGrowth { offset: f64, scale: f64, rate: f64 },
    /// `scale·(1 - exp(-rate·α))`.
    ExpSaturation { scale: f64, rate: f64 },
    Tabulated(Pchip),
    /// `(1-ν)β + νγ` where `β` is the risk-neutral bid coefficient of `base`
    /// with `bidders` bidders: the value coefficient that rationalizes those
    /// bids under CRRA utility `t^ν`.
    Rationalized { base: Box<Coefficient>, bidders: u32, nu: f64 },
}

impl Coefficient {
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::Linear { intercept, slope } => intercept + slope * a,
            Coefficient::Trig { offset, scale, freq } => {
                offset + scale * ((freq * PI + 1.0) * a + (freq * PI * a).cos())
            }
            Coefficient::ExpGrowth { offset, scale, rate } => offset + scale * (rate * (a - 1.0)).exp(),
            Coefficient::ExpSaturation { scale, rate } => -scale * (-rate * a).exp_m1(),
            Coefficient::Tabulated(p) => p.eval(a),
            Coefficient::Rationalized { base, bidders, nu } => {
                let k = f64::from(bidders - 1);
                let beta = weighted_average(k, |u| base.eval(a * u), 64);
                (1.0 - nu) * beta + nu * base.eval(a)
            }
        }
    }

    pub fn derivative(&self, a: f64) -> f64 {
        match self {
            Coefficient::Constant { .. } => 0.0,
            Coefficient::Linear { slope, .. } => *slope,
            Coefficient::Trig { scale, freq, .. } => scale * ((freq * PI + 1.0) - freq * PI * (freq * PI * a).sin()),
            Coefficient::ExpGrowth { scale, rate, .. } => scale * rate * (rate * (a - 1.0)).exp(),
            Coefficient::ExpSaturation { scale, rate } => scale * rate * (-rate * a).exp(),
            Coefficient::Tabulated(p) => p.derivative(a),
            Coefficient::Rationalized { base, bidders, nu } => {
                // β'(α) = k ∫ u^k γ'(αu) du
                let k = f64::from(bidders - 1);
                let db = k * gauss_sum(k, |u| base.derivative(a * u), 64);
                (1.0 - nu) * db + nu * base.derivative(a)
            }
        }
    }
}

/// `Σ w_i f(u_i)` for the rule with weight `u^k` on `[0, 1]`.
fn gauss_sum<F: Fn(f64) -> f64>(k: f64, f: F, n: usize) -> f64 {
    let rule = gauss_jacobi_unit(n, k);
    rule.nodes.iter().zip(&rule.weights).map(|(&u, &w)| w * f(u)).sum()
}

/// `k ∫₀¹ u^{k-1} f(u) du`.
fn weighted_average<F: Fn(f64) -> f64>(k: f64, f: F, n: usize) -> f64 {
    k * gauss_sum(k - 1.0, f, n)
}

pub const DEFAULT_QUAD_NODES: usize = 64;
const QUAD_TOL: f64 = 1e-9;

/// A linear-in-covariates private-value quantile model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuantileSpec {
    pub coefficients: Vec<Coefficient>,
    /// Covariate support box, one `(lo, hi)` per covariate.
    pub support: Vec<(f64, f64)>,
    /// Number of continuous derivatives of every `γ_j`.
    pub smoothness: u32,
}

impl QuantileSpec {
    /// Builds a spec and rejects it unless `V(·|x)` is strictly increasing
    /// at the corners of the covariate support.
    pub fn new(coefficients: Vec<Coefficient>, support: Vec<(f64, f64)>, smoothness: u32) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::InvalidParameter("a spec needs at least an intercept".into()));
        }
        if support.len() + 1 != coefficients.len() {
            return Err(Error::DimensionMismatch { expected: coefficients.len() - 1, got: support.len() });
        }
        let spec = Self { coefficients, support, smoothness };
        spec.check_monotone()?;
        Ok(spec)
    }

    /// Unit-box support of dimension `d`.
    pub fn unit_support(d: usize) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); d]
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Corners of the support box; at most eight, chosen deterministically.
    pub fn support_corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let count: usize = if d <= 3 { 1 << d } else { 8 };
        (0..count)
            .map(|c| {
                // For d > 3 the bit pattern of c is spread across coordinates.
                (0..d)
                    .map(|j| {
                        let bit = if d <= 3 { (c >> j) & 1 } else { ((c * 2654435761) >> (j % 32)) & 1 };
                        let (lo, hi) = self.support[j];
                        if bit == 1 { hi } else { lo }
                    })
                    .collect()
            })
            .collect()
    }

    fn check_monotone(&self) -> Result<()> {
        let grid: Vec<f64> = (0..=500).map(|k| k as f64 / 500.0).collect();
        for x in self.support_corners() {
            let mut prev = self.eval_unchecked(grid[0], &x);
            if !prev.is_finite() {
                return Err(Error::NotMonotone { alpha: 0.0, x });
            }
            for &a in &grid[1..] {
                let v = self.eval_unchecked(a, &x);
                if !v.is_finite() || v <= prev {
                    return Err(Error::NotMonotone { alpha: a, x });
                }
                prev = v;
            }
        }
        Ok(())
    }

    fn check(&self, alpha: f64, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        Ok(())
    }

    fn eval_unchecked(&self, alpha: f64, x: &[f64]) -> f64 {
        combine(&self.coefficients, x, |c| c.eval(alpha))
    }

    /// `γ(α)` as a vector.
    pub fn gamma(&self, alpha: f64) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.eval(alpha)).collect()
    }

    /// `γ'(α)` as a vector.
    pub fn gamma_derivative(&self, alpha: f64) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.derivative(alpha)).collect()
    }

    /// `V(α|x) = x₁'γ(α)`.
    pub fn value_quantile(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        self.check(alpha, x)?;
        Ok(self.eval_unchecked(alpha, x))
    }

    pub fn value_quantile_derivative(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        self.check(alpha, x)?;
        Ok(combine(&self.coefficients, x, |c| c.derivative(alpha)))
    }

    /// Bid quantile coefficients `β_j(α) = k ∫₀¹ u^{k-1} γ_j(αu) du`,
    /// `k = (I-1)/ν`. Fails if doubling the rule moves any entry by more
    /// than a relative `1e-9`.
    pub fn bid_coefficients(&self, alpha: f64, bidders: u32, nu: f64) -> Result<Vec<f64>> {
        check_bidders_nu(bidders, nu)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        let k = f64::from(bidders - 1) / nu;
        let mut out = Vec::with_capacity(self.coefficients.len());
        let mut worst: f64 = 0.0;
        for c in &self.coefficients {
            let coarse = weighted_average(k, |u| c.eval(alpha * u), DEFAULT_QUAD_NODES);
            let fine = weighted_average(k, |u| c.eval(alpha * u), 2 * DEFAULT_QUAD_NODES);
            worst = worst.max((fine - coarse).abs() / fine.abs().max(1.0));
            out.push(fine);
        }
        if worst > QUAD_TOL {
            return Err(Error::Quadrature { estimate: worst });
        }
        Ok(out)
    }

    /// `B'(α)` coefficients: `k ∫₀¹ u^k γ_j'(αu) du`.
    pub fn bid_coefficient_derivatives(&self, alpha: f64, bidders: u32, nu: f64) -> Result<Vec<f64>> {
        check_bidders_nu(bidders, nu)?;
        let k = f64::from(bidders - 1) / nu;
        Ok(self
            .coefficients
            .iter()
            .map(|c| k * gauss_sum(k, |u| c.derivative(alpha * u), 2 * DEFAULT_QUAD_NODES))
            .collect())
    }

    /// Risk-neutral bid quantile `B(α|x, I)`.
    pub fn bid_quantile_from_value(&self, alpha: f64, x: &[f64], bidders: u32) -> Result<f64> {
        self.bid_quantile_crra(alpha, x, bidders, CrraParams::RISK_NEUTRAL)
    }

    /// Bid quantile under CRRA utility `t^ν`.
    pub fn bid_quantile_crra(&self, alpha: f64, x: &[f64], bidders: u32, crra: CrraParams) -> Result<f64> {
        self.check(alpha, x)?;
        let beta = self.bid_coefficients(alpha, bidders, crra.nu)?;
        Ok(dot_augmented(&beta, x))
    }

    /// `B'(α|x, I)` under CRRA utility `t^ν`.
    pub fn bid_quantile_derivative(&self, alpha: f64, x: &[f64], bidders: u32, crra: CrraParams) -> Result<f64> {
        self.check(alpha, x)?;
        let db = self.bid_coefficient_derivatives(alpha, bidders, crra.nu)?;
        Ok(dot_augmented(&db, x))
    }

    /// Registry lookup by name.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "uniform" => uniform_spec(),
            "trig" => trig_spec(),
            "sim62" => sim62_spec(),
            "additive1" => additive1_spec(),
            "homog1" => homog1_spec(),
            other => Err(Error::UnknownName(format!("spec '{other}'"))),
        }
    }

    pub const REGISTRY: [&'static str; 5] = ["uniform", "trig", "sim62", "additive1", "homog1"];

    /// The spec whose values rationalize this spec's `I`-bidder risk-neutral
    /// bids under CRRA `ν`.
    pub fn rationalized(&self, bidders: u32, nu: f64) -> Result<Self> {
        check_bidders_nu(bidders, nu)?;
        let coefficients = self
            .coefficients
            .iter()
            .map(|c| Coefficient::Rationalized { base: Box::new(c.clone()), bidders, nu })
            .collect();
        Self::new(coefficients, self.support.clone(), self.smoothness)
    }
}

fn check_bidders_nu(bidders: u32, nu: f64) -> Result<()> {
    if bidders < 2 {
        return Err(Error::InvalidParameter(format!("bidder count {bidders} < 2")));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidParameter(format!("risk aversion {nu} outside (0, 1]")));
    }
    Ok(())
}

fn combine<F: Fn(&Coefficient) -> f64>(coefs: &[Coefficient], x: &[f64], f: F) -> f64 {
    f(&coefs[0]) + coefs[1..].iter().zip(x).map(|(c, &xj)| xj * f(c)).sum::<f64>()
}

/// `x₁'v` with `x₁ = [1, x']`.
pub fn dot_augmented(v: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(v.len(), x.len() + 1);
    v[0] + v[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

/// `[1, x']`.
pub fn augmented(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + 1);
    out.push(1.0);
    out.extend_from_slice(x);
    out
}

/// CRRA exponent `ν ∈ (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrraParams {
    pub nu: f64,
}

impl CrraParams {
    pub const RISK_NEUTRAL: CrraParams = CrraParams { nu: 1.0 };

    pub fn new(nu: f64) -> Result<Self> {
        if nu > 0.0 && nu <= 1.0 {
            Ok(Self { nu })
        } else {
            Err(Error::InvalidParameter(format!("risk aversion {nu} outside (0, 1]")))
        }
    }
}

/// Result of inverting the bid quantile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveredValue {
    pub value: f64,
    /// Set when the supplied bid quantile slope was not positive.
    pub nonpositive_slope: bool,
}

/// `V = B + ν α B' / (I-1)`.
pub fn value_from_bid_quantile(b: f64, b1: f64, alpha: f64, bidders: u32, nu: f64) -> RecoveredValue {
    RecoveredValue {
        value: b + nu * alpha * b1 / f64::from(bidders - 1),
        nonpositive_slope: b1 <= 0.0,
    }
}

/// `½((π+1)α + cos πα)`.
pub fn trig_quantile(alpha: f64) -> f64 {
    0.5 * ((PI + 1.0) * alpha + (PI * alpha).cos())
}

fn trig_coefficient() -> Coefficient {
    Coefficient::Trig { offset: 0.0, scale: 0.5, freq: 1.0 }
}

pub fn uniform_spec() -> Result<QuantileSpec> {
    QuantileSpec::new(vec![Coefficient::Linear { intercept: 0.0, slope: 1.0 }], vec![], 3)
}

pub fn trig_spec() -> Result<QuantileSpec> {
    QuantileSpec::new(vec![trig_coefficient()], vec![], 3)
}

/// Four coefficients, three unit-uniform covariates.
pub fn sim62_spec() -> Result<QuantileSpec> {
    QuantileSpec::new(
        vec![
            Coefficient::ExpGrowth { offset: 1.0, scale: 0.5, rate: 5.0 },
            Coefficient::Constant { value: 1.0 },
            Coefficient::ExpSaturation { scale: 0.5, rate: 5.0 },
            Coefficient::Trig { offset: 0.8, scale: 0.15, freq: 2.0 },
        ],
        QuantileSpec::unit_support(3),
        3,
    )
}

/// `V(α|x) = T(α) + x α`.
pub fn additive1_spec() -> Result<QuantileSpec> {
    QuantileSpec::new(
        vec![trig_coefficient(), Coefficient::Linear { intercept: 0.0, slope: 1.0 }],
        QuantileSpec::unit_support(1),
        3,
    )
}

/// `V(α|x) = T(α) + x`: a location shift, so bids homogenize exactly.
pub fn homog1_spec() -> Result<QuantileSpec> {
    QuantileSpec::new(
        vec![trig_coefficient(), Coefficient::Constant { value: 1.0 }],
        QuantileSpec::unit_support(1),
        3,
    )
}

/// First-price records carry every bid; ascending records only the winning bid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuctionFormat {
    FirstPrice,
    Ascending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionRecord {
    pub id: u64,
    pub n_bidders: u32,
    pub x: Vec<f64>,
    pub bids: Vec<f64>,
    pub winning_bid: Option<f64>,
}

impl AuctionRecord {
    /// The observations used for estimation: every bid, or the winning bid.
    pub fn observations(&self) -> &[f64] {
        match &self.winning_bid {
            Some(w) if self.bids.is_empty() => std::slice::from_ref(w),
            _ => &self.bids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionSample {
    pub records: Vec<AuctionRecord>,
    pub format: AuctionFormat,
}

impl AuctionSample {
    pub fn new(records: Vec<AuctionRecord>, format: AuctionFormat) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidParameter("auction sample is empty".into()));
        }
        let d = records[0].x.len();
        for (row, r) in records.iter().enumerate() {
            if r.x.len() != d {
                return Err(Error::Schema { row, msg: format!("expected {d} covariates, got {}", r.x.len()) });
            }
            if r.n_bidders < 2 {
                return Err(Error::Schema { row, msg: format!("bidder count {} < 2", r.n_bidders) });
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema { row, msg: "non-finite covariate".into() });
            }
            match format {
                AuctionFormat::FirstPrice => {
                    if r.bids.len() != r.n_bidders as usize {
                        return Err(Error::Schema {
                            row,
                            msg: format!("auction {} has {} bids for {} bidders", r.id, r.bids.len(), r.n_bidders),
                        });
                    }
                    if r.bids.iter().any(|b| !b.is_finite()) {
                        return Err(Error::Schema { row, msg: format!("non-finite bid in auction {}", r.id) });
                    }
                }
                AuctionFormat::Ascending => match r.winning_bid {
                    Some(w) if w.is_finite() => {}
                    _ => {
                        return Err(Error::Schema { row, msg: format!("auction {} lacks a finite winning bid", r.id) })
                    }
                },
            }
        }
        Ok(Self { records, format })
    }

    pub fn dim(&self) -> usize {
        self.records[0].x.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct bidder counts, sorted.
    pub fn bidder_counts(&self) -> Vec<u32> {
        let mut counts: Vec<u32> = self.records.iter().map(|r| r.n_bidders).collect();
        counts.sort_unstable();
        counts.dedup();
        counts
    }

    /// Auctions with exactly `bidders` bidders; at least `D + 2` are required.
    pub fn with_bidders(&self, bidders: u32) -> Result<Vec<&AuctionRecord>> {
        let subset: Vec<&AuctionRecord> = self.records.iter().filter(|r| r.n_bidders == bidders).collect();
        let need = self.dim() + 2;
        if subset.len() < need {
            return Err(Error::InsufficientData { bidders, have: subset.len(), need });
        }
        Ok(subset)
    }

    pub fn covariates(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.x.clone()).collect()
    }
}
