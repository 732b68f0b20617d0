//! Pairwise bootstrap, slope-path comparison tests and a Cramér-von Mises
//! specification test.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aqr::{aqr_fit, ascending_value_fit, ols_bids, uniform_grid, AqrConfig, AqrFit};
use crate::error::{Error, Result};
use crate::model::{augmented, AuctionRecord, AuctionSample};
use crate::quadrature::{gauss_legendre, trapezoid_weights};
use crate::simulate::auction_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Successful bootstrap statistics, in replicate order.
    pub replicates: Vec<f64>,
    /// Indices of replicates whose statistic could not be computed.
    pub failed: Vec<usize>,
    pub seed: u64,
    pub b: usize,
    pub warnings: Vec<String>,
}

/// `(1 + #{T* ≥ T}) / (B + 1)` over successful replicates.
pub fn p_value(statistic: f64, replicates: &[f64]) -> Result<f64> {
    if replicates.is_empty() {
        return Err(Error::InvalidParameter("p-value undefined without bootstrap replicates".into()));
    }
    let exceed = replicates.iter().filter(|&&r| r >= statistic).count();
    Ok((1 + exceed) as f64 / (replicates.len() + 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bootstrap {
    pub replicates: Vec<f64>,
    pub failed: Vec<usize>,
}

/// Draws whole auctions with replacement; ids are renumbered.
pub fn resample<R: Rng>(sample: &AuctionSample, rng: &mut R) -> AuctionSample {
    let n = sample.len();
    let records = (0..n)
        .map(|k| {
            let r = sample.records.choose(rng).expect("nonempty sample");
            AuctionRecord { id: k as u64, ..r.clone() }
        })
        .collect();
    AuctionSample { records, format: sample.format }
}

/// Replicate `r` recomputes `stat` on a resample drawn from stream `r`.
/// The replicate index is passed on for statistics needing their own draws.
pub fn pairwise_bootstrap<F>(sample: &AuctionSample, b: usize, seed: u64, stat: F) -> Bootstrap
where
    F: Fn(&AuctionSample, usize) -> Result<f64> + Sync,
{
    let results: Vec<Result<f64>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = auction_rng(seed, r as u64);
            let star = resample(sample, &mut rng);
            stat(&star, r).and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Degenerate("non-finite bootstrap statistic".into()))
                }
            })
        })
        .collect();
    let mut out = Bootstrap { replicates: Vec::with_capacity(b), failed: vec![] };
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => out.replicates.push(v),
            Err(_) => out.failed.push(r),
        }
    }
    out
}

/// Coefficient vectors `[intercept, slopes']` on a level grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopePath {
    pub grid: Vec<f64>,
    pub coefs: Vec<Vec<f64>>,
}

impl SlopePath {
    pub fn from_fn<F: Fn(f64) -> Result<Vec<f64>>>(grid: &[f64], f: F) -> Result<Self> {
        let coefs = grid.iter().map(|&a| f(a)).collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: grid.to_vec(), coefs })
    }

    /// Block 0 of a fit, the bid quantile coefficients.
    pub fn bid_block(fit: &AqrFit, grid: &[f64]) -> Result<Self> {
        Self::from_fn(grid, |a| fit.block(a, 0))
    }

    /// Linear interpolation, constant beyond the grid ends.
    pub fn eval(&self, alpha: f64) -> Vec<f64> {
        let g = &self.grid;
        let n = g.len();
        if alpha <= g[0] {
            return self.coefs[0].clone();
        }
        if alpha >= g[n - 1] {
            return self.coefs[n - 1].clone();
        }
        let k = g.partition_point(|&v| v <= alpha) - 1;
        let w = (alpha - g[k]) / (g[k + 1] - g[k]);
        self.coefs[k].iter().zip(&self.coefs[k + 1]).map(|(a, b)| a + w * (b - a)).collect()
    }

    fn check_against(&self, other: &SlopePath) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidParameter("slope paths are on different level grids".into()));
        }
        let d = self.coefs.first().map_or(0, Vec::len);
        if let Some(c) = self.coefs.iter().chain(&other.coefs).find(|c| c.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: c.len() });
        }
        Ok(())
    }

    pub fn minus(&self, other: &SlopePath) -> Result<SlopePath> {
        self.check_against(other)?;
        let coefs = self
            .coefs
            .iter()
            .zip(&other.coefs)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Ok(SlopePath { grid: self.grid.clone(), coefs })
    }
}

/// Level grid of the discretized slope comparison.
pub fn liu_luo_grid() -> Vec<f64> {
    uniform_grid(100)
}

/// `L ∫ Σ_ℓ (x̃_ℓ'(β_H0(α) - β̂(α)))² dα` with trapezoid sums.
pub fn liu_luo_stat(xs: &[Vec<f64>], beta_h0: &SlopePath, beta_hat: &SlopePath) -> Result<f64> {
    diff_stat(xs, &beta_h0.minus(beta_hat)?)
}

fn diff_stat(xs: &[Vec<f64>], diff: &SlopePath) -> Result<f64> {
    let w = trapezoid_weights(&diff.grid);
    let mut total = 0.0;
    for x in xs {
        let xa = augmented(x);
        for (c, wa) in diff.coefs.iter().zip(&w) {
            if c.len() != xa.len() {
                return Err(Error::DimensionMismatch { expected: xa.len(), got: c.len() });
            }
            let d: f64 = xa.iter().zip(c).map(|(a, b)| a * b).sum();
            total += wa * d * d;
        }
    }
    Ok(xs.len() as f64 * total)
}

const SUBSTITUTION_PANELS: usize = 16;
const SUBSTITUTION_ORDER: usize = 8;

/// `∫₀¹ u^k f(αu) du` for a vector-valued `f`.
fn substituted<F: Fn(f64) -> Vec<f64>>(f: &F, alpha: f64, k: i32, dim: usize) -> Vec<f64> {
    let rule = gauss_legendre(SUBSTITUTION_ORDER);
    let mut out = vec![0.0; dim];
    let width = 1.0 / SUBSTITUTION_PANELS as f64;
    for p in 0..SUBSTITUTION_PANELS {
        let (nodes, weights) = rule.mapped(p as f64 * width, (p + 1) as f64 * width);
        for (&u, &w) in nodes.iter().zip(&weights) {
            let wu = w * u.powi(k);
            for (o, v) in out.iter_mut().zip(f(alpha * u)) {
                *o += wu * v;
            }
        }
    }
    out
}

/// `β_{I1}(α|I2)`: the bid coefficients with `I2` bidders implied by those
/// with `I1` bidders when values do not depend on entry. Identity when
/// `I1 = I2`.
pub fn entry_transform(beta: &SlopePath, i1: u32, i2: u32) -> Result<SlopePath> {
    if i1 < 2 || i2 < 2 {
        return Err(Error::InvalidParameter("bidder counts must be at least 2".into()));
    }
    if i1 == i2 {
        return Ok(beta.clone());
    }
    let (f1, f2) = (f64::from(i1), f64::from(i2));
    let dim = beta.coefs.first().map_or(0, Vec::len);
    let lead = (f2 - 1.0) / (f1 - 1.0);
    let tail = (f2 - 1.0) * (f1 - f2) / (f1 - 1.0);
    let f = |a: f64| beta.eval(a);
    SlopePath::from_fn(&beta.grid, |a| {
        let integral = substituted(&f, a, i2 as i32 - 2, dim);
        Ok(beta.eval(a).iter().zip(&integral).map(|(b, s)| lead * b + tail * s).collect())
    })
}

/// `(I-1) ∫₀¹ u^{I-2} γ(αu) du`, the risk-neutral bid coefficients.
pub fn bid_path_from_values(gamma: &SlopePath, bidders: u32) -> Result<SlopePath> {
    if bidders < 2 {
        return Err(Error::InvalidParameter("bidder count must be at least 2".into()));
    }
    let dim = gamma.coefs.first().map_or(0, Vec::len);
    let scale = f64::from(bidders - 1);
    let f = |a: f64| gamma.eval(a);
    SlopePath::from_fn(&gamma.grid, |a| Ok(substituted(&f, a, bidders as i32 - 2, dim).iter().map(|v| scale * v).collect()))
}

/// Null bid coefficients under format exogeneity, from ascending winning bids.
pub fn format_exo_slope(asc: &AuctionSample, bidders: u32, cfg: &AqrConfig, grid: &[f64]) -> Result<SlopePath> {
    let fit = ascending_value_fit(asc, bidders, cfg)?;
    let gamma = SlopePath::from_fn(grid, |a| fit.block(a, 0))?;
    bid_path_from_values(&gamma, bidders)
}

/// Null hypotheses for the slope-comparison test.
#[derive(Debug, Clone, PartialEq)]
pub enum LiuLuoNull {
    /// Common slopes: AQR intercept with OLS slopes.
    Homogenized,
    /// Values equal those recovered from an ascending sample.
    Format { ascending: AuctionSample },
    /// Values do not depend on entry; null built from auctions with
    /// `other` bidders.
    Entry { other: u32 },
}

impl LiuLuoNull {
    pub fn name(&self) -> &'static str {
        match self {
            LiuLuoNull::Homogenized => "homogenized",
            LiuLuoNull::Format { .. } => "format",
            LiuLuoNull::Entry { .. } => "entry",
        }
    }
}

/// `β̂_H0 - β̂` on `grid` and the covariates entering the statistic.
pub fn liu_luo_difference(
    sample: &AuctionSample,
    asc: Option<&AuctionSample>,
    bidders: u32,
    null: &LiuLuoNull,
    cfg: &AqrConfig,
    grid: &[f64],
) -> Result<(SlopePath, Vec<Vec<f64>>)> {
    let fit = aqr_fit(sample, bidders, cfg)?;
    let hat = SlopePath::bid_block(&fit, grid)?;
    let h0 = match null {
        LiuLuoNull::Homogenized => {
            let ols = ols_bids(sample, bidders)?;
            SlopePath::from_fn(grid, |a| {
                let mut c = vec![fit.block(a, 0)?[0]];
                c.extend_from_slice(&ols[1..]);
                Ok(c)
            })?
        }
        LiuLuoNull::Format { ascending } => format_exo_slope(asc.unwrap_or(ascending), bidders, cfg, grid)?,
        LiuLuoNull::Entry { other } => {
            let other_fit = aqr_fit(sample, *other, cfg)?;
            entry_transform(&SlopePath::bid_block(&other_fit, grid)?, *other, bidders)?
        }
    };
    let xs = sample.with_bidders(bidders)?.iter().map(|r| r.x.clone()).collect();
    Ok((h0.minus(&hat)?, xs))
}

// Ascending resamples use streams disjoint from the first-price ones.
const ASC_STREAM_OFFSET: u64 = 1 << 40;

/// Slope-comparison test with a recentered pairwise bootstrap.
pub fn liu_luo_test(
    sample: &AuctionSample,
    bidders: u32,
    null: &LiuLuoNull,
    cfg: &AqrConfig,
    b: usize,
    seed: u64,
) -> Result<TestReport> {
    let grid = liu_luo_grid();
    let (diff, xs) = liu_luo_difference(sample, None, bidders, null, cfg, &grid)?;
    let statistic = diff_stat(&xs, &diff)?;
    let boot = pairwise_bootstrap(sample, b, seed, |star, r| {
        let asc_star = match null {
            LiuLuoNull::Format { ascending } => Some(resample(ascending, &mut auction_rng(seed, ASC_STREAM_OFFSET + r as u64))),
            _ => None,
        };
        let (d_star, xs_star) = liu_luo_difference(star, asc_star.as_ref(), bidders, null, cfg, &grid)?;
        diff_stat(&xs_star, &d_star.minus(&diff)?)
    });
    report(format!("liu-luo/{}", null.name()), statistic, boot, seed, b)
}

fn report(method: String, statistic: f64, boot: Bootstrap, seed: u64, b: usize) -> Result<TestReport> {
    let mut warnings = vec![];
    if b < 50 {
        warnings.push(format!("only {b} bootstrap replications"));
    }
    if !boot.failed.is_empty() {
        warnings.push(format!("{} replicates failed and were excluded", boot.failed.len()));
    }
    let p_value = p_value(statistic, &boot.replicates)?;
    Ok(TestReport { method, statistic, p_value, replicates: boot.replicates, failed: boot.failed, seed, b, warnings })
}

/// A conditional quantile model `(α, x) ↦ b`.
pub trait QuantileModel: Sync {
    fn quantile(&self, alpha: f64, x: &[f64]) -> f64;
}

impl<F: Fn(f64, &[f64]) -> f64 + Sync> QuantileModel for F {
    fn quantile(&self, alpha: f64, x: &[f64]) -> f64 {
        self(alpha, x)
    }
}

struct Point<'a> {
    bid: f64,
    x: &'a [f64],
}

fn dominated(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(u, v)| u <= v)
}

/// `(1/n) Σ (Ĝ_H0 - Ĝ)²` at the observed points of `bids`, with auction
/// covariates `xs` and model cdfs `∫ 1[q(α, x_ℓ) ≤ b] dα` on `grid`.
fn cvm_statistic<M: QuantileModel + ?Sized>(xs: &[Vec<f64>], bids: &[Vec<f64>], model: &M, grid: &[f64]) -> f64 {
    let w = trapezoid_weights(grid);
    // Per auction: model quantiles sorted with cumulative level mass.
    let cdfs: Vec<(Vec<f64>, Vec<f64>)> = xs
        .iter()
        .map(|x| {
            let mut pairs: Vec<(f64, f64)> = grid.iter().zip(&w).map(|(&a, &wa)| (model.quantile(a, x), wa)).collect();
            pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
            let mut acc = 0.0;
            let (q, cum): (Vec<f64>, Vec<f64>) = pairs
                .into_iter()
                .map(|(v, wa)| {
                    acc += wa;
                    (v, acc)
                })
                .unzip();
            (q, cum)
        })
        .collect();
    let model_cdf = |l: usize, b: f64| {
        let (q, cum) = &cdfs[l];
        let k = q.partition_point(|&v| v <= b);
        if k == 0 {
            0.0
        } else {
            cum[k - 1]
        }
    };
    let points: Vec<Point> = bids
        .iter()
        .enumerate()
        .flat_map(|(l, bs)| bs.iter().map(move |&bid| Point { bid, x: &xs[l] }))
        .collect();
    let n = points.len() as f64;
    let counts: Vec<usize> = bids.iter().map(Vec::len).collect();
    let mut total = 0.0;
    for p in &points {
        let g_hat = points.iter().filter(|o| o.bid <= p.bid && dominated(o.x, p.x)).count() as f64 / n;
        let g_h0 = xs
            .iter()
            .enumerate()
            .filter(|(_, x)| dominated(x, p.x))
            .map(|(l, _)| counts[l] as f64 * model_cdf(l, p.bid))
            .sum::<f64>()
            / n;
        total += (g_h0 - g_hat).powi(2);
    }
    total / n
}

/// Cramér-von Mises comparison of the empirical joint cdf of bids and
/// covariates with the cdf implied by `model`; semiparametric bootstrap
/// redrawing bids from `model` at uniform levels with covariates held fixed.
pub fn rothe_wied_test<M: QuantileModel + ?Sized>(
    sample: &AuctionSample,
    bidders: u32,
    model: &M,
    grid: &[f64],
    b: usize,
    seed: u64,
) -> Result<TestReport> {
    if grid.len() < 2 {
        return Err(Error::InvalidParameter("model cdf grid needs at least two levels".into()));
    }
    let records = sample.with_bidders(bidders)?;
    let xs: Vec<Vec<f64>> = records.iter().map(|r| r.x.clone()).collect();
    let bids: Vec<Vec<f64>> = records.iter().map(|r| r.observations().to_vec()).collect();
    let statistic = cvm_statistic(&xs, &bids, model, grid);
    let results: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = auction_rng(seed, r as u64);
            let star: Vec<Vec<f64>> = xs
                .iter()
                .zip(&bids)
                .map(|(x, bs)| bs.iter().map(|_| model.quantile(rng.gen::<f64>(), x)).collect())
                .collect();
            cvm_statistic(&xs, &star, model, grid)
        })
        .collect();
    let mut boot = Bootstrap { replicates: vec![], failed: vec![] };
    for (r, v) in results.into_iter().enumerate() {
        if v.is_finite() {
            boot.replicates.push(v);
        } else {
            boot.failed.push(r);
        }
    }
    report("rothe-wied".into(), statistic, boot, seed, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{uniform_spec, AuctionFormat};
    use crate::simulate::{simulate_first_price, SimConfig};
    use approx::assert_abs_diff_eq;

    fn path(grid: &[f64], f: impl Fn(f64) -> Vec<f64>) -> SlopePath {
        SlopePath::from_fn(grid, |a| Ok(f(a))).unwrap()
    }

    #[test]
    fn p_value_formula() {
        assert_eq!(p_value(1.0, &[0.5, 1.0, 2.0]).unwrap(), 0.75);
        assert_eq!(p_value(1.0, &[2.0, 0.5, 1.0]).unwrap(), 0.75);
        assert_eq!(p_value(9.0, &[0.5; 9]).unwrap(), 0.1);
        assert!(p_value(1.0, &[]).is_err());
    }

    #[test]
    fn liu_luo_intercept_shift() {
        let grid = liu_luo_grid();
        let xs: Vec<Vec<f64>> = (0..7).map(|l| vec![l as f64 / 7.0]).collect();
        let hat = path(&grid, |a| vec![a, a * a]);
        assert_eq!(liu_luo_stat(&xs, &hat, &hat).unwrap(), 0.0);
        let c = 0.3;
        let h0 = path(&grid, |a| vec![a + c, a * a]);
        assert_abs_diff_eq!(liu_luo_stat(&xs, &h0, &hat).unwrap(), 49.0 * c * c, epsilon = 1e-10);
        let other = path(&uniform_grid(10), |a| vec![a, a]);
        assert!(liu_luo_stat(&xs, &other, &hat).is_err());
    }

    #[test]
    fn entry_transform_cases() {
        let grid = uniform_grid(100);
        let c = path(&grid, |_| vec![1.7, -0.4]);
        for (i1, i2) in [(2, 3), (3, 2), (2, 5)] {
            let t = entry_transform(&c, i1, i2).unwrap();
            for v in &t.coefs {
                assert_abs_diff_eq!(v[0], 1.7, epsilon = 1e-12);
                assert_abs_diff_eq!(v[1], -0.4, epsilon = 1e-12);
            }
        }
        let lin = path(&grid, |a| vec![a]);
        let t = entry_transform(&lin, 2, 3).unwrap();
        for (a, v) in grid.iter().zip(&t.coefs) {
            assert_abs_diff_eq!(v[0], 4.0 * a / 3.0, epsilon = 1e-12);
        }
        assert_eq!(entry_transform(&lin, 3, 3).unwrap(), lin);
    }

    #[test]
    fn value_to_bid_paths() {
        let grid = uniform_grid(100);
        let c = bid_path_from_values(&path(&grid, |_| vec![2.0]), 3).unwrap();
        assert!(c.coefs.iter().all(|v| (v[0] - 2.0).abs() < 1e-12));
        let u = bid_path_from_values(&path(&grid, |a| vec![a]), 2).unwrap();
        for (a, v) in grid.iter().zip(&u.coefs) {
            assert_abs_diff_eq!(v[0], a / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn bootstrap_mean_matches_clt() {
        let spec = uniform_spec().unwrap();
        let sim = simulate_first_price(&spec, &SimConfig::new(500, 2, 0, 3)).unwrap();
        let mean = |s: &AuctionSample| {
            let bids: Vec<f64> = s.records.iter().map(|r| r.bids[0]).collect();
            bids.iter().sum::<f64>() / bids.len() as f64
        };
        let boot = pairwise_bootstrap(&sim.sample, 400, 11, |s, _| Ok(mean(s)));
        let m = boot.replicates.iter().sum::<f64>() / 400.0;
        let sd = (boot.replicates.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 399.0).sqrt();
        // First bids are uniform on [0, 1/2].
        let analytic = (0.25 / 12.0f64).sqrt() / (500.0f64).sqrt();
        assert!((sd / analytic - 1.0).abs() < 0.15, "{sd} vs {analytic}");
        let again = pairwise_bootstrap(&sim.sample, 400, 11, |s, _| Ok(mean(s)));
        assert_eq!(boot, again);
        assert!(pairwise_bootstrap(&sim.sample, 0, 11, |s, _| Ok(mean(s))).replicates.is_empty());
    }

    #[test]
    fn cvm_single_point() {
        let rec = AuctionRecord { id: 0, n_bidders: 2, x: vec![], bids: vec![0.3, 0.3], winning_bid: None };
        let sample = AuctionSample::new(vec![rec.clone(), AuctionRecord { id: 1, ..rec }], AuctionFormat::FirstPrice).unwrap();
        // Model cdf on the two-level grid is the trapezoid mass of {α = 0}.
        let model = |a: f64, _: &[f64]| a;
        let r = rothe_wied_test(&sample, 2, &model, &[0.0, 1.0], 60, 1).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.25, epsilon = 1e-15);
        assert_eq!(r.replicates.len(), 60);
    }

    #[test]
    fn cvm_separates_shifted_model() {
        let spec = uniform_spec().unwrap();
        let sim = simulate_first_price(&spec, &SimConfig::new(200, 2, 0, 5)).unwrap();
        let grid = uniform_grid(100);
        let truth = |a: f64, _: &[f64]| a / 2.0;
        let shifted = |a: f64, _: &[f64]| a / 2.0 + 0.5;
        let good = rothe_wied_test(&sim.sample, 2, &truth, &grid, 99, 2).unwrap();
        let bad = rothe_wied_test(&sim.sample, 2, &shifted, &grid, 99, 2).unwrap();
        assert!(good.statistic < 0.01);
        assert!(bad.statistic > 0.1);
        assert!(bad.p_value <= 0.011);
        assert!(!rothe_wied_test(&sim.sample, 2, &truth, &grid, 10, 2).unwrap().warnings.is_empty());
    }
}
