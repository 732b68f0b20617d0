//! Monte Carlo replication of the value, revenue and risk-aversion experiments.

use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aqr::{aqr_fit, ascending_value_fit, uniform_grid, AqrConfig, AqrFit};
use crate::error::{Error, Result};
use crate::functionals::{crra_asc, crra_fp, optimal_reserve, DEFAULT_CRRA_RANGE};
use crate::model::{sim62_spec, AuctionSample, QuantileSpec};
use crate::quadrature::trapezoid_weights;
use crate::simulate::{auction_rng, simulate_ascending, simulate_first_price, SimConfig};

/// Covariate setting for revenue: no intercept, `x₁ = x₃ = 0`, `x₂ = 0.8`.
pub const REVENUE_X2: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorMetric {
    #[serde(rename = "RIMSE")]
    Rimse,
    #[serde(rename = "RMSE")]
    Rmse,
}

impl ErrorMetric {
    pub fn name(self) -> &'static str {
        match self {
            ErrorMetric::Rimse => "RIMSE",
            ErrorMetric::Rmse => "RMSE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub quantity: String,
    pub nu: Option<f64>,
    pub h: f64,
    pub bias: f64,
    pub error: f64,
    pub metric: ErrorMetric,
    pub used: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub experiment: String,
    pub replications: usize,
    pub auctions: usize,
    pub seed: u64,
    pub h_list: Vec<f64>,
    pub rows: Vec<McRow>,
    /// Wall-clock seconds; the only field that varies between identical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_secs: Option<f64>,
}

impl McReport {
    pub fn row(&self, quantity: &str, nu: Option<f64>, h: f64) -> Option<&McRow> {
        self.rows.iter().find(|r| r.quantity == quantity && r.nu == nu && (r.h - h).abs() < 1e-12)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One line per quantity and metric, one column per bandwidth.
    pub fn to_table_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["quantity".to_string(), "nu".into(), "metric".into()];
        header.extend(self.h_list.iter().map(|h| format!("h={h}")));
        w.write_record(&header)?;
        let mut keys: Vec<(String, Option<f64>)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|(q, n)| *q == r.quantity && *n == r.nu) {
                keys.push((r.quantity.clone(), r.nu));
            }
        }
        for (q, nu) in keys {
            let nu_s = nu.map(|v| v.to_string()).unwrap_or_default();
            let metric = self.rows.iter().find(|r| r.quantity == q && r.nu == nu).map_or("", |r| r.metric.name());
            let cells = |f: &dyn Fn(&McRow) -> f64| -> Vec<String> {
                self.h_list.iter().map(|&h| self.row(&q, nu, h).map(|r| f(r).to_string()).unwrap_or_default()).collect()
            };
            for (name, vals) in [("Bias", cells(&|r| r.bias)), (metric, cells(&|r| r.error)), ("dropped", cells(&|r| r.dropped as f64))] {
                let mut rec = vec![q.clone(), nu_s.clone(), name.to_string()];
                rec.extend(vals);
                w.write_record(&rec)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
    }
}

/// `((1/J) Σ_j ∫(E γ̂_j − γ_j)²)^{1/2}` and `((1/J) Σ_j ∫E(γ̂_j − γ_j)²)^{1/2}`
/// with `E` the replication mean; `est[r][j][g]`, `truth[j][g]`.
pub fn curve_metrics(est: &[Vec<Vec<f64>>], truth: &[Vec<f64>], weights: &[f64]) -> Result<(f64, f64)> {
    if est.is_empty() {
        return Err(Error::InvalidParameter("no replicates to summarize".into()));
    }
    let r = est.len() as f64;
    let j = truth.len() as f64;
    let (mut bias2, mut mse) = (0.0, 0.0);
    for (c, tc) in truth.iter().enumerate() {
        for (g, (&t, &w)) in tc.iter().zip(weights).enumerate() {
            let mean = est.iter().map(|e| e[c][g]).sum::<f64>() / r;
            bias2 += w * (mean - t).powi(2);
            mse += w * est.iter().map(|e| (e[c][g] - t).powi(2)).sum::<f64>() / r;
        }
    }
    Ok(((bias2 / j).sqrt(), (mse / j).sqrt()))
}

/// Signed mean error and root mean squared error.
pub fn scalar_metrics(est: &[f64], truth: f64) -> Result<(f64, f64)> {
    if est.is_empty() {
        return Err(Error::InvalidParameter("no replicates to summarize".into()));
    }
    let r = est.len() as f64;
    let bias = est.iter().map(|e| e - truth).sum::<f64>() / r;
    let rmse = (est.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / r).sqrt();
    Ok((bias, rmse))
}

enum Estimate {
    Curve(Vec<Vec<f64>>),
    Scalar(f64),
}

enum Truth {
    /// Component curves and the trapezoid weights of their grid.
    Curve(Vec<Vec<f64>>, Vec<f64>),
    Scalar(f64),
}

struct Slot {
    quantity: &'static str,
    nu: Option<f64>,
    h: f64,
    truth: Truth,
}

fn summarize(slots: &[Slot], outcomes: &[Vec<Option<Estimate>>]) -> Result<Vec<McRow>> {
    slots
        .iter()
        .enumerate()
        .map(|(k, slot)| {
            let kept: Vec<&Estimate> = outcomes.iter().filter_map(|o| o[k].as_ref()).collect();
            let dropped = outcomes.len() - kept.len();
            let (bias, error, metric) = if kept.is_empty() {
                (f64::NAN, f64::NAN, metric_of(&slot.truth))
            } else {
                match &slot.truth {
                    Truth::Curve(t, weights) => {
                        let est: Vec<Vec<Vec<f64>>> = kept
                            .iter()
                            .map(|e| match e {
                                Estimate::Curve(c) => Ok(c.clone()),
                                Estimate::Scalar(_) => Err(Error::InvalidParameter("estimate shape mismatch".into())),
                            })
                            .collect::<Result<_>>()?;
                        let (b, e) = curve_metrics(&est, t, weights)?;
                        (b, e, ErrorMetric::Rimse)
                    }
                    Truth::Scalar(t) => {
                        let est: Vec<f64> = kept
                            .iter()
                            .map(|e| match e {
                                Estimate::Scalar(v) => Ok(*v),
                                Estimate::Curve(_) => Err(Error::InvalidParameter("estimate shape mismatch".into())),
                            })
                            .collect::<Result<_>>()?;
                        let (b, e) = scalar_metrics(&est, *t)?;
                        (b, e, ErrorMetric::Rmse)
                    }
                }
            };
            Ok(McRow { quantity: slot.quantity.into(), nu: slot.nu, h: slot.h, bias, error, metric, used: kept.len(), dropped })
        })
        .collect()
}

fn metric_of(t: &Truth) -> ErrorMetric {
    match t {
        Truth::Curve(..) => ErrorMetric::Rimse,
        Truth::Scalar(_) => ErrorMetric::Rmse,
    }
}

/// Seeds for the independent samples of replicate `r`.
fn replicate_seeds(seed: u64, r: usize, count: usize) -> Vec<u64> {
    let mut rng = auction_rng(seed, r as u64);
    (0..count).map(|_| rng.next_u64()).collect()
}

fn check_common(replications: usize, auctions: usize, h_list: &[f64]) -> Result<()> {
    if replications == 0 || auctions == 0 {
        return Err(Error::InvalidParameter("replications and auctions must be positive".into()));
    }
    if h_list.is_empty() {
        return Err(Error::InvalidParameter("empty bandwidth list".into()));
    }
    Ok(())
}

fn converged(fit: Result<AqrFit>) -> Option<AqrFit> {
    fit.ok().filter(AqrFit::all_converged)
}

/// Value, revenue and reserve experiment on the four-coefficient design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PverConfig {
    pub replications: usize,
    pub auctions: usize,
    pub bidders: u32,
    pub h_list: Vec<f64>,
    pub seed: u64,
    /// Fit settings other than `h`.
    pub aqr: AqrConfig,
    /// Screening levels for the revenue curve and its argmax.
    pub screening: Vec<f64>,
    /// Feed the true coefficients instead of the AQR estimate.
    pub oracle: bool,
}

impl PverConfig {
    pub fn new(replications: usize, auctions: usize, bidders: u32, h_list: Vec<f64>, seed: u64) -> Self {
        Self { replications, auctions, bidders, h_list, seed, aqr: AqrConfig::default(), screening: uniform_grid(100), oracle: false }
    }
}

pub fn run_pver(replications: usize, auctions: usize, bidders: u32, h_list: &[f64], seed: u64) -> Result<McReport> {
    run_pver_with(&PverConfig::new(replications, auctions, bidders, h_list.to_vec(), seed))
}

pub fn run_pver_with(cfg: &PverConfig) -> Result<McReport> {
    check_common(cfg.replications, cfg.auctions, &cfg.h_list)?;
    let start = Instant::now();
    let spec = sim62_spec()?;
    let grid = cfg.aqr.grid.clone();
    let weights = trapezoid_weights(&grid);
    let true_gamma: Vec<Vec<f64>> = transpose(&grid.iter().map(|&a| spec.gamma(a)).collect::<Vec<_>>());
    let true_value = |a: f64| REVENUE_X2 * spec.gamma(a)[2];
    let true_curve = optimal_reserve(true_value, cfg.bidders, 1.0, &cfg.screening)?;
    let er_weights = trapezoid_weights(&cfg.screening);

    let mut slots = Vec::new();
    for &h in &cfg.h_list {
        slots.push(Slot { quantity: "V", nu: None, h, truth: Truth::Curve(true_gamma.clone(), weights.clone()) });
        slots.push(Slot { quantity: "ER", nu: None, h, truth: Truth::Curve(vec![true_curve.revenue.clone()], er_weights.clone()) });
        slots.push(Slot { quantity: "R*", nu: None, h, truth: Truth::Scalar(true_curve.reserve) });
    }

    let outcomes: Vec<Vec<Option<Estimate>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<Estimate>>> {
            let seeds = replicate_seeds(cfg.seed, r, 1);
            let sim = simulate_first_price(&spec, &SimConfig::new(cfg.auctions, cfg.bidders, spec.dim(), seeds[0]))?;
            let mut out = Vec::with_capacity(3 * cfg.h_list.len());
            for &h in &cfg.h_list {
                let gamma_at: Box<dyn Fn(f64) -> Result<Vec<f64>>> = if cfg.oracle {
                    Box::new(|a| Ok(spec.gamma(a)))
                } else {
                    let fit_cfg = AqrConfig { h, ..cfg.aqr.clone() };
                    match converged(aqr_fit(&sim.sample, cfg.bidders, &fit_cfg)) {
                        Some(fit) => Box::new(move |a| fit.gamma(a)),
                        None => {
                            out.extend([None, None, None]);
                            continue;
                        }
                    }
                };
                let est = pver_estimates(&*gamma_at, &grid, cfg);
                match est {
                    Ok((g, er, rs)) => out.extend([Some(Estimate::Curve(g)), Some(Estimate::Curve(vec![er])), Some(Estimate::Scalar(rs))]),
                    Err(_) => out.extend([None, None, None]),
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let rows = summarize(&slots, &outcomes)?;
    Ok(McReport {
        experiment: "pver".into(),
        replications: cfg.replications,
        auctions: cfg.auctions,
        seed: cfg.seed,
        h_list: cfg.h_list.clone(),
        rows,
        runtime_secs: Some(start.elapsed().as_secs_f64()),
    })
}

type PverEstimate = (Vec<Vec<f64>>, Vec<f64>, f64);

fn pver_estimates(gamma_at: &dyn Fn(f64) -> Result<Vec<f64>>, grid: &[f64], cfg: &PverConfig) -> Result<PverEstimate> {
    let gammas = grid.iter().map(|&a| gamma_at(a)).collect::<Result<Vec<_>>>()?;
    let value = |a: f64| gamma_at(a).map_or(f64::NAN, |g| REVENUE_X2 * g[2]);
    let curve = optimal_reserve(value, cfg.bidders, 1.0, &cfg.screening)?;
    if curve.revenue.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("nonfinite revenue estimate".into()));
    }
    Ok((transpose(&gammas), curve.revenue, curve.reserve))
}

fn transpose(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    (0..cols).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

/// Risk-aversion experiment: `ν̂_fp` from two first-price samples and
/// `ν̂_asc` from an added ascending sample rationalized by CRRA `ν`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaestConfig {
    pub replications: usize,
    pub auctions: usize,
    pub h_list: Vec<f64>,
    pub nu_list: Vec<f64>,
    pub seed: u64,
    /// Compute `ν̂_fp` (risk neutrality only).
    pub first_price: bool,
    pub aqr: AqrConfig,
    /// Quantile range of the Riemann sums.
    pub range: (f64, f64),
}

impl RaestConfig {
    pub fn new(replications: usize, nu_list: Vec<f64>, h_list: Vec<f64>, seed: u64) -> Self {
        Self { replications, auctions: 100, h_list, nu_list, seed, first_price: true, aqr: AqrConfig::default(), range: DEFAULT_CRRA_RANGE }
    }
}

pub fn run_raest(replications: usize, nu_list: &[f64], h_list: &[f64], seed: u64) -> Result<McReport> {
    run_raest_with(&RaestConfig::new(replications, nu_list.to_vec(), h_list.to_vec(), seed))
}

fn covariates(samples: &[&AuctionSample]) -> Vec<Vec<f64>> {
    samples.iter().flat_map(|s| s.covariates()).collect()
}

pub fn run_raest_with(cfg: &RaestConfig) -> Result<McReport> {
    check_common(cfg.replications, cfg.auctions, &cfg.h_list)?;
    if !cfg.first_price && cfg.nu_list.is_empty() {
        return Err(Error::InvalidParameter("nothing to estimate".into()));
    }
    let start = Instant::now();
    let spec = sim62_spec()?;
    let rationalized: Vec<QuantileSpec> = cfg.nu_list.iter().map(|&nu| spec.rationalized(2, nu)).collect::<Result<_>>()?;
    let grid = cfg.aqr.grid.clone();

    let mut slots = Vec::new();
    for &h in &cfg.h_list {
        if cfg.first_price {
            slots.push(Slot { quantity: "nu_fp", nu: Some(1.0), h, truth: Truth::Scalar(1.0) });
        }
        for &nu in &cfg.nu_list {
            slots.push(Slot { quantity: "nu_asc", nu: Some(nu), h, truth: Truth::Scalar(nu) });
        }
    }

    let outcomes: Vec<Vec<Option<Estimate>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<Estimate>>> {
            let seeds = replicate_seeds(cfg.seed, r, 2 + cfg.nu_list.len());
            let fp2 = simulate_first_price(&spec, &SimConfig::new(cfg.auctions, 2, spec.dim(), seeds[0]))?.sample;
            let fp3 = if cfg.first_price {
                Some(simulate_first_price(&spec, &SimConfig::new(cfg.auctions, 3, spec.dim(), seeds[1]))?.sample)
            } else {
                None
            };
            let asc = rationalized
                .iter()
                .zip(&seeds[2..])
                .map(|(s, &sd)| simulate_ascending(s, &SimConfig::new(cfg.auctions, 2, s.dim(), sd)).map(|x| x.sample))
                .collect::<Result<Vec<_>>>()?;
            let mut out = Vec::new();
            for &h in &cfg.h_list {
                let fit_cfg = AqrConfig { h, ..cfg.aqr.clone() };
                let fit2 = converged(aqr_fit(&fp2, 2, &fit_cfg));
                if let Some(fp3) = &fp3 {
                    let est = fit2.as_ref().and_then(|f2| {
                        let f3 = converged(aqr_fit(fp3, 3, &fit_cfg))?;
                        crra_fp(f2, &f3, &covariates(&[&fp2, fp3]), &grid, cfg.range).ok()
                    });
                    out.push(est.filter(|v| v.is_finite()).map(Estimate::Scalar));
                }
                for a in &asc {
                    let est = fit2.as_ref().and_then(|f2| {
                        let vfit = converged(ascending_value_fit(a, 2, &fit_cfg))?;
                        crra_asc(|al, x| vfit.value(al, x, 1.0), f2, &covariates(&[&fp2, a]), &grid, cfg.range).ok()
                    });
                    out.push(est.filter(|v| v.is_finite()).map(Estimate::Scalar));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let rows = summarize(&slots, &outcomes)?;
    Ok(McReport {
        experiment: "raest".into(),
        replications: cfg.replications,
        auctions: cfg.auctions,
        seed: cfg.seed,
        h_list: cfg.h_list.clone(),
        rows,
        runtime_secs: Some(start.elapsed().as_secs_f64()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn metrics_of_truth_vanish() {
        let truth = vec![vec![1.0, 2.0, 3.0], vec![0.5, 0.5, 0.5]];
        let w = trapezoid_weights(&[0.0, 0.5, 1.0]);
        let (b, e) = curve_metrics(&[truth.clone(), truth.clone()], &truth, &w).unwrap();
        assert_eq!((b, e), (0.0, 0.0));
        assert_eq!(scalar_metrics(&[0.3, 0.3], 0.3).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn metric_formulas() {
        // Two replicates at ±1 around the truth: zero bias, unit RIMSE.
        let truth = vec![vec![0.0, 0.0]];
        let w = trapezoid_weights(&[0.0, 1.0]);
        let (b, e) = curve_metrics(&[vec![vec![1.0, 1.0]], vec![vec![-1.0, -1.0]]], &truth, &w).unwrap();
        assert_abs_diff_eq!(b, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-15);
        let (b, e) = scalar_metrics(&[1.0, 3.0], 1.0).unwrap();
        assert_abs_diff_eq!(b, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e, 2f64.sqrt(), epsilon = 1e-15);
        assert!(scalar_metrics(&[], 0.0).is_err());
    }

    #[test]
    fn oracle_pass_through_is_exact() {
        let mut cfg = PverConfig::new(3, 20, 2, vec![0.3], 5);
        cfg.oracle = true;
        let rep = run_pver_with(&cfg).unwrap();
        for row in &rep.rows {
            assert_eq!(row.used, 3);
            assert_abs_diff_eq!(row.bias, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row.error, 0.0, epsilon = 1e-12);
        }
        let csv = rep.to_table_csv().unwrap();
        assert!(csv.starts_with("quantity,nu,metric,h=0.3"));
        assert_eq!(csv.lines().count(), 1 + 3 * 3);
    }

    #[test]
    fn small_runs_are_deterministic() {
        let mut cfg = PverConfig::new(2, 40, 2, vec![0.4], 11);
        cfg.aqr.grid = uniform_grid(10);
        let a = run_pver_with(&cfg).unwrap();
        let b = run_pver_with(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert!(a.rows.iter().all(|r| r.error.is_finite() && r.used + r.dropped == 2));

        let mut rc = RaestConfig::new(2, vec![0.6], vec![0.4], 3);
        rc.auctions = 40;
        rc.aqr.grid = uniform_grid(10);
        let a = run_raest_with(&rc).unwrap();
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.rows, run_raest_with(&rc).unwrap().rows);
    }
}
