//! Augmented quantile regression.
//!
//! At each level `α` the estimator minimizes
//! `Σ_i Σ_m w_m K(t_m) ρ_{α+ht_m}(B_i - (π(ht_m) ⊗ f(X_i))'b)`
//! over `t_m` in the local window, the quadrature version of the averaged
//! check function. Blocks of `b` are the bid quantile coefficients and
//! their scaled quantile derivatives: block 0 is `β(α)`, block 1 is `β'(α)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{poly_vector, quad_grid, Kernel};
use crate::error::{Error, Result};
use crate::lp::{self, symmetrize_upper, DenseDesign, DesignOps, IpmOptions};
use crate::model::{augmented, AuctionFormat, AuctionRecord, AuctionSample};
use crate::sieve::{SieveBasis, Sparse};

/// Covariate regressors `f(x)`: `[1, x']` or a sieve `P(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Features {
    Linear { dim: usize },
    Sieve(SieveBasis),
}

impl Features {
    pub fn len(&self) -> usize {
        match self {
            Features::Linear { dim } => dim + 1,
            Features::Sieve(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn covariate_dim(&self) -> usize {
        match self {
            Features::Linear { dim } => *dim,
            Features::Sieve(b) => b.dim,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Sparse {
        match self {
            Features::Linear { .. } => Sparse { idx: (0..=x.len()).collect(), val: augmented(x) },
            Features::Sieve(b) => b.eval(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AqrConfig {
    pub h: f64,
    /// Smoothness order; the local polynomial has order `s + 1`.
    pub s: usize,
    pub grid: Vec<f64>,
    pub kernel: Kernel,
    pub quad_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AqrConfig {
    fn default() -> Self {
        Self {
            h: 0.3,
            s: 1,
            grid: uniform_grid(100),
            kernel: Kernel::Epanechnikov,
            quad_nodes: 32,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// `{0, 1/n, …, 1}`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

impl AqrConfig {
    pub fn with_h(h: f64) -> Self {
        Self { h, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h < 1.0) {
            return Err(Error::InvalidParameter(format!("bandwidth {} outside (0, 1)", self.h)));
        }
        if self.grid.is_empty() || self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("quantile grid must be nonempty and strictly increasing".into()));
        }
        if let Some(&a) = self.grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::AlphaOutOfRange(a));
        }
        if self.quad_nodes < 8 {
            return Err(Error::InvalidParameter(format!("quadrature needs at least 8 nodes, got {}", self.quad_nodes)));
        }
        Ok(())
    }

    fn ipm(&self) -> IpmOptions {
        IpmOptions { tol: self.tol, max_iter: self.max_iter, ..IpmOptions::default() }
    }
}

/// The AQR design: row `(i, m)` is `c_m (π_m ⊗ f_i)`.
pub struct KronDesign {
    nfeat: usize,
    np: usize,
    mq: usize,
    feats: Vec<Sparse>,
    /// `c_m π_m`, row-major `mq × np`.
    cp: Vec<f64>,
    /// `c_m² π_mk π_ml` for `k ≤ l`, row-major `mq × np(np+1)/2`.
    cpp: Vec<f64>,
    /// Per-row products `f_a f_b` with `a ≤ b`, as `(a, b, value)`.
    pairs: Vec<(usize, usize, f64)>,
    pair_start: Vec<usize>,
}

impl KronDesign {
    pub fn new(nfeat: usize, feats: Vec<Sparse>, polys: Vec<Vec<f64>>, cw: Vec<f64>) -> Self {
        let np = polys[0].len();
        let mq = cw.len();
        let mut cp = Vec::with_capacity(mq * np);
        let mut cpp = Vec::with_capacity(mq * np * (np + 1) / 2);
        for (pm, &c) in polys.iter().zip(&cw) {
            cp.extend(pm.iter().map(|v| c * v));
            for k in 0..np {
                for l in k..np {
                    cpp.push(c * c * pm[k] * pm[l]);
                }
            }
        }
        let mut pairs = Vec::new();
        let mut pair_start = Vec::with_capacity(feats.len() + 1);
        for f in &feats {
            pair_start.push(pairs.len());
            for (a, (&ja, va)) in f.idx.iter().zip(&f.val).enumerate() {
                for (&jb, vb) in f.idx[a..].iter().zip(&f.val[a..]) {
                    let (lo, hi) = if ja <= jb { (ja, jb) } else { (jb, ja) };
                    pairs.push((lo, hi, va * vb));
                }
            }
        }
        pair_start.push(pairs.len());
        Self { nfeat, np, mq, feats, cp, cpp, pairs, pair_start }
    }
}

impl DesignOps for KronDesign {
    fn nrows(&self) -> usize {
        self.feats.len() * self.mq
    }

    fn ncols(&self) -> usize {
        self.nfeat * self.np
    }

    fn mul(&self, b: &[f64], out: &mut [f64]) {
        let (mq, np, q) = (self.mq, self.np, self.nfeat);
        let mut g = vec![0.0; np];
        for (i, f) in self.feats.iter().enumerate() {
            for (k, gk) in g.iter_mut().enumerate() {
                *gk = f.idx.iter().zip(&f.val).map(|(&j, v)| v * b[k * q + j]).sum();
            }
            let row = &mut out[i * mq..(i + 1) * mq];
            for (o, cp) in row.iter_mut().zip(self.cp.chunks_exact(np)) {
                *o = cp.iter().zip(&g).map(|(a, b)| a * b).sum();
            }
        }
    }

    fn tmul(&self, v: &[f64], out: &mut [f64]) {
        let (mq, np, q) = (self.mq, self.np, self.nfeat);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut hk = vec![0.0; np];
        for (i, f) in self.feats.iter().enumerate() {
            hk.iter_mut().for_each(|x| *x = 0.0);
            for (&vm, cp) in v[i * mq..(i + 1) * mq].iter().zip(self.cp.chunks_exact(np)) {
                for (h, c) in hk.iter_mut().zip(cp) {
                    *h += vm * c;
                }
            }
            for (k, h) in hk.iter().enumerate() {
                for (&j, val) in f.idx.iter().zip(&f.val) {
                    out[k * q + j] += h * val;
                }
            }
        }
    }

    fn normal(&self, qw: &[f64]) -> nalgebra::DMatrix<f64> {
        let (mq, np, q) = (self.mq, self.np, self.nfeat);
        let p = np * q;
        let npp = np * (np + 1) / 2;
        // Upper triangle of X'QX, row-major.
        let mut out = vec![0.0; p * p];
        let mut moments = vec![0.0; npp];
        for i in 0..self.feats.len() {
            moments.iter_mut().for_each(|x| *x = 0.0);
            for (&w, cpp) in qw[i * mq..(i + 1) * mq].iter().zip(self.cpp.chunks_exact(npp)) {
                for (s, c) in moments.iter_mut().zip(cpp) {
                    *s += w * c;
                }
            }
            let pairs = &self.pairs[self.pair_start[i]..self.pair_start[i + 1]];
            let mut kl = 0;
            for k in 0..np {
                for l in k..np {
                    let s = moments[kl];
                    kl += 1;
                    for &(a, b, v) in pairs {
                        let sv = s * v;
                        out[(k * q + a) * p + l * q + b] += sv;
                        if k != l && a != b {
                            out[(k * q + b) * p + l * q + a] += sv;
                        }
                    }
                }
            }
        }
        let mut m = nalgebra::DMatrix::from_row_slice(p, p, &out);
        // Blocks with k < l are complete; diagonal blocks hold a ≤ b only.
        for k in 0..np {
            for a in 0..q {
                for b in 0..a {
                    m[(k * q + a, k * q + b)] = m[(k * q + b, k * q + a)];
                }
            }
        }
        for k in 0..np {
            for l in 0..k {
                for a in 0..q {
                    for b in 0..q {
                        m[(k * q + a, l * q + b)] = m[(l * q + b, k * q + a)];
                    }
                }
            }
        }
        m
    }
}

/// Observations entering a fit: features and responses per bid.
pub struct Observations {
    pub feats: Vec<Sparse>,
    pub y: Vec<f64>,
    pub n_auctions: usize,
}

impl Observations {
    pub fn from_records(records: &[&AuctionRecord], features: &Features) -> Self {
        let mut feats = Vec::new();
        let mut y = Vec::new();
        for r in records {
            let f = features.eval(&r.x);
            for &b in r.observations() {
                feats.push(f.clone());
                y.push(b);
            }
        }
        Self { feats, y, n_auctions: records.len() }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Design, responses and asymmetries of the discretized problem at `alpha`.
pub fn local_problem(
    obs: &Observations,
    nfeat: usize,
    alpha: f64,
    cfg: &AqrConfig,
) -> Result<(KronDesign, Vec<f64>, Vec<f64>)> {
    local_problem_mapped(obs, nfeat, alpha, cfg, |a| a)
}

/// As [`local_problem`], with check-loss asymmetry `level(α + ht)` while the
/// local polynomial stays in `α`: the fitted curve is `a ↦ Q(level(a))`.
pub fn local_problem_mapped<L: Fn(f64) -> f64>(
    obs: &Observations,
    nfeat: usize,
    alpha: f64,
    cfg: &AqrConfig,
    level: L,
) -> Result<(KronDesign, Vec<f64>, Vec<f64>)> {
    let grid = quad_grid(alpha, cfg.h, cfg.kernel, cfg.quad_nodes)?;
    let polys: Vec<Vec<f64>> = grid.nodes.iter().map(|&t| poly_vector(cfg.h * t, cfg.s)).collect();
    let cw = grid.kernel_weights.clone();
    let mq = cw.len();
    let mut y = Vec::with_capacity(obs.len() * mq);
    let mut tau = Vec::with_capacity(obs.len() * mq);
    let levels: Vec<f64> = grid.nodes.iter().map(|&t| level(alpha + cfg.h * t)).collect();
    for &b in &obs.y {
        for m in 0..mq {
            y.push(cw[m] * b);
            tau.push(levels[m]);
        }
    }
    Ok((KronDesign::new(nfeat, obs.feats.clone(), polys, cw), y, tau))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub iterations: usize,
    /// Non-finite gaps serialize as JSON `null` and read back as NaN.
    #[serde(deserialize_with = "null_as_nan")]
    pub gap: f64,
    pub converged: bool,
    pub message: Option<String>,
}

fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// What block 0 of the fit estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTarget {
    /// First-price bid quantiles; values follow by the inversion formula.
    Bids,
    /// Private values from ascending winning bids, fitted at the level of
    /// the second-highest order statistic.
    AscendingValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AqrFit {
    pub bidders: u32,
    pub features: Features,
    pub target: FitTarget,
    pub h: f64,
    pub s: usize,
    pub kernel: Kernel,
    pub quad_nodes: usize,
    pub grid: Vec<f64>,
    /// Stacked coefficients per grid level; `None` where the solver failed.
    pub coefs: Vec<Option<Vec<f64>>>,
    pub diagnostics: Vec<PointDiagnostics>,
    pub n_auctions: usize,
    pub n_obs: usize,
}

impl AqrFit {
    pub fn nfeat(&self) -> usize {
        self.features.len()
    }

    pub fn all_converged(&self) -> bool {
        self.coefs.iter().all(Option::is_some)
    }

    pub fn failed_points(&self) -> Vec<f64> {
        self.grid.iter().zip(&self.coefs).filter(|(_, c)| c.is_none()).map(|(a, _)| *a).collect()
    }

    fn stored(&self, k: usize) -> Result<&[f64]> {
        self.coefs[k].as_deref().ok_or_else(|| Error::SolverFailed {
            alpha: self.grid[k],
            gap: self.diagnostics[k].gap,
            iterations: self.diagnostics[k].iterations,
        })
    }

    /// Full coefficient vector at `alpha`, linear between grid points.
    pub fn coef_at(&self, alpha: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        let g = &self.grid;
        let n = g.len();
        if alpha <= g[0] || n == 1 {
            return Ok(self.stored(0)?.to_vec());
        }
        if alpha >= g[n - 1] {
            return Ok(self.stored(n - 1)?.to_vec());
        }
        let k = g.partition_point(|&v| v <= alpha) - 1;
        let lo = self.stored(k)?;
        if alpha == g[k] {
            return Ok(lo.to_vec());
        }
        let hi = self.stored(k + 1)?;
        let w = (alpha - g[k]) / (g[k + 1] - g[k]);
        Ok(lo.iter().zip(hi).map(|(a, b)| a + w * (b - a)).collect())
    }

    /// Block `k` at `alpha`: `β̂_k(α)`.
    pub fn block(&self, alpha: f64, k: usize) -> Result<Vec<f64>> {
        let q = self.nfeat();
        Ok(self.coef_at(alpha)?[k * q..(k + 1) * q].to_vec())
    }

    fn dot_block(&self, coef: &[f64], k: usize, f: &Sparse) -> f64 {
        let q = self.nfeat();
        f.idx.iter().zip(&f.val).map(|(&j, v)| v * coef[k * q + j]).sum()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        let d = self.features.covariate_dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        Ok(())
    }

    /// `B̂(α|x)` (or `V̂_asc` for ascending fits).
    pub fn bid(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let c = self.coef_at(alpha)?;
        Ok(self.dot_block(&c, 0, &self.features.eval(x)))
    }

    /// `B̂'(α|x)` read from the derivative block.
    pub fn bid_derivative(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let c = self.coef_at(alpha)?;
        Ok(self.dot_block(&c, 1, &self.features.eval(x)))
    }

    /// `V̂(α|x) = B̂ + ν α B̂' / (I-1)`; for ascending fits, block 0.
    pub fn value(&self, alpha: f64, x: &[f64], nu: f64) -> Result<f64> {
        self.check_x(x)?;
        let c = self.coef_at(alpha)?;
        let f = self.features.eval(x);
        let b = self.dot_block(&c, 0, &f);
        match self.target {
            FitTarget::Bids => Ok(b + nu * alpha * self.dot_block(&c, 1, &f) / f64::from(self.bidders - 1)),
            FitTarget::AscendingValues => Ok(b),
        }
    }

    /// Value-slope path `γ̂(α) = β̂₀ + α β̂₁ / (I-1)`.
    pub fn gamma(&self, alpha: f64) -> Result<Vec<f64>> {
        let b0 = self.block(alpha, 0)?;
        if self.target == FitTarget::AscendingValues {
            return Ok(b0);
        }
        let b1 = self.block(alpha, 1)?;
        let scale = alpha / f64::from(self.bidders - 1);
        Ok(b0.iter().zip(&b1).map(|(a, b)| a + scale * b).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn records_for<'a>(sample: &'a AuctionSample, bidders: u32, features: &Features) -> Result<Vec<&'a AuctionRecord>> {
    let d = features.covariate_dim();
    if sample.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: sample.dim() });
    }
    sample.with_bidders(bidders)
}

/// Fits every grid level independently and in parallel; the level actually
/// solved at grid point `α` is `level(α)`.
fn fit_levels<L: Fn(f64) -> f64 + Sync>(
    obs: &Observations,
    features: Features,
    bidders: u32,
    target: FitTarget,
    cfg: &AqrConfig,
    level: L,
) -> Result<AqrFit> {
    cfg.validate()?;
    let nfeat = features.len();
    let results: Vec<(Option<Vec<f64>>, PointDiagnostics)> = cfg
        .grid
        .par_iter()
        .map(|&a| {
            let (design, y, tau) = match local_problem_mapped(obs, nfeat, a, cfg, &level) {
                Ok(p) => p,
                Err(e) => return (None, PointDiagnostics { iterations: 0, gap: f64::NAN, converged: false, message: Some(e.to_string()) }),
            };
            match lp::solve_rq(&design, &y, &tau, cfg.ipm()) {
                Ok(sol) => (
                    Some(sol.coef),
                    PointDiagnostics { iterations: sol.iterations, gap: sol.gap, converged: true, message: None },
                ),
                Err(e) => {
                    let (gap, iterations) = match e {
                        Error::SolverFailed { gap, iterations, .. } => (gap, iterations),
                        _ => (f64::NAN, 0),
                    };
                    (None, PointDiagnostics { iterations, gap, converged: false, message: Some(e.to_string()) })
                }
            }
        })
        .collect();
    let (coefs, diagnostics) = results.into_iter().unzip();
    Ok(AqrFit {
        bidders,
        features,
        target,
        h: cfg.h,
        s: cfg.s,
        kernel: cfg.kernel,
        quad_nodes: cfg.quad_nodes,
        grid: cfg.grid.clone(),
        coefs,
        diagnostics,
        n_auctions: obs.n_auctions,
        n_obs: obs.len(),
    })
}

/// AQR with linear covariate regressors `[1, x']`.
pub fn aqr_fit(sample: &AuctionSample, bidders: u32, cfg: &AqrConfig) -> Result<AqrFit> {
    aqr_fit_features(sample, bidders, Features::Linear { dim: sample.dim() }, cfg)
}

/// AQR with arbitrary covariate regressors.
pub fn aqr_fit_features(sample: &AuctionSample, bidders: u32, features: Features, cfg: &AqrConfig) -> Result<AqrFit> {
    if sample.format != AuctionFormat::FirstPrice {
        return Err(Error::InvalidParameter("AQR of bids needs a first-price sample".into()));
    }
    let records = records_for(sample, bidders, &features)?;
    let obs = Observations::from_records(&records, &features);
    fit_levels(&obs, features, bidders, FitTarget::Bids, cfg, |a| a)
}

/// Level of the second-highest of `I` uniform ranks: `Iα^{I-1} - (I-1)α^I`.
pub fn second_highest_level(alpha: f64, bidders: u32) -> f64 {
    let i = f64::from(bidders);
    (i * alpha.powf(i - 1.0) - (i - 1.0) * alpha.powf(i)).clamp(0.0, 1.0)
}

/// Private-value quantiles from ascending winning bids: AQR of winning
/// bids with check-loss level `Iα^{I-1} - (I-1)α^I` and a local polynomial
/// in `α`, so the fitted curve is the value quantile itself.
pub fn ascending_value_fit(sample: &AuctionSample, bidders: u32, cfg: &AqrConfig) -> Result<AqrFit> {
    if sample.format != AuctionFormat::Ascending {
        return Err(Error::InvalidParameter("ascending fit needs winning bids".into()));
    }
    let features = Features::Linear { dim: sample.dim() };
    let records = records_for(sample, bidders, &features)?;
    let obs = Observations::from_records(&records, &features);
    fit_levels(&obs, features, bidders, FitTarget::AscendingValues, cfg, |a| second_highest_level(a, bidders))
}

/// The discretized objective `(1/n) Σ_i Σ_m w_m K(t_m) ρ_{α+ht_m}(B_i - P'b)`
/// with `n` the number of bids with `I` bidders.
pub fn aqr_objective(b: &[f64], alpha: f64, sample: &AuctionSample, bidders: u32, cfg: &AqrConfig) -> Result<f64> {
    let features = Features::Linear { dim: sample.dim() };
    let records = records_for(sample, bidders, &features)?;
    let obs = Observations::from_records(&records, &features);
    objective_on(&obs, features.len(), b, alpha, cfg)
}

pub fn objective_on(obs: &Observations, nfeat: usize, b: &[f64], alpha: f64, cfg: &AqrConfig) -> Result<f64> {
    let expected = nfeat * (cfg.s + 2);
    if b.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: b.len() });
    }
    let (design, y, tau) = local_problem(obs, nfeat, alpha, cfg)?;
    Ok(lp::check_loss(&design, &y, &tau, b) / obs.len() as f64)
}

/// Objective at `b + t·d` for each `t`, with `d = [1, …, 1]`.
pub fn objective_slice(
    b: &[f64],
    alpha: f64,
    sample: &AuctionSample,
    bidders: u32,
    cfg: &AqrConfig,
    steps: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let features = Features::Linear { dim: sample.dim() };
    let records = records_for(sample, bidders, &features)?;
    let obs = Observations::from_records(&records, &features);
    steps
        .iter()
        .map(|&t| {
            let bt: Vec<f64> = b.iter().map(|v| v + t).collect();
            Ok((t, objective_on(&obs, features.len(), &bt, alpha, cfg)?))
        })
        .collect()
}

fn linear_design(records: &[&AuctionRecord]) -> Result<(DenseDesign, Vec<f64>)> {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for r in records {
        for &b in r.observations() {
            rows.push(augmented(&r.x));
            y.push(b);
        }
    }
    Ok((DenseDesign::new(rows)?, y))
}

/// Classical linear quantile regression of bids on `[1, x']` at level `alpha`.
///
/// Fails with [`Error::Degenerate`] when the solution lies on one side of
/// every observation, which is what happens once `n·min(α, 1-α) < 1`.
pub fn standard_qr(sample: &AuctionSample, bidders: u32, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Degenerate(format!("standard quantile regression is undefined at alpha={alpha}")));
    }
    let records = sample.with_bidders(bidders)?;
    let (design, y) = linear_design(&records)?;
    standard_qr_on(&design, &y, alpha)
}

pub fn standard_qr_on(design: &DenseDesign, y: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let tau = vec![alpha; y.len()];
    let sol = lp::solve_rq(design, y, &tau, IpmOptions::default())?;
    let mut fit = vec![0.0; y.len()];
    design.mul(&sol.coef, &mut fit);
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let eps = 1e-7 * scale;
    let above = y.iter().zip(&fit).filter(|(y, f)| *y - *f > eps).count();
    let below = y.iter().zip(&fit).filter(|(y, f)| *f - *y > eps).count();
    if above == 0 || below == 0 {
        return Err(Error::Degenerate(format!(
            "quantile regression at alpha={alpha} supports the sample from one side ({above} above, {below} below)"
        )));
    }
    Ok(sol.coef)
}

/// Homogenized-bid estimator: OLS slopes, then covariate-free AQR of the
/// residual bids `B - x'γ̂₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedFit {
    /// OLS slopes on `x` (no intercept).
    pub slopes: Vec<f64>,
    pub residual_fit: AqrFit,
}

impl HomogenizedFit {
    pub fn value(&self, alpha: f64, x: &[f64], nu: f64) -> Result<f64> {
        if x.len() != self.slopes.len() {
            return Err(Error::DimensionMismatch { expected: self.slopes.len(), got: x.len() });
        }
        let shift: f64 = self.slopes.iter().zip(x).map(|(a, b)| a * b).sum();
        Ok(shift + self.residual_fit.value(alpha, &[], nu)?)
    }

    pub fn bid(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        let shift: f64 = self.slopes.iter().zip(x).map(|(a, b)| a * b).sum();
        Ok(shift + self.residual_fit.bid(alpha, &[])?)
    }

    /// Slope path `[β̌₀(α) intercept, γ̂₁']` of the implied bid quantile.
    pub fn bid_coefficients(&self, alpha: f64) -> Result<Vec<f64>> {
        let mut out = vec![self.residual_fit.bid(alpha, &[])?];
        out.extend_from_slice(&self.slopes);
        Ok(out)
    }
}

/// Ordinary least squares of bids on `[1, x']`.
pub fn ols_bids(sample: &AuctionSample, bidders: u32) -> Result<Vec<f64>> {
    let records = sample.with_bidders(bidders)?;
    let (design, y) = linear_design(&records)?;
    lp::least_squares(&design, &y)
}

pub fn homogenized_two_step(sample: &AuctionSample, bidders: u32, cfg: &AqrConfig) -> Result<HomogenizedFit> {
    let ols = ols_bids(sample, bidders)?;
    let slopes = ols[1..].to_vec();
    let records: Vec<AuctionRecord> = sample
        .with_bidders(bidders)?
        .into_iter()
        .map(|r| {
            let shift: f64 = slopes.iter().zip(&r.x).map(|(a, b)| a * b).sum();
            AuctionRecord {
                id: r.id,
                n_bidders: r.n_bidders,
                x: vec![],
                bids: r.bids.iter().map(|b| b - shift).collect(),
                winning_bid: None,
            }
        })
        .collect();
    let homog = AuctionSample::new(records, AuctionFormat::FirstPrice)?;
    Ok(HomogenizedFit { slopes, residual_fit: aqr_fit(&homog, bidders, cfg)? })
}

/// Elliptical random-coefficient fit: median location-scale regression,
/// then covariate-free AQR of standardized bids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticalFit {
    pub gamma: Vec<f64>,
    /// Lower-triangular Cholesky factor of `Σ̂`, row-major.
    pub chol: Vec<f64>,
    pub standardized_fit: AqrFit,
}

impl EllipticalFit {
    pub fn scale(&self, x: &[f64]) -> f64 {
        scale_from_chol(&self.chol, &augmented(x))
    }

    pub fn location(&self, x: &[f64]) -> f64 {
        crate::model::dot_augmented(&self.gamma, x)
    }

    /// Radial value quantile `v̂(α) = b̂ + α b̂'/(I-1)`.
    pub fn radial_value(&self, alpha: f64) -> Result<f64> {
        self.standardized_fit.value(alpha, &[], 1.0)
    }

    pub fn value(&self, alpha: f64, x: &[f64]) -> Result<f64> {
        Ok(self.location(x) + self.scale(x) * self.radial_value(alpha)?)
    }
}

fn scale_from_chol(chol: &[f64], x1: &[f64]) -> f64 {
    let p = x1.len();
    // ‖L'x₁‖ with L lower-triangular.
    (0..p)
        .map(|c| (c..p).map(|r| chol[r * p + c] * x1[r]).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn elliptical_rc_fit(sample: &AuctionSample, bidders: u32, cfg: &AqrConfig) -> Result<EllipticalFit> {
    let records = sample.with_bidders(bidders)?;
    let p = sample.dim() + 1;
    let (design, y) = linear_design(&records)?;
    let x1s: Vec<Vec<f64>> = (0..y.len()).map(|i| design.row(i).to_vec()).collect();
    let (gamma, chol) = if p == 1 {
        // Location and scale are confounded without covariates: γ = 0.
        let mut s = y.clone();
        s.sort_by(f64::total_cmp);
        let med = crate::recover::median_sorted(&s);
        (vec![0.0], vec![med])
    } else {
        fit_location_scale(&design, &y, &x1s)?
    };
    let scales: Vec<f64> = x1s.iter().map(|x1| scale_from_chol(&chol, x1)).collect();
    let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if scales.iter().any(|&s| !(s > 1e-8 * ymax)) {
        return Err(Error::Degenerate("estimated elliptical scale is not positive".into()));
    }
    let mut standardized = Vec::with_capacity(records.len());
    let mut k = 0;
    for r in &records {
        let bids = r
            .bids
            .iter()
            .map(|&b| {
                let v = (b - crate::model::dot_augmented(&gamma, &r.x)) / scales[k];
                k += 1;
                v
            })
            .collect();
        standardized.push(AuctionRecord { id: r.id, n_bidders: r.n_bidders, x: vec![], bids, winning_bid: None });
    }
    let sample0 = AuctionSample::new(standardized, AuctionFormat::FirstPrice)?;
    Ok(EllipticalFit { gamma, chol, standardized_fit: aqr_fit(&sample0, bidders, cfg)? })
}

/// Least absolute deviations of `y - x₁'γ - ‖L'x₁‖`, with `γ` profiled out
/// by median regression and `L` searched by Nelder-Mead.
fn fit_location_scale(design: &DenseDesign, y: &[f64], x1s: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = x1s[0].len();
    let tri: Vec<(usize, usize)> = (0..p).flat_map(|r| (0..=r).map(move |c| (r, c))).collect();
    let to_chol = |theta: &[f64]| {
        let mut l = vec![0.0; p * p];
        for (&(r, c), &v) in tri.iter().zip(theta) {
            l[r * p + c] = v;
        }
        l
    };
    let profile = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let l = to_chol(theta);
        let resid: Vec<f64> = y.iter().zip(x1s).map(|(y, x1)| y - scale_from_chol(&l, x1)).collect();
        let tau = vec![0.5; y.len()];
        let sol = lp::solve_rq(design, &resid, &tau, IpmOptions::default())?;
        Ok((lp::check_loss(design, &resid, &tau, &sol.coef), sol.coef))
    };
    let spread = {
        let mut s = y.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |f: f64| s[((s.len() - 1) as f64 * f).round() as usize];
        (q(0.75) - q(0.25)).max(1e-3)
    };
    let start: Vec<f64> = tri.iter().map(|&(r, c)| if r == c && r == 0 { spread } else { 0.0 }).collect();
    let objective = |theta: &[f64]| profile(theta).map(|(v, _)| v).unwrap_or(f64::INFINITY);
    let best = nelder_mead(&objective, &start, 0.5 * spread, 400);
    let (_, gamma) = profile(&best)?;
    Ok((gamma, to_chol(&best)))
}

/// Derivative-free minimization from `start` with initial simplex edge `step`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, start: &[f64], step: f64, max_evals: usize) -> Vec<f64> {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f(start)));
    for k in 0..n {
        let mut v = start.to_vec();
        v[k] += step;
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let mut evals = n + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() <= 1e-12 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|s| s.0[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let t = if fr < simplex[n].1 { 0.5 } else { -0.5 };
            let xc = along(t);
            let fc = f(&xc);
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.0 = best.iter().zip(&s.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    s.1 = f(&s.0);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0).0
}

/// Dense `X'diag(q)X` helper for small designs.
pub fn gram(rows: &[Vec<f64>], q: &[f64]) -> nalgebra::DMatrix<f64> {
    let p = rows[0].len();
    let mut m = nalgebra::DMatrix::zeros(p, p);
    for (r, &w) in rows.iter().zip(q) {
        for a in 0..p {
            for b in a..p {
                m[(a, b)] += w * r[a] * r[b];
            }
        }
    }
    symmetrize_upper(&mut m);
    m
}
