//! Subcommands. Each reads every setting it uses, rejects the rest, then
//! computes; artifacts embed the settings echo.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use aqr::aqr::{
    aqr_fit, aqr_fit_features, ascending_value_fit, elliptical_rc_fit, homogenized_two_step, objective_slice as slice,
    uniform_grid, AqrConfig, Features,
};
use aqr::bandwidth::select_bandwidth;
use aqr::basis::Kernel;
use aqr::functionals::optimal_reserve;
use aqr::inference::{liu_luo_test, rothe_wied_test, LiuLuoNull};
use aqr::io::{read_auctions, write_auctions, write_columns, write_oracle};
use aqr::mc::{run_pver_with, run_raest_with, McReport, PverConfig, RaestConfig};
use aqr::model::{AuctionFormat, AuctionSample, QuantileSpec};
use aqr::recover::{aqr_pdf_bandwidth, cdf_indicator, cdf_smoothed, gpv_pseudo_values, pdf_smoothed};
use aqr::sieve::{SieveBasis, SieveKind};
use aqr::simulate::{simulate_ascending, simulate_first_price, BidderLaw, CovariateLaw, SimConfig};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::fitted::{read_fit, FitFile, Fitted};
use crate::CliError;

type Res = Result<(), CliError>;

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Res {
        let path = self.out.join(name);
        std::fs::create_dir_all(&self.out)
            .and_then(|_| std::fs::write(&path, bytes))
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
        Ok(())
    }

    /// CSV preceded by `# key = value` comment lines.
    fn write_csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> aqr::Result<()>) -> Res {
        let mut buf = self.cfg.echo_comments().into_bytes();
        body(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Res {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }
}

fn read_sample(path: &str) -> Result<AuctionSample, CliError> {
    let f = File::open(path).map_err(|e| CliError::Input(format!("{path}: {e}")))?;
    read_auctions(BufReader::new(f)).map_err(|e| CliError::Input(format!("{path}: {e}")))
}

/// `I` from the settings, or the only bidder count present.
fn bidder_count(c: &RunConfig, sample: &AuctionSample) -> Result<u32, CliError> {
    if let Some(i) = c.opt("I")? {
        return Ok(i);
    }
    match sample.bidder_counts().as_slice() {
        [i] => {
            c.note("I", i);
            Ok(*i)
        }
        counts => Err(CliError::Input(format!("the sample has bidder counts {counts:?}; choose one with I"))),
    }
}

/// Fit settings; `h = auto` is resolved once the sample is known.
fn aqr_settings(c: &RunConfig, with_grid: bool) -> Result<(AqrConfig, bool), CliError> {
    let h: String = c.get("h", "0.3".to_string())?;
    let auto = h == "auto";
    let mut cfg = AqrConfig {
        h: if auto { f64::NAN } else { h.parse().map_err(|e| CliError::Input(format!("setting h = {h:?}: {e}")))? },
        s: c.get("s", 1)?,
        kernel: c.get("kernel", Kernel::Epanechnikov)?,
        quad_nodes: c.get("quad_nodes", 32)?,
        ..AqrConfig::default()
    };
    if with_grid {
        cfg.grid = uniform_grid(c.get("grid", 100)?);
    }
    Ok((cfg, auto))
}

fn resolve_h(c: &RunConfig, cfg: &mut AqrConfig, auto: bool, sample: &AuctionSample, bidders: u32) -> Res {
    if auto {
        let report = select_bandwidth(sample, bidders, cfg.s, cfg.kernel)?;
        cfg.h = report.h_star;
        c.note("h_selected", cfg.h);
    }
    Ok(())
}

fn parse_point(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| CliError::Input(format!("covariate point {raw:?}: {e}"))))
        .collect()
}

fn mean_point(xs: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = xs.len().max(1) as f64;
    (0..dim).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect()
}

/// Evaluation point from `x`, else the stored default.
fn point(c: &RunConfig, default: &[f64]) -> Result<Vec<f64>, CliError> {
    match c.opt::<String>("x")? {
        Some(raw) => parse_point(&raw),
        None => Ok(default.to_vec()),
    }
}

pub fn simulate(ctx: &Ctx) -> Res {
    let c = &ctx.cfg;
    let spec_name: String = c.get("spec", "uniform".to_string())?;
    let l: usize = c.get("L", 100)?;
    let counts: Vec<u32> = c.list("I", "2")?;
    let seed: u64 = c.get("seed", 0)?;
    let format: String = c.get("format", "first-price".to_string())?;
    let nu: Option<f64> = c.opt("rationalize")?;
    let covariates: String = c.get("covariates", "uniform".to_string())?;
    let oracle = c.flag("oracle")?;
    c.reject_unused()?;

    let mut spec = QuantileSpec::named(&spec_name)?;
    if let Some(nu) = nu {
        let [i] = counts[..] else {
            return Err(CliError::Input("rationalize needs a single bidder count".into()));
        };
        spec = spec.rationalized(i, nu)?;
    }
    let bidders = match counts.as_slice() {
        [] => return Err(CliError::Input("I is empty".into())),
        [i] => BidderLaw::Fixed { bidders: *i },
        many => BidderLaw::Discrete { bidders: many.to_vec(), weights: vec![1.0; many.len()] },
    };
    let mut sim_cfg =
        SimConfig { n_auctions: l, bidders, covariates: CovariateLaw::named(&covariates, spec.dim())?, seed, format: AuctionFormat::FirstPrice };
    let sim = match format.as_str() {
        "first-price" => simulate_first_price(&spec, &sim_cfg)?,
        "ascending" => {
            sim_cfg.format = AuctionFormat::Ascending;
            simulate_ascending(&spec, &sim_cfg)?
        }
        other => return Err(CliError::Input(format!("unknown format {other:?}; use first-price or ascending"))),
    };
    ctx.write_csv("auctions.csv", |w| write_auctions(&sim.sample, w))?;
    if oracle {
        ctx.write_csv("oracle.csv", |w| write_oracle(&sim.oracle, w))?;
    }
    Ok(())
}

fn sieve_features(c: &RunConfig, sample: &AuctionSample, bidders: u32) -> Result<Features, CliError> {
    let kind = match c.get("sieve", "bspline".to_string())?.as_str() {
        "regressogram" => SieveKind::Regressogram,
        "bspline" => SieveKind::Bspline { m: c.get("sieve_m", 2)? },
        other => return Err(CliError::Input(format!("unknown sieve {other:?}; use regressogram or bspline"))),
    };
    let h: f64 = c.get("sieve_h", 0.25)?;
    let order: usize = c.get("sieve_order", 1)?;
    let screen: f64 = c.get("screen", 0.0)?;
    let mut basis = SieveBasis::new(kind, h, sample.dim(), order)?;
    if screen > 0.0 {
        let xs: Vec<Vec<f64>> = sample.with_bidders(bidders)?.iter().map(|r| r.x.clone()).collect();
        basis = basis.screened(&xs, screen);
    }
    Ok(Features::Sieve(basis))
}

pub fn fit(ctx: &Ctx) -> Res {
    let c = &ctx.cfg;
    let sample = read_sample(&c.req::<String>("input")?)?;
    let bidders = bidder_count(c, &sample)?;
    let method: String = c.get("method", "aqr".to_string())?;
    let (mut cfg, auto) = aqr_settings(c, true)?;
    let features = if method == "asqr" { Some(sieve_features(c, &sample, bidders)?) } else { None };
    let records = sample.with_bidders(bidders)?;
    let xs: Vec<Vec<f64>> = records.iter().map(|r| r.x.clone()).collect();
    let x_mean = mean_point(&xs, sample.dim());
    let x = point(c, &x_mean)?;
    let nu: f64 = c.get("nu", 1.0)?;
    let rearrange = c.flag("rearrange")?;
    c.reject_unused()?;

    let wants_ascending = method == "ascending";
    if wants_ascending != (sample.format == AuctionFormat::Ascending) {
        return Err(CliError::Input(format!("method {method} does not match the file format (bid vs winning_bid column)")));
    }
    resolve_h(c, &mut cfg, auto, &sample, bidders)?;
    let estimate = match method.as_str() {
        "aqr" => Fitted::Aqr(aqr_fit(&sample, bidders, &cfg)?),
        "asqr" => Fitted::Asqr(aqr_fit_features(&sample, bidders, features.expect("built above"), &cfg)?),
        "homogenized" => Fitted::Homogenized(homogenized_two_step(&sample, bidders, &cfg)?),
        "elliptical" => Fitted::Elliptical(elliptical_rc_fit(&sample, bidders, &cfg)?),
        "ascending" => Fitted::Ascending(ascending_value_fit(&sample, bidders, &cfg)?),
        other => return Err(CliError::Input(format!("unknown method {other:?}"))),
    };
    estimate.check_nu(nu)?;
    let failed = estimate.failed_points();
    if !failed.is_empty() {
        eprintln!("aqr: warning: solver failed at {} grid level(s): {failed:?}", failed.len());
    }

    let grid = estimate.grid().to_vec();
    let missing = |r: aqr::Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(e) if e.is_numerical() => Ok(f64::NAN),
        Err(e) => Err(CliError::from(e)),
    };
    let mut columns: Vec<(&str, Vec<f64>)> = vec![("alpha", grid.clone())];
    if estimate.bid(0.5, &x).is_some() {
        let (mut b, mut b1) = (Vec::new(), Vec::new());
        for &a in &grid {
            let (v, d) = match estimate.bid(a, &x).expect("bid curve exists") {
                Ok(p) => p,
                Err(e) => (missing(Err(e))?, f64::NAN),
            };
            b.push(v);
            b1.push(d);
        }
        columns.push(("bid", b));
        columns.push(("bid_derivative", b1));
    }
    let values = if rearrange {
        estimate.value_curve(&x, nu, true)?.values
    } else {
        grid.iter().map(|&a| missing(estimate.value(a, &x, nu))).collect::<Result<_, _>>()?
    };
    columns.push(("value", values));

    let file = FitFile { config: c.echo(), x_mean, estimate };
    ctx.write_json("fit.json", &file)?;
    let cols: Vec<(&str, &[f64])> = columns.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    ctx.write_csv("curves.csv", |w| write_columns(&cols, w))
}

pub fn recover(ctx: &Ctx) -> Res {
    let c = &ctx.cfg;
    let file = read_fit(&c.req::<String>("fit")?)?;
    let x = point(c, &file.x_mean)?;
    let nu: f64 = c.get("nu", 1.0)?;
    let rearrange = c.flag("rearrange")?;
    let points: usize = c.get("points", 200)?;
    let gpv: Option<(String, u32, Option<f64>)> = match c.opt::<String>("gpv_input")? {
        Some(path) => Some((path, c.req("gpv_I")?, c.opt("gpv_bandwidth")?)),
        None => None,
    };
    c.reject_unused()?;
    if points < 2 {
        return Err(CliError::Input("points must be at least 2".into()));
    }

    let curve = file.estimate.value_curve(&x, nu, rearrange)?;
    let eta = aqr_pdf_bandwidth(&curve)?;
    let (lo, hi) = curve.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let (lo, hi) = (lo - 3.0 * eta, hi + 3.0 * eta);
    let vs: Vec<f64> = (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect();
    let cdf: Vec<f64> = vs.iter().map(|&v| cdf_indicator(&curve, v)).collect();
    let smooth = vs.iter().map(|&v| cdf_smoothed(&curve, v, eta, Kernel::Triweight)).collect::<aqr::Result<Vec<_>>>()?;
    let pdf = vs.iter().map(|&v| pdf_smoothed(&curve, v, eta, Kernel::Triweight)).collect::<aqr::Result<Vec<_>>>()?;
    let (mean, sd) = curve.mean_sd();

    let summary = json!({
        "config": c.echo(),
        "method": file.estimate.name(),
        "x": x,
        "nu": nu,
        "monotone": curve.monotone,
        "mean": mean,
        "sd": sd,
        "pdf_bandwidth": eta,
    });
    ctx.write_json("recover.json", &summary)?;
    ctx.write_csv("value_curve.csv", |w| write_columns(&[("alpha", &curve.grid), ("value", &curve.values)], w))?;
    ctx.write_csv("distribution.csv", |w| {
        write_columns(&[("v", &vs), ("cdf", &cdf), ("cdf_smoothed", &smooth), ("pdf", &pdf)], w)
    })?;
    if let Some((path, bidders, bandwidth)) = gpv {
        let sample = read_sample(&path)?;
        let pv = gpv_pseudo_values(&sample, bidders, bandwidth)?;
        let col = |f: fn(&aqr::recover::PseudoValue) -> f64| pv.iter().map(f).collect::<Vec<f64>>();
        let (id, bid, value) = (col(|p| p.auction_id as f64), col(|p| p.bid), col(|p| p.value));
        let (g, dens, trimmed) = (col(|p| p.cdf), col(|p| p.density), col(|p| f64::from(u8::from(p.trimmed))));
        ctx.write_csv("pseudo_values.csv", |w| {
            write_columns(
                &[("auction_id", &id), ("bid", &bid), ("value", &value), ("cdf", &g), ("density", &dens), ("trimmed", &trimmed)],
                w,
            )
        })?;
    }
    Ok(())
}

pub fn revenue(ctx: &Ctx) -> Res {
    let c = &ctx.cfg;
    let file = read_fit(&c.req::<String>("fit")?)?;
    let x = point(c, &file.x_mean)?;
    let nu: f64 = c.get("nu", 1.0)?;
    let rearrange = c.flag("rearrange")?;
    let screening: usize = c.get("screening", 100)?;
    c.reject_unused()?;

    let curve = file.estimate.value_curve(&x, nu, rearrange)?;
    let bidders = curve.provenance.bidders;
    let rev = optimal_reserve(|a| curve.eval(a), bidders, nu, &uniform_grid(screening))?;
    let best = rev.revenue.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ctx.write_json(
        "revenue.json",
        &json!({
            "config": c.echo(),
            "x": x,
            "bidders": bidders,
            "nu": nu,
            "alpha_star": rev.alpha_star,
            "reserve": rev.reserve,
            "max_revenue": best,
        }),
    )?;
    println!("alpha* = {}, reserve = {}, revenue = {best}", rev.alpha_star, rev.reserve);
    ctx.write_csv("revenue.csv", |w| write_columns(&[("alpha_r", &rev.alpha_r), ("revenue", &rev.revenue)], w))
}

pub fn test(ctx: &Ctx) -> Res {
    let c = &ctx.cfg;
    let method: String = c.get("method", "liu-luo".to_string())?;
    let sample = read_sample(&c.req::<String>("input")?)?;
    let bidders = bidder_count(c, &sample)?;
    let b: usize = c.get("B", 199)?;
    let seed: u64 = c.get("seed", 0)?;
    let (mut cfg, auto) = aqr_settings(c, true)?;
    let null = match method.as_str() {
        "liu-luo" => Some(match c.get("h0", "homogenized".to_string())?.as_str() {
            "homogenized" => LiuLuoNull::Homogenized,
            "format" => LiuLuoNull::Format { ascending: read_sample(&c.req::<String>("ascending")?)? },
            "entry" => LiuLuoNull::Entry { other: c.req("other")? },
            other => return Err(CliError::Input(format!("unknown h0 {other:?}; use homogenized, format or entry"))),
        }),
        "rothe-wied" => None,
        other => return Err(CliError::Input(format!("unknown test method {other:?}; use liu-luo or rothe-wied"))),
    };
    let model_grid = if null.is_none() { Some(uniform_grid(c.get("model_grid", 100)?)) } else { None };
    c.reject_unused()?;
    resolve_h(c, &mut cfg, auto, &sample, bidders)?;

    let report = match (null, model_grid) {
        (Some(null), _) => liu_luo_test(&sample, bidders, &null, &cfg, b, seed)?,
        (None, Some(grid)) => {
            let fit = aqr_fit(&sample, bidders, &cfg)?;
            let model = |a: f64, x: &[f64]| fit.bid(a, x).unwrap_or(f64::NAN);
            rothe_wied_test(&sample, bidders, &model, &grid, b, seed)?
        }
        (None, None) => unreachable!("rothe-wied always has a model grid"),
    };
    println!("{}: statistic = {}, p-value = {}, B = {}, seed = {}", report.method, report.statistic, report.p_value, report.b, report.seed);
    for w in &report.warnings {
        eprintln!("aqr: warning: {w}");
    }
    ctx.write_json("test.json", &json!({ "config": c.echo(), "report": report }))
}

pub fn bandwidth(ctx: &Ctx) -> Res {
    let c = &ctx.cfg;
    let sample = read_sample(&c.req::<String>("input")?)?;
    let bidders = bidder_count(c, &sample)?;
    let s: usize = c.get("s", 1)?;
    let kernel: Kernel = c.get("kernel", Kernel::Epanechnikov)?;
    c.reject_unused()?;
    let report = select_bandwidth(&sample, bidders, s, kernel)?;
    println!("h* = {}{}", report.h_star, if report.clamped { " (clamped)" } else { "" });
    ctx.write_json("bandwidth.json", &json!({ "config": c.echo(), "report": report }))
}

pub fn mc(ctx: &Ctx) -> Res {
    let c = &ctx.cfg;
    let experiment: String = c.get("experiment", "pver".to_string())?;
    let r: usize = c.get("R", 10)?;
    let l: usize = c.get("L", 100)?;
    let h: Vec<f64> = c.list("h", "0.3")?;
    let seed: u64 = c.get("seed", 0)?;
    let aqr = AqrConfig { grid: uniform_grid(c.get("grid", 100)?), quad_nodes: c.get("quad_nodes", 32)?, ..AqrConfig::default() };
    let run: Box<dyn FnOnce() -> aqr::Result<McReport>> = match experiment.as_str() {
        "pver" => {
            let mut p = PverConfig::new(r, l, c.get("I", 2)?, h, seed);
            p.aqr = aqr;
            Box::new(move || run_pver_with(&p))
        }
        "raest" => {
            let mut q = RaestConfig::new(r, c.list("nu", "0.5,1")?, h, seed);
            q.auctions = l;
            q.first_price = c.get("first_price", true)?;
            let range: Vec<f64> = c.list("range", "0,0.8")?;
            let [lo, hi] = range[..] else {
                return Err(CliError::Input("range must be `lo,hi`".into()));
            };
            q.range = (lo, hi);
            q.aqr = aqr;
            Box::new(move || run_raest_with(&q))
        }
        other => return Err(CliError::Input(format!("unknown experiment {other:?}; use pver or raest"))),
    };
    c.reject_unused()?;
    let mut report = run()?;
    // Wall time varies between runs; keep it out of the artifacts.
    if let Some(t) = report.runtime_secs.take() {
        eprintln!("aqr: {experiment} finished in {t:.1} s");
    }
    ctx.write_json("mc.json", &json!({ "config": c.echo(), "report": report }))?;
    let table = report.to_table_csv()?;
    ctx.write_csv("mc_table.csv", |w| {
        w.extend_from_slice(table.as_bytes());
        Ok(())
    })
}

pub fn objective_slice(ctx: &Ctx) -> Res {
    let c = &ctx.cfg;
    let sample = read_sample(&c.req::<String>("input")?)?;
    let bidders = bidder_count(c, &sample)?;
    let (mut cfg, auto) = aqr_settings(c, false)?;
    let alpha: f64 = c.get("alpha", 1.0)?;
    let start: String = c.get("start", "fit".to_string())?;
    let span: f64 = c.get("span", 1.0)?;
    let points: usize = c.get("points", 41)?;
    c.reject_unused()?;
    if points < 2 || span.is_nan() || span <= 0.0 {
        return Err(CliError::Input("objective slice needs points >= 2 and span > 0".into()));
    }
    resolve_h(c, &mut cfg, auto, &sample, bidders)?;

    let b = match start.as_str() {
        "fit" => {
            let at = AqrConfig { grid: vec![alpha], ..cfg.clone() };
            let fit = aqr_fit(&sample, bidders, &at)?;
            fit.coefs[0].clone().ok_or_else(|| CliError::Numerical(format!("solver failed at alpha={alpha}")))?
        }
        "zero" => vec![0.0; (sample.dim() + 1) * (cfg.s + 2)],
        other => return Err(CliError::Input(format!("unknown start {other:?}; use fit or zero"))),
    };
    let steps: Vec<f64> = (0..points).map(|k| -span + 2.0 * span * k as f64 / (points - 1) as f64).collect();
    let values = slice(&b, alpha, &sample, bidders, &cfg, &steps)?;
    let objective: Vec<f64> = values.iter().map(|p| p.1).collect();
    ctx.write_csv("objective_slice.csv", |w| write_columns(&[("t", &steps), ("objective", &objective)], w))
}
