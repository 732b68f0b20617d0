//! Property checks shared by the property tests and the acceptance gate.
//! Each returns `Err` with a description of the first violation.

#![allow(dead_code)]

use aqr::aqr::{aqr_fit, aqr_objective, objective_slice, uniform_grid, AqrConfig};
use aqr::inference::{
    entry_transform, liu_luo_difference, liu_luo_stat, pairwise_bootstrap, rothe_wied_test, LiuLuoNull, SlopePath,
};
use aqr::model::{additive1_spec, sim62_spec, trig_spec, AuctionFormat, AuctionRecord, AuctionSample, QuantileSpec};
use aqr::recover::{rearrange, Provenance, ValueCurve};
use aqr::simulate::{simulate_first_price, SimConfig, Simulated};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

pub type Check = Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn sim(spec: &QuantileSpec, l: usize, bidders: u32, seed: u64) -> Simulated {
    simulate_first_price(spec, &SimConfig::new(l, bidders, spec.dim(), seed)).unwrap()
}

fn curve(values: Vec<f64>) -> ValueCurve {
    let n = values.len() - 1;
    let provenance = Provenance { source: "test".into(), x: vec![], bidders: 2, nu: 1.0, n_obs: 100 };
    ValueCurve::new(uniform_grid(n), values, provenance).unwrap()
}

fn path(grid: &[f64], f: impl Fn(f64) -> Vec<f64>) -> SlopePath {
    SlopePath::from_fn(grid, |a| Ok(f(a))).unwrap()
}

fn transformed(sample: &AuctionSample, scale: f64, shift: f64) -> AuctionSample {
    let records = sample
        .records
        .iter()
        .map(|r| AuctionRecord { bids: r.bids.iter().map(|b| scale * b + shift).collect(), ..r.clone() })
        .collect();
    AuctionSample::new(records, AuctionFormat::FirstPrice).unwrap()
}

pub fn rearrangement() -> Check {
    runner(256)
        .run(&prop::collection::vec(-5.0f64..5.0, 2..80), |values| {
            let c = curve(values.clone());
            let r = rearrange(&c);
            prop_assert!(r.monotone && r.values.windows(2).all(|w| w[1] >= w[0]));
            prop_assert_eq!(&rearrange(&r), &r);
            let mut sorted = values;
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(&r.values, &sorted);
            prop_assert_eq!(&r.grid, &c.grid);
            Ok(())
        })
        .map_err(|e| format!("rearrangement: {e}"))
}

pub fn entry_transform_constants() -> Check {
    let strategy = (prop::collection::vec(-10.0f64..10.0, 1..4), 2u32..7, 2u32..7);
    runner(256)
        .run(&strategy, |(c, i1, i2)| {
            let grid = uniform_grid(50);
            let t = entry_transform(&path(&grid, |_| c.clone()), i1, i2).unwrap();
            for v in &t.coefs {
                for (a, b) in v.iter().zip(&c) {
                    prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
                }
            }
            Ok(())
        })
        .map_err(|e| format!("entry_transform constants: {e}"))
}

pub fn entry_transform_linear() -> Check {
    runner(128)
        .run(&(-3.0f64..3.0, -3.0f64..3.0, 2u32..6), |(a, b, i2)| {
            let grid = uniform_grid(40);
            let f = path(&grid, |t| vec![t.sin(), t * t]);
            let g = path(&grid, |t| vec![1.0 + t, (2.0 * t).cos()]);
            let mix = path(&grid, |t| vec![a * t.sin() + b * (1.0 + t), a * t * t + b * (2.0 * t).cos()]);
            let (tf, tg, tm) = (entry_transform(&f, 3, i2).unwrap(), entry_transform(&g, 3, i2).unwrap(), entry_transform(&mix, 3, i2).unwrap());
            for k in 0..grid.len() {
                for j in 0..2 {
                    prop_assert!((tm.coefs[k][j] - (a * tf.coefs[k][j] + b * tg.coefs[k][j])).abs() < 1e-10);
                }
            }
            Ok(())
        })
        .map_err(|e| format!("entry_transform linearity: {e}"))
}

pub fn entry_transform_four_thirds() -> Check {
    let grid = uniform_grid(100);
    let t = entry_transform(&path(&grid, |a| vec![a]), 2, 3).map_err(|e| e.to_string())?;
    for (a, v) in grid.iter().zip(&t.coefs) {
        ensure((v[0] - 4.0 * a / 3.0).abs() < 1e-8, || format!("entry_transform 4a/3 at alpha {a}: {}", v[0]))?;
    }
    Ok(())
}

pub fn liu_luo_identical_slopes() -> Check {
    let strategy = (
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 11),
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 1..30),
    );
    runner(256)
        .run(&strategy, |(coefs, xs)| {
            let beta = SlopePath { grid: uniform_grid(10), coefs };
            prop_assert_eq!(liu_luo_stat(&xs, &beta, &beta).unwrap(), 0.0);
            Ok(())
        })
        .map_err(|e| format!("liu-luo identical slopes: {e}"))?;
    // The entry null with the same bidder count compares a fit with itself.
    let s = sim(&additive1_spec().unwrap(), 60, 2, 4);
    let cfg = AqrConfig { grid: uniform_grid(10), ..AqrConfig::default() };
    let (diff, _) = liu_luo_difference(&s.sample, None, 2, &LiuLuoNull::Entry { other: 2 }, &cfg, &uniform_grid(20)).unwrap();
    ensure(diff.coefs.iter().flatten().all(|&d| d == 0.0), || "liu-luo entry null with I = other is not zero".into())
}

pub fn equivariance() -> Check {
    let s = sim(&trig_spec().unwrap(), 40, 2, 9);
    let cfg = AqrConfig { grid: vec![0.0, 0.25, 0.5, 0.75, 1.0], ..AqrConfig::default() };
    let base = aqr_fit(&s.sample, 2, &cfg).unwrap();
    for (scale, shift) in [(2.0, 0.0), (1.0, -3.0), (0.5, 1.5)] {
        let moved = transformed(&s.sample, scale, shift);
        let fit = aqr_fit(&moved, 2, &cfg).unwrap();
        for &a in &cfg.grid {
            let (b, c) = (base.coef_at(a).unwrap(), fit.coef_at(a).unwrap());
            // Only the intercept of the level block moves with the shift.
            let expect: Vec<f64> = b.iter().enumerate().map(|(k, v)| scale * v + if k == 0 { shift } else { 0.0 }).collect();
            let err = c.iter().zip(&expect).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            // The minimum-norm tie-break is not shift-equivariant on a flat
            // optimal face, so there the mapped solution need only be optimal.
            let (oe, oc) = (aqr_objective(&expect, a, &moved, 2, &cfg).unwrap(), aqr_objective(&c, a, &moved, 2, &cfg).unwrap());
            ensure((oe - oc).abs() <= 1e-9 * (1.0 + oc), || format!("equivariance scale {scale} shift {shift} alpha {a}: objective {oe} vs {oc}"))?;
            let tol = if a > 0.0 && a < 1.0 { 1e-8 } else { 1e-4 };
            ensure(err < tol, || format!("equivariance scale {scale} shift {shift} alpha {a}: coefficient error {err:e}"))?;
        }
    }
    Ok(())
}

pub fn bootstrap_thread_independence() -> Check {
    let spec = sim62_spec().unwrap();
    let s = sim(&spec, 80, 2, 3);
    let truth = |a: f64, x: &[f64]| spec.bid_quantile_from_value(a, x, 2).unwrap();
    let grid = uniform_grid(20);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let boot = pairwise_bootstrap(&s.sample, 40, 17, |star, _| Ok(star.records.iter().flat_map(|r| &r.bids).sum::<f64>()));
            let rw = rothe_wied_test(&s.sample, 2, &truth, &grid, 30, 17).unwrap();
            (boot.replicates, rw)
        })
    };
    let one = run(1);
    ensure(one == run(2) && one == run(4), || "bootstrap output depends on the thread count".into())
}

pub fn objective_convexity() -> Check {
    let s = sim(&additive1_spec().unwrap(), 30, 2, 1).sample;
    let cfg = AqrConfig::default();
    let strategy = (prop::collection::vec(-2.0f64..2.0, 6), prop::collection::vec(-2.0f64..2.0, 6), 0.0f64..=1.0);
    runner(1000)
        .run(&strategy, |(b1, b2, alpha)| {
            let f = |b: &[f64]| aqr_objective(b, alpha, &s, 2, &cfg).unwrap();
            let mid: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| 0.5 * (a + b)).collect();
            let (fm, f1, f2) = (f(&mid), f(&b1), f(&b2));
            prop_assert!(fm <= 0.5 * (f1 + f2) + 1e-12 * (1.0 + f1.abs() + f2.abs()), "{fm} > ({f1} + {f2}) / 2");
            Ok(())
        })
        .map_err(|e| format!("midpoint convexity: {e}"))
}

pub fn top_level_not_flat() -> Check {
    for seed in 0..5 {
        let s = sim(&sim62_spec().unwrap(), 100, 2, seed);
        let cfg = AqrConfig { grid: vec![1.0], ..AqrConfig::default() };
        let b = aqr_fit(&s.sample, 2, &cfg).unwrap().coefs[0].clone().ok_or("fit failed at alpha = 1")?;
        let steps: Vec<f64> = (-20..=20).map(|k| f64::from(k) * 0.05).collect();
        let values: Vec<f64> = objective_slice(&b, 1.0, &s.sample, 2, &cfg, &steps).unwrap().into_iter().map(|p| p.1).collect();
        for k in 20..values.len() - 1 {
            ensure(values[k + 1] > values[k], || format!("seed {seed}: objective not increasing at t={}", steps[k + 1]))?;
        }
        for k in 1..=20 {
            ensure(values[k - 1] > values[k], || format!("seed {seed}: objective not decreasing at t={}", steps[k - 1]))?;
        }
    }
    Ok(())
}

pub type Property = (&'static str, fn() -> Check);

pub const ALL: [Property; 9] = [
    ("rearrangement", rearrangement),
    ("entry_transform constants", entry_transform_constants),
    ("entry_transform linearity", entry_transform_linear),
    ("entry_transform 4a/3", entry_transform_four_thirds),
    ("liu-luo identical slopes", liu_luo_identical_slopes),
    ("scale/shift equivariance", equivariance),
    ("bootstrap thread independence", bootstrap_thread_independence),
    ("objective convexity", objective_convexity),
    ("objective not flat at alpha = 1", top_level_not_flat),
];
