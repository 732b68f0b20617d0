//! Synthetic auction samples by quantile transformation of uniform ranks.
//!
//! Every auction draws from its own ChaCha stream keyed by `(seed, id)`, so
//! a sample does not depend on how auctions are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{augmented, AuctionFormat, AuctionRecord, AuctionSample, Coefficient, QuantileSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum BidderLaw {
    Fixed { bidders: u32 },
    Discrete { bidders: Vec<u32>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    /// Independent `U[0, 1]` coordinates.
    Uniform { dim: usize },
    /// Independent uniforms on a box.
    Box { bounds: Vec<(f64, f64)> },
    /// Every auction shares the same covariates.
    Fixed { x: Vec<f64> },
}

impl CovariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::Uniform { dim } => *dim,
            CovariateLaw::Box { bounds } => bounds.len(),
            CovariateLaw::Fixed { x } => x.len(),
        }
    }

    /// Registry lookup: `uniform`, or `fixed:<x1>,<x2>,...`.
    pub fn named(name: &str, dim: usize) -> Result<Self> {
        if name == "uniform" {
            return Ok(CovariateLaw::Uniform { dim });
        }
        if let Some(rest) = name.strip_prefix("fixed:") {
            let x = rest
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::InvalidParameter(format!("covariate '{s}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
            }
            return Ok(CovariateLaw::Fixed { x });
        }
        Err(Error::UnknownName(format!("covariate law '{name}'")))
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            CovariateLaw::Uniform { dim } => (0..*dim).map(|_| rng.gen::<f64>()).collect(),
            CovariateLaw::Box { bounds } => bounds.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.gen::<f64>()).collect(),
            CovariateLaw::Fixed { x } => x.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_auctions: usize,
    pub bidders: BidderLaw,
    pub covariates: CovariateLaw,
    pub seed: u64,
    pub format: AuctionFormat,
}

impl SimConfig {
    pub fn new(n_auctions: usize, bidders: u32, dim: usize, seed: u64) -> Self {
        Self {
            n_auctions,
            bidders: BidderLaw::Fixed { bidders },
            covariates: CovariateLaw::Uniform { dim },
            seed,
            format: AuctionFormat::FirstPrice,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.n_auctions == 0 {
            return Err(Error::InvalidParameter("auction count must be positive".into()));
        }
        if self.covariates.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: self.covariates.dim() });
        }
        match &self.bidders {
            BidderLaw::Fixed { bidders } if *bidders < 2 => {
                Err(Error::InvalidParameter(format!("bidder count {bidders} < 2")))
            }
            BidderLaw::Discrete { bidders, weights } => {
                if bidders.is_empty() || bidders.len() != weights.len() || bidders.iter().any(|&i| i < 2) {
                    return Err(Error::InvalidParameter("discrete bidder law needs matching counts >= 2 and weights".into()));
                }
                WeightedIndex::new(weights).map_err(|e| Error::InvalidParameter(format!("bidder weights: {e}")))?;
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// The per-auction random stream.
pub fn auction_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ranks and private values behind one simulated auction; for oracle tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub id: u64,
    pub ranks: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub sample: AuctionSample,
    pub oracle: Vec<OracleRecord>,
}

struct Draw {
    x: Vec<f64>,
    bidders: u32,
    ranks: Vec<f64>,
}

fn draw_auction(cfg: &SimConfig, id: u64) -> Draw {
    let mut rng = auction_rng(cfg.seed, id);
    let x = cfg.covariates.draw(&mut rng);
    let bidders = match &cfg.bidders {
        BidderLaw::Fixed { bidders } => *bidders,
        BidderLaw::Discrete { bidders, weights } => {
            // Validated by SimConfig::validate.
            let dist = WeightedIndex::new(weights).expect("validated weights");
            bidders[dist.sample(&mut rng)]
        }
    };
    let ranks = (0..bidders).map(|_| rng.gen::<f64>()).collect();
    Draw { x, bidders, ranks }
}

fn run<F>(cfg: &SimConfig, dim: usize, format: AuctionFormat, make: F) -> Result<Simulated>
where
    F: Fn(u64, Draw) -> Result<(AuctionRecord, OracleRecord)> + Sync,
{
    cfg.validate(dim)?;
    let pairs = (0..cfg.n_auctions as u64)
        .into_par_iter()
        .map(|id| make(id, draw_auction(cfg, id)))
        .collect::<Result<Vec<_>>>()?;
    let (records, oracle): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(Simulated { sample: AuctionSample::new(records, format)?, oracle })
}

/// First-price bids `B(A_i|X, I)` for iid uniform ranks `A_i`.
pub fn simulate_first_price(spec: &QuantileSpec, cfg: &SimConfig) -> Result<Simulated> {
    run(cfg, spec.dim(), AuctionFormat::FirstPrice, |id, d| {
        let mut bids = Vec::with_capacity(d.ranks.len());
        let mut values = Vec::with_capacity(d.ranks.len());
        for &a in &d.ranks {
            bids.push(spec.bid_quantile_from_value(a, &d.x, d.bidders)?);
            values.push(spec.value_quantile(a, &d.x)?);
        }
        let record = AuctionRecord { id, n_bidders: d.bidders, x: d.x, bids, winning_bid: None };
        Ok((record, OracleRecord { id, ranks: d.ranks, values }))
    })
}

/// Ascending auctions: the winning bid is the second-highest private value.
pub fn simulate_ascending(spec: &QuantileSpec, cfg: &SimConfig) -> Result<Simulated> {
    run(cfg, spec.dim(), AuctionFormat::Ascending, |id, d| {
        let values = d.ranks.iter().map(|&a| spec.value_quantile(a, &d.x)).collect::<Result<Vec<_>>>()?;
        let mut sorted = d.ranks.clone();
        sorted.sort_by(f64::total_cmp);
        let second = sorted[sorted.len() - 2];
        let winning = spec.value_quantile(second, &d.x)?;
        let record = AuctionRecord { id, n_bidders: d.bidders, x: d.x, bids: vec![], winning_bid: Some(winning) };
        Ok((record, OracleRecord { id, ranks: d.ranks, values }))
    })
}

/// Elliptical random-coefficient model `V = x₁'γ + ‖Σ^{1/2}x₁‖ v(A)`.
#[derive(Debug, Clone)]
pub struct EllipticalSpec {
    pub gamma: Vec<f64>,
    pub sigma: DMatrix<f64>,
    /// Radial quantile `v`; must be increasing.
    pub radial: Coefficient,
}

impl EllipticalSpec {
    pub fn new(gamma: Vec<f64>, sigma: DMatrix<f64>, radial: Coefficient) -> Result<Self> {
        let p = gamma.len();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::DimensionMismatch { expected: p, got: sigma.nrows() });
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        let eig = sigma.clone().symmetric_eigen();
        let scale = sigma.abs().max().max(1.0);
        if asym > 1e-12 * scale || eig.eigenvalues.min() < -1e-12 * scale {
            return Err(Error::InvalidParameter("sigma is not positive semidefinite".into()));
        }
        // Construction check of the radial quantile.
        QuantileSpec::new(vec![radial.clone()], vec![], 3)?;
        Ok(Self { gamma, sigma, radial })
    }

    pub fn dim(&self) -> usize {
        self.gamma.len() - 1
    }

    /// `‖Σ^{1/2}x₁‖ = sqrt(x₁'Σx₁)`.
    pub fn scale(&self, x: &[f64]) -> f64 {
        let x1 = DVector::from_vec(augmented(x));
        (x1.dot(&(&self.sigma * &x1))).max(0.0).sqrt()
    }

    pub fn location(&self, x: &[f64]) -> f64 {
        crate::model::dot_augmented(&self.gamma, x)
    }
}

pub fn simulate_elliptical_rc(spec: &EllipticalSpec, cfg: &SimConfig) -> Result<Simulated> {
    let radial = QuantileSpec::new(vec![spec.radial.clone()], vec![], 3)?;
    run(cfg, spec.dim(), AuctionFormat::FirstPrice, |id, d| {
        let loc = spec.location(&d.x);
        let s = spec.scale(&d.x);
        let mut bids = Vec::with_capacity(d.ranks.len());
        let mut values = Vec::with_capacity(d.ranks.len());
        for &a in &d.ranks {
            // Bids are linear in the radial quantile.
            bids.push(loc + s * radial.bid_quantile_from_value(a, &[], d.bidders)?);
            values.push(loc + s * radial.value_quantile(a, &[])?);
        }
        let record = AuctionRecord { id, n_bidders: d.bidders, x: d.x, bids, winning_bid: None };
        Ok((record, OracleRecord { id, ranks: d.ranks, values }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sim62_spec, trig_quantile, trig_spec, uniform_spec};

    #[test]
    fn uniform_bids_are_half_the_rank() {
        let spec = uniform_spec().unwrap();
        let sim = simulate_first_price(&spec, &SimConfig::new(1, 2, 0, 11)).unwrap();
        let rec = &sim.sample.records[0];
        for (b, a) in rec.bids.iter().zip(&sim.oracle[0].ranks) {
            assert!((b - a / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn mean_bid_matches_oracle() {
        let spec = uniform_spec().unwrap();
        let sim = simulate_first_price(&spec, &SimConfig::new(100_000, 2, 0, 3)).unwrap();
        let n = 200_000.0;
        let mean: f64 = sim.sample.records.iter().flat_map(|r| r.bids.iter()).sum::<f64>() / n;
        assert!((mean - 0.25).abs() < 0.005, "{mean}");
    }

    #[test]
    fn same_seed_same_sample() {
        let spec = sim62_spec().unwrap();
        let cfg = SimConfig::new(50, 3, 3, 99);
        let a = simulate_first_price(&spec, &cfg).unwrap();
        let b = simulate_first_price(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_first_price(&spec, &SimConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.sample, c.sample);
    }

    #[test]
    fn ascending_winning_bid_is_second_highest_value() {
        let spec = uniform_spec().unwrap();
        let cfg = SimConfig { format: AuctionFormat::Ascending, ..SimConfig::new(100_000, 2, 0, 5) };
        let sim = simulate_ascending(&spec, &cfg).unwrap();
        let r = &sim.sample.records[0];
        let lo = sim.oracle[0].ranks.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(r.winning_bid, Some(lo));
        let mean: f64 = sim.sample.records.iter().map(|r| r.winning_bid.unwrap()).sum::<f64>() / 1e5;
        assert!((mean - 1.0 / 3.0).abs() < 0.005);

        let cfg3 = SimConfig { bidders: BidderLaw::Fixed { bidders: 3 }, ..cfg };
        let sim = simulate_ascending(&spec, &cfg3).unwrap();
        let mean: f64 = sim.sample.records.iter().map(|r| r.winning_bid.unwrap()).sum::<f64>() / 1e5;
        assert!((mean - 0.5).abs() < 0.005);
    }

    #[test]
    fn discrete_bidder_law() {
        let spec = uniform_spec().unwrap();
        let cfg = SimConfig {
            bidders: BidderLaw::Discrete { bidders: vec![2, 3], weights: vec![1.0, 1.0] },
            ..SimConfig::new(400, 2, 0, 8)
        };
        let sim = simulate_first_price(&spec, &cfg).unwrap();
        assert_eq!(sim.sample.bidder_counts(), vec![2, 3]);
        assert!(sim.sample.records.iter().all(|r| r.bids.len() == r.n_bidders as usize));
    }

    #[test]
    fn elliptical_reduces_to_scalar_spec() {
        let radial = Coefficient::Trig { offset: 0.0, scale: 0.5, freq: 1.0 };
        let ell = EllipticalSpec::new(vec![0.0], DMatrix::from_element(1, 1, 1.0), radial).unwrap();
        let cfg = SimConfig::new(20, 2, 0, 4);
        let a = simulate_elliptical_rc(&ell, &cfg).unwrap();
        let b = simulate_first_price(&trig_spec().unwrap(), &cfg).unwrap();
        for (ra, rb) in a.sample.records.iter().zip(&b.sample.records) {
            for (x, y) in ra.bids.iter().zip(&rb.bids) {
                assert!((x - y).abs() < 1e-13);
            }
        }
        assert!((a.oracle[0].values[0] - trig_quantile(a.oracle[0].ranks[0])).abs() < 1e-14);
    }

    #[test]
    fn non_psd_sigma_rejected() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let radial = Coefficient::Linear { intercept: 0.0, slope: 1.0 };
        assert!(EllipticalSpec::new(vec![0.0, 1.0], sigma, radial).is_err());
    }
}
