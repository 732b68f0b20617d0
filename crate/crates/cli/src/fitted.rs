//! Saved estimates and the curves read off them.

use std::collections::BTreeMap;

use aqr::aqr::{AqrFit, EllipticalFit, HomogenizedFit};
use aqr::recover::{Provenance, ValueCurve};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", content = "fit", rename_all = "snake_case")]
pub enum Fitted {
    Aqr(AqrFit),
    Asqr(AqrFit),
    Homogenized(HomogenizedFit),
    Elliptical(EllipticalFit),
    Ascending(AqrFit),
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub config: BTreeMap<String, String>,
    /// Mean covariates of the fitted auctions, the default evaluation point.
    pub x_mean: Vec<f64>,
    pub estimate: Fitted,
}

impl Fitted {
    pub fn name(&self) -> &'static str {
        match self {
            Fitted::Aqr(_) => "aqr",
            Fitted::Asqr(_) => "asqr",
            Fitted::Homogenized(_) => "homogenized",
            Fitted::Elliptical(_) => "elliptical",
            Fitted::Ascending(_) => "ascending",
        }
    }

    fn base(&self) -> &AqrFit {
        match self {
            Fitted::Aqr(f) | Fitted::Asqr(f) | Fitted::Ascending(f) => f,
            Fitted::Homogenized(f) => &f.residual_fit,
            Fitted::Elliptical(f) => &f.standardized_fit,
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.base().grid
    }

    pub fn failed_points(&self) -> Vec<f64> {
        self.base().failed_points()
    }

    /// `B̂(α|x)` and `B̂'(α|x)`; `None` where the estimate has no bid curve.
    pub fn bid(&self, alpha: f64, x: &[f64]) -> Option<aqr::Result<(f64, f64)>> {
        match self {
            Fitted::Aqr(f) | Fitted::Asqr(f) => Some(f.bid(alpha, x).and_then(|b| Ok((b, f.bid_derivative(alpha, x)?)))),
            Fitted::Homogenized(f) => Some(f.bid(alpha, x).and_then(|b| Ok((b, f.residual_fit.bid_derivative(alpha, &[])?)))),
            Fitted::Elliptical(_) | Fitted::Ascending(_) => None,
        }
    }

    pub fn check_nu(&self, nu: f64) -> Result<(), CliError> {
        if nu != 1.0 && matches!(self, Fitted::Elliptical(_) | Fitted::Ascending(_)) {
            return Err(CliError::Input(format!("{} estimates are risk-neutral values; nu must be 1", self.name())));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(CliError::Input(format!("nu = {nu} outside (0, 1]")));
        }
        Ok(())
    }

    pub fn value(&self, alpha: f64, x: &[f64], nu: f64) -> aqr::Result<f64> {
        match self {
            Fitted::Aqr(f) | Fitted::Asqr(f) | Fitted::Ascending(f) => f.value(alpha, x, nu),
            Fitted::Homogenized(f) => f.value(alpha, x, nu),
            Fitted::Elliptical(f) => f.value(alpha, x),
        }
    }

    /// `V̂(·|x)` on the fit grid; fails if any grid level failed.
    pub fn value_curve(&self, x: &[f64], nu: f64, rearranged: bool) -> Result<ValueCurve, CliError> {
        self.check_nu(nu)?;
        let base = self.base();
        let values = base.grid.iter().map(|&a| self.value(a, x, nu)).collect::<aqr::Result<Vec<_>>>()?;
        let provenance = Provenance { source: self.name().into(), x: x.to_vec(), bidders: base.bidders, nu, n_obs: base.n_obs };
        let curve = ValueCurve::new(base.grid.clone(), values, provenance)?;
        Ok(if rearranged { aqr::recover::rearrange(&curve) } else { curve })
    }
}

pub fn read_fit(path: &str) -> Result<FitFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{path}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{path}: {e}")))
}
