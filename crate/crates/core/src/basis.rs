//! Kernels, local-polynomial vectors and the quantile-level quadrature.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Epanechnikov,
    Triweight,
}

impl Kernel {
    pub fn eval(self, t: f64) -> f64 {
        if t.abs() >= 1.0 {
            return 0.0;
        }
        let u = 1.0 - t * t;
        match self {
            Kernel::Epanechnikov => 0.75 * u,
            Kernel::Triweight => 35.0 / 32.0 * u * u * u,
        }
    }

    /// `∫_{-1}^{t} K`.
    pub fn cdf(self, t: f64) -> f64 {
        if t <= -1.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        match self {
            Kernel::Epanechnikov => 0.5 + 0.75 * (t - t * t * t / 3.0),
            Kernel::Triweight => {
                let (t3, t5, t7) = (t.powi(3), t.powi(5), t.powi(7));
                0.5 + 35.0 / 32.0 * (t - t3 + 0.6 * t5 - t7 / 7.0)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Triweight => "triweight",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            "triweight" => Ok(Kernel::Triweight),
            other => Err(Error::UnknownName(format!("kernel '{other}'"))),
        }
    }
}

/// `π(t) = [1, t, t²/2!, …, t^{s+1}/(s+1)!]`.
pub fn poly_vector(t: f64, s: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(s + 2);
    let mut term = 1.0;
    out.push(term);
    for k in 1..=s + 1 {
        term *= t / k as f64;
        out.push(term);
    }
    out
}

/// `π(t) ⊗ x₁` in blocks `[x₁', t x₁', …]`.
pub fn regressor_vector(x: &[f64], t: f64, s: usize) -> Vec<f64> {
    let p = poly_vector(t, s);
    let mut out = Vec::with_capacity(p.len() * (x.len() + 1));
    for pk in p {
        out.push(pk);
        out.extend(x.iter().map(|xj| pk * xj));
    }
    out
}

/// The local window `[-1, 1] ∩ [-α/h, (1-α)/h]`.
pub fn window(alpha: f64, h: f64) -> (f64, f64) {
    ((-alpha / h).max(-1.0), ((1.0 - alpha) / h).min(1.0))
}

/// Gauss-Legendre nodes on the local window, with kernel-weighted weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `w_m K(t_m)`.
    pub kernel_weights: Vec<f64>,
}

impl QuadGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn quad_grid(alpha: f64, h: f64, kernel: Kernel, m: usize) -> Result<QuadGrid> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidParameter(format!("bandwidth {h} outside (0, 1)")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if m < 8 {
        return Err(Error::InvalidParameter(format!("quadrature needs at least 8 nodes, got {m}")));
    }
    let (lo, hi) = window(alpha, h);
    assert!(hi > lo, "window is nonempty for h < 1");
    let (nodes, weights) = gauss_legendre(m).mapped(lo, hi);
    let kernel_weights = nodes.iter().zip(&weights).map(|(&t, &w)| w * kernel.eval(t)).collect();
    Ok(QuadGrid { nodes, weights, kernel_weights })
}

/// Local-polynomial constants at one quantile level.
#[derive(Debug, Clone)]
pub struct KernelConstants {
    /// `∫ππ'K` over the window.
    pub omega: DMatrix<f64>,
    /// `Ω⁻¹ ∫ t^{s+2}π/(s+2)! K`.
    pub bias_vec: DVector<f64>,
    /// The derivative entry of `bias_vec`.
    pub bias_factor: f64,
    pub v2: f64,
}

// Integrands are polynomials of degree below 2·NODES on each window.
const CONST_NODES: usize = 24;

pub fn kernel_constants(kernel: Kernel, s: usize, alpha: f64, h: f64) -> Result<KernelConstants> {
    let (lo, hi) = window(alpha, h);
    let p = s + 2;
    let (nodes, weights) = gauss_legendre(CONST_NODES).mapped(lo, hi);
    let mut omega = DMatrix::zeros(p, p);
    let mut moment = DVector::zeros(p);
    let fact: f64 = (1..=s + 2).map(|k| k as f64).product();
    for (&t, &w) in nodes.iter().zip(&weights) {
        let wk = w * kernel.eval(t);
        let pi = DVector::from_vec(poly_vector(t, s));
        omega += &pi * pi.transpose() * wk;
        moment += &pi * (wk * t.powi(s as i32 + 2) / fact);
    }
    let chol = omega
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("local polynomial moment matrix".into()))?;
    let bias_vec = chol.solve(&moment);
    let mut e1 = DVector::zeros(p);
    e1[1] = 1.0;
    let pi1 = chol.solve(&e1);
    // min(t₁,t₂) = lo + ∫_lo^hi 1[u≤t₁]1[u≤t₂] du, and Π¹'∫πK = 0, so only
    // ∫ c(u)c(u)' du with c(u) = ∫_u^hi πK contributes.
    let mut v2 = 0.0;
    for (&u, &wu) in nodes.iter().zip(&weights) {
        let (inner_t, inner_w) = gauss_legendre(CONST_NODES).mapped(u, hi);
        let c: f64 = inner_t
            .iter()
            .zip(&inner_w)
            .map(|(&t, &w)| w * kernel.eval(t) * DVector::from_vec(poly_vector(t, s)).dot(&pi1))
            .sum();
        v2 += wu * c * c;
    }
    Ok(KernelConstants { bias_factor: bias_vec[1], omega, bias_vec, v2 })
}
