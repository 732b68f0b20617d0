//! Gauss rules on bounded intervals.
//!
//! Gauss-Legendre nodes come from Newton iteration on the Legendre recurrence.
//! Rules for the weight `u^b` on `[0, 1]` (shifted Gauss-Jacobi with `a = 0`)
//! come from the Golub-Welsch eigenvalue method. Both are cached per
//! `(n, b)` since the same few rules are requested millions of times.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a quadrature rule on a fixed reference interval.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Applies a rule defined on `[-1, 1]` to the interval `[lo, hi]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mid + half * t))
            .sum::<f64>()
            * half
    }

    /// Nodes and weights mapped from `[-1, 1]` onto `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let nodes = self.nodes.iter().map(|&t| mid + half * t).collect();
        let weights = self.weights.iter().map(|&w| w * half).collect();
        (nodes, weights)
    }
}

fn legendre_uncached(n: usize) -> Rule {
    assert!(n >= 1, "a Gauss rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

/// Gauss-Jacobi rule for `∫_0^1 u^b f(u) du`, `b > -1`.
fn jacobi_unit_uncached(n: usize, b: f64) -> Rule {
    assert!(n >= 1 && b > -1.0);
    if b == 0.0 {
        let (nodes, weights) = legendre_uncached(n).mapped(0.0, 1.0);
        return Rule { nodes, weights };
    }
    // Recurrence for weight (1+x)^b on [-1, 1] (Jacobi with a = 0).
    let a = 0.0;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let s = 2.0 * kf + a + b;
        let diag = if k == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        };
        jac[(k, k)] = diag;
        if k + 1 < n {
            let j = kf + 1.0;
            let sj = 2.0 * j + a + b;
            let beta = 4.0 * j * (j + a) * (j + b) * (j + a + b)
                / (sj * sj * (sj + 1.0) * (sj - 1.0));
            let off = beta.sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    // mu0 = ∫_{-1}^1 (1+x)^b dx
    let mu0 = 2f64.powf(b + 1.0) / (b + 1.0);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    // Map to [0, 1]: u = (1+x)/2, (1+x)^b = (2u)^b, dx = 2 du.
    let scale = 2f64.powf(-(b + 1.0));
    Rule {
        nodes: pairs.iter().map(|p| 0.5 * (1.0 + p.0)).collect(),
        weights: pairs.iter().map(|p| p.1 * scale).collect(),
    }
}

type Cache = Mutex<HashMap<(usize, u64), Arc<Rule>>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    // NaN bits cannot collide with a valid Jacobi exponent.
    let key = (n, f64::NAN.to_bits());
    if let Some(rule) = cache().lock().unwrap().get(&key) {
        return rule.clone();
    }
    let rule = Arc::new(legendre_uncached(n));
    cache().lock().unwrap().insert(key, rule.clone());
    rule
}

/// Rule on `[0, 1]` for the weight `u^b`.
pub fn gauss_jacobi_unit(n: usize, b: f64) -> Arc<Rule> {
    let key = (n, b.to_bits());
    if let Some(rule) = cache().lock().unwrap().get(&key) {
        return rule.clone();
    }
    let rule = Arc::new(jacobi_unit_uncached(n, b));
    cache().lock().unwrap().insert(key, rule.clone());
    rule
}

/// Composite Gauss-Legendre on `[lo, hi]` with `panels` equal panels.
pub fn composite<F: FnMut(f64) -> f64>(lo: f64, hi: f64, panels: usize, order: usize, mut f: F) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let rule = gauss_legendre(order);
    let width = (hi - lo) / panels as f64;
    (0..panels)
        .map(|k| {
            let a = lo + k as f64 * width;
            rule.integrate(a, a + width, &mut f)
        })
        .sum()
}

/// Trapezoid weights for a sorted grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for k in 1..n {
        let d = 0.5 * (grid[k] - grid[k - 1]);
        w[k - 1] += d;
        w[k] += d;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(8);
        // ∫_{-1}^{1} x^14 dx = 2/15
        let v = rule.integrate(-1.0, 1.0, |x| x.powi(14));
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_rule_handles_fractional_weight() {
        // ∫_0^1 u^{2/3} u^2 du = 1/(2/3 + 3)
        let b = 2.0 / 3.0;
        let rule = gauss_jacobi_unit(16, b);
        let v: f64 = rule.nodes.iter().zip(&rule.weights).map(|(u, w)| w * u * u).sum();
        assert!((v - 1.0 / (b + 3.0)).abs() < 1e-13, "{v}");
        let mass: f64 = rule.weights.iter().sum();
        assert!((mass - 1.0 / (b + 1.0)).abs() < 1e-13);
    }

    #[test]
    fn jacobi_integer_weight_matches_closed_form() {
        let rule = gauss_jacobi_unit(64, 1.0);
        let v: f64 = rule.nodes.iter().zip(&rule.weights).map(|(u, w)| w * (3.0 * u).cos()).sum();
        // ∫_0^1 u cos(3u) du = (cos 3 + 3 sin 3 - 1)/9
        let exact = ((3.0f64).cos() + 3.0 * (3.0f64).sin() - 1.0) / 9.0;
        assert!((v - exact).abs() < 1e-13);
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let w = trapezoid_weights(&grid);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[0] - 0.05).abs() < 1e-15);
    }
}
