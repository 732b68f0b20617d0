//! Weighted quantile regression by a primal-dual interior-point method.
//!
//! The problem `min_b Σ_i ρ_{τ_i}(y_i - x_i'b)` is solved through its
//! bounded dual `min -y'a  s.t. X'a = X'(1-τ), 0 ≤ a ≤ 1` with Mehrotra
//! predictor-corrector steps (Frisch-Newton). Row weights are folded into
//! `y` and `X` since `c·ρ_τ(r) = ρ_τ(c·r)` for `c > 0`.
//!
//! The design is only touched through [`DesignOps`], so the AQR regressors
//! `c_m (π(t_m) ⊗ f_i)` never need to be materialized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Matrix-free access to an `n × p` design.
pub trait DesignOps: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out = X b`.
    fn mul(&self, b: &[f64], out: &mut [f64]);
    /// `out = X' v`.
    fn tmul(&self, v: &[f64], out: &mut [f64]);
    /// `X' diag(q) X`.
    fn normal(&self, q: &[f64]) -> DMatrix<f64>;
}

/// Row-major dense design.
#[derive(Debug, Clone)]
pub struct DenseDesign {
    rows: Vec<f64>,
    n: usize,
    p: usize,
}

impl DenseDesign {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if n == 0 || p == 0 {
            return Err(Error::InvalidParameter("empty design".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch { expected: p, got: bad.len() });
        }
        Ok(Self { rows: rows.concat(), n, p })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }
}

impl DesignOps for DenseDesign {
    fn nrows(&self) -> usize {
        self.n
    }

    fn ncols(&self) -> usize {
        self.p
    }

    fn mul(&self, b: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(b).map(|(x, y)| x * y).sum();
        }
    }

    fn tmul(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += vi * x;
            }
        }
    }

    fn normal(&self, q: &[f64]) -> DMatrix<f64> {
        let p = self.p;
        let mut m = DMatrix::zeros(p, p);
        for (i, &qi) in q.iter().enumerate() {
            let r = self.row(i);
            for a in 0..p {
                let ra = qi * r[a];
                for b in a..p {
                    m[(a, b)] += ra * r[b];
                }
            }
        }
        symmetrize_upper(&mut m);
        m
    }
}

pub(crate) fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for a in 0..p {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    /// Relative duality gap at which the solver stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge added to the normal matrix, relative to its mean diagonal.
    pub ridge: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, ridge: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RqSolution {
    pub coef: Vec<f64>,
    pub iterations: usize,
    /// Final relative duality gap.
    pub gap: f64,
    /// Dual variables `a ∈ [0, 1]`, one per row.
    pub dual: Vec<f64>,
}

const STEP: f64 = 0.99995;

fn solve_normal(mut m: DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let p = m.nrows();
    let scale = m.trace() / p as f64;
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::Singular("normal matrix has no positive diagonal".into()));
    }
    for k in 0..p {
        m[(k, k)] += ridge * scale;
    }
    let chol = m.cholesky().ok_or_else(|| Error::Singular("normal matrix is not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

/// Largest `t ≤ 1/STEP` keeping `v + t dv ≥ 0` and `u - t dv ≥ 0`.
fn max_step_pair(v: &[f64], u: &[f64], dv: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for ((&v, &u), &d) in v.iter().zip(u).zip(dv) {
        if d < 0.0 {
            t = t.min(-v / d);
        } else if d > 0.0 {
            t = t.min(u / d);
        }
    }
    t
}

fn max_step_two(z: &[f64], dz: &[f64], w: &[f64], dw: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for i in 0..z.len() {
        if dz[i] < 0.0 {
            t = t.min(-z[i] / dz[i]);
        }
        if dw[i] < 0.0 {
            t = t.min(-w[i] / dw[i]);
        }
    }
    t
}

/// Work buffers for one Newton direction.
struct Direction {
    g: Vec<f64>,
    dx: Vec<f64>,
    dz: Vec<f64>,
    dw: Vec<f64>,
    fit: Vec<f64>,
    tmp: Vec<f64>,
}

/// Minimizes `Σ_i ρ_{τ_i}(y_i - x_i'b)`; every `τ_i` must lie in `(0, 1)`.
pub fn solve_rq<D: DesignOps + ?Sized>(design: &D, y: &[f64], tau: &[f64], opts: IpmOptions) -> Result<RqSolution> {
    let n = design.nrows();
    let p = design.ncols();
    if y.len() != n || tau.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len().min(tau.len()) });
    }
    if let Some(&t) = tau.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::InvalidParameter(format!("asymmetry {t} outside (0, 1)")));
    }
    let level = tau.iter().sum::<f64>() / n as f64;

    // Dual problem data: c = -y, b = X'(1-τ); s = 1 - x throughout.
    let c: Vec<f64> = y.iter().map(|v| -v).collect();
    let mut x: Vec<f64> = tau.iter().map(|t| 1.0 - t).collect();
    let mut s: Vec<f64> = tau.to_vec();
    let mut b = vec![0.0; p];
    design.tmul(&x, &mut b);

    // β starts at the least-squares fit of c.
    let mut xc = vec![0.0; p];
    design.tmul(&c, &mut xc);
    let mut beta = solve_normal(design.normal(&vec![1.0; n]), &DVector::from_vec(xc), opts.ridge)?;
    let mut fit = vec![0.0; n];
    design.mul(beta.as_slice(), &mut fit);
    let delta = 0.1 * c.iter().zip(&fit).map(|(c, f)| (c - f).abs()).sum::<f64>() / n as f64 + 1e-10;
    let mut z: Vec<f64> = c.iter().zip(&fit).map(|(c, f)| (c - f).max(0.0) + delta).collect();
    let mut w: Vec<f64> = c.iter().zip(&fit).map(|(c, f)| (f - c).max(0.0) + delta).collect();

    let mut q = vec![0.0; n];
    let mut rd = vec![0.0; n];
    let mut xinv = vec![0.0; n];
    let mut sinv = vec![0.0; n];
    let mut rxz = vec![0.0; n];
    let mut rsw = vec![0.0; n];
    let mut dir = Direction { g: vec![0.0; n], dx: vec![0.0; n], dz: vec![0.0; n], dw: vec![0.0; n], fit, tmp: vec![0.0; p] };
    let mut rp = vec![0.0; p];
    let mut rel_gap = f64::INFINITY;

    for iter in 0..opts.max_iter {
        let mut primal = 0.0;
        let mut comp = 0.0;
        for i in 0..n {
            primal += c[i] * x[i];
            comp += x[i] * z[i] + s[i] * w[i];
        }
        rel_gap = comp / (1.0 + primal.abs());
        if rel_gap < opts.tol {
            return Ok(RqSolution { coef: beta.iter().map(|v| -v).collect(), iterations: iter, gap: rel_gap, dual: x });
        }

        // Residuals of X'a = b and X β + z - w = c.
        design.tmul(&x, &mut dir.tmp);
        for k in 0..p {
            rp[k] = b[k] - dir.tmp[k];
        }
        design.mul(beta.as_slice(), &mut dir.fit);
        for i in 0..n {
            rd[i] = c[i] - dir.fit[i] - z[i] + w[i];
            xinv[i] = 1.0 / x[i];
            sinv[i] = 1.0 / s[i];
            q[i] = 1.0 / (z[i] * xinv[i] + w[i] * sinv[i]);
            rxz[i] = -x[i] * z[i];
            rsw[i] = -s[i] * w[i];
        }
        let mut normal = design.normal(&q);
        let scale = normal.trace() / p as f64;
        for k in 0..p {
            normal[(k, k)] += opts.ridge * scale;
        }
        let chol = normal.cholesky().ok_or_else(|| Error::Singular("interior-point normal matrix".into()))?;

        // Direction for complementarity targets r_xz, r_sw.
        let direction = |rxz: &[f64], rsw: &[f64], d: &mut Direction| {
            for i in 0..n {
                d.g[i] = rxz[i] * xinv[i] - rsw[i] * sinv[i] - rd[i];
                d.dx[i] = q[i] * d.g[i];
            }
            design.tmul(&d.dx, &mut d.tmp);
            let rhs = DVector::from_iterator(p, rp.iter().zip(&d.tmp).map(|(a, b)| a - b));
            let dbeta = chol.solve(&rhs);
            design.mul(dbeta.as_slice(), &mut d.fit);
            for i in 0..n {
                let dx = q[i] * (d.fit[i] + d.g[i]);
                d.dx[i] = dx;
                d.dz[i] = (rxz[i] - z[i] * dx) * xinv[i];
                d.dw[i] = (rsw[i] + w[i] * dx) * sinv[i];
            }
            dbeta
        };

        direction(&rxz, &rsw, &mut dir);
        let ap = (STEP * max_step_pair(&x, &s, &dir.dx)).min(1.0);
        let ad = (STEP * max_step_two(&z, &dir.dz, &w, &dir.dw)).min(1.0);
        let mut mu_aff = 0.0;
        for i in 0..n {
            let (dx, dz, dw) = (dir.dx[i], dir.dz[i], dir.dw[i]);
            mu_aff += (x[i] + ap * dx) * (z[i] + ad * dz) + (s[i] - ap * dx) * (w[i] + ad * dw);
        }
        let sigma = (mu_aff / comp).powi(3);
        let mu = sigma * comp / (2 * n) as f64;

        for i in 0..n {
            rxz[i] = mu - x[i] * z[i] - dir.dx[i] * dir.dz[i];
            rsw[i] = mu - s[i] * w[i] + dir.dx[i] * dir.dw[i];
        }
        let dbeta = direction(&rxz, &rsw, &mut dir);
        let ap = (STEP * max_step_pair(&x, &s, &dir.dx)).min(1.0);
        let ad = (STEP * max_step_two(&z, &dir.dz, &w, &dir.dw)).min(1.0);
        for i in 0..n {
            x[i] += ap * dir.dx[i];
            s[i] -= ap * dir.dx[i];
            z[i] += ad * dir.dz[i];
            w[i] += ad * dir.dw[i];
        }
        beta += dbeta * ad;
        if !beta.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::SolverFailed { alpha: level, gap: rel_gap, iterations: opts.max_iter })
}

/// `Σ_i ρ_{τ_i}(y_i - x_i'b)`.
pub fn check_loss<D: DesignOps + ?Sized>(design: &D, y: &[f64], tau: &[f64], b: &[f64]) -> f64 {
    let mut fit = vec![0.0; design.nrows()];
    design.mul(b, &mut fit);
    y.iter().zip(&fit).zip(tau).map(|((y, f), &t)| rho(t, y - f)).sum()
}

/// Check function `ρ_τ(r) = r(τ - 1[r ≤ 0])`.
pub fn rho(tau: f64, r: f64) -> f64 {
    if r > 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// Ordinary least squares through the normal equations.
pub fn least_squares<D: DesignOps + ?Sized>(design: &D, y: &[f64]) -> Result<Vec<f64>> {
    let n = design.nrows();
    let p = design.ncols();
    let normal = design.normal(&vec![1.0; n]);
    let mut xy = vec![0.0; p];
    design.tmul(y, &mut xy);
    let chol = normal.cholesky().ok_or_else(|| Error::Singular("least-squares design".into()))?;
    Ok(chol.solve(&DVector::from_vec(xy)).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_quantile(v: &[f64], tau: f64) -> f64 {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        // ρ-minimizer: the ceil(nτ)-th order statistic when nτ is not an integer.
        s[((s.len() as f64 * tau).ceil() as usize).saturating_sub(1)]
    }

    #[test]
    fn intercept_only_is_sample_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..101).map(|_| rng.gen::<f64>()).collect();
        let d = DenseDesign::new(vec![vec![1.0]; y.len()]).unwrap();
        for tau in [0.1, 0.33, 0.5, 0.77] {
            let t = vec![tau; y.len()];
            let sol = solve_rq(&d, &y, &t, IpmOptions::default()).unwrap();
            assert!((sol.coef[0] - sample_quantile(&y, tau)).abs() < 1e-6, "{tau}: {} vs {}", sol.coef[0], sample_quantile(&y, tau));
        }
    }

    #[test]
    fn solution_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![1.0, rng.gen(), rng.gen()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 1.0 + 2.0 * r[1] - r[2] + rng.gen::<f64>()).collect();
        let tau: Vec<f64> = (0..300).map(|_| rng.gen_range(0.05..0.95)).collect();
        let d = DenseDesign::new(rows).unwrap();
        let sol = solve_rq(&d, &y, &tau, IpmOptions::default()).unwrap();
        let best = check_loss(&d, &y, &tau, &sol.coef);
        for _ in 0..200 {
            let b: Vec<f64> = sol.coef.iter().map(|v| v + rng.gen_range(-0.01..0.01)).collect();
            assert!(check_loss(&d, &y, &tau, &b) >= best - 1e-7);
        }
    }

    #[test]
    fn exact_fit_is_recovered() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![1.0, i as f64 / 50.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 0.3 + 1.7 * r[1]).collect();
        let d = DenseDesign::new(rows).unwrap();
        let sol = solve_rq(&d, &y, &vec![0.4; 50], IpmOptions::default()).unwrap();
        assert!((sol.coef[0] - 0.3).abs() < 1e-7 && (sol.coef[1] - 1.7).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_levels() {
        let d = DenseDesign::new(vec![vec![1.0]; 3]).unwrap();
        assert!(solve_rq(&d, &[1.0, 2.0, 3.0], &[0.5, 1.0, 0.5], IpmOptions::default()).is_err());
    }
}
