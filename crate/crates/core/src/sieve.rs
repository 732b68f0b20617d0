//! Localized sieve bases on `[0, 1]^D`: regressograms and cardinal B-splines.
//!
//! Each retained function is a rescaled product
//! `h^{-D_M/2} ∏_k p((x_{j_k} - h i_k)/h)` over an interaction tuple `j`
//! of `D_M` coordinates and a shift tuple `i`. Functions are ordered
//! lexicographically by `(j, i)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SieveKind {
    Regressogram,
    Bspline { m: u32 },
}

/// Cardinal B-spline of order `m` with support `[0, m]`.
pub fn bspline_p(t: f64, m: u32) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!("B-spline order {m} < 2")));
    }
    Ok(bspline_unchecked(t, m))
}

fn bspline_unchecked(t: f64, m: u32) -> f64 {
    if t <= 0.0 || t >= m as f64 {
        return 0.0;
    }
    let mut fact = 1.0;
    for k in 1..m {
        fact *= k as f64;
    }
    let mut binom = 1.0;
    let mut sum = 0.0;
    for i in 0..=m {
        let d = t - i as f64;
        if d > 0.0 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * binom * d.powi(m as i32 - 1);
        }
        binom = binom * (m - i) as f64 / (i + 1) as f64;
    }
    sum / fact
}

/// One block of product functions sharing an interaction tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveBlock {
    pub coords: Vec<usize>,
    /// Shift range per coordinate, inclusive.
    pub shift_lo: i64,
    pub shift_hi: i64,
    /// Position of this block's first function in the basis.
    pub offset: usize,
    /// Local index dropped to break the partition-of-unity collinearity.
    pub dropped: Option<usize>,
    /// Local indices removed by an in-sample mass screen.
    pub screened: Vec<usize>,
    /// Map from local index to global position, or `None` when removed.
    positions: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveBasis {
    pub kind: SieveKind,
    pub h: f64,
    pub dim: usize,
    pub order: usize,
    pub blocks: Vec<SieveBlock>,
    len: usize,
}

fn combinations(d: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, d: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..d {
            cur.push(j);
            rec(j + 1, d, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, d, k, &mut Vec::new(), &mut out);
    out
}

/// Sparse vector as parallel index/value lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sparse {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SieveBasis {
    pub fn new(kind: SieveKind, h: f64, dim: usize, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("sieve interaction order must be at least 1".into()));
        }
        if order > dim {
            return Err(Error::InvalidParameter(format!("interaction order {order} exceeds dimension {dim}")));
        }
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidParameter(format!("sieve bandwidth {h} outside (0, 1]")));
        }
        if let SieveKind::Bspline { m } = kind {
            bspline_p(0.5, m)?;
        }
        let cells = (1.0 / h - 1e-9).ceil() as i64;
        let (shift_lo, shift_hi) = match kind {
            SieveKind::Regressogram => (0, cells - 1),
            SieveKind::Bspline { m } => (1 - m as i64, cells - 1),
        };
        let width = (shift_hi - shift_lo + 1) as usize;
        let per_block = width.pow(order as u32);
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (b, coords) in combinations(dim, order).into_iter().enumerate() {
            let dropped = (b > 0).then_some(0);
            let mut positions = Vec::with_capacity(per_block);
            let mut next = offset;
            for local in 0..per_block {
                if dropped == Some(local) {
                    positions.push(None);
                } else {
                    positions.push(Some(next));
                    next += 1;
                }
            }
            blocks.push(SieveBlock { coords, shift_lo, shift_hi, offset, dropped, screened: vec![], positions });
            offset = next;
        }
        Ok(Self { kind, h, dim, order, blocks, len: offset })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn width(&self) -> usize {
        let b = &self.blocks[0];
        (b.shift_hi - b.shift_lo + 1) as usize
    }

    /// Shifts with a nonzero univariate factor at `x`, with their values.
    fn univariate(&self, x: f64) -> Vec<(i64, f64)> {
        let h = self.h;
        let b = &self.blocks[0];
        match self.kind {
            SieveKind::Regressogram => {
                let i = ((x / h).floor() as i64).clamp(b.shift_lo, b.shift_hi);
                vec![(i, 1.0)]
            }
            SieveKind::Bspline { m } => {
                let base = (x / h).floor() as i64;
                (base - m as i64 + 1..=base)
                    .filter(|i| (b.shift_lo..=b.shift_hi).contains(i))
                    .map(|i| (i, bspline_unchecked((x - h * i as f64) / h, m)))
                    .filter(|&(_, v)| v != 0.0)
                    .collect()
            }
        }
    }

    /// `P(x)` as a sparse vector.
    pub fn eval(&self, x: &[f64]) -> Sparse {
        let mut out = Sparse::default();
        let width = self.width();
        let norm = self.h.powf(-(self.order as f64) / 2.0);
        for block in &self.blocks {
            let factors: Vec<Vec<(i64, f64)>> = block.coords.iter().map(|&j| self.univariate(x[j])).collect();
            // Cartesian product over coordinates.
            let mut acc: Vec<(usize, f64)> = vec![(0, norm)];
            for f in &factors {
                let mut next = Vec::with_capacity(acc.len() * f.len());
                for &(local, v) in &acc {
                    for &(i, w) in f {
                        next.push((local * width + (i - block.shift_lo) as usize, v * w));
                    }
                }
                acc = next;
            }
            for (local, v) in acc {
                if let Some(pos) = block.positions[local] {
                    out.idx.push(pos);
                    out.val.push(v);
                }
            }
        }
        out
    }

    /// Dense `P(x)`.
    pub fn eval_dense(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        let s = self.eval(x);
        for (i, val) in s.idx.iter().zip(&s.val) {
            v[*i] = *val;
        }
        v
    }

    /// Removes functions supported on fewer than `frac · h^{D_M} · n` of
    /// the supplied points.
    pub fn screened(&self, xs: &[Vec<f64>], frac: f64) -> Self {
        let mut counts = vec![0usize; self.len];
        for x in xs {
            for &i in &self.eval(x).idx {
                counts[i] += 1;
            }
        }
        let threshold = frac * self.h.powi(self.order as i32) * xs.len() as f64;
        let mut out = self.clone();
        let mut next = 0;
        for block in &mut out.blocks {
            block.offset = next;
            for (local, pos) in block.positions.iter_mut().enumerate() {
                if let Some(p) = *pos {
                    if (counts[p] as f64) < threshold {
                        *pos = None;
                        block.screened.push(local);
                    } else {
                        *pos = Some(next);
                        next += 1;
                    }
                }
            }
        }
        out.len = next;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bspline_shapes() {
        assert_abs_diff_eq!(bspline_p(1.0, 2).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bspline_p(0.5, 2).unwrap(), 0.5, epsilon = 1e-15);
        assert!(bspline_p(0.5, 1).is_err());
        for m in 2..=5 {
            assert_eq!(bspline_p(-0.1, m).unwrap(), 0.0);
            assert_eq!(bspline_p(m as f64 + 0.1, m).unwrap(), 0.0);
            let rule = crate::quadrature::gauss_legendre(20);
            let total: f64 = (0..m).map(|k| rule.integrate(k as f64, k as f64 + 1.0, |t| bspline_unchecked(t, m))).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
            // Partition of unity.
            let t = 0.37;
            let s: f64 = (-(m as i64)..=m as i64).map(|i| bspline_unchecked(t - i as f64, m)).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn regressogram_gram_is_identity() {
        let basis = SieveBasis::new(SieveKind::Regressogram, 0.25, 1, 1).unwrap();
        assert_eq!(basis.len(), 4);
        let n = 4000;
        let mut gram = vec![vec![0.0; 4]; 4];
        for k in 0..n {
            let x = (k as f64 + 0.5) / n as f64;
            let p = basis.eval_dense(&[x]);
            for a in 0..4 {
                for b in 0..4 {
                    gram[a][b] += p[a] * p[b] / n as f64;
                }
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                assert_abs_diff_eq!(gram[a][b], if a == b { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        assert_eq!(basis.eval(&[1.0]).idx, vec![3]);
    }

    #[test]
    fn guards() {
        assert!(SieveBasis::new(SieveKind::Regressogram, 0.25, 1, 0).is_err());
        assert!(SieveBasis::new(SieveKind::Regressogram, 0.25, 1, 2).is_err());
    }

    #[test]
    fn disjoint_support_and_norm_growth() {
        for kind in [SieveKind::Regressogram, SieveKind::Bspline { m: 3 }] {
            let mut prev_max = 0.0;
            for h in [0.25, 0.125, 0.0625] {
                let basis = SieveBasis::new(kind, h, 2, 2).unwrap();
                let mut max_norm: f64 = 0.0;
                for a in 0..=40 {
                    for b in 0..=40 {
                        let p = basis.eval(&[a as f64 / 40.0, b as f64 / 40.0]);
                        assert!(p.idx.len() <= 9);
                        max_norm = max_norm.max(p.val.iter().map(|v| v * v).sum::<f64>().sqrt());
                    }
                }
                if prev_max > 0.0 {
                    // Halving h doubles h^{-D_M/2} for D_M = 2.
                    let ratio = max_norm / prev_max;
                    assert!((1.6..2.4).contains(&ratio), "{ratio}");
                }
                prev_max = max_norm;
            }
        }
    }

    #[test]
    fn later_blocks_drop_one_function() {
        let basis = SieveBasis::new(SieveKind::Regressogram, 0.5, 2, 1).unwrap();
        assert_eq!(basis.len(), 3);
        assert_eq!(basis.eval_dense(&[0.1, 0.1]), vec![0.5f64.powf(-0.5), 0.0, 0.0]);
    }

    #[test]
    fn screen_removes_empty_cells() {
        let basis = SieveBasis::new(SieveKind::Regressogram, 0.25, 1, 1).unwrap();
        let xs: Vec<Vec<f64>> = (0..100).map(|k| vec![k as f64 / 200.0]).collect();
        let s = basis.screened(&xs, 0.5);
        assert_eq!(s.len(), 2);
        assert_eq!(s.eval(&[0.9]).idx.len(), 0);
    }
}
