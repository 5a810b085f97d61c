//! Natural cubic spline bases.
//!
//! The construction follows the classic recipe used by R's `splines::ns`:
//! a cubic B-spline basis on the augmented knot sequence is projected onto the
//! null space of the second-derivative constraints at both boundary knots via
//! a Householder QR factorization. Column signs therefore agree with `ns`
//! output, which matters when spline coefficients are quoted from elsewhere.

use crate::error::{Error, Result};

const ORDER: usize = 4;

/// Non-zero cubic B-spline basis functions (and derivatives up to `nd`) at `x`.
///
/// Returns the index of the first non-zero function and a `(nd + 1) x ORDER`
/// table where row `k` holds the `k`-th derivatives.
fn basis_derivs(knots: &[f64], x: f64, nd: usize) -> (usize, Vec<[f64; ORDER]>) {
    let p = ORDER - 1;
    let n_basis = knots.len() - ORDER;
    // knot span: t[span] <= x < t[span + 1], closed on the right at the last span
    let mut span = p;
    while span < n_basis - 1 && x >= knots[span + 1] {
        span += 1;
    }

    let mut ndu = [[0.0f64; ORDER]; ORDER];
    let mut left = [0.0f64; ORDER];
    let mut right = [0.0f64; ORDER];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let mut ders = vec![[0.0f64; ORDER]; nd + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = [[0.0f64; ORDER]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0] = [0.0; ORDER];
        a[0][0] = 1.0;
        for k in 1..=nd.min(p) {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=nd.min(p) {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    (span - p, ders)
}

/// Full row of the cubic B-spline design (all `knots.len() - 4` functions).
fn design_row(knots: &[f64], x: f64, deriv: usize) -> Vec<f64> {
    let n_basis = knots.len() - ORDER;
    let (first, ders) = basis_derivs(knots, x, deriv);
    let mut row = vec![0.0; n_basis];
    for (k, v) in ders[deriv].iter().enumerate() {
        row[first + k] = *v;
    }
    row
}

/// Householder reflector `v` such that `(I - 2 v v^T / v^T v) x = -sign(x_0)|x| e_0`.
fn reflector(x: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut v = x.to_vec();
    let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    v
}

/// Natural cubic spline basis with fixed interior and boundary knots.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSpline {
    interior: Vec<f64>,
    boundary: (f64, f64),
    intercept: bool,
    augmented: Vec<f64>,
    // Householder vectors of the QR of the transposed constraint matrix.
    reflectors: Vec<(usize, Vec<f64>)>,
}

impl NaturalSpline {
    pub fn new(interior: &[f64], boundary: (f64, f64), intercept: bool) -> Result<Self> {
        let (lo, hi) = boundary;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!(
                "spline boundary knots must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        for w in interior.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidInput(
                    "spline interior knots must be strictly increasing".into(),
                ));
            }
        }
        if interior.iter().any(|k| !(*k > lo && *k < hi)) {
            return Err(Error::InvalidInput(format!(
                "spline interior knots must lie strictly inside ({lo}, {hi})"
            )));
        }

        let mut augmented = vec![lo; ORDER];
        augmented.extend_from_slice(interior);
        augmented.extend(std::iter::repeat_n(hi, ORDER));

        let skip = usize::from(!intercept);
        let c_lo = design_row(&augmented, lo, 2);
        let c_hi = design_row(&augmented, hi, 2);
        let mut cols: [Vec<f64>; 2] = [c_lo[skip..].to_vec(), c_hi[skip..].to_vec()];

        // QR of the (n_basis x 2) matrix whose columns are the constraints.
        let mut reflectors = Vec::with_capacity(2);
        for k in 0..2 {
            let v = reflector(&cols[k][k..]);
            let vv: f64 = v.iter().map(|a| a * a).sum();
            if vv > 0.0 {
                for col in cols.iter_mut().skip(k) {
                    let dot: f64 = v.iter().zip(&col[k..]).map(|(a, b)| a * b).sum();
                    let f = 2.0 * dot / vv;
                    for (c, a) in col[k..].iter_mut().zip(&v) {
                        *c -= f * a;
                    }
                }
            }
            reflectors.push((k, v));
        }

        Ok(Self {
            interior: interior.to_vec(),
            boundary,
            intercept,
            augmented,
            reflectors,
        })
    }

    /// The `df = 3`, two-interior-knot convention: knots at the 1/3 and 2/3
    /// sample quantiles of `1..=m_max` (type-7 quantiles), no intercept.
    pub fn terciles(m_max: usize) -> Result<Self> {
        if m_max < 3 {
            return Err(Error::InvalidInput(format!(
                "tercile spline needs at least 3 trials, got {m_max}"
            )));
        }
        let span = (m_max - 1) as f64;
        let knots = [1.0 + span / 3.0, 1.0 + 2.0 * span / 3.0];
        Self::new(&knots, (1.0, m_max as f64), false)
    }

    pub fn dim(&self) -> usize {
        self.interior.len() + 1 + usize::from(self.intercept)
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        debug_assert!(x >= self.boundary.0 - 1e-9 && x <= self.boundary.1 + 1e-9);
        self.project(design_row(&self.augmented, x, 0))
    }

    fn project(&self, row: Vec<f64>) -> Vec<f64> {
        let skip = usize::from(!self.intercept);
        let mut b = row[skip..].to_vec();
        for (k, v) in &self.reflectors {
            let vv: f64 = v.iter().map(|a| a * a).sum();
            if vv == 0.0 {
                continue;
            }
            let dot: f64 = v.iter().zip(&b[*k..]).map(|(a, c)| a * c).sum();
            let f = 2.0 * dot / vv;
            for (c, a) in b[*k..].iter_mut().zip(v) {
                *c -= f * a;
            }
        }
        b.drain(..2);
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference rows of `ns(1:36, df = 3)`, computed independently from a
    // scipy B-spline basis and a LAPACK QR of the boundary constraints.
    const NS36: [(usize, [f64; 3]); 5] = [
        (1, [0.0, 0.0, 0.0]),
        (2, [-0.021581856, 0.0650604369, -0.0433736246]),
        (12, [-0.0385002637, 0.5345911702, -0.3563941135]),
        (18, [0.2892476431, 0.4881404525, -0.3095047137]),
        (36, [-0.1428571429, 0.4285714286, 0.7142857143]),
    ];

    #[test]
    fn matches_reference_ns_rows() {
        let ns = NaturalSpline::terciles(36).unwrap();
        assert_eq!(ns.dim(), 3);
        for (m, want) in NS36 {
            let got = ns.eval(m as f64);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-9, "m={m}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn b_splines_partition_unity() {
        let knots = [0.0, 0.0, 0.0, 0.0, 0.3, 0.7, 1.0, 1.0, 1.0, 1.0];
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            let row = design_row(&knots, x, 0);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn second_derivative_vanishes_at_boundaries() {
        let ns = NaturalSpline::new(&[4.0, 8.0], (1.0, 12.0), true).unwrap();
        for x in [1.0, 12.0] {
            let d2 = ns.project(design_row(&ns.augmented, x, 2));
            assert!(d2.iter().all(|v| v.abs() < 1e-12), "{d2:?}");
        }
        // but not in the interior
        let inner = ns.project(design_row(&ns.augmented, 6.0, 2));
        assert!(inner.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn rejects_knots_on_boundary() {
        assert!(NaturalSpline::new(&[1.0, 5.0], (1.0, 12.0), false).is_err());
        assert!(NaturalSpline::new(&[6.0, 5.0], (1.0, 12.0), false).is_err());
    }
}
