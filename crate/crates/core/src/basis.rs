//! Clamped cubic B-splines on `[0, 1]` with equally spaced interior knots.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{quadrature, Error, Result};

pub const DEGREE: usize = 3;

/// Candidate basis sizes tried by model selection.
pub const DEFAULT_M_GRID: [usize; 4] = [5, 8, 11, 14];

/// Serialized form: only what is needed to rebuild the basis exactly.
#[derive(Serialize, Deserialize)]
struct BasisRepr {
    degree: usize,
    n_basis: usize,
    knots: Vec<f64>,
    orthonormal: bool,
}

/// Cubic B-spline basis, optionally carrying an orthonormalizing transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct SplineBasis {
    n_basis: usize,
    knots: Vec<f64>,
    transform: DMatrix<f64>,
    orthonormal: bool,
}

impl TryFrom<BasisRepr> for SplineBasis {
    type Error = Error;

    fn try_from(r: BasisRepr) -> Result<Self> {
        if r.degree != DEGREE {
            return Err(Error::InvalidArgument(format!("only cubic splines are supported, got degree {}", r.degree)));
        }
        let raw = SplineBasis::new(r.n_basis)?;
        if raw.knots != r.knots {
            return Err(Error::InvalidArgument("knot vector is not the equally spaced clamped vector".into()));
        }
        if r.orthonormal {
            raw.orthonormalize()
        } else {
            Ok(raw)
        }
    }
}

impl From<SplineBasis> for BasisRepr {
    fn from(b: SplineBasis) -> Self {
        BasisRepr {
            degree: DEGREE,
            n_basis: b.n_basis,
            knots: b.knots,
            orthonormal: b.orthonormal,
        }
    }
}

impl SplineBasis {
    /// Raw basis with `n_basis - 4` equally spaced interior knots.
    pub fn new(n_basis: usize) -> Result<Self> {
        if n_basis < DEGREE + 1 {
            return Err(Error::InvalidArgument(format!("need at least 4 basis functions, got {n_basis}")));
        }
        let spans = n_basis - DEGREE;
        let mut knots = vec![0.0; DEGREE + 1];
        knots.extend((1..spans).map(|i| i as f64 / spans as f64));
        knots.extend([1.0; DEGREE + 1]);
        Ok(SplineBasis {
            n_basis,
            knots,
            transform: DMatrix::identity(n_basis, n_basis),
            orthonormal: false,
        })
    }

    /// Orthonormalized basis of size `n_basis`.
    pub fn orthonormal(n_basis: usize) -> Result<Self> {
        SplineBasis::new(n_basis)?.orthonormalize()
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    /// Maps raw B-spline values `b(t)` to transformed values `T b(t)`.
    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    /// Support `[knot_m, knot_{m+4}]` of raw function `m`.
    pub fn support(&self, m: usize) -> (f64, f64) {
        (self.knots[m], self.knots[m + DEGREE + 1])
    }

    fn check_t(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("t = {t} is outside [0, 1]")))
        }
    }

    /// Index `k` of the knot span `[knots[k], knots[k+1])` containing `t`;
    /// `t = 1` belongs to the last non-empty span.
    fn span_index(&self, t: f64) -> usize {
        let last = self.n_basis - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        self.knots.partition_point(|&k| k <= t) - 1
    }

    /// The four possibly nonzero raw values at `t` and the index of the
    /// first of them.
    pub fn nonzero(&self, t: f64) -> Result<(usize, [f64; DEGREE + 1])> {
        Self::check_t(t)?;
        let k = self.span_index(t);
        let u = &self.knots;
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = t - u[k + 1 - j];
            right[j] = u[k + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((k - DEGREE, n))
    }

    /// All `M` raw B-spline values at `t`.
    pub fn evaluate(&self, t: f64) -> Result<DVector<f64>> {
        let (start, vals) = self.nonzero(t)?;
        let mut out = DVector::zeros(self.n_basis);
        for (j, v) in vals.iter().enumerate() {
            out[start + j] = *v;
        }
        Ok(out)
    }

    /// Values of the transformed basis functions at `t`.
    pub fn evaluate_transformed(&self, t: f64) -> Result<DVector<f64>> {
        let (start, vals) = self.nonzero(t)?;
        let mut out = DVector::zeros(self.n_basis);
        for (j, v) in vals.iter().enumerate() {
            out.axpy(*v, &self.transform.column(start + j), 1.0);
        }
        Ok(out)
    }

    /// Matrix whose row `j` holds the transformed basis at `times[j]`.
    pub fn design(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(times.len(), self.n_basis);
        for (j, &t) in times.iter().enumerate() {
            out.row_mut(j).copy_from(&self.evaluate_transformed(t)?.transpose());
        }
        Ok(out)
    }

    /// Gauss-Legendre nodes and weights, six per non-empty knot span.
    pub fn quadrature(&self) -> Vec<(f64, f64)> {
        self.knots
            .windows(2)
            .filter(|w| w[1] > w[0])
            .flat_map(|w| quadrature::panel(w[0], w[1]))
            .collect()
    }

    /// Gram matrix of the raw B-splines.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let m = self.n_basis;
        let mut g = DMatrix::zeros(m, m);
        for (x, w) in self.quadrature() {
            let (start, vals) = self.nonzero(x).expect("quadrature node inside [0, 1]");
            for a in 0..=DEGREE {
                for b in a..=DEGREE {
                    g[(start + a, start + b)] += w * vals[a] * vals[b];
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }

    /// Gram matrix of the currently transformed basis, `T G Tᵀ`.
    pub fn transformed_gram(&self) -> DMatrix<f64> {
        let mut g = &self.transform * self.gram_matrix() * self.transform.transpose();
        crate::linalg::symmetrize(&mut g);
        g
    }

    /// Composes the transform with the inverse Cholesky factor of the
    /// current Gram matrix so the transformed functions are L2-orthonormal.
    pub fn orthonormalize(&self) -> Result<Self> {
        let gram = self.transformed_gram();
        let chol = gram.cholesky().ok_or_else(|| {
            Error::Numerical(format!("Gram matrix of {} B-splines is numerically singular", self.n_basis))
        })?;
        let l = chol.l();
        let identity = DMatrix::identity(self.n_basis, self.n_basis);
        let l_inv = l
            .solve_lower_triangular(&identity)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        Ok(SplineBasis {
            n_basis: self.n_basis,
            knots: self.knots.clone(),
            transform: l_inv * &self.transform,
            orthonormal: true,
        })
    }

    /// Integrals over `[0, 1]` of the transformed functions.
    pub fn integrals(&self) -> DVector<f64> {
        let raw = DVector::from_iterator(
            self.n_basis,
            (0..self.n_basis).map(|m| {
                let (a, b) = self.support(m);
                (b - a) / (DEGREE + 1) as f64
            }),
        );
        &self.transform * raw
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn knot_vector_shape() {
        let b = SplineBasis::new(8).unwrap();
        assert_eq!(b.knots().len(), 12);
        assert_eq!(&b.knots()[..4], &[0.0; 4]);
        assert_eq!(&b.knots()[8..], &[1.0; 4]);
        assert!((b.knots()[5] - 0.4).abs() < 1e-15);
        assert!(SplineBasis::new(3).is_err());
    }

    #[test]
    fn bernstein_case() {
        let b = SplineBasis::new(4).unwrap();
        let v = b.evaluate(0.5).unwrap();
        for (got, want) in v.iter().zip([0.125, 0.375, 0.375, 0.125]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((b.gram_matrix()[(0, 0)] - 1.0 / 7.0).abs() < 1e-14);
        let o = b.orthonormalize().unwrap();
        for t in [0.0f64, 0.1, 0.37, 0.8, 1.0] {
            let want = 7f64.sqrt() * (1.0 - t).powi(3);
            assert!((o.evaluate_transformed(t).unwrap()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn endpoints() {
        let b = SplineBasis::new(8).unwrap();
        let v0 = b.evaluate(0.0).unwrap();
        assert_eq!(v0[0], 1.0);
        assert!(v0.iter().skip(1).all(|&x| x == 0.0));
        let v1 = b.evaluate(1.0).unwrap();
        assert!((v1[7] - 1.0).abs() < 1e-15);
        assert!(b.evaluate(1.0 + 1e-9).is_err());
        assert!(b.evaluate(-1e-9).is_err());
    }

    #[test]
    fn gram_symmetric_and_sums_to_one() {
        for m in DEFAULT_M_GRID {
            let b = SplineBasis::new(m).unwrap();
            let g = b.gram_matrix();
            for i in 0..m {
                for j in 0..m {
                    assert_eq!(g[(i, j)], g[(j, i)]);
                }
                let row: f64 = g.row(i).sum();
                let (lo, hi) = b.support(i);
                assert!((row - (hi - lo) / 4.0).abs() < 1e-14);
            }
            assert!((g.sum() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn orthonormalized_gram_is_identity_and_idempotent() {
        for m in [4, 5, 8, 11, 14, 20] {
            let o = SplineBasis::orthonormal(m).unwrap();
            let g = o.transformed_gram();
            let dev = (g - DMatrix::identity(m, m)).abs().max();
            assert!(dev < 1e-10, "M={m}: {dev}");
            let twice = o.orthonormalize().unwrap();
            assert!((twice.transform() - o.transform()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn integrals_match_quadrature() {
        let o = SplineBasis::orthonormal(11).unwrap();
        let mut q = DVector::zeros(11);
        for (x, w) in o.quadrature() {
            q += o.evaluate_transformed(x).unwrap() * w;
        }
        assert!((q - o.integrals()).abs().max() < 1e-13);
    }

    #[test]
    fn serde_round_trip() {
        let o = SplineBasis::orthonormal(8).unwrap();
        let s = serde_json::to_string(&o).unwrap();
        let back: SplineBasis = serde_json::from_str(&s).unwrap();
        assert_eq!(back, o);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_local_support(t in 0.0f64..=1.0, m in 4usize..20) {
            let b = SplineBasis::new(m).unwrap();
            let v = b.evaluate(t).unwrap();
            prop_assert!((v.sum() - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().filter(|&&x| x != 0.0).count() <= 4);
            for j in 0..m {
                let (lo, hi) = b.support(j);
                if t < lo || t > hi {
                    prop_assert_eq!(v[j], 0.0);
                }
                prop_assert!(v[j] >= 0.0);
            }
        }
    }
}
