//! Small complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

/// Largest accepted condition estimate for a factorized system.
pub const MAX_CONDITION: f64 = 1e12;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `a ⊗ b` for column vectors.
pub fn kron(a: &CVec, b: &CVec) -> CVec {
    let mut out = CVec::zeros(a.len() * b.len());
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// `a bᴴ`.
pub fn outer(a: &CVec, b: &CVec) -> CMat {
    a * b.adjoint()
}

/// `aᴴ b`.
pub fn inner(a: &CVec, b: &CVec) -> C64 {
    a.dotc(b)
}

/// `bᴴ R b` for Hermitian `R`, real part only.
pub fn quad_form(r: &CMat, b: &CVec) -> f64 {
    b.dotc(&(r * b)).re
}

pub fn rel_frobenius(a: &CMat, b: &CMat) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

pub fn rel_vec_diff(a: &CVec, b: &CVec) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    let h = hermitian_part(m);
    h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Cholesky factorization of a Hermitian positive-definite matrix. On failure
/// the diagonal is loaded with `1e-10 * trace / dim` once before giving up.
pub struct HermitianFactor {
    chol: nalgebra::Cholesky<C64, nalgebra::Dyn>,
}

impl HermitianFactor {
    pub fn new(a: &CMat, context: &str) -> Result<Self> {
        let n = a.nrows();
        let sym = hermitian_part(a);
        let chol = match sym.clone().cholesky() {
            Some(ch) => ch,
            None => {
                let jitter = 1e-10 * trace_re(&sym).abs().max(f64::MIN_POSITIVE) / n.max(1) as f64;
                let mut loaded = sym;
                for i in 0..n {
                    loaded[(i, i)] += C64::from(jitter);
                }
                loaded.cholesky().ok_or_else(|| Error::SingularSystem {
                    context: context.to_string(),
                    cond: f64::INFINITY,
                })?
            }
        };
        let diag: Vec<f64> = chol.l_dirty().diagonal().iter().map(|z| z.re).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let cond = (max / min).powi(2);
        if !cond.is_finite() || cond > MAX_CONDITION {
            return Err(Error::SingularSystem { context: context.to_string(), cond });
        }
        Ok(Self { chol })
    }

    pub fn solve(&self, rhs: &CVec) -> CVec {
        self.chol.solve(rhs)
    }

    pub fn solve_mat(&self, rhs: &CMat) -> CMat {
        self.chol.solve(rhs)
    }
}

/// General (non-Hermitian) solve through partial-pivot LU.
pub fn lu_solve(a: &CMat, rhs: &CMat, context: &str) -> Result<CMat> {
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularSystem { context: context.to_string(), cond: f64::NAN });
    }
    let lu = a.clone().lu();
    let x = lu
        .solve(rhs)
        .ok_or_else(|| Error::SingularSystem { context: context.to_string(), cond: f64::INFINITY })?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularSystem { context: context.to_string(), cond: f64::INFINITY });
    }
    Ok(x)
}

/// Real matrix helper for rotations and body frames.
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

pub fn identity(n: usize) -> CMat {
    DMatrix::identity(n, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_matches_outer_reshape() {
        let a = CVec::from_vec(vec![c(1.0, 0.5), c(-2.0, 0.0)]);
        let b = CVec::from_vec(vec![c(0.0, 1.0), c(3.0, -1.0), c(0.5, 0.5)]);
        let k = kron(&a, &b);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(k[i * 3 + j], a[i] * b[j]);
            }
        }
    }

    #[test]
    fn factor_rejects_singular() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(1e-14, 0.0)]));
        assert!(matches!(HermitianFactor::new(&a, "t"), Err(Error::SingularSystem { .. })));
        // Exactly rank deficient: rescued by the diagonal loading.
        let v = CVec::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(HermitianFactor::new(&outer(&v, &v), "t").is_ok());
    }

    #[test]
    fn factor_solves_pd_system() {
        let a = CMat::from_row_slice(2, 2, &[c(4.0, 0.0), c(1.0, 1.0), c(1.0, -1.0), c(3.0, 0.0)]);
        let rhs = CVec::from_vec(vec![c(1.0, 2.0), c(-1.0, 0.0)]);
        let x = HermitianFactor::new(&a, "t").unwrap().solve(&rhs);
        assert!((&a * &x - &rhs).norm() < 1e-13);
    }
}
