use crate::error::{Error, Result};
use crate::spectral::max_abs;

/// Stopping rule for the inner Krylov solves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovParams {
    /// Exit once `‖A x - b‖∞ ≤ eta`.
    pub eta: f64,
    pub max_iter: usize,
}

impl Default for KrylovParams {
    fn default() -> Self {
        Self {
            eta: 1e-10,
            max_iter: 1000,
        }
    }
}

impl KrylovParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(format!(
                "krylov parameters need eta > 0 and max_iter >= 1 (eta = {}, max_iter = {})",
                self.eta, self.max_iter
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖A x - b‖∞` at exit.
    pub residual: f64,
}

/// Preconditioned conjugate gradients for a symmetric positive definite `A`.
///
/// `apply_pinv` applies the inverse of the preconditioner. The residual is
/// updated recursively and re-synchronised with `b - A x` before the exit
/// test is trusted.
pub fn pcg_solve(
    apply_a: impl Fn(&[f64], &mut [f64]),
    apply_pinv: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    x0: Option<&[f64]>,
    kp: KrylovParams,
) -> Result<PcgOutcome> {
    kp.validate()?;
    let m = rhs.len();
    let mut x = match x0 {
        Some(x0) if x0.len() != m => {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: x0.len(),
            })
        }
        Some(x0) => x0.to_vec(),
        None => vec![0.0; m],
    };
    let mut ap = vec![0.0; m];
    let true_residual = |x: &[f64], r: &mut [f64], scratch: &mut [f64]| {
        apply_a(x, scratch);
        for ((ri, bi), ai) in r.iter_mut().zip(rhs).zip(scratch.iter()) {
            *ri = bi - ai;
        }
    };
    let mut r = vec![0.0; m];
    true_residual(&x, &mut r, &mut ap);
    let mut res = max_abs(&r);
    if res <= kp.eta {
        return Ok(PcgOutcome {
            x,
            iterations: 0,
            residual: res,
        });
    }
    let mut z = vec![0.0; m];
    apply_pinv(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 1..=kp.max_iter {
        apply_a(&p, &mut ap);
        let curvature: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(curvature > 0.0) {
            return Err(Error::Breakdown {
                iteration: it,
                curvature,
            });
        }
        let alpha = rz / curvature;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = max_abs(&r);
        if res <= kp.eta {
            true_residual(&x, &mut r, &mut ap);
            res = max_abs(&r);
            if res <= kp.eta {
                return Ok(PcgOutcome {
                    x,
                    iterations: it,
                    residual: res,
                });
            }
        }
        apply_pinv(&r, &mut z);
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        solver: "pcg",
        iterations: kp.max_iter,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn copy(x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }

    #[test]
    fn identity_is_one_iteration() {
        let b = vec![1.0, -2.0, 3.0];
        let out = pcg_solve(copy, copy, &b, None, KrylovParams::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, b);
    }

    #[test]
    fn zero_rhs_exits_immediately() {
        let out = pcg_solve(copy, copy, &[0.0; 4], None, KrylovParams::default()).unwrap();
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn random_spd_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let b = DMatrix::<f64>::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
            let a = &b * b.transpose() + DMatrix::<f64>::identity(5, 5) * 0.5;
            let rhs = DVector::<f64>::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
            let diag = a.diagonal();
            let out = pcg_solve(
                |x, y| y.copy_from_slice((&a * DVector::from_column_slice(x)).as_slice()),
                |x, y| {
                    for i in 0..5 {
                        y[i] = x[i] / diag[i];
                    }
                },
                rhs.as_slice(),
                None,
                KrylovParams::default(),
            )
            .unwrap();
            let want = a.clone().lu().solve(&rhs).unwrap();
            for i in 0..5 {
                assert!((out.x[i] - want[i]).abs() < 1e-9);
            }
            assert!(out.residual <= 1e-10);
            let check = &a * DVector::from_column_slice(&out.x) - &rhs;
            assert!(check.amax() <= 1e-10);
        }
    }

    #[test]
    fn indefinite_reports_breakdown() {
        let err = pcg_solve(
            |x, y| {
                y[0] = x[0];
                y[1] = -x[1];
            },
            copy,
            &[0.0, 1.0],
            None,
            KrylovParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Breakdown { .. }));
    }

    #[test]
    fn iteration_cap_reported() {
        let kp = KrylovParams {
            eta: 1e-14,
            max_iter: 1,
        };
        let err = pcg_solve(
            |x, y| {
                y[0] = x[0];
                y[1] = 100.0 * x[1];
            },
            copy,
            &[1.0, 1.0],
            None,
            kp,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotConverged { solver: "pcg", .. }));
    }
}
