//! Block lower-bidiagonal preconditioner built from the linear part of `F`.
//!
//! `M` has `X = I + h_t G (a L + b c I)` on the diagonal and `-I` below it.
//! Every `X` solve is one spectral division, so `M⁻¹` and `M⁻ᵀ` cost
//! `O(n_t n² log n)` via block substitution.

use crate::equations::RDModel;
use crate::error::{Error, Result};
use crate::spectral::SpectralDiag;
use crate::system::{SpaceTimeVec, WindowProblem};

#[derive(Clone, Debug)]
pub struct Precond {
    n_t: usize,
    h_t: f64,
    x: SpectralDiag,
    x_inv: SpectralDiag,
}

impl Precond {
    pub fn new(model: &RDModel, n_t: usize, h_t: f64) -> Result<Self> {
        if n_t == 0 || !(h_t.is_finite() && h_t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "preconditioner needs n_t >= 1 and h_t > 0 (n_t = {n_t}, h_t = {h_t})"
            )));
        }
        let g = model.g_symbol()?;
        let (a, b, c) = (model.a, model.b, model.reaction.c);
        let x = g.zip_with(&model.l_precond, |g, l| 1.0 + h_t * (a * g * l + b * c * g))?;
        let x_inv = x.map(|v| 1.0 / v)?;
        Ok(Self { n_t, h_t, x, x_inv })
    }

    pub fn for_problem(prob: &WindowProblem<'_>) -> Result<Self> {
        Self::new(prob.model, prob.n_t, prob.h_t)
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn h_t(&self) -> f64 {
        self.h_t
    }

    /// Multipliers of the diagonal block `X`.
    pub fn x_symbol(&self) -> &SpectralDiag {
        &self.x
    }

    fn check(&self, v: &SpaceTimeVec) -> Result<()> {
        v.check_shape(self.x.n(), self.n_t)
    }

    /// `M v`: block `t` is `X v^t - v^{t-1}`.
    pub fn apply_m(&self, v: &SpaceTimeVec) -> Result<SpaceTimeVec> {
        self.check(v)?;
        let mut out = SpaceTimeVec::zeros(v.n(), self.n_t);
        for t in 0..self.n_t {
            self.x.apply_into(v.block(t), out.block_mut(t));
            if t > 0 {
                let prev = v.block(t - 1);
                for (o, p) in out.block_mut(t).iter_mut().zip(prev) {
                    *o -= p;
                }
            }
        }
        Ok(out)
    }

    /// `M⁻¹ v` by forward substitution: `w^t = X⁻¹(v^t + w^{t-1})`.
    pub fn apply_m_inverse(&self, v: &SpaceTimeVec) -> Result<SpaceTimeVec> {
        self.check(v)?;
        let m = v.block_len();
        let mut out = SpaceTimeVec::zeros(v.n(), self.n_t);
        let mut rhs = vec![0.0; m];
        for t in 0..self.n_t {
            rhs.copy_from_slice(v.block(t));
            if t > 0 {
                for (r, w) in rhs.iter_mut().zip(out.block(t - 1)) {
                    *r += w;
                }
            }
            self.x_inv.apply_into(&rhs, out.block_mut(t));
        }
        Ok(out)
    }

    /// `M⁻ᵀ v` by backward substitution: `w^t = X⁻¹(v^t + w^{t+1})`.
    pub fn apply_m_inverse_transpose(&self, v: &SpaceTimeVec) -> Result<SpaceTimeVec> {
        self.check(v)?;
        let m = v.block_len();
        let mut out = SpaceTimeVec::zeros(v.n(), self.n_t);
        let mut rhs = vec![0.0; m];
        for t in (0..self.n_t).rev() {
            rhs.copy_from_slice(v.block(t));
            if t + 1 < self.n_t {
                for (r, w) in rhs.iter_mut().zip(out.block(t + 1)) {
                    *r += w;
                }
            }
            self.x_inv.apply_into(&rhs, out.block_mut(t));
        }
        Ok(out)
    }

    /// `Mᵀ v`: block `t` is `X v^t - v^{t+1}`.
    pub fn apply_m_transpose(&self, v: &SpaceTimeVec) -> Result<SpaceTimeVec> {
        self.check(v)?;
        let mut out = SpaceTimeVec::zeros(v.n(), self.n_t);
        for t in 0..self.n_t {
            self.x.apply_into(v.block(t), out.block_mut(t));
            if t + 1 < self.n_t {
                let next = v.block(t + 1).to_vec();
                for (o, p) in out.block_mut(t).iter_mut().zip(&next) {
                    *o -= p;
                }
            }
        }
        Ok(out)
    }
}
