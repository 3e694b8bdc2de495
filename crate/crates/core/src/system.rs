//! The space-time root-finding system of one time window.
//!
//! For `N_t` implicit steps from `u0` the unknown is `U = (u¹, …, u^{N_t})`
//! and the system is
//!
//! ```text
//! F(U) = D U + h_t 𝒢(a 𝓛 U + b f(U)) - V,   V = (u0, 0, …, 0),
//! ```
//!
//! with `D` the lower-bidiagonal time-difference matrix. Block `t` of `F`
//! (0-based) is the step from `u^t` to `u^{t+1}`, so block 0 reads
//! `u¹ - u0 + h_t G(a L u¹ + b f(u¹))`.

use crate::equations::{LinearOp, RDModel};
use crate::error::{Error, Result};
use crate::spectral::{max_abs, Field, SpectralDiag};

/// `N_t` stacked fields stored contiguously, block `t` at `t * n²`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeVec {
    n: usize,
    n_t: usize,
    data: Vec<f64>,
}

impl SpaceTimeVec {
    pub fn zeros(n: usize, n_t: usize) -> Self {
        Self {
            n,
            n_t,
            data: vec![0.0; n * n * n_t],
        }
    }

    /// `n_t` copies of `field`.
    pub fn replicate(field: &Field, n_t: usize) -> Self {
        let mut data = Vec::with_capacity(field.values().len() * n_t);
        for _ in 0..n_t {
            data.extend_from_slice(field.values());
        }
        Self {
            n: field.n(),
            n_t,
            data,
        }
    }

    pub fn from_blocks(blocks: &[Field]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidParameter("at least one block is required".into()))?;
        let n = first.n();
        let mut data = Vec::with_capacity(n * n * blocks.len());
        for b in blocks {
            b.check_n(n)?;
            data.extend_from_slice(b.values());
        }
        Ok(Self {
            n,
            n_t: blocks.len(),
            data,
        })
    }

    pub fn from_vec(n: usize, n_t: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n * n_t {
            return Err(Error::DimensionMismatch {
                expected: n * n * n_t,
                found: data.len(),
            });
        }
        Ok(Self { n, n_t, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn n_t(&self) -> usize {
        self.n_t
    }

    #[inline]
    pub fn block_len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn block(&self, t: usize) -> &[f64] {
        let m = self.block_len();
        &self.data[t * m..(t + 1) * m]
    }

    #[inline]
    pub fn block_mut(&mut self, t: usize) -> &mut [f64] {
        let m = self.block_len();
        &mut self.data[t * m..(t + 1) * m]
    }

    pub fn block_field(&self, t: usize) -> Field {
        Field::from_vec(self.n, self.block(t).to_vec()).expect("block has n² entries")
    }

    pub fn last_block(&self) -> Field {
        self.block_field(self.n_t - 1)
    }

    pub fn dot(&self, other: &SpaceTimeVec) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &SpaceTimeVec) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += alpha * v;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in &mut self.data {
            *s *= alpha;
        }
    }

    pub fn same_shape(&self, other: &SpaceTimeVec) -> bool {
        self.n == other.n && self.n_t == other.n_t
    }

    pub(crate) fn check_shape(&self, n: usize, n_t: usize) -> Result<()> {
        if self.n != n {
            return Err(Error::GridMismatch {
                expected: n,
                found: self.n,
            });
        }
        if self.n_t != n_t {
            return Err(Error::DimensionMismatch {
                expected: n * n * n_t,
                found: self.data.len(),
            });
        }
        Ok(())
    }
}

/// How `h_t G (a L · + b ·)` is evaluated.
#[derive(Clone, Debug)]
enum Kernel {
    /// Both operators Fourier-diagonal: symbols `h a g l` and `h b g`,
    /// plus `g` alone for the adjoint.
    Spectral {
        lin: SpectralDiag,
        react: SpectralDiag,
        g: SpectralDiag,
    },
    /// Anything else: apply `L` then `G` in sequence.
    General,
}

/// One window of `n_t` implicit steps of size `h_t` starting from `u0`.
#[derive(Clone, Debug)]
pub struct WindowProblem<'a> {
    pub model: &'a RDModel,
    pub u0: Field,
    pub n_t: usize,
    pub h_t: f64,
    pub v: SpaceTimeVec,
    kernel: Kernel,
}

/// `V = (u0, 0, …, 0)`; periodic boundaries contribute nothing else.
pub fn assemble_v(u0: &Field, n_t: usize) -> SpaceTimeVec {
    let mut v = SpaceTimeVec::zeros(u0.n(), n_t);
    v.block_mut(0).copy_from_slice(u0.values());
    v
}

impl<'a> WindowProblem<'a> {
    pub fn new(model: &'a RDModel, u0: Field, n_t: usize, h_t: f64) -> Result<Self> {
        if n_t == 0 {
            return Err(Error::InvalidParameter("n_t must be at least 1".into()));
        }
        if !(h_t.is_finite() && h_t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "h_t must be positive, got {h_t}"
            )));
        }
        u0.check_n(model.grid.n())?;
        let kernel = match (&model.g_op, &model.l_op) {
            (LinearOp::Spectral(g), LinearOp::Spectral(l)) => {
                let (a, b) = (model.a, model.b);
                Kernel::Spectral {
                    lin: g.zip_with(l, |g, l| h_t * a * g * l)?,
                    react: g.map(|g| h_t * b * g)?,
                    g: g.clone(),
                }
            }
            _ => Kernel::General,
        };
        let v = assemble_v(&u0, n_t);
        Ok(Self {
            model,
            u0,
            n_t,
            h_t,
            v,
            kernel,
        })
    }

    pub fn n(&self) -> usize {
        self.model.grid.n()
    }

    /// Same model and step, new initial state (used to chain windows).
    pub fn with_u0(&self, u0: Field) -> Result<Self> {
        u0.check_n(self.n())?;
        let v = assemble_v(&u0, self.n_t);
        Ok(Self {
            u0,
            v,
            ..self.clone()
        })
    }

    pub fn zeros(&self) -> SpaceTimeVec {
        SpaceTimeVec::zeros(self.n(), self.n_t)
    }

    /// `h_t G(a L x + b y)` for one block.
    fn nonlinear_part(&self, x: &[f64], y: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        match &self.kernel {
            Kernel::Spectral { lin, react, .. } => lin.apply_sum_into(x, react, y, out),
            Kernel::General => {
                let m = self.model;
                m.l_op.apply_into(x, scratch);
                for (s, &yv) in scratch.iter_mut().zip(y) {
                    *s = self.h_t * (m.a * *s + m.b * yv);
                }
                m.g_op.apply_into(scratch, out);
            }
        }
    }

    fn check(&self, u: &SpaceTimeVec) -> Result<()> {
        u.check_shape(self.n(), self.n_t)
    }
}

/// Evaluates `F(U)`.
#[allow(non_snake_case)]
pub fn eval_F(prob: &WindowProblem<'_>, u: &SpaceTimeVec) -> Result<SpaceTimeVec> {
    prob.check(u)?;
    let m = u.block_len();
    let mut out = prob.zeros();
    let mut fu = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut nl = vec![0.0; m];
    for t in 0..prob.n_t {
        let ut = u.block(t);
        prob.model.reaction_into(ut, &mut fu);
        prob.nonlinear_part(ut, &fu, &mut nl, &mut scratch);
        let vt = prob.v.block(t);
        let prev = (t > 0).then(|| u.block(t - 1));
        let o = out.block_mut(t);
        for i in 0..m {
            let du = ut[i] - prev.map_or(0.0, |p| p[i]);
            o[i] = du + nl[i] - vt[i];
        }
    }
    Ok(out)
}

/// `‖F(U)‖∞ / h_t`.
pub fn residual_inf(prob: &WindowProblem<'_>, u: &SpaceTimeVec) -> Result<f64> {
    Ok(eval_F(prob, u)?.max_abs() / prob.h_t)
}

/// Jacobian action `DF(U) w`.
#[allow(non_snake_case)]
pub fn apply_DF(
    prob: &WindowProblem<'_>,
    u: &SpaceTimeVec,
    w: &SpaceTimeVec,
) -> Result<SpaceTimeVec> {
    prob.check(u)?;
    prob.check(w)?;
    let m = u.block_len();
    let fp = prob.model.reaction.f_prime;
    let mut out = prob.zeros();
    let mut dfw = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut nl = vec![0.0; m];
    for t in 0..prob.n_t {
        let (ut, wt) = (u.block(t), w.block(t));
        for i in 0..m {
            dfw[i] = fp(ut[i]) * wt[i];
        }
        prob.nonlinear_part(wt, &dfw, &mut nl, &mut scratch);
        let prev = (t > 0).then(|| w.block(t - 1));
        let o = out.block_mut(t);
        for i in 0..m {
            o[i] = wt[i] - prev.map_or(0.0, |p| p[i]) + nl[i];
        }
    }
    Ok(out)
}

/// Adjoint Jacobian action `DF(U)ᵀ p`. Block `t` is
/// `p^t - p^{t+1} + h_t (a L(G p^t) + b f'(u^t) ⊙ G p^t)`.
#[allow(non_snake_case)]
pub fn apply_DF_transpose(
    prob: &WindowProblem<'_>,
    u: &SpaceTimeVec,
    p: &SpaceTimeVec,
) -> Result<SpaceTimeVec> {
    prob.check(u)?;
    prob.check(p)?;
    let m = u.block_len();
    let model = prob.model;
    let fp = model.reaction.f_prime;
    let (h, b) = (prob.h_t, model.b);
    let mut out = prob.zeros();
    let mut gp = vec![0.0; m];
    let mut lgp = vec![0.0; m];
    for t in 0..prob.n_t {
        let pt = p.block(t);
        match &prob.kernel {
            // lin = h a g l, so `lgp` already carries the factor h a.
            Kernel::Spectral { lin, g, .. } => g.apply_dual_into(lin, pt, &mut gp, &mut lgp),
            Kernel::General => {
                model.g_op.apply_into(pt, &mut gp);
                model.l_op.apply_into(&gp, &mut lgp);
                for v in &mut lgp {
                    *v *= h * model.a;
                }
            }
        }
        let ut = u.block(t);
        let next = (t + 1 < prob.n_t).then(|| p.block(t + 1));
        let o = out.block_mut(t);
        for i in 0..m {
            let dp = pt[i] - next.map_or(0.0, |q| q[i]);
            o[i] = dp + lgp[i] + h * b * fp(ut[i]) * gp[i];
        }
    }
    Ok(out)
}
