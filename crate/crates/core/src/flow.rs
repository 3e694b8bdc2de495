//! Continuous-time limit of the PDHG iteration:
//!
//! ```text
//! q̇ = -ε q + F̂(u)
//! u̇ = -DF̂(u)ᵀ (q + γ q̇) = -DF̂(u)ᵀ ((1 - γε) q + γ F̂(u))
//! ```
//!
//! with `F̂ = M⁻¹F` and `DF̂ᵀ = DFᵀ M⁻ᵀ`, integrated by classical RK4.

use std::io::Write;

use crate::error::{Error, Result};
use crate::pdhg::format_f64;
use crate::precond::Precond;
use crate::system::{apply_DF_transpose, eval_F, SpaceTimeVec, WindowProblem};

/// A preconditioned residual map and its adjoint Jacobian.
pub trait FlowSystem {
    fn fhat(&self, u: &SpaceTimeVec) -> Result<SpaceTimeVec>;
    fn dfhat_transpose(&self, u: &SpaceTimeVec, p: &SpaceTimeVec) -> Result<SpaceTimeVec>;
}

/// The window system `M⁻¹F`.
pub struct WindowFlow<'a, 'm> {
    pub prob: &'a WindowProblem<'m>,
    pub pc: &'a Precond,
}

impl FlowSystem for WindowFlow<'_, '_> {
    fn fhat(&self, u: &SpaceTimeVec) -> Result<SpaceTimeVec> {
        self.pc.apply_m_inverse(&eval_F(self.prob, u)?)
    }

    fn dfhat_transpose(&self, u: &SpaceTimeVec, p: &SpaceTimeVec) -> Result<SpaceTimeVec> {
        apply_DF_transpose(self.prob, u, &self.pc.apply_m_inverse_transpose(p)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    pub gamma: f64,
    pub epsilon: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Weight of the dual term in the Lyapunov function.
    pub mu: f64,
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
            ("dt", self.dt),
            ("t_end", self.t_end),
            ("mu", self.mu),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Heuristic explicit-stability check `dt (γσ̄² + ε) ≤ ½`.
    pub fn is_step_stable(&self, sigma_hi: f64) -> bool {
        self.dt * (self.gamma * sigma_hi * sigma_hi + self.epsilon) <= 0.5
    }
}

/// `(u̇, q̇)` at `(u, q)`.
pub fn flow_rhs(
    sys: &impl FlowSystem,
    u: &SpaceTimeVec,
    q: &SpaceTimeVec,
    gamma: f64,
    epsilon: f64,
) -> Result<(SpaceTimeVec, SpaceTimeVec)> {
    let fhat = sys.fhat(u)?;
    let mut dq = q.clone();
    dq.scale(-epsilon);
    dq.axpy(1.0, &fhat);

    let mut w = q.clone();
    w.scale(1.0 - gamma * epsilon);
    w.axpy(gamma, &fhat);
    let mut du = sys.dfhat_transpose(u, &w)?;
    du.scale(-1.0);
    Ok((du, dq))
}

/// `½‖F̂(u)‖² + (μ/2)‖q‖²`.
pub fn lyapunov_value(
    sys: &impl FlowSystem,
    u: &SpaceTimeVec,
    q: &SpaceTimeVec,
    mu: f64,
) -> Result<f64> {
    let f = sys.fhat(u)?;
    Ok(0.5 * f.dot(&f) + 0.5 * mu * q.dot(q))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowPoint {
    pub t: f64,
    pub fhat_l2: f64,
    pub lyapunov: f64,
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub points: Vec<FlowPoint>,
    pub u: SpaceTimeVec,
    pub q: SpaceTimeVec,
}

impl FlowTrajectory {
    /// CSV with columns `t,fhat_l2,lyapunov`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "fhat_l2", "lyapunov"])?;
        for p in &self.points {
            out.write_record([
                format_f64(p.t),
                format_f64(p.fhat_l2),
                format_f64(p.lyapunov),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Exponential rate `r` in `‖F̂(t)‖ ≈ C e^{-rt}`, by least squares on the
    /// final 80% of the trajectory.
    pub fn fitted_rate(&self) -> f64 {
        let skip = self.points.len() / 5;
        let pts: Vec<(f64, f64)> = self.points[skip..]
            .iter()
            .filter(|p| p.fhat_l2 > 0.0)
            .map(|p| (p.t, p.fhat_l2.ln()))
            .collect();
        -least_squares_slope(&pts)
    }
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Fixed-step RK4 from `(u0, q0)` to `t_end`, logging every step.
pub fn integrate_flow(
    sys: &impl FlowSystem,
    fp: &FlowParams,
    u0: SpaceTimeVec,
    q0: SpaceTimeVec,
) -> Result<FlowTrajectory> {
    fp.validate()?;
    let steps = (fp.t_end / fp.dt).round().max(1.0) as usize;
    let dt = fp.t_end / steps as f64;
    let (g, e) = (fp.gamma, fp.epsilon);
    let mut u = u0;
    let mut q = q0;
    let record = |t: f64, u: &SpaceTimeVec, q: &SpaceTimeVec| -> Result<FlowPoint> {
        let f = sys.fhat(u)?;
        let fhat_l2 = f.norm2();
        if !fhat_l2.is_finite() {
            return Err(Error::Divergence {
                iterations: (t / dt).round() as usize,
            });
        }
        Ok(FlowPoint {
            t,
            fhat_l2,
            lyapunov: 0.5 * fhat_l2 * fhat_l2 + 0.5 * fp.mu * q.dot(q),
        })
    };
    let mut points = Vec::with_capacity(steps + 1);
    points.push(record(0.0, &u, &q)?);

    let shifted = |base: &SpaceTimeVec, k: &SpaceTimeVec, h: f64| {
        let mut out = base.clone();
        out.axpy(h, k);
        out
    };
    for s in 1..=steps {
        let (k1u, k1q) = flow_rhs(sys, &u, &q, g, e)?;
        let (k2u, k2q) = flow_rhs(
            sys,
            &shifted(&u, &k1u, 0.5 * dt),
            &shifted(&q, &k1q, 0.5 * dt),
            g,
            e,
        )?;
        let (k3u, k3q) = flow_rhs(
            sys,
            &shifted(&u, &k2u, 0.5 * dt),
            &shifted(&q, &k2q, 0.5 * dt),
            g,
            e,
        )?;
        let (k4u, k4q) = flow_rhs(sys, &shifted(&u, &k3u, dt), &shifted(&q, &k3q, dt), g, e)?;
        for (k, w) in [(&k1u, 1.0), (&k2u, 2.0), (&k3u, 2.0), (&k4u, 1.0)] {
            u.axpy(dt * w / 6.0, k);
        }
        for (k, w) in [(&k1q, 1.0), (&k2q, 2.0), (&k3q, 2.0), (&k4q, 1.0)] {
            q.axpy(dt * w / 6.0, k);
        }
        points.push(record(s as f64 * dt, &u, &q)?);
    }
    Ok(FlowTrajectory { points, u, q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equations::{build_model, initial_condition, ModelKind, ModelParams};
    use crate::spectral::Field;
    use crate::theory;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `F̂(u) = u - target`, so `DF̂ = I`.
    struct Shift {
        target: SpaceTimeVec,
    }

    impl FlowSystem for Shift {
        fn fhat(&self, u: &SpaceTimeVec) -> Result<SpaceTimeVec> {
            let mut out = u.clone();
            out.axpy(-1.0, &self.target);
            Ok(out)
        }
        fn dfhat_transpose(&self, _: &SpaceTimeVec, p: &SpaceTimeVec) -> Result<SpaceTimeVec> {
            Ok(p.clone())
        }
    }

    fn scalar(v: f64) -> SpaceTimeVec {
        SpaceTimeVec::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn scalar_surrogate_rhs() {
        let sys = Shift {
            target: scalar(0.3),
        };
        let (du, dq) = flow_rhs(&sys, &scalar(1.0), &scalar(0.5), 1.0, 1.0).unwrap();
        assert!((dq.data()[0] - (-0.5 + 0.7)).abs() < 1e-15);
        assert!((du.data()[0] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_is_flat() {
        let sys = Shift {
            target: scalar(0.3),
        };
        let fp = FlowParams {
            gamma: 0.5,
            epsilon: 1.0,
            dt: 0.1,
            t_end: 1.0,
            mu: 1.0,
        };
        let traj = integrate_flow(&sys, &fp, scalar(0.3), scalar(0.0)).unwrap();
        assert!(traj
            .points
            .iter()
            .all(|p| p.fhat_l2 == 0.0 && p.lyapunov == 0.0));
        assert_eq!(traj.points.len(), 11);
    }

    #[test]
    fn lyapunov_arithmetic() {
        let sys = Shift {
            target: SpaceTimeVec::from_vec(1, 2, vec![0.0, 0.0]).unwrap(),
        };
        let u = SpaceTimeVec::from_vec(1, 2, vec![2.0, 0.0]).unwrap();
        let q = SpaceTimeVec::from_vec(1, 2, vec![0.0, 2.0]).unwrap();
        assert_eq!(lyapunov_value(&sys, &u, &q, 1.0).unwrap(), 4.0);
    }

    #[test]
    fn rhs_matches_dense_oracle() {
        let n = 4;
        let k = n * n;
        let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, n)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rand_vec = || -> Vec<f64> { (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let u0 = Field::from_vec(n, rand_vec()).unwrap();
        let h = 0.002;
        let prob = WindowProblem::new(&m, u0.clone(), 1, h).unwrap();
        let pc = Precond::for_problem(&prob).unwrap();
        let u = SpaceTimeVec::from_vec(n, 1, rand_vec()).unwrap();
        let q = SpaceTimeVec::from_vec(n, 1, rand_vec()).unwrap();
        let (gamma, eps) = (0.7, 1.3);
        let (du, dq) = flow_rhs(
            &WindowFlow {
                prob: &prob,
                pc: &pc,
            },
            &u,
            &q,
            gamma,
            eps,
        )
        .unwrap();

        let mut lap = DMatrix::<f64>::zeros(k, k);
        let mut e = vec![0.0; k];
        let mut col = vec![0.0; k];
        for j in 0..k {
            e[j] = 1.0;
            m.l_op.apply_into(&e, &mut col);
            e[j] = 0.0;
            lap.set_column(j, &DVector::from_column_slice(&col));
        }
        let id = DMatrix::<f64>::identity(k, k);
        let mm = &id + &lap * (h * m.a) + &id * (h * m.b * 2.0);
        let mi = mm.try_inverse().unwrap();
        let uv = DVector::from_column_slice(u.data());
        let qv = DVector::from_column_slice(q.data());
        let f = &uv - DVector::from_column_slice(u0.values())
            + (&lap * &uv * m.a + uv.map(|x| x * x * x - x) * m.b) * h;
        let fhat = &mi * f;
        let jac =
            &id + (&lap * m.a + DMatrix::from_diagonal(&uv.map(|x| 3.0 * x * x - 1.0)) * m.b) * h;
        let want_dq = -&qv * eps + &fhat;
        let want_du =
            -(jac.transpose() * mi.transpose() * (&qv * (1.0 - gamma * eps) + &fhat * gamma));
        for i in 0..k {
            assert!((dq.data()[i] - want_dq[i]).abs() < 1e-12);
            assert!((du.data()[i] - want_du[i]).abs() < 1e-12);
        }
    }

    fn ac_setup(n: usize) -> (crate::equations::RDModel, Field) {
        let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, n)).unwrap();
        let u0 = initial_condition(ModelKind::AllenCahn, &m.grid);
        (m, u0)
    }

    #[test]
    fn rk4_is_fourth_order() {
        let (m, u0) = ac_setup(8);
        let prob = WindowProblem::new(&m, u0.clone(), 2, 0.001).unwrap();
        let pc = Precond::for_problem(&prob).unwrap();
        let sys = WindowFlow {
            prob: &prob,
            pc: &pc,
        };
        let terminal = |dt: f64| {
            let fp = FlowParams {
                gamma: 0.6,
                epsilon: 1.2,
                dt,
                t_end: 2.0,
                mu: 1.0,
            };
            let start = SpaceTimeVec::replicate(&u0, 2);
            integrate_flow(&sys, &fp, start, prob.zeros()).unwrap().u
        };
        let a = terminal(0.1);
        let b = terminal(0.05);
        let c = terminal(0.025);
        let mut d1 = a.clone();
        d1.axpy(-1.0, &b);
        let mut d2 = b.clone();
        d2.axpy(-1.0, &c);
        let ratio = d1.norm2() / d2.norm2();
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn lyapunov_decays_at_predicted_rate() {
        let (m, u0) = ac_setup(16);
        let (h, n_t) = (0.001, 3);
        let prob = WindowProblem::new(&m, u0.clone(), n_t, h).unwrap();
        let pc = Precond::for_problem(&prob).unwrap();
        let theta = theory::zeta_theta(&m, h, n_t).unwrap().theta;
        let (lo, hi, kappa) = theory::sigma_kappa(theta).unwrap();
        let (gamma, epsilon) = theory::special_params(kappa).unwrap();
        let mu = 1.0;
        let beta = theory::varphi_beta(mu, gamma, epsilon, lo, hi).unwrap();
        assert!(beta.conditions_hold && beta.beta > 0.0);
        let fp = FlowParams {
            gamma,
            epsilon,
            dt: 0.05,
            t_end: 20.0,
            mu,
        };
        assert!(fp.is_step_stable(hi));
        let traj = integrate_flow(
            &WindowFlow {
                prob: &prob,
                pc: &pc,
            },
            &fp,
            SpaceTimeVec::replicate(&u0, n_t),
            prob.zeros(),
        )
        .unwrap();
        let i0 = traj.points[0].lyapunov;
        for w in traj.points.windows(2) {
            assert!(w[1].lyapunov <= w[0].lyapunov * (1.0 + 1e-12));
        }
        for p in &traj.points {
            let bound = (-2.0 * beta.beta * p.t / mu.max(1.0)).exp() * i0;
            assert!(
                p.lyapunov <= 1.05 * bound,
                "t={} I={} bound={}",
                p.t,
                p.lyapunov,
                bound
            );
        }
        assert!(traj.fitted_rate() >= theory::rate_bound(theta));
    }

    #[test]
    fn csv_layout() {
        let traj = FlowTrajectory {
            points: vec![FlowPoint {
                t: 0.0,
                fhat_l2: 1.0,
                lyapunov: 0.5,
            }],
            u: scalar(0.0),
            q: scalar(0.0),
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,fhat_l2,lyapunov\n0.0,1.0,0.5\n"
        );
    }
}
