//! Closed-form convergence theory: contraction constants, singular-value
//! bounds, flow decay rates, step-size selection and existence limits.

use crate::equations::{OperatorClass, RDModel};
use crate::error::{Error, Result};

/// `√2 - 1`, the largest contraction constant the discrete theory admits.
pub const THETA_DISCRETE_MAX: f64 = std::f64::consts::SQRT_2 - 1.0;

fn invalid(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZetaTheta {
    pub zeta: f64,
    pub theta: f64,
    /// Closed-form upper bound on `theta` for Allen-Cahn and Cahn-Hilliard
    /// type models; equals `theta` otherwise.
    pub theta_tilde: f64,
    /// Set when the diffusion operator is replaced by its spectral surrogate.
    pub surrogate: bool,
}

/// `ζ = max_k g_k / (1 + h_t(a g_k l_k + b c g_k))` and `θ = b T Lip(R) ζ`.
pub fn zeta_theta(model: &RDModel, h_t: f64, n_t: usize) -> Result<ZetaTheta> {
    if !(h_t.is_finite() && h_t > 0.0) || n_t == 0 {
        return Err(invalid(format!(
            "need h_t > 0 and n_t >= 1 (h_t = {h_t}, n_t = {n_t})"
        )));
    }
    let g = model.g_symbol()?;
    let (a, b, c) = (model.a, model.b, model.reaction.c);
    let zeta = g
        .multipliers()
        .iter()
        .zip(model.l_precond.multipliers())
        .map(|(&g, &l)| g / (1.0 + h_t * (a * g * l + b * c * g)))
        .fold(0.0_f64, f64::max);
    let t = n_t as f64 * h_t;
    let lip = model.reaction.lip_r;
    let theta = b * t * lip * zeta;
    let theta_tilde = match model.operator_class() {
        OperatorClass::AllenCahnType => b * lip * t,
        OperatorClass::CahnHilliardType => b * lip * t / (2.0 * (a * h_t).sqrt() + b * c * h_t),
        OperatorClass::General => theta,
    };
    Ok(ZetaTheta {
        zeta,
        theta,
        theta_tilde,
        surrogate: model.uses_surrogate(),
    })
}

/// `(1 - θ, 1 + θ, (1 + θ)/(1 - θ))`.
pub fn sigma_kappa(theta: f64) -> Result<(f64, f64, f64)> {
    if !(0.0..1.0).contains(&theta) {
        return Err(invalid(format!("theta must lie in [0, 1), got {theta}")));
    }
    Ok((1.0 - theta, 1.0 + theta, (1.0 + theta) / (1.0 - theta)))
}

/// `φ(z) = ½(γz + με - √((γz - με)² + (μ - (1 - γε)z)²))`.
pub fn varphi(mu: f64, gamma: f64, epsilon: f64, z: f64) -> f64 {
    let gz = gamma * z;
    let me = mu * epsilon;
    let cross = mu - (1.0 - gamma * epsilon) * z;
    0.5 * (gz + me - ((gz - me).powi(2) + cross * cross).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaReport {
    /// `min φ` over `[σ_lo², σ_hi²]`; may be non-positive when the
    /// parameter conditions fail.
    pub beta: f64,
    pub argmin: f64,
    /// Whether the sufficient conditions on `(μ, γ, ε)` hold.
    pub conditions_hold: bool,
}

/// Minimizes `φ` over `[σ_lo², σ_hi²]` by dense sampling followed by
/// golden-section refinement around the best sample.
pub fn varphi_beta(
    mu: f64,
    gamma: f64,
    epsilon: f64,
    sigma_lo: f64,
    sigma_hi: f64,
) -> Result<BetaReport> {
    if !(sigma_lo > 0.0 && sigma_lo <= sigma_hi && sigma_hi.is_finite()) {
        return Err(invalid(format!("empty interval [{sigma_lo}, {sigma_hi}]")));
    }
    if !(mu > 0.0 && gamma > 0.0 && epsilon > 0.0) {
        return Err(invalid("mu, gamma and epsilon must be positive".into()));
    }
    let phi = |z: f64| varphi(mu, gamma, epsilon, z);
    let (lo, hi) = (sigma_lo * sigma_lo, sigma_hi * sigma_hi);

    const SAMPLES: usize = 10_000;
    let step = (hi - lo) / SAMPLES as f64;
    let (mut best_i, mut best) = (0, phi(lo));
    for i in 1..=SAMPLES {
        let v = phi(lo + step * i as f64);
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let mut argmin = lo + step * best_i as f64;
    if step > 0.0 {
        let mut a = (argmin - step).max(lo);
        let mut b = (argmin + step).min(hi);
        let inv_golden = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_golden * (b - a);
        let mut d = a + inv_golden * (b - a);
        while b - a > 1e-10 {
            if phi(c) < phi(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - inv_golden * (b - a);
            d = a + inv_golden * (b - a);
        }
        let mid = 0.5 * (a + b);
        if phi(mid) < best {
            best = phi(mid);
            argmin = mid;
        }
    }

    let rm = mu.sqrt();
    let ge = gamma * epsilon;
    let conditions_hold = 1.0 / sigma_lo - 1.0 / sigma_hi < 2.0 / rm
        && (1.0 - rm / sigma_hi)
            .powi(2)
            .max((1.0 - rm / sigma_lo).powi(2))
            < ge
        && ge < (1.0 + rm / sigma_hi).powi(2);
    Ok(BetaReport {
        beta: best,
        argmin,
        conditions_hold,
    })
}

/// `γ = (1 - δ)/κ`, `ε = (1 - δ)κ`, valid for `|δ| < 1/κ`.
pub fn continuous_params(kappa: f64, delta: f64) -> Result<(f64, f64)> {
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(invalid(format!(
            "kappa must be finite and >= 1, got {kappa}"
        )));
    }
    if delta.abs() >= 1.0 / kappa {
        return Err(invalid(format!(
            "|delta| must be below 1/kappa = {}",
            1.0 / kappa
        )));
    }
    Ok(((1.0 - delta) / kappa, (1.0 - delta) * kappa))
}

/// Decay rate of `‖F̂‖` guaranteed for the parameters of
/// [`continuous_params`]: `(1 - κ|δ|)(3 - δ) min{σ_lo², 1} / (8κ)`.
pub fn continuous_rate_bound(kappa: f64, delta: f64, sigma_lo: f64) -> f64 {
    (1.0 - kappa * delta.abs()) * (3.0 - delta) * (sigma_lo * sigma_lo).min(1.0) / (8.0 * kappa)
}

/// `ε = κ - ½`, `γ = 1/κ - 1/(2κ²)`; returns `(γ, ε)`.
pub fn special_params(kappa: f64) -> Result<(f64, f64)> {
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(invalid(format!(
            "kappa must be finite and >= 1, got {kappa}"
        )));
    }
    Ok((1.0 / kappa - 0.5 / (kappa * kappa), kappa - 0.5))
}

/// Flow decay rate `(5/32)(1 - θ)³/(1 + θ)` for the parameters of [`special_params`].
pub fn rate_bound(theta: f64) -> f64 {
    5.0 / 32.0 * (1.0 - theta).powi(3) / (1.0 + theta)
}

/// Best `γ` (and the resulting rate `λ = γσ_n²`) under `γε = 1` for
/// extreme singular values `σ₁ ≥ σ_n > 0`.
pub fn optimal_gamma_unit(sigma1: f64, sigma_n: f64) -> Result<(f64, f64)> {
    if !(sigma_n > 0.0 && sigma1 >= sigma_n && sigma1.is_finite()) {
        return Err(invalid(format!(
            "need sigma1 >= sigma_n > 0 (got {sigma1}, {sigma_n})"
        )));
    }
    let (s1, sn) = (sigma1 * sigma1, sigma_n * sigma_n);
    let r = (s1 - sn) / (s1 + sn);
    let gamma = (-0.5 * r + (0.25 * r * r + 4.0 * sn).sqrt()) / (2.0 * sn);
    Ok((gamma, gamma * sn))
}

/// `Ψ(θ) = 1 - 2θ - θ²`.
pub fn psi(theta: f64) -> f64 {
    1.0 - 2.0 * theta - theta * theta
}

/// `Ω(v, ϱ, θ) = |1 - v - ϱ| + (|1 - v| + ϱ)θ`.
pub fn omega_gap(v: f64, rho: f64, theta: f64) -> f64 {
    (1.0 - v - rho).abs() + ((1.0 - v).abs() + rho) * theta
}

/// Step-size configuration of the discrete convergence theorem, in terms of
/// `γ̃ = ωτ_P`, `ϱ = τ_P/τ_U` and `ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneralChoice {
    pub gamma_tilde: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl GeneralChoice {
    /// `ϱγ̃εΨ(θ) - ¼Ω(γ̃ε, ϱ, θ)²`; the theorem needs it positive.
    pub fn margin(&self, theta: f64) -> f64 {
        let v = self.gamma_tilde * self.epsilon;
        self.rho * v * psi(theta) - 0.25 * omega_gap(v, self.rho, theta).powi(2)
    }

    fn spread(&self, theta: f64) -> f64 {
        let v = self.gamma_tilde * self.epsilon;
        (self.gamma_tilde * (1.0 + theta))
            .powi(2)
            .max((1.0 - v).powi(2))
    }

    /// Dual step `τ_P` prescribed by the theorem.
    pub fn tau_p(&self, theta: f64) -> f64 {
        self.margin(theta)
            / (4.0
                * (self.gamma_tilde + self.rho * self.epsilon)
                * (1.0 + theta).powi(2)
                * self.spread(theta))
    }

    /// Rate constant `Φ`.
    pub fn phi(&self, theta: f64) -> f64 {
        self.margin(theta).powi(2)
            / (2.0
                * (1.0 + theta).powi(2)
                * self.spread(theta)
                * (self.gamma_tilde + self.rho * self.epsilon).powi(2))
    }
}

/// Per-iteration contraction factor `(Φ + √(Φ² + 4))/2` of the Lyapunov sum.
pub fn contraction_factor(phi: f64) -> f64 {
    0.5 * (phi + (phi * phi + 4.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteParams {
    pub u: f64,
    pub tau_p: f64,
    pub tau_u: f64,
    pub omega: f64,
    pub epsilon: f64,
    pub phi: f64,
}

/// The one-parameter family of step sizes with guaranteed linear
/// convergence, for `θ ∈ [0, √2 - 1)` and `u ∈ (θ²/(1 - 2θ), 1)`.
pub fn discrete_hyperparams(theta: f64, u: f64) -> Result<DiscreteParams> {
    if !(0.0..THETA_DISCRETE_MAX).contains(&theta) {
        return Err(invalid(format!("theta must lie in [0, √2-1), got {theta}")));
    }
    let u_min = theta * theta / (1.0 - 2.0 * theta);
    if !(u > u_min && u < 1.0) {
        return Err(invalid(format!("u must lie in ({u_min}, 1), got {u}")));
    }
    let s = (u * (1.0 - u)).sqrt();
    let t1 = (1.0 + theta).powi(2);
    let tau_p = (u * (1.0 - 2.0 * theta) - theta * theta) / (8.0 * s * t1 * (u * t1).max(1.0 - u));
    let tau_u = tau_p / (1.0 - u);
    let omega = s / tau_u;
    let epsilon = (u / (1.0 - u)).sqrt();
    let phi = (1.0 - 2.0 * theta).powi(2) / (8.0 * t1)
        * (1.0 - theta * theta / ((1.0 - 2.0 * theta) * u)).powi(2)
        / t1.max((1.0 - u) / u);
    Ok(DiscreteParams {
        u,
        tau_p,
        tau_u,
        omega,
        epsilon,
        phi,
    })
}

/// Largest `h_t` for which the implicit step provably has a unique solution
/// (`f = V' + φ` with convex `V`, `Lip(φ)` from the reaction).
pub fn existence_ht_max(model: &RDModel) -> Result<f64> {
    let (a, b) = (model.a, model.b);
    if b == 0.0 {
        return Ok(f64::INFINITY);
    }
    let lip = model.reaction.lip_phi;
    Ok(match model.operator_class() {
        OperatorClass::AllenCahnType => 1.0 / (lip * b),
        // min over modes of 1/(h λ) + a λ is ≥ 2√(a/h), giving h < 4a/(b Lip)².
        // The smaller a²/b² form is kept for a ≤ 1.
        OperatorClass::CahnHilliardType => {
            let exact = 4.0 * a / (b * lip).powi(2);
            exact.min(a * a / (b * b))
        }
        OperatorClass::General => {
            let g = model.g_symbol()?;
            g.multipliers()
                .iter()
                .zip(model.l_precond.multipliers())
                .filter(|(&g, &l)| g > 0.0 && a * l < b * lip)
                .map(|(&g, &l)| 1.0 / (g * (b * lip - a * l)))
                .fold(f64::INFINITY, f64::min)
        }
    })
}

/// Everything the theory says about one window configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryReport {
    pub zeta: f64,
    pub theta: f64,
    pub theta_tilde: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// Infinite when `θ ≥ 1`.
    pub kappa: f64,
    /// `None` when `θ ≥ 1`.
    pub flow_rate_bound: Option<f64>,
    pub ht_max_existence: f64,
    pub surrogate: bool,
}

pub fn theory_report(model: &RDModel, h_t: f64, n_t: usize) -> Result<TheoryReport> {
    let zt = zeta_theta(model, h_t, n_t)?;
    let (sigma_lo, sigma_hi) = (1.0 - zt.theta, 1.0 + zt.theta);
    let (kappa, flow_rate_bound) = match sigma_kappa(zt.theta) {
        Ok((_, _, k)) => (k, Some(rate_bound(zt.theta))),
        Err(_) => (f64::INFINITY, None),
    };
    Ok(TheoryReport {
        zeta: zt.zeta,
        theta: zt.theta,
        theta_tilde: zt.theta_tilde,
        sigma_lo,
        sigma_hi,
        kappa,
        flow_rate_bound,
        ht_max_existence: existence_ht_max(model)?,
        surrogate: zt.surrogate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equations::{build_model, ModelKind, ModelParams};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zeta_for_allen_cahn_type() {
        let mut m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, 16)).unwrap();
        m.b = 10.0;
        let zt = zeta_theta(&m, 0.001, 1).unwrap();
        assert!(close(zt.zeta, 1.0 / 1.02, 1e-12), "{}", zt.zeta);
        m.reaction.c = 20.0;
        let zt = zeta_theta(&m, 0.001, 1).unwrap();
        assert!(close(zt.zeta, 1.0 / 1.2, 1e-12));
    }

    #[test]
    fn theta_tilde_table_values() {
        let ac = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, 32)).unwrap();
        let zt = zeta_theta(&ac, 0.001, 7).unwrap();
        assert!(close(zt.theta_tilde, 0.21, 1e-12));
        assert!(zt.theta <= zt.theta_tilde + 1e-15);

        let ch = build_model(ModelKind::CahnHilliard, ModelParams::new(0.1, 32)).unwrap();
        let zt = zeta_theta(&ch, 5e-4, 1).unwrap();
        assert!(close(zt.theta_tilde, 0.2741, 1e-3), "{}", zt.theta_tilde);
        assert!(close(
            zt.theta_tilde,
            1.5e-3 / (2.0 * (0.01f64 * 5e-4).sqrt() + 1e-3),
            1e-12
        ));
    }

    #[test]
    fn zeta_bounds_by_class() {
        for n in [8, 32, 64] {
            for eps in [0.01, 0.1, 1.0] {
                let ac = build_model(ModelKind::AllenCahn, ModelParams::new(eps, n)).unwrap();
                assert!(zeta_theta(&ac, 0.003, 2).unwrap().zeta <= 1.0);
                let ch = build_model(ModelKind::CahnHilliard, ModelParams::new(eps, n)).unwrap();
                for h in [1e-4, 1e-3, 1e-2] {
                    let z = zeta_theta(&ch, h, 1).unwrap().zeta;
                    let bound = 1.0 / (2.0 * (ch.a * h).sqrt() + ch.b * ch.reaction.c * h);
                    assert!(z <= bound * (1.0 + 1e-12), "n={n} eps={eps} h={h}");
                }
            }
        }
        let vc = build_model(ModelKind::VarCoeff, ModelParams::new(0.1, 8)).unwrap();
        assert!(zeta_theta(&vc, 0.01, 1).unwrap().surrogate);
    }

    #[test]
    fn sigma_kappa_values() {
        assert_eq!(sigma_kappa(0.0).unwrap(), (1.0, 1.0, 1.0));
        let (lo, hi, k) = sigma_kappa(0.21).unwrap();
        assert!(close(lo, 0.79, 1e-15) && close(hi, 1.21, 1e-15));
        assert!(close(k, 1.21 / 0.79, 1e-15));
        assert!(sigma_kappa(0.999).unwrap().2 > 1000.0);
        assert!(sigma_kappa(1.0).is_err());
    }

    #[test]
    fn varphi_values() {
        assert!(close(varphi(1.0, 1.0, 1.0, 1.0), 0.5, 1e-15));
        assert!(close(
            varphi(1.0, 1.0, 1.0, 4.0),
            0.5 * (5.0 - 10f64.sqrt()),
            1e-15
        ));
        let b = varphi_beta(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(close(b.beta, 0.5, 1e-15));
        assert!(varphi_beta(1.0, 1.0, 1.0, 1.2, 1.0).is_err());
    }

    #[test]
    fn beta_is_interval_minimum() {
        let (mu, gamma, eps) = (0.8, 0.7, 1.3);
        let r = varphi_beta(mu, gamma, eps, 0.6, 1.5).unwrap();
        let brute = (0..=200_000)
            .map(|i| varphi(mu, gamma, eps, 0.36 + (2.25 - 0.36) * i as f64 / 200_000.0))
            .fold(f64::INFINITY, f64::min);
        assert!(r.beta <= brute + 1e-12);
        assert!(r.beta >= brute - 1e-9);
    }

    #[test]
    fn parameter_families() {
        assert_eq!(continuous_params(1.0, 0.0).unwrap(), (1.0, 1.0));
        assert!(continuous_params(2.0, 0.5).is_err());
        assert!(close(rate_bound(0.0), 0.15625, 1e-15));
        let (g, l) = optimal_gamma_unit(1.0, 1.0).unwrap();
        assert!(close(g, 1.0, 1e-15) && close(l, 1.0, 1e-15));
        let (g, e) = special_params(1.0).unwrap();
        assert!(close(g, 0.5, 1e-15) && close(e, 0.5, 1e-15));
        assert!(optimal_gamma_unit(0.5, 1.0).is_err());
    }

    #[test]
    fn discrete_table_rows() {
        let p = discrete_hyperparams(0.21, 0.5).unwrap();
        for (got, want) in [
            (p.tau_p, 0.0574),
            (p.tau_u, 0.1147),
            (p.omega, 4.3587),
            (p.epsilon, 1.0),
            (p.phi, 0.0141),
        ] {
            assert!(close(got, want, 1e-3), "{got} vs {want}");
        }
        assert!(close(p.tau_p, 0.057_36, 1e-5));
        assert!(close(p.phi, 0.014_104, 1e-6));

        let p = discrete_hyperparams(0.15, 0.5).unwrap();
        for (got, want) in [
            (p.tau_p, 0.0936),
            (p.tau_u, 0.1872),
            (p.omega, 2.6702),
            (p.epsilon, 1.0),
            (p.phi, 0.0307),
        ] {
            assert!(close(got, want, 1e-3), "{got} vs {want}");
        }
        assert!(discrete_hyperparams(0.5, 0.5).is_err());
        assert!(discrete_hyperparams(0.3, 0.1).is_err());
    }

    #[test]
    fn degenerate_reaction() {
        assert_eq!(psi(0.0), 1.0);
        assert_eq!(omega_gap(0.3, 0.7, 0.0), 0.0);
    }

    #[test]
    fn existence_limits() {
        let ac = build_model(ModelKind::AllenCahn, ModelParams::new(0.01, 16)).unwrap();
        assert!(close(existence_ht_max(&ac).unwrap(), 0.005, 1e-15));
        let ch = build_model(ModelKind::CahnHilliard, ModelParams::new(0.1, 16)).unwrap();
        assert!(close(existence_ht_max(&ch).unwrap(), 1e-4, 1e-15));
        let mut free = ac.clone();
        free.b = 0.0;
        assert_eq!(existence_ht_max(&free).unwrap(), f64::INFINITY);
        let six = build_model(ModelKind::SixthOrder, ModelParams::new(0.18, 16)).unwrap();
        let h = existence_ht_max(&six).unwrap();
        assert!(h > 0.0 && h.is_finite());
    }

    #[test]
    fn report_consistency() {
        let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, 16)).unwrap();
        let r = theory_report(&m, 0.001, 7).unwrap();
        assert!(r.sigma_lo <= r.sigma_hi);
        assert!(close(r.kappa, r.sigma_hi / r.sigma_lo, 1e-12));
        let big = theory_report(&m, 0.1, 7).unwrap();
        assert_eq!(big.kappa, f64::INFINITY);
        assert!(big.flow_rate_bound.is_none());
    }

    proptest! {
        #[test]
        fn corollary_choice_satisfies_theorem(theta in 0.0f64..0.41, frac in 0.001f64..0.999) {
            prop_assume!(theta < THETA_DISCRETE_MAX);
            let u_min = theta * theta / (1.0 - 2.0 * theta);
            let u = u_min + frac * (1.0 - u_min);
            prop_assume!(u > u_min && u < 1.0);
            let p = discrete_hyperparams(theta, u).unwrap();
            let choice = GeneralChoice {
                gamma_tilde: (u * (1.0 - u)).sqrt(),
                rho: 1.0 - u,
                epsilon: p.epsilon,
            };
            prop_assert!(choice.margin(theta) > 0.0);
            prop_assert!(p.tau_p > 0.0 && p.phi > 0.0);
            prop_assert!((choice.tau_p(theta) - p.tau_p).abs() <= 1e-12 * p.tau_p.max(1e-300));
            prop_assert!((choice.phi(theta) - p.phi).abs() <= 1e-10 * p.phi.max(1e-300));
            // The closed-form family divides by τ_U rather than τ_P.
            prop_assert!((choice.gamma_tilde - p.omega * p.tau_u).abs() < 1e-12);
            prop_assert!((p.tau_p / p.tau_u - choice.rho).abs() < 1e-12);
        }

        #[test]
        fn phi_decreases_in_theta(t1 in 0.0f64..0.3, t2 in 0.0f64..0.3) {
            prop_assume!((t1 - t2).abs() > 1e-9);
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = discrete_hyperparams(lo, 0.5).unwrap().phi;
            let b = discrete_hyperparams(hi, 0.5).unwrap().phi;
            prop_assert!(a > b);
        }
    }
}
