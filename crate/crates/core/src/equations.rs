//! Reaction-diffusion models of the form `u_t = -G(a L u + b f(u))` on a
//! periodic square, discretized in space.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::spectral::{build_neg_laplacian, Field, Grid2D, SpectralDiag};

/// Reaction term `f`, its potential `W` (with `W' = f`) and the constants
/// used by the preconditioner and the convergence theory.
#[derive(Clone, Debug)]
pub struct ReactionSpec {
    pub f: fn(f64) -> f64,
    pub f_prime: fn(f64) -> f64,
    pub w: fn(f64) -> f64,
    /// Linearization constant: `J_f = c I`.
    pub c: f64,
    /// Lipschitz bound of `R(u) = f(u) - c u` on the working range.
    pub lip_r: f64,
    /// Lipschitz constant of the non-convex part `φ` in `f = V' + φ`.
    pub lip_phi: f64,
    pub equilibria: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReactionValues {
    pub f: f64,
    pub f_prime: f64,
    pub w: f64,
    pub r: f64,
}

impl ReactionSpec {
    /// `W(u) = (u² - 1)² / 4`, `f = u³ - u`, linearized at `u = ±1` (`c = 2`).
    pub fn double_well() -> Self {
        Self {
            f: |u| u * u * u - u,
            f_prime: |u| 3.0 * u * u - 1.0,
            w: |u| 0.25 * (u * u - 1.0) * (u * u - 1.0),
            c: 2.0,
            lip_r: 3.0,
            lip_phi: 2.0,
            equilibria: vec![-1.0, 1.0],
        }
    }

    /// Remainder after removing the linear part: `R(u) = f(u) - c u`.
    #[inline]
    pub fn remainder(&self, u: f64) -> f64 {
        (self.f)(u) - self.c * u
    }
}

pub fn reaction_eval(spec: &ReactionSpec, u: f64) -> ReactionValues {
    ReactionValues {
        f: (spec.f)(u),
        f_prime: (spec.f_prime)(u),
        w: (spec.w)(u),
        r: spec.remainder(u),
    }
}

/// Variable-coefficient operator `-∇·(σ∇·)` discretized with σ sampled at
/// half-integer nodes: `sigma_x[i, j] = σ((i+½)h, jh)` and
/// `sigma_y[i, j] = σ(ih, (j+½)h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilityStencil {
    n: usize,
    h: f64,
    sigma_x: Vec<f64>,
    sigma_y: Vec<f64>,
}

impl MobilityStencil {
    pub fn from_fn(grid: &Grid2D, sigma: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let h = grid.h();
        let mut sigma_x = Vec::with_capacity(n * n);
        let mut sigma_y = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                sigma_x.push(sigma((i as f64 + 0.5) * h, j as f64 * h));
                sigma_y.push(sigma(i as f64 * h, (j as f64 + 0.5) * h));
            }
        }
        Self {
            n,
            h,
            sigma_x,
            sigma_y,
        }
    }

    pub fn uniform(grid: &Grid2D, sigma: f64) -> Self {
        Self::from_fn(grid, |_, _| sigma)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// `σ_{i+½, j}`; index `i` may be `n` or wrap.
    #[inline]
    pub fn sigma_x(&self, i: usize, j: usize) -> f64 {
        self.sigma_x[(i % self.n) * self.n + (j % self.n)]
    }

    #[inline]
    pub fn sigma_y(&self, i: usize, j: usize) -> f64 {
        self.sigma_y[(i % self.n) * self.n + (j % self.n)]
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let inv_h2 = 1.0 / (self.h * self.h);
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for j in 0..n {
                let jp = (j + 1) % n;
                let jm = (j + n - 1) % n;
                let c = u[i * n + j];
                let flux = self.sigma_x[i * n + j] * (u[ip * n + j] - c)
                    - self.sigma_x[im * n + j] * (c - u[im * n + j])
                    + self.sigma_y[i * n + j] * (u[i * n + jp] - c)
                    - self.sigma_y[i * n + jm] * (c - u[i * n + jm]);
                out[i * n + j] = -flux * inv_h2;
            }
        }
    }

    /// Mean of σ over the stencil's half-node samples.
    pub fn mean_sigma(&self) -> f64 {
        let total: f64 = self.sigma_x.iter().chain(&self.sigma_y).sum();
        total / (2 * self.n * self.n) as f64
    }
}

/// A self-adjoint, non-negative definite linear operator on fields.
#[derive(Clone, Debug, PartialEq)]
pub enum LinearOp {
    Spectral(SpectralDiag),
    Stencil(MobilityStencil),
}

impl LinearOp {
    pub fn n(&self) -> usize {
        match self {
            LinearOp::Spectral(s) => s.n(),
            LinearOp::Stencil(s) => s.n(),
        }
    }

    pub fn as_spectral(&self) -> Option<&SpectralDiag> {
        match self {
            LinearOp::Spectral(s) => Some(s),
            LinearOp::Stencil(_) => None,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, LinearOp::Spectral(s) if s.is_identity())
    }

    pub fn apply(&self, field: &Field) -> Result<Field> {
        field.check_n(self.n())?;
        let mut out = Field::zeros(self.n());
        self.apply_into(field.values(), out.values_mut());
        Ok(out)
    }

    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        match self {
            LinearOp::Spectral(s) => s.apply_into(input, out),
            LinearOp::Stencil(s) => s.apply_into(input, out),
        }
    }
}

/// `apply_operator(op, field)`.
pub fn apply_operator(op: &LinearOp, field: &Field) -> Result<Field> {
    op.apply(field)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    AllenCahn,
    CahnHilliard,
    VarCoeff,
    SixthOrder,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::AllenCahn,
        ModelKind::CahnHilliard,
        ModelKind::VarCoeff,
        ModelKind::SixthOrder,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::AllenCahn => "allen_cahn",
            ModelKind::CahnHilliard => "cahn_hilliard",
            ModelKind::VarCoeff => "var_coeff",
            ModelKind::SixthOrder => "sixth_order",
        }
    }

    /// Edge length of the square domain the benchmark is posed on.
    pub fn domain_length(&self) -> f64 {
        match self {
            ModelKind::AllenCahn => 0.5,
            _ => 2.0 * PI,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "allen_cahn" | "ac" => Ok(ModelKind::AllenCahn),
            "cahn_hilliard" | "ch" => Ok(ModelKind::CahnHilliard),
            "var_coeff" | "varcoeff" => Ok(ModelKind::VarCoeff),
            "sixth_order" | "6th_order" => Ok(ModelKind::SixthOrder),
            _ => Err(Error::UnknownModel(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub eps0: f64,
    /// Mobility amplitude, only read by [`ModelKind::VarCoeff`].
    pub mu: f64,
    pub n: usize,
}

impl ModelParams {
    pub fn new(eps0: f64, n: usize) -> Self {
        Self { eps0, mu: 5.0, n }
    }
}

/// How `G_h` relates to `L_h`; selects the closed-form theory bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorClass {
    /// `G_h = I`.
    AllenCahnType,
    /// `G_h = L_h`.
    CahnHilliardType,
    General,
}

#[derive(Clone, Debug)]
pub struct RDModel {
    pub kind: Option<ModelKind>,
    pub name: String,
    pub grid: Grid2D,
    pub a: f64,
    pub b: f64,
    pub g_op: LinearOp,
    pub l_op: LinearOp,
    /// Spectral stand-in for `l_op`, used only by the preconditioner and the theory.
    pub l_precond: SpectralDiag,
    pub reaction: ReactionSpec,
}

impl RDModel {
    /// Checks the structural invariants shared by every model.
    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "coefficients must be non-negative (a = {}, b = {})",
                self.a, self.b
            )));
        }
        let n = self.grid.n();
        for len in [self.g_op.n(), self.l_op.n(), self.l_precond.n()] {
            if len != n {
                return Err(Error::GridMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if let (LinearOp::Spectral(l), p) = (&self.l_op, &self.l_precond) {
            if l != p {
                return Err(Error::InvalidParameter(
                    "spectral L_h must coincide with its preconditioner symbol".into(),
                ));
            }
        }
        Ok(())
    }

    /// `G_h` as a Fourier symbol; the preconditioner needs it diagonalizable.
    pub fn g_symbol(&self) -> Result<&SpectralDiag> {
        self.g_op.as_spectral().ok_or_else(|| {
            Error::Unsupported("G_h must be a Fourier-diagonal operator".to_string())
        })
    }

    pub fn uses_surrogate(&self) -> bool {
        matches!(self.l_op, LinearOp::Stencil(_))
    }

    pub fn operator_class(&self) -> OperatorClass {
        match self.g_op.as_spectral() {
            Some(g) if g.is_identity() => OperatorClass::AllenCahnType,
            Some(g) if *g == self.l_precond => OperatorClass::CahnHilliardType,
            _ => OperatorClass::General,
        }
    }

    /// The 5-point (possibly variable-coefficient) stencil realizing `L_h`,
    /// when it has one.
    pub fn diffusion_stencil(&self) -> Option<MobilityStencil> {
        match &self.l_op {
            LinearOp::Stencil(s) => Some(s.clone()),
            LinearOp::Spectral(s) => {
                let lap = build_neg_laplacian(&self.grid);
                let scale = lap.max();
                let same = s
                    .multipliers()
                    .iter()
                    .zip(lap.multipliers())
                    .all(|(a, b)| (a - b).abs() <= 1e-12 * scale);
                same.then(|| MobilityStencil::uniform(&self.grid, 1.0))
            }
        }
    }

    /// `f` applied entrywise.
    pub fn reaction_into(&self, u: &[f64], out: &mut [f64]) {
        let f = self.reaction.f;
        for (o, &v) in out.iter_mut().zip(u) {
            *o = f(v);
        }
    }
}

/// Builds one of the four benchmark models.
pub fn build_model(kind: ModelKind, params: ModelParams) -> Result<RDModel> {
    let eps0 = params.eps0;
    if !(eps0.is_finite() && eps0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps0 must be positive, got {eps0}"
        )));
    }
    let grid = Grid2D::new(params.n, kind.domain_length())?;
    let n = grid.n();
    let lap = build_neg_laplacian(&grid);
    let reaction = ReactionSpec::double_well();

    let (a, b, g_op, l_op, l_precond) = match kind {
        ModelKind::AllenCahn => (
            eps0,
            1.0 / eps0,
            LinearOp::Spectral(SpectralDiag::identity(n)),
            LinearOp::Spectral(lap.clone()),
            lap,
        ),
        ModelKind::CahnHilliard => (
            eps0 * eps0,
            1.0,
            LinearOp::Spectral(lap.clone()),
            LinearOp::Spectral(lap.clone()),
            lap,
        ),
        ModelKind::VarCoeff => {
            let mu = params.mu;
            if !(mu.is_finite() && mu >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "mu must be >= 0, got {mu}"
                )));
            }
            let stencil = MobilityStencil::from_fn(&grid, |x, y| {
                1.0 + 0.5 * mu * (x.sin().powi(2) + y.sin().powi(2))
            });
            let sigma_bar = 1.0 + 0.5 * mu;
            let surrogate = lap.map(|l| sigma_bar * l)?;
            (
                eps0,
                1.0 / eps0,
                LinearOp::Spectral(SpectralDiag::identity(n)),
                LinearOp::Stencil(stencil),
                surrogate,
            )
        }
        ModelKind::SixthOrder => {
            let e2 = eps0 * eps0;
            let w2 = (reaction.f_prime)(1.0);
            let g = lap.map(|l| l * (e2 * l + w2 - e2))?;
            if g.min() < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "eps0 = {eps0} gives a G_h with negative modes"
                )));
            }
            let l = lap.map(|l| e2 * l)?;
            (
                1.0,
                1.0,
                LinearOp::Spectral(g),
                LinearOp::Spectral(l.clone()),
                l,
            )
        }
    };

    let model = RDModel {
        kind: Some(kind),
        name: kind.name().to_string(),
        grid,
        a,
        b,
        g_op,
        l_op,
        l_precond,
        reaction,
    };
    model.validate()?;
    Ok(model)
}

/// The initial state each benchmark starts from.
pub fn initial_condition(kind: ModelKind, grid: &Grid2D) -> Field {
    match kind {
        ModelKind::AllenCahn => Field::from_fn(grid, |x, y| {
            let d = ((x - 0.25).powi(2) + (y - 0.25).powi(2)).sqrt();
            if d < 0.2 {
                1.0
            } else {
                -1.0
            }
        }),
        ModelKind::CahnHilliard => {
            const CIRCLES: [(f64, f64, f64); 7] = [
                (PI / 2.0, PI / 2.0, PI / 5.0),
                (PI / 4.0, 3.0 * PI / 4.0, 2.0 * PI / 15.0),
                (PI / 2.0, 5.0 * PI / 4.0, PI / 15.0),
                (PI, PI / 4.0, PI / 10.0),
                (3.0 * PI / 2.0, PI / 4.0, PI / 10.0),
                (PI, PI, PI / 4.0),
                (3.0 * PI / 2.0, 3.0 * PI / 2.0, PI / 4.0),
            ];
            let mollifier = |s: f64| {
                if s < 0.0 {
                    2.0 * (-0.01 / (s * s)).exp()
                } else {
                    0.0
                }
            };
            Field::from_fn(grid, |x, y| {
                -1.0 + CIRCLES
                    .iter()
                    .map(|&(cx, cy, r)| mollifier(((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r))
                    .sum::<f64>()
            })
        }
        ModelKind::VarCoeff => {
            Field::from_fn(grid, |x, y| 0.5 * ((4.0 * x).cos() + (4.0 * y).cos()))
        }
        ModelKind::SixthOrder => Field::from_fn(grid, |x, y| {
            2.0 * (x.sin() + y.sin() - 2.0).exp() + 2.2 * (-x.sin() - y.sin() - 2.0).exp() - 1.0
        }),
    }
}
