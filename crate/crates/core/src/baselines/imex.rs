use super::{KrylovParams, ShiftedSolve};
use crate::equations::RDModel;
use crate::error::{Error, Result};
use crate::spectral::Field;

/// One linearly implicit step: `(I + a h G L) u⁺ = u - b h G f(u)`.
pub fn imex_step(model: &RDModel, u_t: &Field, h_t: f64, kp: KrylovParams) -> Result<Field> {
    if !(h_t.is_finite() && h_t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "h_t must be positive, got {h_t}"
        )));
    }
    u_t.check_n(model.grid.n())?;
    let solver = ShiftedSolve::new(model, h_t, 0.0, kp)?;
    let m = u_t.values().len();
    let mut fu = vec![0.0; m];
    model.reaction_into(u_t.values(), &mut fu);
    let mut gfu = vec![0.0; m];
    model.g_op.apply_into(&fu, &mut gfu);
    let bh = model.b * h_t;
    let rhs: Vec<f64> = u_t
        .values()
        .iter()
        .zip(&gfu)
        .map(|(u, g)| u - bh * g)
        .collect();
    let mut out = vec![0.0; m];
    solver.solve(&rhs, &mut out)?;
    Field::from_vec(u_t.n(), out)
}
