//! Periodic square grids, scalar fields on them, and operators that are
//! diagonal in the 2-D discrete Fourier basis.
//!
//! Fourier convention: the forward transform is unnormalized and the inverse
//! carries the `1/n²` factor, so `ifft(fft(u)) = u`. Mode `(k, l)` with
//! `k, l ∈ {0, …, n-1}` is stored at `k * n + l`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Geometry of the periodic square `[0, length]²` sampled with `n` points per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2D {
    n: usize,
    length: f64,
}

impl Grid2D {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs n_x >= 2, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        Ok(Self { n, length })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Spatial step `h_x = L / n_x`.
    #[inline]
    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Physical coordinate of grid index `i` along either axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }
}

/// One real scalar field on a [`Grid2D`], row-major; entry `(i, j)` sits at
/// `(i * h, j * h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    n: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self {
            n,
            values: vec![c; n * n],
        }
    }

    pub fn from_vec(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: values.len(),
            });
        }
        Ok(Self { n, values })
    }

    /// Samples `f(x, y)` at every grid node.
    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            let x = grid.coord(i);
            for j in 0..n {
                values.push(f(x, grid.coord(j)));
            }
        }
        Self { n, values }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            n: self.n,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_n(&self, n: usize) -> Result<()> {
        if self.n != n {
            return Err(Error::GridMismatch {
                expected: n,
                found: self.n,
            });
        }
        Ok(())
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Cached 1-D plans for one transform length. Plans are immutable and
/// shared across threads.
struct FftPlan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
}

fn plan_for(n: usize) -> Arc<FftPlan> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<FftPlan>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            let mut real = RealFftPlanner::new();
            Arc::new(FftPlan {
                n,
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
                r2c: real.plan_fft_forward(n),
                c2r: real.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// Per-thread transform buffers, reused across calls so large grids do not
/// pay for a fresh allocation on every application.
#[derive(Default)]
struct Workspace {
    rows: Vec<Complex64>,
    spec_a: Vec<Complex64>,
    spec_b: Vec<Complex64>,
    line: Vec<f64>,
    scratch: Vec<Complex64>,
}

thread_local! {
    static WORK: std::cell::RefCell<Workspace> = std::cell::RefCell::new(Workspace::default());
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

impl FftPlan {
    /// Number of stored columns of a real signal's half spectrum.
    fn half(&self) -> usize {
        self.n / 2 + 1
    }

    fn with_workspace<R>(&self, f: impl FnOnce(&mut Workspace) -> R) -> R {
        let (n, m) = (self.n, self.half());
        WORK.with(|cell| {
            let mut ws = cell.borrow_mut();
            ws.rows.resize(n * m, zero());
            ws.spec_a.resize(n * m, zero());
            ws.spec_b.resize(n * m, zero());
            ws.line.resize(n, 0.0);
            let scratch = [
                self.forward.get_inplace_scratch_len(),
                self.inverse.get_inplace_scratch_len(),
                self.r2c.get_scratch_len(),
                self.c2r.get_scratch_len(),
            ]
            .into_iter()
            .max()
            .unwrap_or(0);
            ws.scratch.resize(scratch, zero());
            f(&mut ws)
        })
    }

    /// Half spectrum of a real field. Mode `(k, l)`, `l ≤ n/2`, lands at
    /// `l * n + k`.
    fn forward_real(
        &self,
        x: &[f64],
        rows: &mut [Complex64],
        line: &mut [f64],
        spec: &mut [Complex64],
        scratch: &mut [Complex64],
    ) {
        let (n, m) = (self.n, self.half());
        for (row_in, row_out) in x.chunks_exact(n).zip(rows.chunks_exact_mut(m)) {
            line.copy_from_slice(row_in);
            self.r2c
                .process_with_scratch(line, row_out, scratch)
                .expect("buffer sizes match the plan");
        }
        transpose::transpose(rows, spec, m, n);
        self.forward.process_with_scratch(spec, scratch);
    }

    /// Inverse of [`forward_real`](Self::forward_real) without the `1/n²`
    /// factor. Consumes `spec`.
    fn inverse_real(
        &self,
        spec: &mut [Complex64],
        rows: &mut [Complex64],
        out: &mut [f64],
        scratch: &mut [Complex64],
    ) {
        let (n, m) = (self.n, self.half());
        self.inverse.process_with_scratch(spec, scratch);
        transpose::transpose(spec, rows, n, m);
        for (row, row_out) in rows.chunks_exact_mut(m).zip(out.chunks_exact_mut(n)) {
            // Round-off leaves tiny imaginary parts on the self-conjugate bins.
            row[0].im = 0.0;
            if n % 2 == 0 {
                row[m - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(row, row_out, scratch)
                .expect("buffer sizes match the plan");
        }
    }

    /// `out = A x` for the half-spectrum table `ma`.
    fn filter_real(&self, x: &[f64], out: &mut [f64], ma: &[f64]) {
        let scale = 1.0 / (self.n * self.n) as f64;
        self.with_workspace(|ws| {
            let Workspace {
                rows,
                spec_a,
                line,
                scratch,
                ..
            } = ws;
            self.forward_real(x, rows, line, spec_a, scratch);
            for (z, &w) in spec_a.iter_mut().zip(ma) {
                *z *= w * scale;
            }
            self.inverse_real(spec_a, rows, out, scratch);
        });
    }

    /// `out = A x + B y`.
    fn filter_real_sum(&self, x: &[f64], y: &[f64], out: &mut [f64], ma: &[f64], mb: &[f64]) {
        let scale = 1.0 / (self.n * self.n) as f64;
        self.with_workspace(|ws| {
            let Workspace {
                rows,
                spec_a,
                spec_b,
                line,
                scratch,
            } = ws;
            self.forward_real(x, rows, line, spec_a, scratch);
            self.forward_real(y, rows, line, spec_b, scratch);
            for (((za, zb), &wa), &wb) in spec_a.iter_mut().zip(spec_b.iter()).zip(ma).zip(mb) {
                *za = (*za * wa + *zb * wb) * scale;
            }
            self.inverse_real(spec_a, rows, out, scratch);
        });
    }

    /// `out_a = A x`, `out_b = B x`.
    fn filter_real_dual(
        &self,
        x: &[f64],
        out_a: &mut [f64],
        out_b: &mut [f64],
        ma: &[f64],
        mb: &[f64],
    ) {
        let scale = 1.0 / (self.n * self.n) as f64;
        self.with_workspace(|ws| {
            let Workspace {
                rows,
                spec_a,
                spec_b,
                line,
                scratch,
            } = ws;
            self.forward_real(x, rows, line, spec_a, scratch);
            for ((za, zb), (&wa, &wb)) in spec_a
                .iter_mut()
                .zip(spec_b.iter_mut())
                .zip(ma.iter().zip(mb))
            {
                *zb = *za * (wb * scale);
                *za *= wa * scale;
            }
            self.inverse_real(spec_a, rows, out_a, scratch);
            self.inverse_real(spec_b, rows, out_b, scratch);
        });
    }

    /// Full complex 2-D filter on `buf` with the table in full spectrum
    /// order (`l * n + k`). Keeps the imaginary part, so it can report how
    /// far a table is from even symmetry.
    fn filter_complex(&self, buf: &mut [Complex64], multipliers: &[f64]) {
        let n = self.n;
        let scale = 1.0 / (n * n) as f64;
        let scratch_len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        let mut scratch = vec![zero(); scratch_len];
        let mut tmp = vec![zero(); n * n];
        self.forward.process_with_scratch(buf, &mut scratch);
        transpose::transpose(buf, &mut tmp, n, n);
        self.forward.process_with_scratch(&mut tmp, &mut scratch);
        for (z, &w) in tmp.iter_mut().zip(multipliers) {
            *z *= w * scale;
        }
        self.inverse.process_with_scratch(&mut tmp, &mut scratch);
        transpose::transpose(&tmp, buf, n, n);
        self.inverse.process_with_scratch(buf, &mut scratch);
    }
}

/// A real multiplier per Fourier mode, representing an operator that is
/// diagonal in the periodic Fourier basis.
#[derive(Clone)]
pub struct SpectralDiag {
    n: usize,
    multipliers: Vec<f64>,
    /// The same table in spectrum order (`l * n + k`).
    spectrum_order: Vec<f64>,
    /// Even part `(m(k, l) + m(-k, -l))/2` on the half spectrum `l ≤ n/2`,
    /// in spectrum order. Real inputs only ever see this part.
    half_order: Vec<f64>,
    identity: bool,
    plan: Arc<FftPlan>,
}

impl std::fmt::Debug for SpectralDiag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralDiag")
            .field("n", &self.n)
            .field("multipliers", &self.multipliers)
            .finish()
    }
}

impl PartialEq for SpectralDiag {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.multipliers == other.multipliers
    }
}

impl SpectralDiag {
    pub fn from_multipliers(n: usize, multipliers: Vec<f64>) -> Result<Self> {
        if multipliers.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: multipliers.len(),
            });
        }
        if let Some(pos) = multipliers.iter().position(|m| !m.is_finite()) {
            return Err(Error::PoleAtMode {
                k: pos / n,
                l: pos % n,
            });
        }
        Ok(Self::assemble(n, multipliers, plan_for(n)))
    }

    fn assemble(n: usize, multipliers: Vec<f64>, plan: Arc<FftPlan>) -> Self {
        let mut spectrum_order = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                spectrum_order[l * n + k] = multipliers[k * n + l];
            }
        }
        let half = n / 2 + 1;
        let mut half_order = vec![0.0; half * n];
        for l in 0..half {
            for k in 0..n {
                let mirror = ((n - k) % n) * n + (n - l) % n;
                half_order[l * n + k] = 0.5 * (multipliers[k * n + l] + multipliers[mirror]);
            }
        }
        let identity = multipliers.iter().all(|&m| m == 1.0);
        Self {
            n,
            multipliers,
            spectrum_order,
            half_order,
            identity,
            plan,
        }
    }

    /// The operator with every multiplier equal to `value`.
    pub fn constant(n: usize, value: f64) -> Self {
        Self::assemble(n, vec![value; n * n], plan_for(n))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(n, 1.0)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    #[inline]
    pub fn multiplier(&self, k: usize, l: usize) -> f64 {
        self.multipliers[k * self.n + l]
    }

    /// Composes a scalar function onto every multiplier. Fails if `g` is
    /// undefined (non-finite) at any mode.
    pub fn map(&self, g: impl Fn(f64) -> f64) -> Result<SpectralDiag> {
        let mut out = Vec::with_capacity(self.multipliers.len());
        for (idx, &m) in self.multipliers.iter().enumerate() {
            let v = g(m);
            if !v.is_finite() {
                return Err(Error::PoleAtMode {
                    k: idx / self.n,
                    l: idx % self.n,
                });
            }
            out.push(v);
        }
        Ok(Self::assemble(self.n, out, self.plan.clone()))
    }

    /// Pointwise combination of two symbols on the same grid.
    pub fn zip_with(
        &self,
        other: &SpectralDiag,
        g: impl Fn(f64, f64) -> f64,
    ) -> Result<SpectralDiag> {
        if self.n != other.n {
            return Err(Error::GridMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let raw: Vec<f64> = self
            .multipliers
            .iter()
            .zip(&other.multipliers)
            .map(|(&a, &b)| g(a, b))
            .collect();
        SpectralDiag::from_multipliers(self.n, raw)
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn min(&self) -> f64 {
        self.multipliers
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.multipliers
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Applies the operator: `ifft(multipliers ⊙ fft(field))`, imaginary
    /// residue discarded.
    pub fn apply(&self, field: &Field) -> Result<Field> {
        field.check_n(self.n)?;
        let mut out = Field::zeros(self.n);
        self.apply_into(field.values(), out.values_mut());
        Ok(out)
    }

    /// Slice form of [`apply`](Self::apply). Both slices must hold `n²` values.
    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        if self.is_identity() {
            out.copy_from_slice(input);
            return;
        }
        self.plan.filter_real(input, out, &self.half_order);
    }

    /// `out = self·x + other·y` sharing one inverse transform.
    pub fn apply_sum_into(&self, x: &[f64], other: &SpectralDiag, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(self.n, other.n);
        self.plan
            .filter_real_sum(x, y, out, &self.half_order, &other.half_order);
    }

    /// `out_self = self·x` and `out_other = other·x` sharing one forward
    /// transform.
    pub fn apply_dual_into(
        &self,
        other: &SpectralDiag,
        x: &[f64],
        out_self: &mut [f64],
        out_other: &mut [f64],
    ) {
        debug_assert_eq!(self.n, other.n);
        self.plan
            .filter_real_dual(x, out_self, out_other, &self.half_order, &other.half_order);
    }

    /// Applies the operator to two fields.
    pub fn apply_pair_into(&self, a: &[f64], b: &[f64], out_a: &mut [f64], out_b: &mut [f64]) {
        self.apply_into(a, out_a);
        self.apply_into(b, out_b);
    }

    /// Applies the operator and returns the largest imaginary residue seen
    /// before it was discarded.
    pub fn apply_with_residue(&self, field: &Field) -> Result<(Field, f64)> {
        field.check_n(self.n)?;
        let mut buf: Vec<Complex64> = field
            .values()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.plan.filter_complex(&mut buf, &self.spectrum_order);
        let residue = buf.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
        let values = buf.iter().map(|z| z.re).collect();
        Ok((Field { n: self.n, values }, residue))
    }
}

/// Symbol of `-Δ_h` with periodic boundary conditions:
/// `(4/h²)[sin²(πk/n) + sin²(πl/n)]`.
pub fn build_neg_laplacian(grid: &Grid2D) -> SpectralDiag {
    let n = grid.n();
    let h = grid.h();
    let axis: Vec<f64> = (0..n)
        .map(|k| {
            let s = (PI * k as f64 / n as f64).sin();
            4.0 * s * s / (h * h)
        })
        .collect();
    let mut m = Vec::with_capacity(n * n);
    for k in 0..n {
        for l in 0..n {
            m.push(axis[k] + axis[l]);
        }
    }
    SpectralDiag::assemble(n, m, plan_for(n))
}

/// `apply_symbol(op, g, field)`: applies the operator whose multipliers are
/// `g(op)`.
pub fn apply_symbol(op: &SpectralDiag, g: impl Fn(f64) -> f64, field: &Field) -> Result<Field> {
    op.map(g)?.apply(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_vec(n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn stencil_neg_laplacian(u: &Field, h: f64) -> Field {
        let n = u.n();
        let mut out = Field::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let c = u.get(i, j);
                let s = u.get((i + 1) % n, j)
                    + u.get((i + n - 1) % n, j)
                    + u.get(i, (j + 1) % n)
                    + u.get(i, (j + n - 1) % n);
                out.set(i, j, (4.0 * c - s) / (h * h));
            }
        }
        out
    }

    #[test]
    fn neg_laplacian_multipliers() {
        let g = Grid2D::new(4, 2.0 * PI).unwrap();
        let lap = build_neg_laplacian(&g);
        assert_eq!(lap.multiplier(0, 0), 0.0);
        assert!((lap.multiplier(1, 0) - 16.0 / (PI * PI) * 0.5).abs() < 1e-12);
        assert!((lap.multiplier(1, 0) - 0.810_569_469_138_702).abs() < 1e-12);
        assert!(lap.multipliers().iter().all(|&m| m >= 0.0));

        let g2 = Grid2D::new(2, 2.0).unwrap();
        let lap2 = build_neg_laplacian(&g2);
        assert!((lap2.multiplier(1, 0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(Grid2D::new(1, 1.0).is_err());
        assert!(Grid2D::new(4, 0.0).is_err());
        assert!(Grid2D::new(4, f64::NAN).is_err());
    }

    #[test]
    fn constant_in_kernel() {
        let g = Grid2D::new(8, 1.0).unwrap();
        let lap = build_neg_laplacian(&g);
        let out = lap.apply(&Field::constant(8, 3.5)).unwrap();
        assert!(out.max_abs() < 1e-10);
    }

    #[test]
    fn cosine_is_eigenfunction() {
        let n = 16;
        let g = Grid2D::new(n, 2.0 * PI).unwrap();
        let h = g.h();
        let u = Field::from_fn(&g, |x, _| x.cos());
        let lap = build_neg_laplacian(&g);
        let got = lap.apply(&u).unwrap();
        let lambda1 = 2.0 * (1.0 - h.cos()) / (h * h);
        let dense = stencil_neg_laplacian(&u, h);
        for idx in 0..n * n {
            assert!((got.values()[idx] - lambda1 * u.values()[idx]).abs() < 1e-10);
            assert!((dense.values()[idx] - lambda1 * u.values()[idx]).abs() < 1e-10);
        }
    }

    #[test]
    fn shifted_inverse_keeps_constants() {
        let g = Grid2D::new(8, 3.0).unwrap();
        let lap = build_neg_laplacian(&g);
        let out = apply_symbol(&lap, |l| 1.0 / (1.0 + l), &Field::constant(8, -2.0)).unwrap();
        for v in out.values() {
            assert!((v + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pole_reported() {
        let g = Grid2D::new(4, 1.0).unwrap();
        let lap = build_neg_laplacian(&g);
        let err = apply_symbol(&lap, |l| 1.0 / l, &Field::constant(4, 1.0)).unwrap_err();
        assert!(matches!(err, Error::PoleAtMode { k: 0, l: 0 }));
    }

    #[test]
    fn matches_stencil_on_random_fields() {
        for (n, seed) in [(4, 1), (8, 2), (16, 3)] {
            let g = Grid2D::new(n, 1.7).unwrap();
            let u = random_field(n, seed);
            let spec = build_neg_laplacian(&g).apply(&u).unwrap();
            let dense = stencil_neg_laplacian(&u, g.h());
            for (a, b) in spec.values().iter().zip(dense.values()) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn inverse_round_trip_and_real_output() {
        let n = 16;
        let g = Grid2D::new(n, 2.0 * PI).unwrap();
        let lap = build_neg_laplacian(&g);
        let u = random_field(n, 9);
        let fwd = apply_symbol(&lap, |l| 1.0 + 0.3 * l, &u).unwrap();
        let back = apply_symbol(&lap, |l| 1.0 / (1.0 + 0.3 * l), &fwd).unwrap();
        for (a, b) in back.values().iter().zip(u.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        let (_, residue) = lap
            .map(|l| 1.0 / (1.0 + l))
            .unwrap()
            .apply_with_residue(&u)
            .unwrap();
        assert!(residue <= 1e-12, "imaginary residue {residue}");
    }

    #[test]
    fn self_adjoint() {
        let n = 8;
        let g = Grid2D::new(n, 1.0).unwrap();
        let op = build_neg_laplacian(&g).map(|l| l * l + 2.0 * l).unwrap();
        let u = random_field(n, 4);
        let v = random_field(n, 5);
        let lhs = op.apply(&u).unwrap().dot(&v);
        let rhs = u.dot(&op.apply(&v).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn pair_apply_matches_single() {
        let n = 10;
        let g = Grid2D::new(n, 2.0).unwrap();
        let op = build_neg_laplacian(&g).map(|l| 1.0 / (1.0 + l)).unwrap();
        let a = random_field(n, 11);
        let b = random_field(n, 12);
        let mut oa = vec![0.0; n * n];
        let mut ob = vec![0.0; n * n];
        op.apply_pair_into(a.values(), b.values(), &mut oa, &mut ob);
        let sa = op.apply(&a).unwrap();
        let sb = op.apply(&b).unwrap();
        for i in 0..n * n {
            assert!((oa[i] - sa.values()[i]).abs() < 1e-12);
            assert!((ob[i] - sb.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_applies_match_separate() {
        for n in [6, 7, 16] {
            let g = Grid2D::new(n, 2.0).unwrap();
            let lap = build_neg_laplacian(&g);
            let a = lap.map(|l| 1.0 / (1.0 + l)).unwrap();
            let b = lap.map(|l| l * (0.5 + l)).unwrap();
            let x = random_field(n, 21);
            let y = random_field(n, 22);
            let ax = a.apply(&x).unwrap();
            let by = b.apply(&y).unwrap();
            let bx = b.apply(&x).unwrap();
            // Both outputs share one transform, so round-off scales with the larger.
            let scale = 1.0 + by.max_abs().max(bx.max_abs());
            let mut sum = vec![0.0; n * n];
            a.apply_sum_into(x.values(), &b, y.values(), &mut sum);
            let mut o1 = vec![0.0; n * n];
            let mut o2 = vec![0.0; n * n];
            a.apply_dual_into(&b, x.values(), &mut o1, &mut o2);
            for i in 0..n * n {
                let want = ax.values()[i] + by.values()[i];
                assert!((sum[i] - want).abs() < 1e-12 * scale, "n={n} sum");
                assert!(
                    (o1[i] - ax.values()[i]).abs() < 1e-12 * scale,
                    "n={n} dual a"
                );
                assert!(
                    (o2[i] - bx.values()[i]).abs() < 1e-12 * scale,
                    "n={n} dual b"
                );
            }
        }
    }

    #[test]
    fn identity_round_trip_odd_size() {
        let n = 15;
        let op = SpectralDiag::constant(n, 2.0);
        let u = random_field(n, 13);
        let out = op.apply(&u).unwrap();
        for (a, b) in out.values().iter().zip(u.values()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let op = SpectralDiag::identity(4);
        assert!(matches!(
            op.apply(&Field::zeros(5)),
            Err(Error::GridMismatch {
                expected: 4,
                found: 5
            })
        ));
    }
}
