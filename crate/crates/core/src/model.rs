//! Problem data for the master equation
//!
//! ```text
//! ∂ₜU + (F(x,U)·∇ₓ)U + λ(U − Sᵀ U(Sx + e)) = G(x,U)
//! ```
//!
//! with `F` the drift of the population, `G` the running cost, and common
//! noise jumping the whole population by `T(x) = Sx + e` at rate `λ`.
//! Time is counted backward from the end of the game.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridBox, VectorField};
use crate::linalg::{self, dot, mat_vec_into, sample_in_box, seeded_rng};

/// Monotonicity tolerance for fields evaluated in closed form.
pub const TOL_MONO_EXACT: f64 = 1e-8;
/// Monotonicity tolerance for fields interpolated from a grid.
pub const TOL_MONO_GRID: f64 = 1e-4;

/// `(x, p) ↦ Mx·x + Mp·p + c`
#[derive(Clone, Debug, PartialEq)]
pub struct AffineField {
    pub mx: DMatrix<f64>,
    pub mp: DMatrix<f64>,
    pub c: Vec<f64>,
}

impl AffineField {
    pub fn new(mx: DMatrix<f64>, mp: DMatrix<f64>, c: Vec<f64>) -> Result<Self> {
        let d = c.len();
        for (what, m) in [("Mx", &mx), ("Mp", &mp)] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::Config(format!(
                    "affine field: {what} is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self { mx, mp, c })
    }

    /// `(x, p) ↦ a·x + b·p` in dimension `d`.
    pub fn scalar(d: usize, a: f64, b: f64) -> Self {
        Self {
            mx: DMatrix::identity(d, d) * a,
            mp: DMatrix::identity(d, d) * b,
            c: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }
}

/// Closed-form evaluators that are not affine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Registered {
    /// `0`
    Zero,
    /// `(min(x₁, 1)·p₁, p₂, …, p_d)`: a drift whose first component vanishes
    /// linearly at `{x₁ = 0}`.
    HalfspaceLq,
    /// `p + ½ tanh(p)` componentwise; 1-monotone and 3/2-Lipschitz in `p`.
    SoftDrift,
}

impl Registered {
    pub const ALL: [Registered; 3] = [Self::Zero, Self::HalfspaceLq, Self::SoftDrift];

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown registered evaluator `{name}`")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::HalfspaceLq => "halfspace_lq",
            Self::SoftDrift => "soft_drift",
        }
    }

    fn eval_into(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        match self {
            Self::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Self::HalfspaceLq => {
                out.copy_from_slice(p);
                out[0] = x[0].min(1.0) * p[0];
            }
            Self::SoftDrift => {
                for (o, pi) in out.iter_mut().zip(p) {
                    *o = pi + 0.5 * pi.tanh();
                }
            }
        }
    }
}

/// One of the two couplings `F`, `G : ℝ^{2d} → ℝ^d`.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldSpec {
    Affine(AffineField),
    Registered(Registered),
}

impl FieldSpec {
    pub fn registered(name: &str) -> Result<Self> {
        Registered::from_name(name).map(Self::Registered)
    }

    pub fn zero() -> Self {
        Self::Registered(Registered::Zero)
    }

    /// Dimension fixed by the representation, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Affine(a) => Some(a.dim()),
            Self::Registered(_) => None,
        }
    }

    pub fn eval_into(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        match self {
            Self::Affine(a) => {
                let mut tmp = vec![0.0; out.len()];
                mat_vec_into(&a.mx, x, out);
                mat_vec_into(&a.mp, p, &mut tmp);
                for ((o, t), c) in out.iter_mut().zip(&tmp).zip(&a.c) {
                    *o += t + c;
                }
            }
            Self::Registered(r) => r.eval_into(x, p, out),
        }
    }
}

/// Evaluates `f(x, p)`.
pub fn eval_field(f: &FieldSpec, x: &[f64], p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    f.eval_into(x, p, &mut out);
    out
}

/// The common-noise map `T(x) = Sx + e`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineNoiseMap {
    s: DMatrix<f64>,
    e: Vec<f64>,
    norm_s: f64,
}

impl AffineNoiseMap {
    pub fn new(s: DMatrix<f64>, e: Vec<f64>) -> Result<Self> {
        let d = e.len();
        if s.nrows() != d || s.ncols() != d {
            return Err(Error::Config(format!(
                "noise map: S is {}x{}, expected {d}x{d}",
                s.nrows(),
                s.ncols()
            )));
        }
        if s.iter().chain(&e).any(|v| !v.is_finite()) {
            return Err(Error::Config("noise map has non-finite entries".into()));
        }
        let norm_s = linalg::op_norm(&s);
        Ok(Self { s, e, norm_s })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d), vec![0.0; d]).expect("identity is valid")
    }

    pub fn dim(&self) -> usize {
        self.e.len()
    }

    /// `DT = S`
    pub fn derivative(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn offset(&self) -> &[f64] {
        &self.e
    }

    pub fn norm_s(&self) -> f64 {
        self.norm_s
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = linalg::mat_vec(&self.s, x);
        y.iter_mut().zip(&self.e).for_each(|(y, e)| *y += e);
        y
    }

    /// `(DT)* v = Sᵀ v`
    pub fn adjoint_apply(&self, v: &[f64]) -> Vec<f64> {
        linalg::mat_t_vec(&self.s, v)
    }

    pub fn is_identity(&self) -> bool {
        self.e.iter().all(|&v| v == 0.0) && self.s == DMatrix::identity(self.dim(), self.dim())
    }
}

/// Declared Lipschitz constants of the partial dependencies of `F` and `G`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LipschitzConstants {
    pub fx: f64,
    pub fp: f64,
    pub gx: f64,
    pub gp: f64,
}

/// Full problem data.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub f: FieldSpec,
    pub g: FieldSpec,
    pub lambda: f64,
    pub noise: AffineNoiseMap,
    pub x0: Vec<f64>,
    /// Declared monotonicity modulus.
    pub alpha: f64,
    pub lip: LipschitzConstants,
}

impl ModelSpec {
    /// Noiseless model with target `x0`. Lipschitz constants of affine
    /// couplings are filled in from operator norms; registered couplings
    /// start at zero and must be declared with [`ModelSpec::with_lipschitz`].
    pub fn new(f: FieldSpec, g: FieldSpec, x0: Vec<f64>) -> Result<Self> {
        let d = x0.len();
        let lip = LipschitzConstants {
            fx: affine_norm(&f, |a| &a.mx),
            fp: affine_norm(&f, |a| &a.mp),
            gx: affine_norm(&g, |a| &a.mx),
            gp: affine_norm(&g, |a| &a.mp),
        };
        let m = Self {
            f,
            g,
            lambda: 0.0,
            noise: AffineNoiseMap::identity(d.max(1)),
            x0,
            alpha: 0.0,
            lip,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_noise(mut self, lambda: f64, noise: AffineNoiseMap) -> Result<Self> {
        self.lambda = lambda;
        self.noise = noise;
        self.validate()?;
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn with_lipschitz(mut self, lip: LipschitzConstants) -> Result<Self> {
        self.lip = lip;
        self.validate()?;
        Ok(self)
    }

    pub fn with_target(mut self, x0: Vec<f64>) -> Result<Self> {
        self.x0 = x0;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.x0.len();
        if d == 0 {
            return Err(Error::Config("model needs d >= 1".into()));
        }
        for (name, f) in [("F", &self.f), ("G", &self.g)] {
            if let Some(fd) = f.dim() {
                if fd != d {
                    return Err(Error::Config(format!(
                        "{name} has dimension {fd}, model has d = {d}"
                    )));
                }
            }
        }
        if self.noise.dim() != d {
            return Err(Error::Config(format!(
                "noise map has dimension {}, model has d = {d}",
                self.noise.dim()
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        let l = &self.lip;
        if [l.fx, l.fp, l.gx, l.gp]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("Lipschitz constants must be finite and >= 0".into()));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("x0 must be finite".into()));
        }
        Ok(())
    }
}

fn affine_norm(f: &FieldSpec, pick: impl Fn(&AffineField) -> &DMatrix<f64>) -> f64 {
    match f {
        FieldSpec::Affine(a) => linalg::op_norm(pick(a)),
        FieldSpec::Registered(_) => 0.0,
    }
}

/// What a time-marching solver needs to know about a model.
pub trait Dynamics {
    fn dim(&self) -> usize;

    /// `F(x, p)`
    fn drift_into(&self, x: &[f64], p: &[f64], out: &mut [f64]);

    /// `G(x, p)`
    fn cost_into(&self, x: &[f64], p: &[f64], out: &mut [f64]);

    /// Jump intensity `λ`.
    fn intensity(&self) -> f64;

    fn noise(&self) -> &AffineNoiseMap;

    /// The planning target `x₀`.
    fn target(&self) -> &[f64];

    /// Rate bound for the source term, used in the time-step restriction.
    fn source_stiffness(&self) -> f64 {
        0.0
    }

    fn drift(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.drift_into(x, p, &mut out);
        out
    }

    fn cost(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.cost_into(x, p, &mut out);
        out
    }
}

impl Dynamics for ModelSpec {
    fn dim(&self) -> usize {
        self.x0.len()
    }

    fn drift_into(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        self.f.eval_into(x, p, out)
    }

    fn cost_into(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        self.g.eval_into(x, p, out)
    }

    fn intensity(&self) -> f64 {
        self.lambda
    }

    fn noise(&self) -> &AffineNoiseMap {
        &self.noise
    }

    fn target(&self) -> &[f64] {
        &self.x0
    }

    fn source_stiffness(&self) -> f64 {
        self.lip.gp
    }
}

/// Sampled couple-monotonicity of `(x, p) ↦ (G(x,p), F(x,p))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    /// `min D` with `D = ⟨G(x,p)−G(y,q), x−y⟩ + ⟨F(x,p)−F(y,q), p−q⟩`.
    pub min_pairing: f64,
    /// `min (D − α|p−q|²)`.
    pub min_second_modulus: f64,
    /// `min (D − α|x−y|²)`.
    pub min_first_modulus: f64,
    /// `min D / (|x−y|² + |p−q|²)`.
    pub min_ratio: f64,
    pub alpha: f64,
    pub tol: f64,
    pub monotone: bool,
    pub alpha_monotone_second: bool,
    pub alpha_monotone_first: bool,
}

impl MonotonicityReport {
    pub fn passes(&self) -> bool {
        self.monotone
    }
}

pub fn check_couple_monotone(
    m: &ModelSpec,
    sample_box: &GridBox,
    n_samples: usize,
    rng_seed: u64,
) -> MonotonicityReport {
    check_couple_monotone_with_tol(m, sample_box, n_samples, rng_seed, TOL_MONO_EXACT)
}

pub fn check_couple_monotone_with_tol(
    m: &ModelSpec,
    sample_box: &GridBox,
    n_samples: usize,
    rng_seed: u64,
    tol: f64,
) -> MonotonicityReport {
    let d = m.dim();
    let mut rng = seeded_rng(rng_seed);
    let (lo, hi) = (sample_box.lo(), sample_box.hi());
    let (mut min_d, mut min_second, mut min_first, mut min_ratio) =
        (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut buf = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for _ in 0..n_samples.max(1) {
        let x = sample_in_box(&mut rng, lo, hi);
        let p = sample_in_box(&mut rng, lo, hi);
        let y = sample_in_box(&mut rng, lo, hi);
        let q = sample_in_box(&mut rng, lo, hi);
        let [gxp, gyq, fxp, fyq] = &mut buf;
        m.g.eval_into(&x, &p, gxp);
        m.g.eval_into(&y, &q, gyq);
        m.f.eval_into(&x, &p, fxp);
        m.f.eval_into(&y, &q, fyq);
        let dx = linalg::sub(&x, &y);
        let dp = linalg::sub(&p, &q);
        let pairing = dot(&linalg::sub(gxp, gyq), &dx) + dot(&linalg::sub(fxp, fyq), &dp);
        let (nx, np) = (dot(&dx, &dx), dot(&dp, &dp));
        min_d = min_d.min(pairing);
        min_second = min_second.min(pairing - m.alpha * np);
        min_first = min_first.min(pairing - m.alpha * nx);
        if nx + np > 0.0 {
            min_ratio = min_ratio.min(pairing / (nx + np));
        }
    }
    MonotonicityReport {
        samples: n_samples.max(1),
        min_pairing: min_d,
        min_second_modulus: min_second,
        min_first_modulus: min_first,
        min_ratio,
        alpha: m.alpha,
        tol,
        monotone: min_d >= -tol,
        alpha_monotone_second: min_second >= -tol,
        alpha_monotone_first: min_first >= -tol,
    }
}

/// Smallest eigenvalue of the symmetric part of `[[Gx, Gp], [Fx, Fp]]`, the
/// exact couple-monotonicity modulus of an affine model. `None` when either
/// coupling is not affine.
pub fn affine_couple_min_eigenvalue(m: &ModelSpec) -> Option<f64> {
    let (FieldSpec::Affine(f), FieldSpec::Affine(g)) = (&m.f, &m.g) else {
        return None;
    };
    let d = m.dim();
    let mut b = DMatrix::zeros(2 * d, 2 * d);
    b.view_mut((0, 0), (d, d)).copy_from(&g.mx);
    b.view_mut((0, d), (d, d)).copy_from(&g.mp);
    b.view_mut((d, 0), (d, d)).copy_from(&f.mx);
    b.view_mut((d, d), (d, d)).copy_from(&f.mp);
    let sym = (&b + b.transpose()) * 0.5;
    Some(SymmetricEigen::new(sym).eigenvalues.min())
}

/// `min ⟨U(x)−U(y), x−y⟩ / |x−y|²` over sampled pairs in `sample_box`.
/// Coincident pairs are skipped.
pub fn check_monotone_map(
    u: &dyn VectorField,
    sample_box: &GridBox,
    n_samples: usize,
    rng_seed: u64,
) -> f64 {
    let mut rng = seeded_rng(rng_seed);
    let (lo, hi) = (sample_box.lo(), sample_box.hi());
    let mut min = f64::INFINITY;
    for _ in 0..n_samples {
        let x = sample_in_box(&mut rng, lo, hi);
        let y = sample_in_box(&mut rng, lo, hi);
        let dx = linalg::sub(&x, &y);
        let n2 = dot(&dx, &dx);
        if n2 == 0.0 {
            continue;
        }
        let du = linalg::sub(&u.eval(&x), &u.eval(&y));
        min = min.min(dot(&du, &dx) / n2);
    }
    min
}

/// Models used throughout the tests, the CLI examples and the demo.
pub mod presets {
    use super::*;

    fn rot_scaled(scale: f64, angle: f64) -> DMatrix<f64> {
        let (c, s) = (angle.cos(), angle.sin());
        DMatrix::from_row_slice(2, 2, &[scale * c, -scale * s, scale * s, scale * c])
    }

    /// `F(x,p) = p`, `G = 0`, `λ = 0`, `x₀ = 0.5`, `α = 1` in one state.
    pub fn lq0() -> ModelSpec {
        linear_coupled(1, 0.0, vec![0.5])
    }

    /// `F(x,p) = p`, `G(x,p) = g·x`, `α = 1`, noiseless.
    pub fn linear_coupled(d: usize, g: f64, x0: Vec<f64>) -> ModelSpec {
        debug_assert_eq!(x0.len(), d);
        ModelSpec::new(
            FieldSpec::Affine(AffineField::scalar(d, 0.0, 1.0)),
            FieldSpec::Affine(AffineField::scalar(d, g, 0.0)),
            x0,
        )
        .and_then(|m| m.with_alpha(1.0))
        .expect("preset is valid")
    }

    /// Two states, `F(x,p) = p`, `G = 0`, target at the origin, common
    /// noise `T(x) = scale·R(angle)·x` at rate `lambda`.
    pub fn rotating_noise(lambda: f64, scale: f64, angle: f64) -> ModelSpec {
        linear_coupled(2, 0.0, vec![0.0, 0.0])
            .with_noise(
                lambda,
                AffineNoiseMap::new(rot_scaled(scale, angle), vec![0.0, 0.0]).expect("valid"),
            )
            .expect("preset is valid")
    }
}
