//! Planning on the half-space `Ω = {x₁ > 0}` with a drift whose first
//! component vanishes linearly at the boundary, `F₁ = x₁·F̃₁` for `x₁ ≤ 1`.
//!
//! The change of variables `y₁ = 1 + ln x₁` (for `x₁ < 1`, identity above)
//! turns the problem into one on all of `ℝ^d` with drift `F̃`; it is solved
//! there with the penalization pipeline and pulled back by
//! `U(t, x) = V(t, y(x))`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridBox, TimeField};
use crate::linalg::{sample_in_box, seeded_rng};
use crate::model::{eval_field, AffineField, AffineNoiseMap, Dynamics, FieldSpec, ModelSpec};
use crate::planning::{run_penalization, PenalizationOptions, PenalizationRun};
use crate::solver::{GridSolution, SolverParams};

/// Lowest `x₁` the default `y`-box resolves.
pub const X1_MIN: f64 = 1e-3;

pub fn to_log_coordinates(x: &[f64]) -> Result<Vec<f64>> {
    if !(x[0] > 0.0) {
        return Err(Error::Domain(format!("x₁ = {} is not in the half-space", x[0])));
    }
    let mut y = x.to_vec();
    if x[0] < 1.0 {
        y[0] = 1.0 + x[0].ln();
    }
    Ok(y)
}

pub fn from_log_coordinates(y: &[f64]) -> Vec<f64> {
    let mut x = y.to_vec();
    if y[0] < 1.0 {
        x[0] = (y[0] - 1.0).exp();
    }
    x
}

/// Base model on `Ω` together with the reduced drift `F̃ = (F̃₁, F₂, …, F_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfspaceModel {
    pub base: ModelSpec,
    pub reduced_drift: FieldSpec,
}

impl HalfspaceModel {
    /// Requires `x₀ ∈ Ω` and a noise map of the form `T(x) = (x₁, T′x′)`.
    pub fn new(base: ModelSpec, reduced_drift: FieldSpec) -> Result<Self> {
        let d = base.dim();
        if reduced_drift.dim().is_some_and(|rd| rd != d) {
            return Err(Error::Config("reduced drift dimension differs from the model".into()));
        }
        if !(base.x0[0] > 0.0) {
            return Err(Error::Config(format!(
                "target x₁ = {} must lie inside the half-space",
                base.x0[0]
            )));
        }
        let s = base.noise.derivative();
        let split = s[(0, 0)] == 1.0
            && base.noise.offset()[0] == 0.0
            && (1..d).all(|j| s[(0, j)] == 0.0 && s[(j, 0)] == 0.0);
        if base.lambda > 0.0 && !split {
            return Err(Error::Config(
                "half-space noise must fix the first coordinate: T(x) = (x₁, T′(x₂..x_d))".into(),
            ));
        }
        Ok(Self {
            base,
            reduced_drift,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn log_target(&self) -> Vec<f64> {
        to_log_coordinates(&self.base.x0).expect("validated on construction")
    }

    pub fn transformed(&self) -> LogTransformed<'_> {
        LogTransformed {
            y0: self.log_target(),
            hm: self,
        }
    }
}

/// `F(x,p) = (min(x₁,1)·p₁, p₂, …)`, `G = 0`, `F̃ = p`: the log transform of
/// this model is the linear-quadratic one in `y`.
pub fn log_lq(x0: Vec<f64>) -> Result<HalfspaceModel> {
    let d = x0.len();
    let base = ModelSpec::new(FieldSpec::registered("halfspace_lq")?, FieldSpec::zero(), x0)?
        .with_alpha(1.0)?
        .with_lipschitz(crate::model::LipschitzConstants {
            fx: 0.0,
            fp: 1.0,
            gx: 0.0,
            gp: 0.0,
        })?;
    HalfspaceModel::new(base, FieldSpec::Affine(AffineField::scalar(d, 0.0, 1.0)))
}

/// The half-space model seen in `y`-coordinates.
#[derive(Clone, Debug)]
pub struct LogTransformed<'a> {
    hm: &'a HalfspaceModel,
    y0: Vec<f64>,
}

impl Dynamics for LogTransformed<'_> {
    fn dim(&self) -> usize {
        self.hm.dim()
    }

    fn drift_into(&self, y: &[f64], p: &[f64], out: &mut [f64]) {
        let x = from_log_coordinates(y);
        self.hm.base.drift_into(&x, p, out);
        if y[0] < 1.0 {
            out[0] = eval_field(&self.hm.reduced_drift, &x, p)[0];
        }
    }

    fn cost_into(&self, y: &[f64], p: &[f64], out: &mut [f64]) {
        self.hm.base.cost_into(&from_log_coordinates(y), p, out)
    }

    fn intensity(&self) -> f64 {
        self.hm.base.lambda
    }

    /// `T` fixes the first coordinate, so it reads the same in `y`.
    fn noise(&self) -> &AffineNoiseMap {
        &self.hm.base.noise
    }

    fn target(&self) -> &[f64] {
        &self.y0
    }

    fn source_stiffness(&self) -> f64 {
        self.hm.base.lip.gp
    }
}

/// `max |F₁(x,p) − x₁·F̃₁(x,p)|` over samples with `0 < x₁ ≤ 1`.
pub fn check_factorization(
    hm: &HalfspaceModel,
    sample_box: &GridBox,
    p_bound: f64,
    n_samples: usize,
    seed: u64,
) -> f64 {
    let d = hm.dim();
    let mut lo = sample_box.lo().to_vec();
    let mut hi = sample_box.hi().to_vec();
    lo[0] = lo[0].max(f64::MIN_POSITIVE);
    hi[0] = hi[0].min(1.0);
    let mut rng = seeded_rng(seed);
    let (plo, phi) = (vec![-p_bound; d], vec![p_bound; d]);
    (0..n_samples)
        .map(|_| {
            let x = sample_in_box(&mut rng, &lo, &hi);
            let p = sample_in_box(&mut rng, &plo, &phi);
            let f1 = hm.base.drift(&x, &p)[0];
            let ft1 = eval_field(&hm.reduced_drift, &x, &p)[0];
            (f1 - x[0] * ft1).abs()
        })
        .fold(0.0, f64::max)
}

/// `min F₁(x, p)` over samples on `{x₁ = 0}` with `x′ ∈ [−1, 1]^{d−1}` and
/// `p ∈ [−2, 2]^d`; inward flow means this is `≥ 0`.
pub fn check_inward_flow(m: &ModelSpec, n_samples: usize, seed: u64) -> f64 {
    let d = m.dim();
    let mut rng = seeded_rng(seed);
    let mut lo = vec![-1.0; d];
    let mut hi = vec![1.0; d];
    lo[0] = 0.0;
    hi[0] = 0.0;
    let (plo, phi) = (vec![-2.0; d], vec![2.0; d]);
    (0..n_samples)
        .map(|_| {
            let x = sample_in_box(&mut rng, &lo, &hi);
            let p = sample_in_box(&mut rng, &plo, &phi);
            m.drift(&x, &p)[0]
        })
        .fold(f64::INFINITY, f64::min)
}

/// `U(t, x) = V(t, y(x))`; `NaN` outside the half-space.
#[derive(Clone, Copy)]
pub struct PulledBack<'a> {
    pub v: &'a dyn TimeField,
}

impl TimeField for PulledBack<'_> {
    fn dim(&self) -> usize {
        self.v.dim()
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match to_log_coordinates(x) {
            Ok(y) => self.v.eval_into(t, &y, out),
            Err(_) => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    }
}

pub struct HalfspaceSolution {
    pub run: PenalizationRun,
    pub y0: Vec<f64>,
}

impl HalfspaceSolution {
    /// `V` on the `y`-grid for the smallest completed `ε`.
    pub fn v(&self) -> Result<&GridSolution> {
        self.run
            .finest()
            .ok_or_else(|| Error::InvalidArgument("no completed half-space solve".into()))
    }

    pub fn field(&self) -> Result<PulledBack<'_>> {
        Ok(PulledBack { v: self.v()? })
    }
}

/// Default `y`-box: `y₁ ∈ [1 + ln X1_MIN, y₁_hi]`, other axes as given.
pub fn default_y_box(hi1: f64, rest_lo: &[f64], rest_hi: &[f64], cells: &[usize]) -> Result<GridBox> {
    let mut lo = vec![1.0 + X1_MIN.ln()];
    let mut hi = vec![hi1];
    lo.extend_from_slice(rest_lo);
    hi.extend_from_slice(rest_hi);
    GridBox::new(lo, hi, cells.to_vec())
}

pub fn solve_halfspace(
    hm: &HalfspaceModel,
    box_y: &GridBox,
    eps_schedule: &[f64],
    params: &SolverParams,
    options: &PenalizationOptions,
) -> Result<HalfspaceSolution> {
    let dyn_y = hm.transformed();
    let run = run_penalization(&dyn_y, box_y, eps_schedule, params, options)?;
    Ok(HalfspaceSolution {
        run,
        y0: hm.log_target(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogFit {
    pub t: f64,
    /// Coefficient of `ln x₁`.
    pub a: f64,
    pub b: f64,
    /// Largest absolute deviation from the fitted line.
    pub residual: f64,
    pub passes: bool,
}

/// Least-squares fit `U¹(t, x) ≈ a·ln x₁ + b` over the samples.
pub fn check_log_blowup(u: &dyn TimeField, t: f64, x_tail: &[Vec<f64>], fit_tol: f64) -> Result<LogFit> {
    if x_tail.len() < 2 {
        return Err(Error::InvalidArgument("need at least two tail samples".into()));
    }
    if let Some(x) = x_tail.iter().find(|x| !(x[0] > 0.0 && x[0] < 1.0)) {
        return Err(Error::InvalidArgument(format!("tail sample x₁ = {} not in (0, 1)", x[0])));
    }
    let pts: Vec<(f64, f64)> = x_tail.iter().map(|x| (x[0].ln(), u.eval(t, x)[0])).collect();
    let a_mat = DMatrix::from_fn(pts.len(), 2, |i, j| if j == 0 { pts[i].0 } else { 1.0 });
    let rhs = nalgebra::DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let coef = a_mat
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (a, b) = (coef[0], coef[1]);
    let residual = pts
        .iter()
        .map(|(l, v)| (v - a * l - b).abs())
        .fold(0.0, f64::max);
    Ok(LogFit {
        t,
        a,
        b,
        residual,
        passes: residual <= fit_tol && a.abs() > fit_tol,
    })
}

/// `|x₁·∂_{x₁}U¹(t, x) − ∂_{y₁}V¹(t, y(x))|` by centered differences with
/// relative step `h`.
pub fn chain_rule_defect(u: &dyn TimeField, v: &dyn TimeField, t: f64, x: &[f64], h: f64) -> Result<f64> {
    let y = to_log_coordinates(x)?;
    let shift = |p: &[f64], dp: f64| {
        let mut q = p.to_vec();
        q[0] += dp;
        q
    };
    let hx = h * x[0];
    let du = (u.eval(t, &shift(x, hx))[0] - u.eval(t, &shift(x, -hx))[0]) / (2.0 * hx);
    let dv = (v.eval(t, &shift(&y, h))[0] - v.eval(t, &shift(&y, -h))[0]) / (2.0 * h);
    Ok((x[0] * du - dv).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::FnTimeField;
    use crate::model::presets;

    #[test]
    fn log_map_examples() {
        assert_eq!(to_log_coordinates(&[1.0, 3.0]).unwrap(), vec![1.0, 3.0]);
        assert!(to_log_coordinates(&[(-1f64).exp()]).unwrap()[0].abs() < 1e-15);
        assert_eq!(to_log_coordinates(&[2.5]).unwrap(), vec![2.5]);
        assert!(matches!(to_log_coordinates(&[0.0]), Err(Error::Domain(_))));
        assert!(to_log_coordinates(&[-1.0]).is_err());
        // unit slope on both sides of the seam
        let h = 1e-7;
        let left = (to_log_coordinates(&[1.0]).unwrap()[0] - to_log_coordinates(&[1.0 - h]).unwrap()[0]) / h;
        assert!((left - 1.0).abs() < 1e-6);
        let mut rng = seeded_rng(9);
        for _ in 0..100 {
            let x = sample_in_box(&mut rng, &[1e-4, -3.0], &[5.0, 3.0]);
            let back = from_log_coordinates(&to_log_coordinates(&x).unwrap());
            assert!((back[0] - x[0]).abs() <= 1e-12 * x[0].max(1.0) && back[1] == x[1]);
        }
    }

    #[test]
    fn inward_flow_examples() {
        let hm = log_lq(vec![0.5, 0.0]).unwrap();
        assert_eq!(check_inward_flow(&hm.base, 500, 1), 0.0);
        let outward = ModelSpec::new(
            FieldSpec::Affine(AffineField::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), vec![-1.0, 0.0]).unwrap()),
            FieldSpec::zero(),
            vec![0.5, 0.0],
        )
        .unwrap();
        assert_eq!(check_inward_flow(&outward, 50, 1), -1.0);
    }

    #[test]
    fn factorization_holds_for_the_preset() {
        let hm = log_lq(vec![0.5, 0.0]).unwrap();
        let b = GridBox::cube(2, -1.0, 2.0, 2).unwrap();
        assert!(check_factorization(&hm, &b, 2.0, 1000, 3) < 1e-15);
        let wrong = HalfspaceModel::new(hm.base.clone(), FieldSpec::zero()).unwrap();
        assert!(check_factorization(&wrong, &b, 2.0, 1000, 3) > 0.1);
    }

    #[test]
    fn noise_must_fix_the_first_coordinate() {
        let hm = log_lq(vec![0.5, 0.0]).unwrap();
        let rot = presets::rotating_noise(1.0, 0.8, 0.3).noise;
        let base = hm.base.clone().with_noise(1.0, rot).unwrap();
        assert!(HalfspaceModel::new(base, hm.reduced_drift.clone()).is_err());
        let split = AffineNoiseMap::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]), vec![0.0, 0.2]).unwrap();
        let base = hm.base.clone().with_noise(1.0, split).unwrap();
        let ok = HalfspaceModel::new(base, hm.reduced_drift.clone()).unwrap();
        // the jump leaves y₁ alone
        let y = [-1.3, 0.4];
        assert_eq!(ok.transformed().noise().apply(&y)[0], y[0]);
        assert!(HalfspaceModel::new(hm.base.clone().with_target(vec![0.0, 0.0]).unwrap(), hm.reduced_drift).is_err());
    }

    #[test]
    fn transformed_drift_is_linear_in_y() {
        let hm = log_lq(vec![0.5, 0.0]).unwrap();
        let tr = hm.transformed();
        for y in [[-4.0, 0.3], [0.99, -1.0], [1.0, 0.0], [1.7, 2.0]] {
            assert_eq!(tr.drift(&y, &[0.7, -0.2]), vec![0.7, -0.2]);
        }
        assert!((tr.target()[0] - (1.0 + 0.5f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn log_fit_on_closed_form() {
        let y01 = 1.0 + 0.5f64.ln();
        let v = FnTimeField::new(2, move |t, y: &[f64]| vec![(y[0] - y01) / t, y[1] / t]);
        let u = PulledBack { v: &v };
        let tail: Vec<Vec<f64>> = (0..20).map(|k| vec![1e-3 * 1.3f64.powi(k), 0.1]).collect();
        let f = check_log_blowup(&u, 0.5, &tail, 1e-3).unwrap();
        assert!((f.a - 2.0).abs() < 1e-12 && f.passes);
        let f2 = check_log_blowup(&u, 0.25, &tail, 1e-3).unwrap();
        assert!((f2.a / f.a - 2.0).abs() < 1e-12);
        for x in &tail {
            assert!(chain_rule_defect(&u, &v, 0.5, x, 1e-5).unwrap() < 1e-6);
        }
        // an affine field has no log term
        let affine = FnTimeField::new(2, |t, x: &[f64]| vec![(x[0] - 0.5) / t, 0.0]);
        let f = check_log_blowup(&affine, 0.5, &tail, 1e-3).unwrap();
        assert!(f.a.abs() < 0.1 && !f.passes);
    }
}
