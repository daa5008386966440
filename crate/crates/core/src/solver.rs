//! Explicit upwind time marching for the master equation on a box.
//!
//! Every component of `U` is advected by the shared velocity `F(x, U(x))`,
//! with first-order upwinding chosen per node and per axis from the sign of
//! `F_j`. The common-noise term reads `U(Tx)` by multilinear interpolation of
//! the current slice. Forward Euler in time, restricted by
//!
//! ```text
//! dt · (Σ_j |F_j|/h_j + 2ν Σ_j 1/h_j² + λ + Lip_p G) ≤ cfl
//! ```
//!
//! Stencils that reach past the box use linear extrapolation from the two
//! outermost nodes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FnField, GridBox, GridField, SliceView, Stencil, TimeField, VectorField};
use crate::linalg;
use crate::model::Dynamics;

/// Abort threshold on `|U|`.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Courant number in `(0, 1]`.
    pub cfl: f64,
    /// Artificial viscosity `ν ≥ 0`.
    pub visc: f64,
    pub t_end: f64,
    pub dt_max: f64,
    /// Spacing of recorded slices; every step is recorded when `None`.
    pub record_dt: Option<f64>,
    pub overflow_guard: f64,
    pub max_steps: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            cfl: 0.9,
            visc: 0.0,
            t_end: 1.0,
            dt_max: 1e-2,
            record_dt: None,
            overflow_guard: OVERFLOW_GUARD,
            max_steps: 20_000_000,
        }
    }
}

impl SolverParams {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            ..Self::default()
        }
    }

    pub fn with_record_dt(mut self, record_dt: f64) -> Self {
        self.record_dt = Some(record_dt);
        self
    }

    pub fn with_dt_max(mut self, dt_max: f64) -> Self {
        self.dt_max = dt_max;
        self
    }

    pub fn with_visc(mut self, visc: f64) -> Self {
        self.visc = visc;
        self
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl = cfl;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, v: f64| {
            Err(Error::Config(format!("solver parameter `{field}` is invalid: {v}")))
        };
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("cfl", self.cfl);
        }
        if !(self.visc.is_finite() && self.visc >= 0.0) {
            return bad("visc", self.visc);
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return bad("t_end", self.t_end);
        }
        if !(self.dt_max.is_finite() && self.dt_max > 0.0) {
            return bad("dt_max", self.dt_max);
        }
        if let Some(r) = self.record_dt {
            if !(r.is_finite() && r > 0.0) {
                return bad("record_dt", r);
            }
        }
        if !(self.overflow_guard > 0.0) {
            return bad("overflow_guard", self.overflow_guard);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveMeta {
    pub params: Option<SolverParams>,
    pub steps: usize,
}

/// Recorded slices `U(t_k, ·)` of a time-marching run.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSolution {
    grid: GridBox,
    times: Vec<f64>,
    slices: Vec<Vec<f64>>,
    pub meta: SolveMeta,
}

impl GridSolution {
    pub fn new(grid: GridBox, times: Vec<f64>, slices: Vec<Vec<f64>>, meta: SolveMeta) -> Result<Self> {
        if times.is_empty() || times.len() != slices.len() {
            return Err(Error::InvalidArgument(format!(
                "{} times for {} slices",
                times.len(),
                slices.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("times must be increasing".into()));
        }
        let len = grid.node_count() * grid.dim();
        if let Some(s) = slices.iter().find(|s| s.len() != len) {
            return Err(Error::Dimension {
                what: "solution slice",
                expected: len,
                got: s.len(),
            });
        }
        Ok(Self {
            grid,
            times,
            slices,
            meta,
        })
    }

    /// Samples a closed-form `U(t, x)` at the given times.
    pub fn from_fn(grid: &GridBox, times: &[f64], f: impl Fn(f64, &[f64]) -> Vec<f64>) -> Result<Self> {
        let slices = times
            .iter()
            .map(|&t| GridField::from_fn(grid, |x| f(t, x)).values)
            .collect();
        Self::new(
            grid.clone(),
            times.to_vec(),
            slices,
            SolveMeta {
                params: None,
                steps: 0,
            },
        )
    }

    pub fn grid(&self) -> &GridBox {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn slice(&self, k: usize) -> SliceView<'_> {
        SliceView::new(&self.grid, &self.slices[k])
    }

    pub fn last(&self) -> SliceView<'_> {
        self.slice(self.len() - 1)
    }

    /// Index of the recorded time closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            0
        } else if k == self.times.len() {
            k - 1
        } else if (self.times[k] - t).abs() < (t - self.times[k - 1]).abs() {
            k
        } else {
            k - 1
        }
    }

    /// Slice at `t`, interpolated linearly in time between recorded slices.
    pub fn slice_at(&self, t: f64) -> GridField {
        let k = self.nearest_index(t);
        if (self.times[k] - t).abs() <= 1e-12 * t.abs().max(1.0) {
            return self.slice(k).to_owned();
        }
        let (a, b, w) = self.bracket(t);
        GridField {
            grid: self.grid.clone(),
            values: self.slices[a]
                .iter()
                .zip(&self.slices[b])
                .map(|(u, v)| (1.0 - w) * u + w * v)
                .collect(),
        }
    }

    /// Bracketing slice indices and the weight of the later one; clamped to
    /// the recorded range.
    fn bracket(&self, t: f64) -> (usize, usize, f64) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let b = self.times.partition_point(|&s| s <= t).min(n - 1);
        let a = b - 1;
        let w = (t - self.times[a]) / (self.times[b] - self.times[a]);
        (a, b, w)
    }

    /// `sup |U − V|` over nodes at the recorded times of `self` that are
    /// `≥ t_min`; `other` is interpolated in time.
    pub fn sup_gap(&self, other: &GridSolution, t_min: f64) -> f64 {
        let mut gap: f64 = 0.0;
        for (k, &t) in self.times.iter().enumerate() {
            if t < t_min {
                continue;
            }
            let theirs = other.slice_at(t);
            for (a, b) in self.slices[k].iter().zip(&theirs.values) {
                gap = gap.max((a - b).abs());
            }
        }
        gap
    }
}

impl TimeField for GridSolution {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (a, b, w) = self.bracket(t);
        let st = self.grid.stencil(x);
        let d = self.grid.dim();
        st.apply(&self.slices[a], d, out);
        if w > 0.0 {
            let mut tmp = vec![0.0; d];
            st.apply(&self.slices[b], d, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o = (1.0 - w) * *o + w * v;
            }
        }
    }

    fn domain(&self) -> Option<&GridBox> {
        Some(&self.grid)
    }
}

/// Penalized initial datum `U(0, x) = (x − x₀)/ε`.
pub fn penalized_initial(x0: &[f64], eps: f64) -> FnField<impl Fn(&[f64]) -> Vec<f64> + '_> {
    FnField::new(x0.len(), move |x: &[f64]| {
        x.iter().zip(x0).map(|(a, b)| (a - b) / eps).collect()
    })
}

/// Neighbour values of `node` along `axis`, with linear extrapolation past
/// the box: returns `(left, right)` for component `i`.
#[inline]
fn neighbours(u: &[f64], grid: &GridBox, node: usize, axis: usize, i: usize, d: usize) -> (f64, f64) {
    let s = grid.stride(axis);
    let idx = grid.axis_index(node, axis);
    let c = u[node * d + i];
    let n = grid.cells()[axis];
    let left = if idx > 0 {
        u[(node - s) * d + i]
    } else {
        2.0 * c - u[(node + s) * d + i]
    };
    let right = if idx < n {
        u[(node + s) * d + i]
    } else {
        2.0 * c - u[(node - s) * d + i]
    };
    (left, right)
}

struct Workspace {
    coords: Vec<f64>,
    jump: Option<Vec<Stencil>>,
    drift: Vec<f64>,
}

fn prepare<D: Dynamics + ?Sized>(m: &D, grid: &GridBox) -> Workspace {
    let d = grid.dim();
    let n = grid.node_count();
    let mut coords = vec![0.0; n * d];
    for k in 0..n {
        grid.node_coords_into(k, &mut coords[k * d..(k + 1) * d]);
    }
    let jump = (m.intensity() > 0.0 && !m.noise().is_identity()).then(|| {
        (0..n)
            .map(|k| grid.stencil(&m.noise().apply(&coords[k * d..(k + 1) * d])))
            .collect()
    });
    Workspace {
        coords,
        jump,
        drift: vec![0.0; n * d],
    }
}

/// Marches `∂ₜU + (F(x,U)·∇)U + λ(U − SᵀU(Tx)) = G(x,U) + ν ΔU` from `u0`.
pub fn solve_master<D: Dynamics + ?Sized>(
    m: &D,
    grid: &GridBox,
    u0: &dyn VectorField,
    params: &SolverParams,
) -> Result<GridSolution> {
    params.validate()?;
    let d = m.dim();
    if grid.dim() != d || u0.dim() != d {
        return Err(Error::Dimension {
            what: "solve_master inputs",
            expected: d,
            got: if grid.dim() != d { grid.dim() } else { u0.dim() },
        });
    }
    let n = grid.node_count();
    let mut ws = prepare(m, grid);
    let mut u = vec![0.0; n * d];
    for k in 0..n {
        u0.eval_into(&ws.coords[k * d..(k + 1) * d], &mut u[k * d..(k + 1) * d]);
    }
    if !within_guard(&u, params.overflow_guard) {
        return Err(Error::BlowUp {
            last_stable_time: 0.0,
        });
    }

    let h: Vec<f64> = (0..d).map(|j| grid.spacing(j)).collect();
    let lambda_eff = if ws.jump.is_some() { m.intensity() } else { 0.0 };
    let fixed_rate = 2.0 * params.visc * h.iter().map(|h| 1.0 / (h * h)).sum::<f64>()
        + lambda_eff
        + m.source_stiffness();

    let mut times = vec![0.0];
    let mut slices = vec![u.clone()];
    let mut t = 0.0;
    let mut steps = 0usize;
    let mut next = vec![0.0; n * d];
    let mut record_k = 1usize;

    while t < params.t_end {
        let t_next_record = match params.record_dt {
            Some(r) => (record_k as f64 * r).min(params.t_end),
            None => params.t_end,
        };
        // advection rate bound
        let mut adv = 0.0f64;
        for k in 0..n {
            let x = &ws.coords[k * d..(k + 1) * d];
            let f = &mut ws.drift[k * d..(k + 1) * d];
            m.drift_into(x, &u[k * d..(k + 1) * d], f);
            let r: f64 = f.iter().zip(&h).map(|(fj, hj)| fj.abs() / hj).sum();
            adv = adv.max(r);
        }
        let rate = adv + fixed_rate;
        let mut dt = params.dt_max;
        if rate > 0.0 {
            dt = dt.min(params.cfl / rate);
        }
        let remaining = t_next_record - t;
        if dt >= remaining * (1.0 - 1e-12) {
            dt = remaining;
        }
        step(m, grid, &ws, &u, &mut next, dt, params.visc, &h);
        if !within_guard(&next, params.overflow_guard) {
            return Err(Error::BlowUp {
                last_stable_time: t,
            });
        }
        std::mem::swap(&mut u, &mut next);
        steps += 1;
        t = if dt == remaining { t_next_record } else { t + dt };
        let at_record = t == t_next_record;
        if params.record_dt.is_none() || at_record {
            times.push(t);
            slices.push(u.clone());
        }
        if at_record {
            record_k += 1;
        }
        if steps >= params.max_steps && t < params.t_end {
            return Err(Error::StepLimit { steps, time: t });
        }
    }

    GridSolution::new(
        grid.clone(),
        times,
        slices,
        SolveMeta {
            params: Some(params.clone()),
            steps,
        },
    )
}

fn within_guard(u: &[f64], guard: f64) -> bool {
    u.iter().all(|v| v.is_finite() && v.abs() <= guard)
}

#[allow(clippy::too_many_arguments)]
fn step<D: Dynamics + ?Sized>(
    m: &D,
    grid: &GridBox,
    ws: &Workspace,
    u: &[f64],
    next: &mut [f64],
    dt: f64,
    visc: f64,
    h: &[f64],
) {
    let d = grid.dim();
    let lambda = m.intensity();
    let mut g = vec![0.0; d];
    let mut ut = vec![0.0; d];
    for k in 0..grid.node_count() {
        let x = &ws.coords[k * d..(k + 1) * d];
        let uk = &u[k * d..(k + 1) * d];
        let f = &ws.drift[k * d..(k + 1) * d];
        m.cost_into(x, uk, &mut g);
        let jump = ws.jump.as_ref().map(|st| {
            st[k].apply(u, d, &mut ut);
            m.noise().adjoint_apply(&ut)
        });
        for i in 0..d {
            let c = uk[i];
            let mut rhs = g[i];
            for j in 0..d {
                let (left, right) = neighbours(u, grid, k, j, i, d);
                let grad = if f[j] > 0.0 {
                    (c - left) / h[j]
                } else {
                    (right - c) / h[j]
                };
                rhs -= f[j] * grad;
                if visc > 0.0 {
                    rhs += visc * (right - 2.0 * c + left) / (h[j] * h[j]);
                }
            }
            if let Some(jv) = &jump {
                rhs -= lambda * (c - jv[i]);
            }
            next[k * d + i] = c + dt * rhs;
        }
    }
}

/// Spatial stencil used by [`residual`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffStencil {
    Centered,
    Upwind,
}

/// Pointwise defect `|∂ₜU + (F·∇)U + λ(U − SᵀU(Tx)) − G|` at the recorded
/// slice nearest to `t`, with a centered time difference.
pub fn residual<D: Dynamics + ?Sized>(
    m: &D,
    sol: &GridSolution,
    t: f64,
    stencil: DiffStencil,
) -> Result<Vec<f64>> {
    let k = sol.nearest_index(t);
    if k == 0 || k + 1 >= sol.len() {
        return Err(Error::InvalidArgument(format!(
            "t = {t} is at the boundary of the time grid"
        )));
    }
    let grid = sol.grid();
    let d = grid.dim();
    let (prev, cur, nxt) = (sol.slice(k - 1), sol.slice(k), sol.slice(k + 1));
    let dt = sol.times()[k + 1] - sol.times()[k - 1];
    let h: Vec<f64> = (0..d).map(|j| grid.spacing(j)).collect();
    let lambda = m.intensity();
    let noisy = lambda > 0.0 && !m.noise().is_identity();
    let mut out = Vec::with_capacity(grid.node_count());
    let mut x = vec![0.0; d];
    let mut f = vec![0.0; d];
    let mut g = vec![0.0; d];
    for node in 0..grid.node_count() {
        grid.node_coords_into(node, &mut x);
        let uk = cur.node_value(node);
        m.drift_into(&x, uk, &mut f);
        m.cost_into(&x, uk, &mut g);
        let jump = noisy.then(|| m.noise().adjoint_apply(&cur.eval(&m.noise().apply(&x))));
        let mut r2 = 0.0;
        for i in 0..d {
            let mut r = (nxt.node_value(node)[i] - prev.node_value(node)[i]) / dt - g[i];
            for j in 0..d {
                let (left, right) = neighbours(cur.values, grid, node, j, i, d);
                let grad = match stencil {
                    DiffStencil::Centered => (right - left) / (2.0 * h[j]),
                    DiffStencil::Upwind if f[j] > 0.0 => (uk[i] - left) / h[j],
                    DiffStencil::Upwind => (right - uk[i]) / h[j],
                };
                r += f[j] * grad;
            }
            if let Some(jv) = &jump {
                r += lambda * (uk[i] - jv[i]);
            }
            r2 += r * r;
        }
        out.push(r2.sqrt());
    }
    Ok(out)
}

/// Finite-difference Jacobian `DₓU` at a node, centered inside the box and
/// one-sided on its faces.
pub fn jacobian_at(view: &SliceView<'_>, node: usize) -> DMatrix<f64> {
    let grid = view.grid;
    let d = grid.dim();
    DMatrix::from_fn(d, d, |i, j| {
        let (left, right) = neighbours(view.values, grid, node, j, i, d);
        (right - left) / (2.0 * grid.spacing(j))
    })
}

/// `max_x ‖DₓU(x)‖` over the nodes of one slice.
pub fn lipschitz_norm_of(view: &SliceView<'_>) -> f64 {
    (0..view.grid.node_count())
        .map(|k| linalg::op_norm(&jacobian_at(view, k)))
        .fold(0.0, f64::max)
}

/// `max_x ‖DₓU(t, x)‖` at the recorded slice nearest to `t`.
pub fn lipschitz_norm(sol: &GridSolution, t: f64) -> f64 {
    lipschitz_norm_of(&sol.slice(sol.nearest_index(t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, AffineField, AffineNoiseMap, FieldSpec, ModelSpec};

    fn lq0_box(n: usize) -> GridBox {
        GridBox::cube(1, -1.0, 2.0, n).unwrap()
    }

    fn rel_sup_error(sol: &GridSolution, t: f64, exact: impl Fn(&[f64]) -> f64) -> f64 {
        let s = sol.slice(sol.nearest_index(t));
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        for (k, x) in sol.grid().nodes().enumerate() {
            let e = exact(&x);
            err = err.max((s.node_value(k)[0] - e).abs());
            scale = scale.max(e.abs());
        }
        err / scale
    }

    #[test]
    fn lq0_matches_characteristics_closed_form() {
        let m = presets::lq0();
        let eps = 0.1;
        let params = SolverParams::new(0.4).with_record_dt(0.1);
        let sol = solve_master(&m, &lq0_box(400), &penalized_initial(&m.x0, eps), &params).unwrap();
        assert!((sol.times().last().unwrap() - 0.4).abs() < 1e-15);
        let err = rel_sup_error(&sol, 0.4, |x| (x[0] - 0.5) / (eps + 0.4));
        assert!(err <= 2e-2, "relative error {err}");
    }

    #[test]
    fn identity_noise_annihilates_jump_term() {
        let m = presets::lq0();
        let noisy = m.clone().with_noise(3.0, AffineNoiseMap::identity(1)).unwrap();
        let params = SolverParams::new(0.5).with_record_dt(0.05);
        let g = lq0_box(100);
        let a = solve_master(&m, &g, &penalized_initial(&m.x0, 0.2), &params).unwrap();
        let b = solve_master(&noisy, &g, &penalized_initial(&m.x0, 0.2), &params).unwrap();
        assert!(a.sup_gap(&b, 0.0) <= 1e-12);
    }

    #[test]
    fn pure_source_is_integrated_exactly() {
        // F = 0, G(x,p) = x, U0 = 0: U = t·x
        let m = ModelSpec::new(
            FieldSpec::zero(),
            FieldSpec::Affine(AffineField::scalar(1, 1.0, 0.0)),
            vec![0.0],
        )
        .unwrap();
        let params = SolverParams::new(1.0).with_dt_max(0.01).with_record_dt(0.25);
        let g = lq0_box(30);
        let sol = solve_master(&m, &g, &FnField::new(1, |_| vec![0.0]), &params).unwrap();
        for (k, &t) in sol.times().iter().enumerate() {
            for (node, x) in g.nodes().enumerate() {
                assert!((sol.slice(k).node_value(node)[0] - t * x[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blow_up_reports_last_stable_time() {
        let m = presets::lq0();
        let g = GridBox::cube(1, 0.49, 0.51, 20).unwrap();
        let params = SolverParams::new(1.0);
        let err = solve_master(&m, &g, &penalized_initial(&m.x0, 1e-15), &params).unwrap_err();
        assert!(matches!(err, Error::BlowUp { last_stable_time } if last_stable_time == 0.0));
        assert!(err.is_numerical());
    }

    #[test]
    fn params_are_validated() {
        let m = presets::lq0();
        let g = lq0_box(10);
        let u0 = penalized_initial(&m.x0, 0.1);
        for p in [
            SolverParams::new(1.0).with_cfl(0.0),
            SolverParams::new(1.0).with_cfl(1.5),
            SolverParams::new(1.0).with_visc(-1.0),
            SolverParams::new(-1.0),
            SolverParams::new(1.0).with_record_dt(0.0),
        ] {
            assert!(matches!(solve_master(&m, &g, &u0, &p), Err(Error::Config(_))));
        }
    }

    #[test]
    fn residual_vanishes_on_constants_and_rejects_boundary_times() {
        let m = ModelSpec::new(FieldSpec::zero(), FieldSpec::zero(), vec![0.0]).unwrap();
        let g = lq0_box(20);
        let sol = GridSolution::from_fn(&g, &[0.0, 0.1, 0.2], |_, _| vec![2.5]).unwrap();
        let r = residual(&m, &sol, 0.1, DiffStencil::Centered).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-13));
        assert!(residual(&m, &sol, 0.0, DiffStencil::Centered).is_err());
        assert!(residual(&m, &sol, 0.2, DiffStencil::Centered).is_err());
    }

    #[test]
    fn lipschitz_norm_examples() {
        let g = GridBox::cube(2, -1.0, 1.0, 10).unwrap();
        let c = GridSolution::from_fn(&g, &[0.0], |_, _| vec![1.0, -2.0]).unwrap();
        assert_eq!(lipschitz_norm(&c, 0.0), 0.0);
        // U(x) = Ax with ‖A‖ = largest singular value
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let lin = GridSolution::from_fn(&g, &[0.0], |_, x| linalg::mat_vec(&a, x)).unwrap();
        assert!((lipschitz_norm(&lin, 0.0) - linalg::op_norm(&a)).abs() < 1e-12);
        let g1 = lq0_box(400);
        let lim = GridSolution::from_fn(&g1, &[0.25], |t, x| vec![(x[0] - 0.5) / t]).unwrap();
        assert!((lipschitz_norm(&lim, 0.25) - 4.0).abs() <= 0.02 * 4.0);
    }

    #[test]
    fn time_interpolation_is_linear_between_slices() {
        let g = lq0_box(10);
        let sol = GridSolution::from_fn(&g, &[0.0, 1.0], |t, _| vec![t * 4.0]).unwrap();
        assert!((sol.eval(0.25, &[0.0])[0] - 1.0).abs() < 1e-14);
        assert!((sol.eval(5.0, &[0.0])[0] - 4.0).abs() < 1e-14);
        assert_eq!(sol.slice_at(0.5).values[0], 2.0);
        assert_eq!(sol.nearest_index(0.6), 1);
    }
}
