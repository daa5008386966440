//! From penalized problems to the planning solution.
//!
//! The penalized problems start from `U_ε(0, x) = (x − x₀)/ε`. Their limit as
//! `ε → 0` is represented by the smallest member of a decreasing schedule
//! together with a Cauchy criterion on the sup-norm gaps between consecutive
//! members on `{t ≥ t_min}`. The limit field is read back through the Yosida
//! approximation `V = S_δ U_ε` as `U(t, x) = V(t, (Id − δV(t, ·))⁻¹ x)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridBox, GridField, TimeField, VectorField};
use crate::linalg::{self, dot, sample_in_box, seeded_rng};
use crate::model::{Dynamics, LipschitzConstants, ModelSpec};
use crate::solver::{lipschitz_norm, penalized_initial, solve_master, GridSolution, SolverParams};
use crate::yosida::{invert_id_minus, yosida_field, YosidaField};

/// Minimum distance, in cells, between the target and the faces of the box.
pub const TARGET_MARGIN_CELLS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PenalizationOptions {
    pub t_min: f64,
    /// Yosida parameter used for the limit extraction.
    pub delta: f64,
    /// Bound on the last gap for the run to count as converged.
    pub conv_tol: f64,
}

impl Default for PenalizationOptions {
    fn default() -> Self {
        Self {
            t_min: 0.2,
            delta: 0.25,
            conv_tol: 1e-2,
        }
    }
}

/// Why a continuation stopped early.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PenalizationFailure {
    pub eps: f64,
    pub message: String,
    pub last_stable_time: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PenalizationRun {
    pub eps_schedule: Vec<f64>,
    pub options: PenalizationOptions,
    /// Solutions for the leading part of the schedule that completed.
    pub solutions: Vec<GridSolution>,
    /// `sup |U_{ε_k} − U_{ε_{k+1}}|` on `t ≥ t_min`.
    pub gaps: Vec<f64>,
    pub failure: Option<PenalizationFailure>,
}

impl PenalizationRun {
    pub fn delta(&self) -> f64 {
        self.options.delta
    }

    /// Solution for the smallest completed `ε`.
    pub fn finest(&self) -> Option<&GridSolution> {
        self.solutions.last()
    }

    pub fn finest_eps(&self) -> Option<f64> {
        self.eps_schedule.get(self.solutions.len().checked_sub(1)?).copied()
    }

    pub fn gaps_decreasing(&self) -> bool {
        self.gaps.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn converged(&self) -> bool {
        self.failure.is_none()
            && self
                .gaps
                .last()
                .is_some_and(|g| g.is_finite() && *g <= self.options.conv_tol)
    }

    pub fn table(&self) -> ConvergenceTable {
        ConvergenceTable {
            eps: self.eps_schedule[..self.solutions.len()].to_vec(),
            gaps: self.gaps.clone(),
            t_min: self.options.t_min,
            conv_tol: self.options.conv_tol,
            gaps_decreasing: self.gaps_decreasing(),
            converged: self.converged(),
            failure: self.failure.clone(),
        }
    }
}

/// Serializable summary of a [`PenalizationRun`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub eps: Vec<f64>,
    pub gaps: Vec<f64>,
    pub t_min: f64,
    pub conv_tol: f64,
    pub gaps_decreasing: bool,
    pub converged: bool,
    pub failure: Option<PenalizationFailure>,
}

pub fn check_target_margin(grid: &GridBox, x0: &[f64]) -> Result<()> {
    let margin = grid.margin_in_cells(x0);
    if margin < TARGET_MARGIN_CELLS {
        return Err(Error::Config(format!(
            "target {x0:?} is {margin:.2} cells from the box boundary, need at least {TARGET_MARGIN_CELLS}"
        )));
    }
    Ok(())
}

/// Solves the penalized problem for every `ε` of a non-increasing schedule.
pub fn run_penalization<D: Dynamics + Sync + ?Sized>(
    m: &D,
    grid: &GridBox,
    eps_schedule: &[f64],
    params: &SolverParams,
    options: &PenalizationOptions,
) -> Result<PenalizationRun> {
    if eps_schedule.is_empty() {
        return Err(Error::Config("eps schedule is empty".into()));
    }
    if eps_schedule.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::Config("eps schedule must be positive".into()));
    }
    if eps_schedule.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config("eps schedule must be non-increasing".into()));
    }
    if !(options.t_min > 0.0 && options.t_min < params.t_end) {
        return Err(Error::Config(format!(
            "t_min must lie in (0, t_end), got {}",
            options.t_min
        )));
    }
    if !(options.delta.is_finite() && options.delta > 0.0) {
        return Err(Error::Config(format!("delta must be > 0, got {}", options.delta)));
    }
    params.validate()?;
    check_target_margin(grid, m.target())?;

    let results = solve_all(m, grid, eps_schedule, params);
    let mut solutions = Vec::new();
    let mut failure = None;
    for (eps, r) in eps_schedule.iter().zip(results) {
        match r {
            Ok(s) => solutions.push(s),
            Err(e) => {
                failure = Some(PenalizationFailure {
                    eps: *eps,
                    last_stable_time: match e {
                        Error::BlowUp { last_stable_time } => Some(last_stable_time),
                        Error::StepLimit { time, .. } => Some(time),
                        _ => None,
                    },
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let gaps = solutions
        .windows(2)
        .map(|w| w[1].sup_gap(&w[0], options.t_min))
        .collect();
    Ok(PenalizationRun {
        eps_schedule: eps_schedule.to_vec(),
        options: options.clone(),
        solutions,
        gaps,
        failure,
    })
}

#[cfg(not(target_arch = "wasm32"))]
fn solve_all<D: Dynamics + Sync + ?Sized>(
    m: &D,
    grid: &GridBox,
    eps_schedule: &[f64],
    params: &SolverParams,
) -> Vec<Result<GridSolution>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = eps_schedule
            .iter()
            .map(|&eps| {
                scope.spawn(move || {
                    solve_master(m, grid, &penalized_initial(m.target(), eps), params)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    })
}

#[cfg(target_arch = "wasm32")]
fn solve_all<D: Dynamics + Sync + ?Sized>(
    m: &D,
    grid: &GridBox,
    eps_schedule: &[f64],
    params: &SolverParams,
) -> Vec<Result<GridSolution>> {
    eps_schedule
        .iter()
        .map(|&eps| solve_master(m, grid, &penalized_initial(m.target(), eps), params))
        .collect()
}

/// Planning solution at one time, reconstructed from a Yosida approximation.
#[derive(Clone, Debug)]
pub struct LimitSlice {
    pub t: f64,
    pub delta: f64,
    pub yosida: YosidaField,
    /// `U(t, ·)` on the nodes; `NaN` at flagged nodes.
    pub field: GridField,
    pub flagged: Vec<usize>,
}

/// Limit slice with the run's own `δ`.
pub fn extract_limit(run: &PenalizationRun, t: f64) -> Result<LimitSlice> {
    extract_limit_with_delta(run, t, run.delta())
}

pub fn extract_limit_with_delta(run: &PenalizationRun, t: f64, delta: f64) -> Result<LimitSlice> {
    let sol = run
        .finest()
        .ok_or_else(|| Error::InvalidArgument("run has no completed solution".into()))?;
    if t < run.options.t_min {
        return Err(Error::InvalidArgument(format!(
            "t = {t} is below t_min = {}",
            run.options.t_min
        )));
    }
    extract_from_slice(&sol.slice_at(t), t, delta)
}

/// `U(x) = V((Id − δV)⁻¹ x)` with `V` the Yosida approximation of `slice`.
pub fn extract_from_slice(slice: &GridField, t: f64, delta: f64) -> Result<LimitSlice> {
    let grid = &slice.grid;
    let d = grid.dim();
    let yosida = yosida_field(slice, grid, delta)?;
    let mut values = Vec::with_capacity(grid.node_count() * d);
    let mut flagged = Vec::new();
    for (node, x) in grid.nodes().enumerate() {
        match invert_id_minus(&yosida, delta, &x) {
            Ok(z) => values.extend(yosida.eval(&z)),
            Err(_) => {
                flagged.push(node);
                values.extend(std::iter::repeat_n(f64::NAN, d));
            }
        }
    }
    Ok(LimitSlice {
        t,
        delta,
        yosida,
        field: GridField {
            grid: grid.clone(),
            values,
        },
        flagged,
    })
}

/// Sublevel diameters `sup{|x − x₀| : |U(t, x)| ≤ M}` over grid nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphLimitDiagnostic {
    pub level: f64,
    pub times: Vec<f64>,
    pub diameters: Vec<f64>,
    /// Least-squares `c` in `diameter ≈ c·t`.
    pub slope: f64,
    /// `diameter_k / diameter_{k+1}` for consecutive times.
    pub ratios: Vec<f64>,
    pub nonincreasing: bool,
    pub passes: bool,
}

pub fn graph_limit_diagnostic(
    u: &dyn TimeField,
    grid: &GridBox,
    x0: &[f64],
    level: f64,
    times: &[f64],
) -> GraphLimitDiagnostic {
    let nodes: Vec<Vec<f64>> = grid.nodes().collect();
    let diameters: Vec<f64> = times
        .iter()
        .map(|&t| {
            nodes
                .iter()
                .filter(|x| linalg::norm(&u.eval(t, x)) <= level)
                .map(|x| linalg::dist(x, x0))
                .fold(0.0, f64::max)
        })
        .collect();
    let (num, den) = times
        .iter()
        .zip(&diameters)
        .fold((0.0, 0.0), |(n, d), (t, r)| (n + t * r, d + t * t));
    let slope = if den > 0.0 { num / den } else { 0.0 };
    let ratios: Vec<f64> = diameters.windows(2).map(|w| w[0] / w[1]).collect();
    let nonincreasing = times
        .windows(2)
        .zip(diameters.windows(2))
        .all(|(t, r)| t[1] > t[0] || r[1] <= r[0]);
    // shrinking t by a factor q must shrink the diameter by at least 0.9·q
    let passes = nonincreasing
        && times
            .windows(2)
            .zip(&ratios)
            .all(|(t, ratio)| t[1] >= t[0] || *ratio >= 0.9 * t[0] / t[1]);
    GraphLimitDiagnostic {
        level,
        times: times.to_vec(),
        diameters,
        slope,
        ratios,
        nonincreasing,
        passes,
    }
}

/// `β(t) = αt/2`
pub fn beta(alpha: f64, t: f64) -> f64 {
    0.5 * alpha * t
}

/// `γ(t) = ‖DₓG‖·α·t²`
pub fn gamma(alpha: f64, lip_gx: f64, t: f64) -> f64 {
    lip_gx * alpha * t * t
}

/// Lipschitz bound `√(1 + 4βγ)/β`.
pub fn regularizing_bound(alpha: f64, lip_gx: f64, t: f64) -> f64 {
    let b = beta(alpha, t);
    (1.0 + 4.0 * b * gamma(alpha, lip_gx, t)).sqrt() / b
}

/// Left-hand sides of the two conditions on `(β, γ)` under which the
/// regularizing bound holds; both must be nonnegative.
pub fn certificate_conditions(
    alpha: f64,
    lip: &LipschitzConstants,
    lambda: f64,
    norm_s: f64,
    t: f64,
) -> (f64, f64) {
    let damping = lambda * (1.0 - norm_s * norm_s);
    let b = beta(alpha, t);
    let db = 0.5 * alpha;
    let g = gamma(alpha, lip.gx, t);
    let dg = 2.0 * lip.gx * alpha * t;
    let first = alpha - b * (lip.gx + 2.0 * lip.fx - damping) - db - g * lip.fp;
    let second = dg + g * (damping - lip.fp - 2.0 * lip.gp) - b * lip.gx;
    (first, second)
}

/// Largest `t_f ≤ horizon` such that both conditions hold on `[0, t_f]`.
pub fn certificate_horizon(
    alpha: f64,
    lip: &LipschitzConstants,
    lambda: f64,
    norm_s: f64,
    horizon: f64,
) -> f64 {
    const SCAN: usize = 4000;
    let holds = |t: f64| {
        let (a, b) = certificate_conditions(alpha, lip, lambda, norm_s, t);
        let scale = 1e-12 * (1.0 + alpha);
        a >= -scale && b >= -scale
    };
    let mut good = 0.0;
    for k in 1..=SCAN {
        let t = horizon * k as f64 / SCAN as f64;
        if holds(t) {
            good = t;
            continue;
        }
        let (mut lo, mut hi) = (good, t);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if holds(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return lo;
    }
    horizon
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateEntry {
    pub t: f64,
    pub beta: f64,
    pub gamma: f64,
    pub bound: f64,
    pub measured: f64,
    /// `false` when `t > t_f`; such entries are not checked.
    pub checked: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub applicable: bool,
    pub alpha: f64,
    pub lambda: f64,
    pub norm_s: f64,
    pub lip: LipschitzConstants,
    pub t_f: f64,
    pub horizon: f64,
    /// Relative slack allowed on top of the bound.
    pub rel_tol: f64,
    pub entries: Vec<CertificateEntry>,
    pub passes: bool,
}

/// Compares measured `‖DₓU(t)‖` with `√(1+4βγ)/β` up to `t_f`.
pub fn estimate_certificate(
    m: &ModelSpec,
    sol: &GridSolution,
    times: &[f64],
    rel_tol: f64,
) -> EstimateReport {
    let horizon = *sol.times().last().expect("solutions are never empty");
    let norm_s = m.noise.norm_s();
    let applicable = m.alpha > 0.0;
    let t_f = if applicable {
        certificate_horizon(m.alpha, &m.lip, m.lambda, norm_s, horizon)
    } else {
        0.0
    };
    let entries: Vec<CertificateEntry> = times
        .iter()
        .map(|&t| {
            let measured = lipschitz_norm(sol, t);
            let checked = applicable && t > 0.0 && t <= t_f;
            let bound = if applicable {
                regularizing_bound(m.alpha, m.lip.gx, t)
            } else {
                f64::INFINITY
            };
            CertificateEntry {
                t,
                beta: beta(m.alpha, t),
                gamma: gamma(m.alpha, m.lip.gx, t),
                bound,
                measured,
                checked,
                pass: !checked || measured <= bound * (1.0 + rel_tol),
            }
        })
        .collect();
    let passes = applicable && entries.iter().all(|e| e.pass);
    EstimateReport {
        applicable,
        alpha: m.alpha,
        lambda: m.lambda,
        norm_s,
        lip: m.lip,
        t_f,
        horizon,
        rel_tol,
        entries,
        passes,
    }
}

/// `min ⟨U(x) − V(y), x − y⟩` over sampled pairs.
pub fn cross_monotonicity(
    u: &dyn VectorField,
    v: &dyn VectorField,
    sample_box: &GridBox,
    n_pairs: usize,
    rng_seed: u64,
) -> f64 {
    let mut rng = seeded_rng(rng_seed);
    let (lo, hi) = (sample_box.lo(), sample_box.hi());
    (0..n_pairs)
        .map(|_| {
            let x = sample_in_box(&mut rng, lo, hi);
            let y = sample_in_box(&mut rng, lo, hi);
            dot(&linalg::sub(&u.eval(&x), &v.eval(&y)), &linalg::sub(&x, &y))
        })
        .fold(f64::INFINITY, f64::min)
}
