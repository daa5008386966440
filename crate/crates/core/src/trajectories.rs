//! Backward trajectories `ẋ = F(x, U(t, x))`, `x(t₁) = x₁`, of a solved
//! planning field, integrated from `t₁` down to `t_min > 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::TimeField;
use crate::linalg;
use crate::model::Dynamics;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    /// Decreasing from `t₁` to `t_min`.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `U(t_k, x(t_k))`.
    pub values: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectories are never empty")
    }

    /// `x` at the recorded time nearest `t`.
    pub fn state_near(&self, t: f64) -> &[f64] {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
            .expect("trajectories are never empty");
        &self.states[k]
    }
}

fn velocity<D: Dynamics + ?Sized>(
    u: &dyn TimeField,
    m: &D,
    t: f64,
    x: &[f64],
    out: &mut [f64],
) -> Result<Vec<f64>> {
    if let Some(grid) = u.domain() {
        if !grid.contains(x) {
            return Err(Error::LeftDomain { time: t });
        }
    }
    let p = u.eval(t, x);
    m.drift_into(x, &p, out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { at: t });
    }
    Ok(p)
}

/// RK4 with `steps` equal steps from `t1` down to `t_min`.
pub fn integrate_backward<D: Dynamics + ?Sized>(
    u: &dyn TimeField,
    m: &D,
    x1: &[f64],
    t1: f64,
    t_min: f64,
    steps: usize,
) -> Result<Trajectory> {
    let d = m.dim();
    if m.intensity() > 0.0 {
        return Err(Error::InvalidArgument(
            "trajectories are only defined for λ = 0".into(),
        ));
    }
    if u.dim() != d || x1.len() != d {
        return Err(Error::Dimension {
            what: "trajectory start",
            expected: d,
            got: x1.len().min(u.dim()),
        });
    }
    if !(t_min > 0.0 && t_min < t1) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < t_min < t1, got t_min = {t_min}, t1 = {t1}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    if u.domain().is_some_and(|g| !g.contains(x1)) {
        return Err(Error::Domain(format!("start {x1:?} lies outside the box")));
    }

    let h = -(t1 - t_min) / steps as f64;
    let mut x = x1.to_vec();
    let mut k: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        values: Vec::with_capacity(steps + 1),
    };
    for n in 0..steps {
        let t = t1 + n as f64 * h;
        let p = velocity(u, m, t, &x, &mut k[0])?;
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.values.push(p);
        for (i, w) in [0.5, 0.5, 1.0].into_iter().enumerate() {
            for j in 0..d {
                tmp[j] = x[j] + w * h * k[i][j];
            }
            velocity(u, m, t + w * h, &tmp, &mut k[i + 1])?;
        }
        for j in 0..d {
            x[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
        }
    }
    let p = velocity(u, m, t_min, &x, &mut tmp)?;
    traj.times.push(t_min);
    traj.states.push(x);
    traj.values.push(p);
    Ok(traj)
}

/// `|x(t_min) − x₀|`
pub fn check_planning_convergence(traj: &Trajectory, x0: &[f64]) -> f64 {
    linalg::dist(traj.final_state(), x0)
}

/// Least-squares `c` in `|x(t) − x₀| ≈ c·t` over recorded times `≥ 2 t_min`.
pub fn convergence_rate(traj: &Trajectory, x0: &[f64]) -> f64 {
    let t_min = *traj.times.last().expect("trajectories are never empty");
    let (num, den) = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= 2.0 * t_min)
        .fold((0.0, 0.0), |(n, d), (t, x)| {
            (n + t * linalg::dist(x, x0), d + t * t)
        });
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceCheck {
    pub distance: f64,
    pub rate: f64,
    pub t_min: f64,
    pub passes: bool,
}

/// Passes when `|x(t_min) − x₀| ≤ (1 + rel_tol)·c·t_min` with `c` fitted at
/// larger times.
pub fn planning_convergence_report(traj: &Trajectory, x0: &[f64], rel_tol: f64) -> ConvergenceCheck {
    let t_min = *traj.times.last().expect("trajectories are never empty");
    let distance = check_planning_convergence(traj, x0);
    let rate = convergence_rate(traj, x0);
    ConvergenceCheck {
        distance,
        rate,
        t_min,
        passes: distance <= (1.0 + rel_tol) * rate * t_min + 1e-12,
    }
}

/// `max_k |du/dt − G(x, u)|` at interior samples, `du/dt` by centered
/// differences.
pub fn check_value_consistency<D: Dynamics + ?Sized>(traj: &Trajectory, m: &D) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 1..traj.len().saturating_sub(1) {
        let dt = traj.times[k + 1] - traj.times[k - 1];
        let g = m.cost(&traj.states[k], &traj.values[k]);
        for (j, gj) in g.iter().enumerate() {
            let du = (traj.values[k + 1][j] - traj.values[k - 1][j]) / dt;
            worst = worst.max((du - gj).abs());
        }
    }
    worst
}

/// `max_k |u(t_k) − u(t_0) − ∫ G(x, u) dt|` (trapezoid rule). Insensitive
/// to mesh-scale noise in `u`, unlike the pointwise check above.
pub fn integrated_value_defect<D: Dynamics + ?Sized>(traj: &Trajectory, m: &D) -> f64 {
    let Some(u0) = traj.values.first() else {
        return 0.0;
    };
    let mut acc = vec![0.0; u0.len()];
    let mut g_prev = m.cost(&traj.states[0], u0);
    let mut worst: f64 = 0.0;
    for k in 1..traj.len() {
        let g = m.cost(&traj.states[k], &traj.values[k]);
        let dt = traj.times[k] - traj.times[k - 1];
        for j in 0..acc.len() {
            acc[j] += 0.5 * dt * (g[j] + g_prev[j]);
            worst = worst.max((traj.values[k][j] - u0[j] - acc[j]).abs());
        }
        g_prev = g;
    }
    worst
}

/// Writes `t, x_1..x_d, u_1..u_d` rows.
pub fn write_csv<W: std::io::Write>(traj: &Trajectory, out: W) -> Result<()> {
    let d = traj.states.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("x_{j}")));
    header.extend((1..=d).map(|j| format!("u_{j}")));
    w.write_record(&header)?;
    for ((t, x), u) in traj.times.iter().zip(&traj.states).zip(&traj.values) {
        let row = std::iter::once(t)
            .chain(x)
            .chain(u)
            .map(|v| crate::io::fmt_num(*v));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FnTimeField, GridBox};
    use crate::model::{presets, FieldSpec, ModelSpec};
    use crate::solver::GridSolution;

    fn lq0_limit() -> FnTimeField<impl Fn(f64, &[f64]) -> Vec<f64>> {
        FnTimeField::new(1, |t, x: &[f64]| vec![(x[0] - 0.5) / t])
    }

    #[test]
    fn lq0_path_is_linear_in_time() {
        let m = presets::lq0();
        let tr = integrate_backward(&lq0_limit(), &m, &[1.0], 1.0, 0.1, 90).unwrap();
        assert!((tr.final_state()[0] - 0.55).abs() < 1e-10);
        for (t, x) in tr.times.iter().zip(&tr.states) {
            assert!((x[0] - (0.5 + 0.5 * t)).abs() < 1e-10);
        }
        assert!(tr.times.windows(2).all(|w| w[1] < w[0]));
        assert!(check_value_consistency(&tr, &m) < 1e-9);
    }

    #[test]
    fn trivial_paths() {
        let m = presets::lq0();
        let tr = integrate_backward(&lq0_limit(), &m, &[0.5], 1.0, 0.05, 20).unwrap();
        assert!(tr.states.iter().all(|x| x[0] == 0.5));
        assert_eq!(check_planning_convergence(&tr, &[0.5]), 0.0);

        let frozen = ModelSpec::new(FieldSpec::zero(), FieldSpec::zero(), vec![0.0, 0.0]).unwrap();
        let u = FnTimeField::new(2, |t, x: &[f64]| vec![x[0] / t, x[1] * t]);
        let tr = integrate_backward(&u, &frozen, &[0.3, -0.2], 1.0, 0.1, 10).unwrap();
        assert!(tr.states.iter().all(|x| x == &[0.3, -0.2]));
        assert!(check_value_consistency(&tr, &frozen) > 0.0);
        let still = FnTimeField::new(2, |_, x: &[f64]| vec![x[0], 2.0]);
        let tr = integrate_backward(&still, &frozen, &[0.3, -0.2], 1.0, 0.1, 10).unwrap();
        assert!(check_value_consistency(&tr, &frozen) < 1e-13);
    }

    #[test]
    fn integrated_defect_examples() {
        let frozen = ModelSpec::new(FieldSpec::zero(), FieldSpec::zero(), vec![0.0]).unwrap();
        let still = FnTimeField::new(1, |_, _: &[f64]| vec![2.0]);
        let tr = integrate_backward(&still, &frozen, &[0.3], 1.0, 0.1, 10).unwrap();
        assert_eq!(integrated_value_defect(&tr, &frozen), 0.0);
        // u = t drifts by the elapsed time when G = 0
        let ramp = FnTimeField::new(1, |t, _: &[f64]| vec![t]);
        let tr = integrate_backward(&ramp, &frozen, &[0.3], 1.0, 0.5, 10).unwrap();
        assert!((integrated_value_defect(&tr, &frozen) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distance_is_linear_in_t_min() {
        let m = presets::lq0();
        let near = |t_min| {
            let tr = integrate_backward(&lq0_limit(), &m, &[1.0], 1.0, t_min, 200).unwrap();
            check_planning_convergence(&tr, &[0.5])
        };
        assert!((near(0.05) - 0.025).abs() < 2e-3);
        let ratio = near(0.05) / near(0.025);
        assert!((1.8..=2.2).contains(&ratio));
        let tr = integrate_backward(&lq0_limit(), &m, &[1.0], 1.0, 0.05, 200).unwrap();
        let rep = planning_convergence_report(&tr, &[0.5], 0.1);
        assert!(rep.passes && (rep.rate - 0.5).abs() < 1e-8);
    }

    #[test]
    fn leaving_the_box_aborts() {
        let m = presets::lq0();
        let g = GridBox::cube(1, 0.0, 1.0, 20).unwrap();
        // U = (x − 0.5)·10 pushes the path outward when integrated backward
        let sol = GridSolution::from_fn(&g, &[0.0, 1.0], |_, x| vec![-(x[0] - 0.5) * 10.0]).unwrap();
        assert!(matches!(
            integrate_backward(&sol, &m, &[0.9], 1.0, 0.1, 100),
            Err(Error::LeftDomain { .. })
        ));
        assert!(matches!(
            integrate_backward(&sol, &m, &[1.5], 1.0, 0.1, 100),
            Err(Error::Domain(_))
        ));
        assert!(integrate_backward(&sol, &m, &[0.9], 1.0, 0.0, 100).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = presets::lq0();
        let tr = integrate_backward(&lq0_limit(), &m, &[1.0], 1.0, 0.5, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&tr, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x_1,u_1"));
        assert_eq!(lines.count(), 2);
    }
}
