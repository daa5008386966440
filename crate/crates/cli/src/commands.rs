use mfg_planning::characteristics::solve_by_shooting;
use mfg_planning::halfspace::{
    check_factorization, check_inward_flow, check_log_blowup, from_log_coordinates, solve_halfspace,
    HalfspaceModel,
};
use mfg_planning::io::{fmt_num, write_json_line, write_solution_csv, SolutionMeta};
use mfg_planning::model::affine_couple_min_eigenvalue;
use mfg_planning::planning::{
    cross_monotonicity, estimate_certificate, extract_limit, graph_limit_diagnostic, run_penalization,
    PenalizationRun,
};
use mfg_planning::solver::SolveMeta;
use mfg_planning::trajectories::{self, integrated_value_defect, integrate_backward, planning_convergence_report};
use mfg_planning::yosida::{yosida_by_transport, yosida_field};
use mfg_planning::{
    check_couple_monotone, check_monotone_map, penalized_initial, solve_master, Error, GridSolution,
    Result, TimeField,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

/// Everything a command produces; files are written by the caller.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Vec<String>,
    pub warnings: Vec<String>,
    /// Failed diagnostic checks (the run itself completed).
    pub failed_checks: usize,
    /// Numerical failure after partial results were collected.
    pub error: Option<Error>,
}

impl Outcome {
    fn csv(&mut self, name: &str, sol: &GridSolution) -> Result<()> {
        let mut buf = Vec::new();
        write_solution_csv(sol, &mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }

    fn json_lines<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        for r in records {
            write_json_line(&mut buf, r)?;
        }
        self.files.push((name.into(), buf));
        Ok(())
    }

    fn json_pretty(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.files.push((name.into(), buf));
        Ok(())
    }

    fn say(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }
}

fn solve_first(cfg: &RunConfig) -> Result<(f64, GridSolution)> {
    let eps = cfg.eps[0];
    let u0 = penalized_initial(&cfg.model.x0, eps);
    Ok((eps, solve_master(&cfg.model, &cfg.grid, &u0, &cfg.params)?))
}

fn meta(sol: &GridSolution, command: &str, seed: u64) -> SolutionMeta {
    SolutionMeta::of(sol).with("command", command).with("seed", seed)
}

pub fn cmd_solve(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let mut out = Outcome::default();
    let (eps, sol) = solve_first(cfg)?;
    out.csv("solution.csv", &sol)?;
    out.json_lines("meta.json", &[meta(&sol, "solve", seed).with("eps", eps)])?;
    out.say(format!(
        "solve: eps = {}, {} nodes, {} slices, {} steps, max |U(t_end)| = {}",
        fmt_num(eps),
        cfg.grid.node_count(),
        sol.len(),
        sol.meta.steps,
        fmt_num(sol.last().max_abs())
    ));
    Ok(out)
}

fn penalize(cfg: &RunConfig, out: &mut Outcome) -> Result<PenalizationRun> {
    if cfg.eps.len() == 1 {
        out.warnings.push("single-element eps schedule: no Cauchy gap is computable".into());
    }
    let run = run_penalization(&cfg.model, &cfg.grid, &cfg.eps, &cfg.params, &cfg.penalization)?;
    for (k, gap) in run.gaps.iter().enumerate() {
        out.say(format!(
            "  gap eps {} -> {}: {}",
            fmt_num(run.eps_schedule[k]),
            fmt_num(run.eps_schedule[k + 1]),
            fmt_num(*gap)
        ));
    }
    if let Some(f) = &run.failure {
        out.warnings.push(format!("continuation stopped at eps = {}: {}", fmt_num(f.eps), f.message));
    }
    Ok(run)
}

/// Extracted limit at every recorded time `≥ t_min`.
fn limit_solution(run: &PenalizationRun, out: &mut Outcome) -> Result<Option<GridSolution>> {
    let Some(finest) = run.finest() else {
        return Ok(None);
    };
    let t_min = run.options.t_min;
    let times: Vec<f64> = finest.times().iter().copied().filter(|t| *t >= t_min).collect();
    if times.is_empty() {
        return Ok(None);
    }
    let mut slices = Vec::with_capacity(times.len());
    let mut flagged = 0;
    for &t in &times {
        let lim = extract_limit(run, t)?;
        flagged += lim.flagged.len();
        slices.push(lim.field.values);
    }
    if flagged > 0 {
        out.warnings.push(format!("{flagged} nodes flagged during limit extraction (written as nan)"));
    }
    Ok(Some(GridSolution::new(finest.grid().clone(), times, slices, SolveMeta::default())?))
}

fn finish_run(run: &PenalizationRun, out: &mut Outcome) {
    if let Some(f) = &run.failure {
        out.error = Some(match f.last_stable_time {
            Some(t) => Error::BlowUp { last_stable_time: t },
            None => Error::NoConvergence {
                iterations: run.solutions.len(),
                residual: f64::NAN,
            },
        });
    }
}

pub fn cmd_plan(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let mut out = Outcome::default();
    let run = penalize(cfg, &mut out)?;
    let table = run.table();
    if let Some(finest) = run.finest() {
        out.csv("solution.csv", finest)?;
        if let Some(limit) = limit_solution(&run, &mut out)? {
            out.csv("limit.csv", &limit)?;
        }
        out.json_lines(
            "meta.json",
            &[meta(finest, "plan", seed)
                .with("eps", run.finest_eps())
                .with("delta", run.delta())],
        )?;
    }
    out.json_pretty("convergence.json", &serde_json::to_value(&table)?)?;
    out.say(format!(
        "plan: {} of {} solves, converged = {}",
        run.solutions.len(),
        run.eps_schedule.len(),
        table.converged
    ));
    finish_run(&run, &mut out);
    Ok(out)
}

pub fn cmd_yosida(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let mut out = Outcome::default();
    let (eps, sol) = solve_first(cfg)?;
    let delta = cfg.penalization.delta;
    let d = cfg.grid.dim();
    let mut rows = vec![{
        let mut h = vec!["t".to_string()];
        h.extend((1..=d).map(|j| format!("x_{j}")));
        h.extend((1..=d).map(|j| format!("V_{j}")));
        h.extend((1..=d).map(|j| format!("W_{j}")));
        h.join(",")
    }];
    let mut records = Vec::new();
    for &t in &cfg.yosida.times {
        let slice = sol.slice_at(t);
        let v = yosida_field(&slice, &cfg.grid, delta)?;
        let w = yosida_by_transport(&slice, delta, cfg.yosida.burgers_steps)?;
        for (node, x) in cfg.grid.nodes().enumerate() {
            let cells: Vec<String> = std::iter::once(t)
                .chain(x)
                .chain(v.field.node_value(node).iter().copied())
                .chain(w.node_value(node).iter().copied())
                .map(fmt_num)
                .collect();
            rows.push(cells.join(","));
        }
        let gap = v.field.sup_distance(&w);
        let lip = v.lipschitz_norm();
        out.say(format!(
            "yosida t = {}: resolvent vs transport {}, |DV| = {} (1/delta = {})",
            fmt_num(t),
            fmt_num(gap),
            fmt_num(lip),
            fmt_num(1.0 / delta)
        ));
        records.push(json!({"t": t, "oracle_gap": gap, "lipschitz": lip, "bound": 1.0 / delta}));
    }
    let mut csv = rows.join("\n");
    csv.push('\n');
    out.files.push(("yosida.csv".into(), csv.into_bytes()));
    out.json_lines(
        "meta.json",
        &[meta(&sol, "yosida", seed)
            .with("eps", eps)
            .with("delta", delta)
            .with("slices", records)],
    )?;
    Ok(out)
}

pub fn cmd_traject(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let tc = cfg
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::Config("missing section [trajectory]".into()))?;
    let mut out = Outcome::default();
    let run = penalize(cfg, &mut out)?;
    let Some(u) = run.finest() else {
        finish_run(&run, &mut out);
        return Ok(out);
    };
    let mut records = Vec::new();
    for (k, x1) in tc.starts.iter().enumerate() {
        let tr = integrate_backward(u, &cfg.model, x1, tc.t1, tc.t_min, tc.steps)?;
        let conv = planning_convergence_report(&tr, &cfg.model.x0, 0.1);
        let defect = integrated_value_defect(&tr, &cfg.model);
        let mut buf = Vec::new();
        trajectories::write_csv(&tr, &mut buf)?;
        out.files.push((format!("trajectory_{k}.csv"), buf));
        out.say(format!(
            "trajectory {k}: |x(t_min) - x0| = {}, fitted rate {}, value defect {}",
            fmt_num(conv.distance),
            fmt_num(conv.rate),
            fmt_num(defect)
        ));
        records.push(json!({"start": x1, "convergence": conv, "value_defect": defect}));
    }
    out.json_lines("trajectories.json", &records)?;
    out.json_lines(
        "meta.json",
        &[meta(u, "traject", seed).with("eps", run.finest_eps())],
    )?;
    finish_run(&run, &mut out);
    Ok(out)
}

pub fn cmd_halfspace(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let hc = cfg
        .halfspace
        .as_ref()
        .ok_or_else(|| Error::Config("missing section [halfspace]".into()))?;
    let mut out = Outcome::default();
    let hm = HalfspaceModel::new(cfg.model.clone(), hc.reduced_drift.clone())?;
    let factor = check_factorization(&hm, &cfg.grid, 2.0, 2000, seed);
    let flux = check_inward_flow(&hm.base, 2000, seed);
    let sol = solve_halfspace(&hm, &hc.box_y, &cfg.eps, &cfg.params, &cfg.penalization)?;
    let Ok(v) = sol.v() else {
        finish_run(&sol.run, &mut out);
        return Ok(out);
    };
    out.csv("solution_y.csv", v)?;

    let d = hc.box_y.dim();
    let mut rows = vec![{
        let mut h = vec!["t".to_string()];
        h.extend((1..=d).map(|j| format!("x_{j}")));
        h.extend((1..=d).map(|j| format!("y_{j}")));
        h.extend((1..=d).map(|j| format!("U_{j}")));
        h.join(",")
    }];
    let nodes: Vec<Vec<f64>> = hc.box_y.nodes().collect();
    for (k, &t) in v.times().iter().enumerate() {
        let slice = v.slice(k);
        for (node, y) in nodes.iter().enumerate() {
            let x = from_log_coordinates(y);
            let cells: Vec<String> = std::iter::once(t)
                .chain(x)
                .chain(y.iter().copied())
                .chain(slice.node_value(node).iter().copied())
                .map(fmt_num)
                .collect();
            rows.push(cells.join(","));
        }
    }
    let mut csv = rows.join("\n");
    csv.push('\n');
    out.files.push(("solution_x.csv".into(), csv.into_bytes()));

    let u = sol.field()?;
    let (a, b) = hc.tail;
    let n = hc.tail_samples.max(2);
    let mut x_rest = cfg.model.x0.clone();
    let tail: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            x_rest[0] = a * (b / a).powf(k as f64 / (n - 1) as f64);
            x_rest.clone()
        })
        .collect();
    let mut fits = Vec::new();
    for &t in &hc.fit_times {
        let fit = check_log_blowup(&u, t, &tail, hc.fit_tol)?;
        out.say(format!(
            "halfspace t = {}: U1 ~ {} ln x1 + {} (residual {})",
            fmt_num(t),
            fmt_num(fit.a),
            fmt_num(fit.b),
            fmt_num(fit.residual)
        ));
        fits.push(fit);
    }
    out.say(format!(
        "halfspace: factorization defect {}, min boundary flux {}",
        fmt_num(factor),
        fmt_num(flux)
    ));
    out.json_lines(
        "halfspace.json",
        &[json!({"factorization_defect": factor, "min_boundary_flux": flux, "log_fits": fits})],
    )?;
    out.json_lines(
        "meta.json",
        &[meta(v, "halfspace", seed).with("eps", sol.run.finest_eps())],
    )?;
    finish_run(&sol.run, &mut out);
    Ok(out)
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    status: &'static str,
    details: Value,
}

fn check(name: &'static str, pass: Option<bool>, details: Value) -> Check {
    Check {
        name,
        status: match pass {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "skip",
        },
        details,
    }
}

pub fn cmd_verify(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let mut out = Outcome::default();
    let vc = &cfg.verify;
    let mut checks = Vec::new();

    let mono = check_couple_monotone(&cfg.model, &cfg.grid, vc.samples, seed);
    let eig = affine_couple_min_eigenvalue(&cfg.model);
    checks.push(check(
        "couple_monotone",
        Some(mono.passes()),
        json!({"report": mono, "affine_min_eigenvalue": eig}),
    ));

    let run = penalize(cfg, &mut out)?;
    let table = run.table();
    let cauchy = if run.eps_schedule.len() < 2 {
        None
    } else {
        Some(table.converged && table.gaps_decreasing)
    };
    checks.push(check("penalization_cauchy", cauchy, serde_json::to_value(&table)?));

    let t_min = cfg.penalization.t_min;
    let mut worst: f64 = f64::INFINITY;
    for (k, s) in run.solutions.iter().enumerate() {
        for (j, _) in s.times().iter().enumerate().filter(|(_, t)| **t >= t_min) {
            worst = worst.min(check_monotone_map(&s.slice(j), s.grid(), 1000, seed + (k * 1000 + j) as u64));
        }
    }
    checks.push(check(
        "monotone_slices",
        (!run.solutions.is_empty()).then_some(worst >= -mfg_planning::model::TOL_MONO_GRID),
        json!({"min_normalized_pairing": worst, "tol": mfg_planning::model::TOL_MONO_GRID}),
    ));

    let reports: Vec<_> = run
        .solutions
        .iter()
        .map(|s| estimate_certificate(&cfg.model, s, &vc.certificate_times, vc.certificate_tol))
        .collect();
    let applicable = cfg.model.alpha > 0.0 && !reports.is_empty();
    checks.push(check(
        "regularizing_estimate",
        applicable.then(|| reports.iter().all(|r| r.passes)),
        serde_json::to_value(&reports)?,
    ));

    if let Some(finest) = run.finest() {
        let mut times = vc.graph_times.clone();
        times.sort_by(f64::total_cmp);
        let slices = times
            .iter()
            .map(|&t| extract_limit(&run, t).map(|l| l.field.values))
            .collect::<Result<Vec<_>>>()?;
        let limit = GridSolution::new(finest.grid().clone(), times, slices, SolveMeta::default())?;
        let diag = graph_limit_diagnostic(&limit, &cfg.grid, &cfg.model.x0, vc.level, &vc.graph_times);
        checks.push(check("graph_limit", Some(diag.passes), serde_json::to_value(&diag)?));

        let t = vc.cross_time;
        let direct = finest.slice_at(t);
        let lim = extract_limit(&run, t)?;
        let w = cross_monotonicity(&direct, &lim.field, &cfg.grid, vc.samples, seed);
        checks.push(check(
            "cross_monotonicity",
            Some(w >= -1e-3),
            json!({"t": t, "min_pairing": w, "tol": -1e-3, "flagged": lim.flagged.len()}),
        ));
    }

    for c in &checks {
        out.say(format!("  [{}] {}", c.status, c.name));
    }
    let failed = checks.iter().filter(|c| c.status == "fail").count();
    out.failed_checks = failed;
    out.say(format!("verify: {} checks, {failed} failed", checks.len()));
    out.json_pretty(
        "report.json",
        &json!({"command": "verify", "seed": seed, "passed": failed == 0, "checks": checks}),
    )?;
    finish_run(&run, &mut out);
    Ok(out)
}

pub fn cmd_probe(cfg: &RunConfig, seed: u64, t: Option<f64>, x: Option<Vec<f64>>) -> Result<Outcome> {
    let t = t
        .or(cfg.probe.t)
        .ok_or_else(|| Error::Config("probe needs a time: --t or [probe] t".into()))?;
    let x = x
        .or_else(|| cfg.probe.x.clone())
        .ok_or_else(|| Error::Config("probe needs a point: --x or [probe] x".into()))?;
    if x.len() != cfg.model.dim() {
        return Err(Error::Config(format!(
            "probe point has {} coordinates, model has d = {}",
            x.len(),
            cfg.model.dim()
        )));
    }
    if !(t > 0.0 && t <= cfg.params.t_end) {
        return Err(Error::Config(format!("probe time {t} outside (0, t_end]")));
    }
    let mut out = Outcome::default();
    let (eps, sol) = solve_first(cfg)?;
    let grid_value = sol.eval(t, &x);
    let fmt = |v: &[f64]| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", ");
    let mut line = format!("probe t = {}, x = [{}]: grid [{}]", fmt_num(t), fmt(&x), fmt(&grid_value));
    let mut record = json!({"t": t, "x": x, "eps": eps, "seed": seed, "grid": grid_value});
    if cfg.model.lambda > 0.0 {
        out.warnings.push("characteristics are not available with common noise; grid value only".into());
    } else {
        let oracle = solve_by_shooting(&cfg.model, &penalized_initial(&cfg.model.x0, eps), t, &x, 1e-12)?;
        let diff = grid_value
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        line += &format!(", characteristics [{}], |difference| = {}", fmt(&oracle), fmt_num(diff));
        record["oracle"] = json!(oracle);
        record["difference"] = json!(diff);
    }
    out.say(line);
    out.json_lines("probe.json", &[record])?;
    Ok(out)
}
