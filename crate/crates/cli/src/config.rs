//! Run configuration: one sectioned text file.
//!
//! The model either lives in the same file (`[model]`, `[drift]`, ...) or in
//! a separate model file named by `[run] model = path`, resolved relative to
//! the configuration file.

use std::path::{Path, PathBuf};

use mfg_planning::io::{field_from_config, model_from_config, parse_model, Config, Section};
use mfg_planning::planning::PenalizationOptions;
use mfg_planning::{Error, FieldSpec, GridBox, ModelSpec, Result, SolverParams};

const SECTIONS: [&str; 15] = [
    "run",
    "model",
    "drift",
    "cost",
    "noise",
    "lipschitz",
    "box",
    "solver",
    "penalization",
    "verify",
    "trajectory",
    "yosida",
    "halfspace",
    "reduced_drift",
    "probe",
];

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub samples: usize,
    pub level: f64,
    /// Times for the sublevel-diameter diagnostic.
    pub graph_times: Vec<f64>,
    pub certificate_times: Vec<f64>,
    pub certificate_tol: f64,
    /// Time at which the direct solve and the extracted limit are compared.
    pub cross_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryConfig {
    pub starts: Vec<Vec<f64>>,
    pub t1: f64,
    pub t_min: f64,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct YosidaConfig {
    pub times: Vec<f64>,
    pub burgers_steps: usize,
}

#[derive(Clone, Debug)]
pub struct HalfspaceConfig {
    pub reduced_drift: FieldSpec,
    pub box_y: GridBox,
    pub fit_times: Vec<f64>,
    /// `x₁` range of the log fit.
    pub tail: (f64, f64),
    pub tail_samples: usize,
    pub fit_tol: f64,
}

#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub t: Option<f64>,
    pub x: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub grid: GridBox,
    pub params: SolverParams,
    pub eps: Vec<f64>,
    pub penalization: PenalizationOptions,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub verify: VerifyConfig,
    pub trajectory: Option<TrajectoryConfig>,
    pub yosida: YosidaConfig,
    pub halfspace: Option<HalfspaceConfig>,
    pub probe: ProbeConfig,
}

fn empty_section(name: &str) -> Section {
    Section {
        name: name.into(),
        line: 0,
        entries: Vec::new(),
    }
}

/// Attaches the line of the key named in backticks by `e`, if any.
fn locate(section: &Section, e: Error) -> Error {
    let Error::Config(msg) = &e else {
        return e;
    };
    let key = msg.split('`').nth(1);
    match key.and_then(|k| section.get(k)) {
        Some(entry) => Error::Config(format!("line {}: [{}] {msg}", entry.line, section.name)),
        None => e,
    }
}

/// A list of length `d`, or a single value broadcast to all axes.
fn per_axis(s: &Section, key: &str, d: usize) -> Result<Vec<f64>> {
    let v = s.require_list(key)?;
    match v.len() {
        1 => Ok(vec![v[0]; d]),
        n if n == d => Ok(v),
        n => Err(Error::Config(format!(
            "line {}: [{}] {key}: expected 1 or {d} values, got {n}",
            s.get(key).map_or(s.line, |e| e.line),
            s.name
        ))),
    }
}

fn grid_from(s: &Section, d: usize) -> Result<GridBox> {
    let lo = per_axis(s, "lo", d)?;
    let hi = per_axis(s, "hi", d)?;
    let n: Vec<usize> = per_axis(s, "n", d)?
        .into_iter()
        .map(|v| v as usize)
        .collect();
    GridBox::new(lo, hi, n).map_err(|e| Error::Config(format!("[{}] {e}", s.name)))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let cfg = Config::parse(text)?;
        cfg.ensure_sections(&SECTIONS)?;
        let run = cfg.section("run").cloned().unwrap_or_else(|| empty_section("run"));
        run.ensure_keys(&["model", "out", "seed"])?;

        let model = match run.str("model") {
            Some(file) => {
                if cfg.section("model").is_some() {
                    return Err(Error::Config(
                        "both [run] model and an inline [model] section are given".into(),
                    ));
                }
                parse_model(&std::fs::read_to_string(base_dir.join(file))?)?
            }
            None => model_from_config(&cfg)?,
        };
        let d = model.dim();

        let bx = cfg.require_section("box")?;
        bx.ensure_keys(&["lo", "hi", "n"])?;
        let grid = grid_from(bx, d)?;

        let solver = cfg.section("solver").cloned().unwrap_or_else(|| empty_section("solver"));
        solver.ensure_keys(&[
            "cfl",
            "visc",
            "t_end",
            "dt_max",
            "record_dt",
            "max_steps",
            "overflow_guard",
        ])?;
        let defaults = SolverParams::default();
        let params = SolverParams {
            cfl: solver.f64("cfl")?.unwrap_or(defaults.cfl),
            visc: solver.f64("visc")?.unwrap_or(defaults.visc),
            t_end: solver.f64("t_end")?.unwrap_or(defaults.t_end),
            dt_max: solver.f64("dt_max")?.unwrap_or(defaults.dt_max),
            record_dt: solver.f64("record_dt")?,
            overflow_guard: solver.f64("overflow_guard")?.unwrap_or(defaults.overflow_guard),
            max_steps: solver.usize("max_steps")?.unwrap_or(defaults.max_steps),
        };
        params.validate().map_err(|e| locate(&solver, e))?;

        let pen = cfg.require_section("penalization")?;
        pen.ensure_keys(&["eps", "delta", "t_min", "conv_tol"])?;
        let eps = pen.require_list("eps")?;
        if eps.is_empty() {
            return Err(locate(pen, Error::Config("`eps` schedule is empty".into())));
        }
        let pd = PenalizationOptions::default();
        let penalization = PenalizationOptions {
            t_min: pen.f64("t_min")?.unwrap_or(pd.t_min),
            delta: pen.f64("delta")?.unwrap_or(pd.delta),
            conv_tol: pen.f64("conv_tol")?.unwrap_or(pd.conv_tol),
        };

        let v = cfg.section("verify").cloned().unwrap_or_else(|| empty_section("verify"));
        v.ensure_keys(&[
            "samples",
            "level",
            "graph_times",
            "certificate_times",
            "certificate_tol",
            "cross_time",
        ])?;
        let t_min = penalization.t_min;
        let verify = VerifyConfig {
            samples: v.usize("samples")?.unwrap_or(10_000),
            level: v.f64("level")?.unwrap_or(2.0),
            graph_times: v.list("graph_times")?.unwrap_or_else(|| {
                [4.0, 2.0, 1.0].iter().map(|k| k * t_min).filter(|t| *t <= params.t_end).collect()
            }),
            certificate_times: v.list("certificate_times")?.unwrap_or_else(|| vec![t_min, params.t_end]),
            certificate_tol: v.f64("certificate_tol")?.unwrap_or(0.05),
            cross_time: v.f64("cross_time")?.unwrap_or(0.5 * (t_min + params.t_end)),
        };

        let trajectory = match cfg.section("trajectory") {
            Some(s) => {
                s.ensure_keys(&["starts", "t1", "t_min", "steps"])?;
                let raw = s.require_str("starts")?;
                let starts: Vec<Vec<f64>> = raw
                    .split(';')
                    .map(|row| {
                        row.split(|c: char| c == ',' || c.is_whitespace())
                            .filter(|t| !t.is_empty())
                            .map(|t| t.parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                    })
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| locate(s, Error::Config("`starts` must be numbers, rows separated by `;`".into())))?;
                if starts.iter().any(|x| x.len() != d) {
                    return Err(locate(s, Error::Config(format!("`starts` rows must have {d} entries"))));
                }
                Some(TrajectoryConfig {
                    starts,
                    t1: s.f64("t1")?.unwrap_or(params.t_end),
                    t_min: s.f64("t_min")?.unwrap_or(t_min),
                    steps: s.usize("steps")?.unwrap_or(1000),
                })
            }
            None => None,
        };

        let y = cfg.section("yosida").cloned().unwrap_or_else(|| empty_section("yosida"));
        y.ensure_keys(&["times", "burgers_steps"])?;
        let yosida = YosidaConfig {
            times: y.list("times")?.unwrap_or_else(|| vec![params.t_end]),
            burgers_steps: y.usize("burgers_steps")?.unwrap_or(1),
        };

        let halfspace = match cfg.section("halfspace") {
            Some(s) => {
                s.ensure_keys(&["lo", "hi", "n", "fit_times", "tail", "tail_samples", "fit_tol"])?;
                let tail = s.list("tail")?.unwrap_or_else(|| vec![1.2e-3, 0.1]);
                if tail.len() != 2 {
                    return Err(locate(s, Error::Config("`tail` needs two values".into())));
                }
                Some(HalfspaceConfig {
                    reduced_drift: field_from_config(&cfg, "reduced_drift", d)?,
                    box_y: grid_from(s, d)?,
                    fit_times: s.list("fit_times")?.unwrap_or_else(|| vec![params.t_end]),
                    tail: (tail[0], tail[1]),
                    tail_samples: s.usize("tail_samples")?.unwrap_or(30),
                    fit_tol: s.f64("fit_tol")?.unwrap_or(1e-3),
                })
            }
            None => None,
        };

        let p = cfg.section("probe").cloned().unwrap_or_else(|| empty_section("probe"));
        p.ensure_keys(&["t", "x"])?;
        let probe = ProbeConfig {
            t: p.f64("t")?,
            x: p.list("x")?,
        };

        Ok(Self {
            model,
            grid,
            params,
            eps,
            penalization,
            seed: run.u64("seed")?.unwrap_or(1),
            out_dir: run.str("out").map(PathBuf::from),
            verify,
            trajectory,
            yosida,
            halfspace,
            probe,
        })
    }
}
