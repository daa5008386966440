//! Browser demo on the one-dimensional problem `F(x, p) = p`,
//! `G(x, p) = g·x`, target `x₀ = 0.5`, state box `[-1, 2]`.
//!
//! The [`demo`] functions are plain Rust (tested natively); the
//! `#[wasm_bindgen]` exports below only convert errors.

use wasm_bindgen::prelude::*;

pub mod demo {
    use mfg_planning::characteristics::solve_by_shooting;
    use mfg_planning::model::presets;
    use mfg_planning::planning::{run_penalization, PenalizationOptions};
    use mfg_planning::trajectories::integrate_backward;
    use mfg_planning::yosida::yosida_field;
    use mfg_planning::{penalized_initial, solve_master, Error, GridBox, ModelSpec, Result, SolverParams};

    pub const X0: f64 = 0.5;
    pub const LO: f64 = -1.0;
    pub const HI: f64 = 2.0;
    pub const MAX_CELLS: usize = 2000;

    fn model(g: f64) -> Result<ModelSpec> {
        if !(0.0..=2.0).contains(&g) {
            return Err(Error::InvalidArgument(format!("coupling g = {g} outside [0, 2]")));
        }
        Ok(presets::linear_coupled(1, g, vec![X0]))
    }

    fn grid(cells: usize) -> Result<GridBox> {
        if !(8..=MAX_CELLS).contains(&cells) {
            return Err(Error::InvalidArgument(format!("cells = {cells} outside [8, {MAX_CELLS}]")));
        }
        GridBox::cube(1, LO, HI, cells)
    }

    fn check_time(t: f64) -> Result<()> {
        if t > 0.0 && t <= 2.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("t = {t} outside (0, 2]")))
        }
    }

    /// Node coordinates with one or more value columns.
    #[derive(Clone, Debug, Default, PartialEq)]
    pub struct Profile {
        pub x: Vec<f64>,
        pub columns: Vec<Vec<f64>>,
    }

    /// `U^ε(t, ·)` from the grid solver next to the characteristics value.
    pub fn penalized_profile(g: f64, eps: f64, t: f64, cells: usize) -> Result<Profile> {
        check_time(t)?;
        let m = model(g)?;
        let grid = grid(cells)?;
        let u0 = penalized_initial(&m.x0, eps);
        let sol = solve_master(&m, &grid, &u0, &SolverParams::new(t))?;
        let slice = sol.slice_at(t);
        let x: Vec<f64> = grid.nodes().map(|x| x[0]).collect();
        let oracle = x
            .iter()
            .map(|&xi| solve_by_shooting(&m, &u0, t, &[xi], 1e-10).map(|u| u[0]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Profile {
            x,
            columns: vec![slice.values, oracle],
        })
    }

    /// `U^ε(t, ·)` and its Yosida approximation `V` with parameter `delta`.
    pub fn yosida_profile(g: f64, eps: f64, t: f64, delta: f64, cells: usize) -> Result<Profile> {
        check_time(t)?;
        let m = model(g)?;
        let grid = grid(cells)?;
        let sol = solve_master(&m, &grid, &penalized_initial(&m.x0, eps), &SolverParams::new(t))?;
        let slice = sol.slice_at(t);
        let v = yosida_field(&slice, &grid, delta)?;
        Ok(Profile {
            x: grid.nodes().map(|x| x[0]).collect(),
            columns: vec![slice.values, v.field.values],
        })
    }

    /// Backward optimal paths from `starts` at `t = 1` down to `t_min`.
    #[derive(Clone, Debug, Default, PartialEq)]
    pub struct Paths {
        pub times: Vec<f64>,
        /// One row of `times.len()` positions per start.
        pub positions: Vec<Vec<f64>>,
    }

    pub fn planned_paths(g: f64, t_min: f64, starts: &[f64], cells: usize) -> Result<Paths> {
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(Error::InvalidArgument(format!("t_min = {t_min} outside (0, 1)")));
        }
        let m = model(g)?;
        let grid = grid(cells)?;
        let params = SolverParams::new(1.0).with_record_dt(0.01);
        let opts = PenalizationOptions {
            t_min,
            ..PenalizationOptions::default()
        };
        let run = run_penalization(&m, &grid, &[0.05, 0.0125, 0.003125], &params, &opts)?;
        let u = run
            .finest()
            .ok_or_else(|| Error::InvalidArgument("penalization produced no solution".into()))?;
        let steps = 200;
        let mut out = Paths::default();
        for &x1 in starts {
            let tr = integrate_backward(u, &m, &[x1], 1.0, t_min, steps)?;
            if out.times.is_empty() {
                out.times = tr.times.clone();
            }
            out.positions.push(tr.states.iter().map(|x| x[0]).collect());
        }
        Ok(out)
    }
}

fn js_err(e: mfg_planning::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Columns packed for JavaScript: `x`, then each value column.
#[wasm_bindgen]
pub struct Table {
    rows: usize,
    data: Vec<f64>,
}

#[wasm_bindgen]
impl Table {
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.data.len().checked_div(self.rows).unwrap_or(0)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.data
            .get(k * self.rows..(k + 1) * self.rows)
            .map(<[f64]>::to_vec)
            .unwrap_or_default()
    }
}

impl From<demo::Profile> for Table {
    fn from(p: demo::Profile) -> Self {
        let rows = p.x.len();
        let mut data = p.x;
        p.columns.into_iter().for_each(|c| data.extend(c));
        Self { rows, data }
    }
}

impl From<demo::Paths> for Table {
    fn from(p: demo::Paths) -> Self {
        let rows = p.times.len();
        let mut data = p.times;
        p.positions.into_iter().for_each(|c| data.extend(c));
        Self { rows, data }
    }
}

/// Columns `x, U (grid), U (characteristics)`.
#[wasm_bindgen(js_name = penalizedProfile)]
pub fn penalized_profile(g: f64, eps: f64, t: f64, cells: usize) -> Result<Table, JsError> {
    demo::penalized_profile(g, eps, t, cells).map(Table::from).map_err(js_err)
}

/// Columns `x, U, V`.
#[wasm_bindgen(js_name = yosidaProfile)]
pub fn yosida_profile(g: f64, eps: f64, t: f64, delta: f64, cells: usize) -> Result<Table, JsError> {
    demo::yosida_profile(g, eps, t, delta, cells).map(Table::from).map_err(js_err)
}

/// Columns `t`, then one position column per start.
#[wasm_bindgen(js_name = plannedPaths)]
pub fn planned_paths(g: f64, t_min: f64, starts: Vec<f64>, cells: usize) -> Result<Table, JsError> {
    demo::planned_paths(g, t_min, &starts, cells).map(Table::from).map_err(js_err)
}
