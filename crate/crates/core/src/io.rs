//! Text formats: the sectioned key-value configuration, model files, and
//! solution CSV plus JSON-lines metadata.
//!
//! ```text
//! # comment
//! [model]
//! x0 = 0.5
//! alpha = 1
//!
//! [drift]
//! kind = affine
//! mp = 1
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridBox;
use crate::model::{AffineField, AffineNoiseMap, FieldSpec, LipschitzConstants, ModelSpec};
use crate::solver::{GridSolution, SolveMeta};

/// `%.12g`-style formatting: 12 significant digits, trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub sections: Vec<Section>,
}

fn config_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(line, "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(config_err(line, "empty section name"));
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(config_err(line, format!("duplicate section [{name}]")));
                }
                sections.push(Section {
                    name: name.to_string(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| config_err(line, format!("expected `key = value`, got `{body}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(config_err(line, "empty key"));
            }
            let section = sections
                .last_mut()
                .ok_or_else(|| config_err(line, "entry before any [section]"))?;
            if section.entries.iter().any(|e| e.key == key) {
                return Err(config_err(
                    line,
                    format!("duplicate key `{key}` in [{}]", section.name),
                ));
            }
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Self { sections })
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require_section(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| Error::Config(format!("missing section [{name}]")))
    }

    /// Rejects sections outside `known`.
    pub fn ensure_sections(&self, known: &[&str]) -> Result<()> {
        match self.sections.iter().find(|s| !known.contains(&s.name.as_str())) {
            Some(s) => Err(config_err(s.line, format!("unknown section [{}]", s.name))),
            None => Ok(()),
        }
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn err(&self, e: &Entry, msg: impl std::fmt::Display) -> Error {
        config_err(e.line, format!("[{}] {}: {msg}", self.name, e.key))
    }

    fn missing(&self, key: &str) -> Error {
        config_err(self.line, format!("[{}] missing key `{key}`", self.name))
    }

    /// Rejects keys outside `known`, catching typos.
    pub fn ensure_keys(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|e| !known.contains(&e.key.as_str())) {
            Some(e) => Err(self.err(e, "unknown key")),
            None => Ok(()),
        }
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.get(key).map(|e| e.value.as_str())
    }

    pub fn require_str(&self, key: &str) -> Result<&str> {
        self.str(key).ok_or_else(|| self.missing(key))
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|e| parse_f64(&e.value).ok_or_else(|| self.err(e, format!("`{}` is not a number", e.value))))
            .transpose()
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.f64(key)?.ok_or_else(|| self.missing(key))
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|e| {
                e.value
                    .parse::<usize>()
                    .map_err(|_| self.err(e, format!("`{}` is not a non-negative integer", e.value)))
            })
            .transpose()
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|e| {
                e.value
                    .parse::<u64>()
                    .map_err(|_| self.err(e, format!("`{}` is not a non-negative integer", e.value)))
            })
            .transpose()
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|e| match e.value.as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                v => Err(self.err(e, format!("`{v}` is not a boolean"))),
            })
            .transpose()
    }

    /// Numbers separated by commas and/or whitespace.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key).map(|e| self.parse_list(e, &e.value)).transpose()
    }

    pub fn require_list(&self, key: &str) -> Result<Vec<f64>> {
        self.list(key)?.ok_or_else(|| self.missing(key))
    }

    fn parse_list(&self, e: &Entry, s: &str) -> Result<Vec<f64>> {
        s.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| parse_f64(t).ok_or_else(|| self.err(e, format!("`{t}` is not a number"))))
            .collect()
    }

    /// `d×d` matrix with rows separated by `;`. A single number `a` means
    /// `a·Id`.
    pub fn matrix(&self, key: &str, d: usize) -> Result<Option<DMatrix<f64>>> {
        let Some(e) = self.get(key) else {
            return Ok(None);
        };
        let rows: Vec<Vec<f64>> = e
            .value
            .split(';')
            .map(|r| self.parse_list(e, r))
            .collect::<Result<_>>()?;
        if rows.len() == 1 && rows[0].len() == 1 {
            return Ok(Some(DMatrix::identity(d, d) * rows[0][0]));
        }
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(self.err(e, format!("expected a {d}x{d} matrix")));
        }
        Ok(Some(DMatrix::from_fn(d, d, |i, j| rows[i][j])))
    }
}

const MODEL_SECTIONS: [&str; 5] = ["model", "drift", "cost", "noise", "lipschitz"];

/// Coupling from section `name`; a missing section is the zero field.
pub fn field_from_config(cfg: &Config, name: &str, d: usize) -> Result<FieldSpec> {
    let Some(s) = cfg.section(name) else {
        return Ok(FieldSpec::zero());
    };
    let kind = s.str("kind").unwrap_or("affine");
    if kind != "affine" {
        s.ensure_keys(&["kind"])?;
        return FieldSpec::registered(kind)
            .map_err(|e| config_err(s.get("kind").map_or(s.line, |e| e.line), e));
    }
    s.ensure_keys(&["kind", "mx", "mp", "c"])?;
    let zero = DMatrix::zeros(d, d);
    let c = s.list("c")?.unwrap_or_else(|| vec![0.0; d]);
    if c.len() != d {
        return Err(config_err(s.line, format!("[{name}] c has {} entries, expected {d}", c.len())));
    }
    Ok(FieldSpec::Affine(AffineField::new(
        s.matrix("mx", d)?.unwrap_or_else(|| zero.clone()),
        s.matrix("mp", d)?.unwrap_or(zero),
        c,
    )?))
}

/// Reads a model from the `[model]`, `[drift]`, `[cost]`, `[noise]` and
/// `[lipschitz]` sections. Missing couplings are zero.
pub fn model_from_config(cfg: &Config) -> Result<ModelSpec> {
    let s = cfg.require_section("model")?;
    s.ensure_keys(&["x0", "alpha", "lambda"])?;
    let x0 = s.require_list("x0")?;
    let d = x0.len();
    if d == 0 {
        return Err(config_err(s.line, "[model] x0 is empty"));
    }
    let f = field_from_config(cfg, "drift", d)?;
    let g = field_from_config(cfg, "cost", d)?;
    let mut m = ModelSpec::new(f, g, x0)?;
    if let Some(alpha) = s.f64("alpha")? {
        m = m.with_alpha(alpha)?;
    }
    let lambda = s.f64("lambda")?.unwrap_or(0.0);
    let noise = match cfg.section("noise") {
        Some(n) => {
            n.ensure_keys(&["s", "e"])?;
            let e = n.list("e")?.unwrap_or_else(|| vec![0.0; d]);
            if e.len() != d {
                return Err(config_err(n.line, format!("[noise] e has {} entries, expected {d}", e.len())));
            }
            AffineNoiseMap::new(n.matrix("s", d)?.unwrap_or_else(|| DMatrix::identity(d, d)), e)?
        }
        None => AffineNoiseMap::identity(d),
    };
    m = m.with_noise(lambda, noise)?;
    if let Some(l) = cfg.section("lipschitz") {
        l.ensure_keys(&["fx", "fp", "gx", "gp"])?;
        let cur = m.lip;
        m = m.with_lipschitz(LipschitzConstants {
            fx: l.f64("fx")?.unwrap_or(cur.fx),
            fp: l.f64("fp")?.unwrap_or(cur.fp),
            gx: l.f64("gx")?.unwrap_or(cur.gx),
            gp: l.f64("gp")?.unwrap_or(cur.gp),
        })?;
    }
    Ok(m)
}

/// Parses a standalone model file.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let cfg = Config::parse(text)?;
    cfg.ensure_sections(&MODEL_SECTIONS)?;
    model_from_config(&cfg)
}

fn header(d: usize, value: &str) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=d).map(|j| format!("x_{j}")));
    h.extend((1..=d).map(|j| format!("{value}_{j}")));
    h
}

/// One row per recorded time and node: `t, x_1..x_d, U_1..U_d`.
pub fn write_solution_csv<W: Write>(sol: &GridSolution, out: W) -> Result<()> {
    let grid = sol.grid();
    let d = grid.dim();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(d, "U"))?;
    let nodes: Vec<Vec<f64>> = grid.nodes().collect();
    let mut row = Vec::with_capacity(2 * d + 1);
    for (k, &t) in sol.times().iter().enumerate() {
        let slice = sol.slice(k);
        for (node, x) in nodes.iter().enumerate() {
            row.clear();
            row.push(fmt_num(t));
            row.extend(x.iter().map(|v| fmt_num(*v)));
            row.extend(slice.node_value(node).iter().map(|v| fmt_num(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_solution_csv`]; the grid is recovered from the
/// coordinates of the first time block.
pub fn read_solution_csv<R: std::io::Read>(input: R) -> Result<GridSolution> {
    let mut r = csv::Reader::from_reader(input);
    let cols = r.headers()?.len();
    if cols < 3 || cols % 2 == 0 {
        return Err(Error::Config(format!("solution csv has {cols} columns")));
    }
    let d = (cols - 1) / 2;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Option<Vec<f64>> = rec.iter().map(parse_f64).collect();
        rows.push(vals.ok_or_else(|| config_err(i + 2, "non-numeric field"))?);
    }
    let first_t = rows.first().ok_or_else(|| Error::Config("empty solution csv".into()))?[0];
    let block: Vec<&Vec<f64>> = rows.iter().take_while(|r| r[0] == first_t).collect();
    let mut axes: Vec<Vec<f64>> = vec![Vec::new(); d];
    for r in &block {
        for j in 0..d {
            if !axes[j].contains(&r[1 + j]) {
                axes[j].push(r[1 + j]);
            }
        }
    }
    let lo: Vec<f64> = axes.iter().map(|a| a.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = axes.iter().map(|a| a.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let n: Vec<usize> = axes.iter().map(|a| a.len().saturating_sub(1)).collect();
    let grid = GridBox::new(lo, hi, n)?;
    let per = grid.node_count();
    if !rows.len().is_multiple_of(per) {
        return Err(Error::Config(format!(
            "{} rows is not a multiple of {per} nodes",
            rows.len()
        )));
    }
    let mut times = Vec::new();
    let mut slices = Vec::new();
    for chunk in rows.chunks(per) {
        times.push(chunk[0][0]);
        slices.push(chunk.iter().flat_map(|r| r[1 + d..].iter().copied()).collect());
    }
    GridSolution::new(grid, times, slices, SolveMeta::default())
}

/// Appends `record` as one JSON line.
pub fn write_json_line<W: Write, T: Serialize>(mut out: W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut out, record)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads every JSON line of `input` as a generic value.
pub fn read_json_lines<R: BufRead>(input: R) -> Result<Vec<serde_json::Value>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

/// Metadata record that accompanies a solution CSV.
#[derive(Clone, Debug, Serialize)]
pub struct SolutionMeta {
    pub kind: &'static str,
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
    pub records: usize,
    pub t_first: f64,
    pub t_last: f64,
    pub steps: usize,
    pub params: Option<crate::solver::SolverParams>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl SolutionMeta {
    pub fn of(sol: &GridSolution) -> Self {
        let g = sol.grid();
        Self {
            kind: "solution",
            dim: g.dim(),
            lo: g.lo().to_vec(),
            hi: g.hi().to_vec(),
            cells: g.cells().to_vec(),
            records: sol.len(),
            t_first: sol.times()[0],
            t_last: *sol.times().last().expect("solutions are never empty"),
            steps: sol.meta.steps,
            params: sol.meta.params.clone(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        );
        self
    }
}
