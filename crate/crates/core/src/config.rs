//! Reading a game from a JSON or TOML document.
//!
//! Layout (JSON shown, TOML uses the same tree):
//!
//! ```json
//! {
//!   "dimensions": {"n": 1, "m1": 1, "m2": 1},
//!   "grid": {"t0": 0.0, "T": 1.0, "steps": 1000},
//!   "jumps": {"type": "unit", "intensity": 1.0},
//!   "dynamics": {"A": [0.2], "B1": [0.5], "B2": [1.0], "F": [0.3]},
//!   "costs": {"Q1": [1.0], "R1": [1.0], "R2": [1.0], "M1": [1.0]},
//!   "initial_state": [1.0],
//!   "monte_carlo": {"paths": 10000, "seed": 7}
//! }
//! ```
//!
//! A matrix is a flat row-major array (a bare number is accepted for 1x1).
//! A time-varying coefficient is an array of `steps + 1` such matrices.
//! With `"type": "finite_marks"` the jump coefficients `F`, `G1`, `G2` are
//! arrays with one entry per mark. Missing dynamics coefficients and the
//! weights `Q1`, `Q2`, `M1`, `M2` default to zero; `R1` and `R2` are required.
//!
//! An optional `run` section holds command settings:
//! `{"case": "auto", "out": "out", "workers": 0, "se_multiplier": 3,
//! "residual_factor": 10, "agreement": 1e-8, "epsilon": 0.1}`.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::model::{validate_model, Coef, CostSpec, JumpSpec, ModelSpec, TimeGrid, ValidationReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Syntax(String),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("model rejected: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Rejected(Vec<crate::model::ValidationIssue>),
}

impl ConfigError {
    fn at(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Toml,
}

impl Format {
    /// `.toml` files are TOML; everything else is read as JSON.
    pub fn from_path(path: &std::path::Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("toml") => Format::Toml,
            _ => Format::Json,
        }
    }
}

pub fn parse_document(text: &str, format: Format) -> Result<Value, ConfigError> {
    match format {
        Format::Json => serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string())),
        Format::Toml => {
            let v: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
            serde_json::to_value(v).map_err(|e| ConfigError::Syntax(e.to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarlo {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_paths() -> usize {
    10_000
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo {
            paths: default_paths(),
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dimensions {
    n: usize,
    m1: usize,
    m2: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    #[serde(default)]
    t0: f64,
    #[serde(rename = "T")]
    t_end: f64,
    steps: usize,
}

/// Command settings from the optional `run` section. Unset fields fall back
/// to command-line flags or built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub case: Option<String>,
    pub out: Option<String>,
    pub workers: Option<usize>,
    pub se_multiplier: Option<f64>,
    pub residual_factor: Option<f64>,
    pub agreement: Option<f64>,
    pub epsilon: Option<f64>,
}

/// A parsed game plus the untouched document, for callers that read
/// further sections of their own.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub model: ModelSpec,
    pub costs: CostSpec,
    pub monte_carlo: MonteCarlo,
    pub run: RunSection,
    pub validation: ValidationReport,
    pub document: Value,
}

fn section<'de, T: Deserialize<'de>>(doc: &'de Value, key: &str) -> Result<T, ConfigError> {
    let v = doc.get(key).ok_or_else(|| ConfigError::at(key, "missing section"))?;
    T::deserialize(v).map_err(|e| ConfigError::at(key, e.to_string()))
}

fn number(v: &Value, field: &str) -> Result<f64, ConfigError> {
    v.as_f64().ok_or_else(|| ConfigError::at(field, format!("expected a number, got {v}")))
}

fn is_matrix_literal(v: &Value) -> bool {
    v.is_number() || v.as_array().is_some_and(|a| a.iter().all(Value::is_number))
}

fn matrix(v: &Value, field: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, ConfigError> {
    if v.is_number() {
        if rows * cols != 1 {
            return Err(ConfigError::at(field, format!("expected {} entries for a {rows}x{cols} matrix, got a single number", rows * cols)));
        }
        return Ok(DMatrix::from_element(1, 1, number(v, field)?));
    }
    let a = v
        .as_array()
        .ok_or_else(|| ConfigError::at(field, "expected a row-major array of numbers"))?;
    if a.len() != rows * cols {
        return Err(ConfigError::at(
            field,
            format!("expected {} entries for a {rows}x{cols} matrix, got {}", rows * cols, a.len()),
        ));
    }
    let vals = a
        .iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{field}[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

fn coef(v: Option<&Value>, field: &str, rows: usize, cols: usize, grid: &TimeGrid) -> Result<Coef, ConfigError> {
    let Some(v) = v else {
        return Ok(Coef::zeros(rows, cols));
    };
    if is_matrix_literal(v) {
        return Ok(Coef::Const(matrix(v, field, rows, cols)?));
    }
    let a = v
        .as_array()
        .ok_or_else(|| ConfigError::at(field, "expected a matrix or an array of per-node matrices"))?;
    if a.len() != grid.len() {
        return Err(ConfigError::at(
            field,
            format!("expected {} per-node matrices (steps + 1), got {}", grid.len(), a.len()),
        ));
    }
    let nodes = a
        .iter()
        .enumerate()
        .map(|(i, m)| matrix(m, &format!("{field}[{i}]"), rows, cols))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Coef::Nodes(nodes))
}

fn mark_coefs(
    v: Option<&Value>,
    field: &str,
    rows: usize,
    cols: usize,
    grid: &TimeGrid,
    jumps: &JumpSpec,
) -> Result<Vec<Coef>, ConfigError> {
    let k = jumps.mark_count();
    match (v, jumps) {
        (None, _) => Ok(vec![Coef::zeros(rows, cols); k]),
        (Some(v), JumpSpec::UnitJump { .. }) => Ok(vec![coef(Some(v), field, rows, cols, grid)?]),
        (Some(v), JumpSpec::FiniteMarks { .. }) => {
            let a = v
                .as_array()
                .ok_or_else(|| ConfigError::at(field, "expected one entry per mark"))?;
            if a.len() != k {
                return Err(ConfigError::at(field, format!("expected {k} entries (one per mark), got {}", a.len())));
            }
            a.iter()
                .enumerate()
                .map(|(i, m)| coef(Some(m), &format!("{field}{{mark {i}}}"), rows, cols, grid))
                .collect()
        }
    }
}

fn number_list(v: &Value, field: &str) -> Result<Vec<f64>, ConfigError> {
    v.as_array()
        .ok_or_else(|| ConfigError::at(field, "expected an array of numbers"))?
        .iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{field}[{i}]")))
        .collect()
}

fn jumps(doc: &Value) -> Result<JumpSpec, ConfigError> {
    let j = doc.get("jumps").ok_or_else(|| ConfigError::at("jumps", "missing section"))?;
    let kind = j
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ConfigError::at("jumps.type", "expected \"unit\" or \"finite_marks\""))?;
    match kind.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
        "unit" | "unitjump" => {
            let intensity = number(
                j.get("intensity").ok_or_else(|| ConfigError::at("jumps.intensity", "missing"))?,
                "jumps.intensity",
            )?;
            Ok(JumpSpec::UnitJump { intensity })
        }
        "finitemarks" => {
            let get = |k: &str| j.get(k).ok_or_else(|| ConfigError::at(format!("jumps.{k}"), "missing"));
            let marks = number_list(get("marks")?, "jumps.marks")?;
            let weights = number_list(get("weights")?, "jumps.weights")?;
            if marks.len() != weights.len() {
                return Err(ConfigError::at(
                    "jumps.weights",
                    format!("{} weights for {} marks", weights.len(), marks.len()),
                ));
            }
            Ok(JumpSpec::FiniteMarks { marks, weights })
        }
        other => Err(ConfigError::at("jumps.type", format!("unknown jump type {other:?}"))),
    }
}

/// Build and validate the game described by `doc`.
pub fn load_value(doc: Value) -> Result<LoadedConfig, ConfigError> {
    let dims: Dimensions = section(&doc, "dimensions")?;
    let gs: GridSection = section(&doc, "grid")?;
    let grid = TimeGrid::new(gs.t0, gs.t_end, gs.steps).map_err(|e| ConfigError::at("grid", e.to_string()))?;
    let jumps = jumps(&doc)?;
    let (n, m1, m2) = (dims.n, dims.m1, dims.m2);
    if n == 0 || m1 == 0 || m2 == 0 {
        return Err(ConfigError::at("dimensions", "n, m1, m2 must be positive"));
    }

    let empty = Value::Object(Default::default());
    let dy = doc.get("dynamics").unwrap_or(&empty);
    let d = |k: &str, r: usize, c: usize| coef(dy.get(k), &format!("dynamics.{k}"), r, c, &grid);
    let dm = |k: &str, r: usize, c: usize| mark_coefs(dy.get(k), &format!("dynamics.{k}"), r, c, &grid, &jumps);
    let initial = doc
        .get("initial_state")
        .ok_or_else(|| ConfigError::at("initial_state", "missing"))?;
    let x0 = number_list(initial, "initial_state")?;
    if x0.len() != n {
        return Err(ConfigError::at("initial_state", format!("expected {n} entries, got {}", x0.len())));
    }
    let model = ModelSpec {
        n,
        m1,
        m2,
        a: d("A", n, n)?,
        b1: d("B1", n, m1)?,
        b2: d("B2", n, m2)?,
        c: d("C", n, n)?,
        d1: d("D1", n, m1)?,
        d2: d("D2", n, m2)?,
        f: dm("F", n, n)?,
        g1: dm("G1", n, m1)?,
        g2: dm("G2", n, m2)?,
        jumps,
        grid,
        initial_state: DVector::from_vec(x0),
    };

    let co = doc.get("costs").ok_or_else(|| ConfigError::at("costs", "missing section"))?;
    let cc = |k: &str, r: usize| coef(co.get(k), &format!("costs.{k}"), r, r, &grid);
    let required = |k: &str, r: usize| match co.get(k) {
        Some(_) => cc(k, r),
        None => Err(ConfigError::at(format!("costs.{k}"), "missing")),
    };
    let terminal = |k: &str| match co.get(k) {
        Some(v) => matrix(v, &format!("costs.{k}"), n, n),
        None => Ok(DMatrix::zeros(n, n)),
    };
    let costs = CostSpec {
        q1: cc("Q1", n)?,
        q2: cc("Q2", n)?,
        r1: required("R1", m1)?,
        r2: required("R2", m2)?,
        m1: terminal("M1")?,
        m2: terminal("M2")?,
    };
    let monte_carlo = match doc.get("monte_carlo") {
        Some(v) => MonteCarlo::deserialize(v).map_err(|e| ConfigError::at("monte_carlo", e.to_string()))?,
        None => MonteCarlo::default(),
    };
    let run = match doc.get("run") {
        Some(v) => RunSection::deserialize(v).map_err(|e| ConfigError::at("run", e.to_string()))?,
        None => RunSection::default(),
    };
    let validation = validate_model(&model, &costs);
    if !validation.accepted() {
        return Err(ConfigError::Rejected(validation.errors));
    }
    Ok(LoadedConfig {
        model,
        costs,
        monte_carlo,
        run,
        validation,
        document: doc,
    })
}

pub fn load_str(text: &str, format: Format) -> Result<LoadedConfig, ConfigError> {
    load_value(parse_document(text, format)?)
}

pub fn load_path(path: &std::path::Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Syntax(format!("{}: {e}", path.display())))?;
    load_str(&text, Format::from_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference;

    const CASE1: &str = r#"{
        "dimensions": {"n": 1, "m1": 1, "m2": 1},
        "grid": {"t0": 0.0, "T": 1.0, "steps": 100},
        "jumps": {"type": "unit", "intensity": 1.0},
        "dynamics": {"A": [0.2], "B1": [0.5], "B2": [1.0], "C": [0.3], "D1": [0.1], "D2": [0.2],
                     "F": [0.3], "G1": [0.2], "G2": [0.25]},
        "costs": {"Q1": [1.0], "Q2": [1.0], "R1": [1.0], "R2": [1.0], "M1": [1.0], "M2": [1.0]},
        "initial_state": [1.0],
        "monte_carlo": {"paths": 500, "seed": 11}
    }"#;

    #[test]
    fn json_reproduces_reference_model() {
        let cfg = load_str(CASE1, Format::Json).unwrap();
        let (m, c) = reference::case1(100);
        assert_eq!(cfg.model, m);
        assert_eq!(cfg.costs, c);
        assert_eq!(cfg.monte_carlo, MonteCarlo { paths: 500, seed: 11 });
    }

    #[test]
    fn toml_and_finite_marks() {
        let text = r#"
            initial_state = [1.0, 0.0]
            [dimensions]
            n = 2
            m1 = 1
            m2 = 1
            [grid]
            T = 2.0
            steps = 4
            [jumps]
            type = "finite_marks"
            marks = [-0.5, 1.0]
            weights = [0.6, 0.8]
            [dynamics]
            A = [[0,1,0,0],[0,1,0,0],[0,1,0,0],[0,1,0,0],[0,1,0,0]]
            F = [[0.1,0,0,0.1],[0.2,0,0,0.2]]
            [costs]
            R1 = 1.0
            R2 = [2.0]
            M2 = [1,0,0,1]
        "#;
        let cfg = load_str(text, Format::Toml).unwrap();
        assert!(matches!(cfg.model.a, Coef::Nodes(ref v) if v.len() == 5));
        assert_eq!(cfg.model.f[1].at_node(0)[(1, 1)], 0.2);
        assert_eq!(cfg.model.g2.len(), 2);
        assert_eq!(cfg.model.grid.t0, 0.0);
        assert_eq!(cfg.monte_carlo, MonteCarlo::default());
        assert_eq!(cfg.run, RunSection::default());
    }

    #[test]
    fn errors_name_the_field() {
        let bad = CASE1.replace(r#""B1": [0.5]"#, r#""B1": [0.5, 1.0]"#);
        match load_str(&bad, Format::Json) {
            Err(ConfigError::Field { field, .. }) => assert_eq!(field, "dynamics.B1"),
            other => panic!("{other:?}"),
        }
        let bad = CASE1.replace(r#""R2": [1.0], "#, "");
        assert!(load_str(&bad, Format::Json).unwrap_err().to_string().starts_with("costs.R2"));
        let bad = CASE1.replace(r#""Q2": [1.0]"#, r#""Q2": [-1.0]"#);
        assert!(load_str(&bad, Format::Json).is_ok());
        assert!(matches!(load_str("{", Format::Json), Err(ConfigError::Syntax(_))));
        let run = CASE1.replace(r#""initial_state""#, r#""run": {"case": "case2", "agreement": 1e-6}, "initial_state""#);
        let cfg = load_str(&run, Format::Json).unwrap();
        assert_eq!(cfg.run.case.as_deref(), Some("case2"));
        assert_eq!(cfg.run.agreement, Some(1e-6));
        let bad = CASE1.replace(r#""seed": 11"#, r#""seed": 11, "sead": 3"#);
        assert!(load_str(&bad, Format::Json).unwrap_err().to_string().starts_with("monte_carlo"));
    }
}
