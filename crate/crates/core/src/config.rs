//! JSON run configuration: scenario description, integration settings, verification suite, outputs.
//!
//! Fields are written as a number (constant), `{"poly": [[coef, [e1, .., ek]], ..]}` or
//! `{"builtin": "sin" | "cos" | "exp", "index": i}`. Tensors are nested arrays of fields or
//! `{"entries": [[[i, j, ..], field], ..]}` with unlisted entries zero.

use std::path::Path;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::Value;

use crate::algebroid::{se2xr_constants, so3_constants, AlgebroidStructure};
use crate::connections::{ConnectionPair, CurvatureTensor};
use crate::error::{Error, Result};
use crate::fields::{SmoothField, TensorField};
use crate::hamiltonian::{Monitor, PhasePoint};
use crate::scenarios::{
    self, identity_metric, ConstraintSpec, CurvatureChoice, ScenarioBundle, SplitChoice, TorsionInput,
};

pub const DEFAULT_ANALYTIC_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_FD_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub h: f64,
    pub steps: usize,
    pub x0: InitialState,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    #[serde(default)]
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationConfig {
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub checks: Vec<CheckEntry>,
}

fn default_points() -> usize {
    20
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self { points: default_points(), seed: 0, tolerances: Tolerances::default(), checks: vec![] }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "analytic_default")]
    pub analytic: f64,
    #[serde(default = "fd_default")]
    pub fd: f64,
}

fn analytic_default() -> f64 {
    DEFAULT_ANALYTIC_TOLERANCE
}

fn fd_default() -> f64 {
    DEFAULT_FD_TOLERANCE
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { analytic: DEFAULT_ANALYTIC_TOLERANCE, fd: DEFAULT_FD_TOLERANCE }
    }
}

/// A check name, optionally with overrides.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum CheckEntry {
    Name(String),
    Detailed {
        name: String,
        #[serde(default)]
        expect_fail: bool,
        #[serde(default)]
        tolerance: Option<f64>,
    },
}

impl CheckEntry {
    pub fn name(&self) -> &str {
        match self {
            Self::Name(n) | Self::Detailed { name: n, .. } => n,
        }
    }

    pub fn expect_fail(&self) -> bool {
        matches!(self, Self::Detailed { expect_fail: true, .. })
    }

    pub fn tolerance(&self) -> Option<f64> {
        match self {
            Self::Detailed { tolerance, .. } => *tolerance,
            Self::Name(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub trajectory: Option<String>,
    pub report: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    Canonical {
        n: usize,
        hamiltonian: Value,
        #[serde(default)]
        metric: Option<Value>,
        #[serde(default)]
        split: Option<Value>,
        #[serde(default)]
        curvature: Option<Value>,
        #[serde(default)]
        monitors: Vec<MonitorConfig>,
    },
    LiePoisson {
        algebra: Value,
        inertia: Vec<f64>,
        #[serde(default)]
        metric: Option<Value>,
        #[serde(default)]
        split: Option<Value>,
        #[serde(default)]
        curvature: Option<Value>,
        #[serde(default)]
        monitors: Vec<MonitorConfig>,
    },
    GradientExtension {
        n: usize,
        #[serde(default)]
        metric: Option<Value>,
        vector_field: Value,
    },
    Contorsion {
        n: usize,
        #[serde(default)]
        metric: Option<Value>,
        #[serde(default)]
        contorsion: Option<Value>,
        #[serde(default)]
        torsion: Option<Value>,
        #[serde(default)]
        potential: Option<Value>,
    },
    Constrained {
        ambient: AmbientConfig,
        #[serde(default)]
        metric: Option<Value>,
        kinematic: Value,
        #[serde(default)]
        potential: Option<Value>,
        #[serde(default)]
        curvature: Option<Value>,
    },
    GeneralizedConstrained {
        ambient: AmbientConfig,
        #[serde(default)]
        metric: Option<Value>,
        kinematic: Value,
        variational: Value,
        #[serde(default)]
        potential: Option<Value>,
        #[serde(default)]
        curvature: Option<Value>,
    },
    RandomPolynomial {
        n: usize,
        m: usize,
        #[serde(default = "default_degree")]
        degree: u32,
        seed: u64,
    },
}

fn default_degree() -> u32 {
    2
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub name: String,
    pub function: Value,
    #[serde(default)]
    pub casimir: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AmbientConfig {
    Canonical { n: usize },
    LieAlgebra { algebra: Value },
}

fn err<T>(path: &str, msg: impl std::fmt::Display) -> Result<T> {
    let msg = msg.to_string();
    let sep = if msg.starts_with("must ") { " " } else { ": " };
    Err(Error::Input(format!("{path}{sep}{msg}")))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                Error::Input(format!("config: {inner}"))
            } else {
                Error::Input(format!("{path}: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let ig = &self.integration;
        if !(ig.h > 0.0 && ig.h.is_finite()) {
            return err("integration.h", "must be positive");
        }
        if ig.steps < 1 {
            return err("integration.steps", "must be at least 1");
        }
        let v = &self.verification;
        if v.points < 1 {
            return err("verification.points", "must be at least 1");
        }
        if !(v.tolerances.analytic > 0.0) {
            return err("verification.tolerances.analytic", "must be positive");
        }
        if !(v.tolerances.fd > 0.0) {
            return err("verification.tolerances.fd", "must be positive");
        }
        for (i, c) in v.checks.iter().enumerate() {
            if !crate::verification::CHECK_NAMES.contains(&c.name()) {
                return err(&format!("verification.checks[{i}]"), format!("unknown check \"{}\"", c.name()));
            }
            if let Some(t) = c.tolerance() {
                if !(t > 0.0) {
                    return err(&format!("verification.checks[{i}].tolerance"), "must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn initial_state(&self, bundle: &ScenarioBundle) -> Result<PhasePoint> {
        let x0 = &self.integration.x0;
        if x0.q.len() != bundle.n() {
            return err("integration.x0.q", format!("expected {} entries, got {}", bundle.n(), x0.q.len()));
        }
        if x0.p.len() != bundle.m() {
            return err("integration.x0.p", format!("expected {} entries, got {}", bundle.m(), x0.p.len()));
        }
        Ok(PhasePoint::new(x0.q.clone(), x0.p.clone()))
    }

    pub fn build(&self) -> Result<ScenarioBundle> {
        build_scenario(&self.scenario)
    }
}

pub fn parse_field(v: &Value, arity: usize, path: &str) -> Result<SmoothField> {
    match v {
        Value::Number(x) => Ok(SmoothField::constant(x.as_f64().unwrap_or(f64::NAN), arity)),
        Value::Object(o) => {
            if let Some(terms) = o.get("poly") {
                let list = terms.as_array().ok_or_else(|| Error::Input(format!("{path}.poly: expected an array")))?;
                let mut parsed = Vec::with_capacity(list.len());
                for (k, t) in list.iter().enumerate() {
                    let bad = || Error::Input(format!("{path}.poly[{k}]: expected [coefficient, [exponents]]"));
                    let pair = t.as_array().filter(|a| a.len() == 2).ok_or_else(bad)?;
                    let c = pair[0].as_f64().ok_or_else(bad)?;
                    let e = pair[1]
                        .as_array()
                        .ok_or_else(bad)?
                        .iter()
                        .map(|x| x.as_i64().ok_or_else(bad))
                        .collect::<Result<Vec<i64>>>()?;
                    parsed.push((c, e));
                }
                SmoothField::polynomial(&parsed, arity).map_err(|e| Error::Input(format!("{path}: {e}")))
            } else if let Some(name) = o.get("builtin") {
                let name = name.as_str().ok_or_else(|| Error::Input(format!("{path}.builtin: expected a string")))?;
                let index = o.get("index").and_then(Value::as_u64).unwrap_or(0) as usize;
                SmoothField::registered(name, arity, index).map_err(|e| Error::Input(format!("{path}: {e}")))
            } else {
                err(path, "field must be a number, {\"poly\": ..} or {\"builtin\": ..}")
            }
        }
        _ => err(path, "field must be a number, {\"poly\": ..} or {\"builtin\": ..}"),
    }
}

pub fn parse_tensor(v: &Value, shape: &[usize], arity: usize, path: &str) -> Result<TensorField> {
    let mut t = TensorField::zeros(shape, arity);
    if let Some(entries) = v.as_object().and_then(|o| o.get("entries")) {
        let list = entries.as_array().ok_or_else(|| Error::Input(format!("{path}.entries: expected an array")))?;
        for (k, e) in list.iter().enumerate() {
            let p = format!("{path}.entries[{k}]");
            let pair = e.as_array().filter(|a| a.len() == 2).ok_or_else(|| Error::Input(format!("{p}: expected [index, field]")))?;
            let idx: Vec<usize> = pair[0]
                .as_array()
                .ok_or_else(|| Error::Input(format!("{p}: index must be an array")))?
                .iter()
                .map(|x| x.as_u64().map(|u| u as usize))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Input(format!("{p}: index entries must be nonnegative integers")))?;
            if idx.len() != shape.len() || idx.iter().zip(shape).any(|(i, s)| i >= s) {
                return err(&p, format!("index {idx:?} out of range for shape {shape:?}"));
            }
            t.set(&idx, parse_field(&pair[1], arity, &p)?)?;
        }
        return Ok(t);
    }
    fill(&mut t, v, shape, arity, path, &mut vec![])?;
    Ok(t)
}

fn fill(t: &mut TensorField, v: &Value, shape: &[usize], arity: usize, path: &str, idx: &mut Vec<usize>) -> Result<()> {
    if idx.len() == shape.len() {
        let f = parse_field(v, arity, path)?;
        return t.set(idx, f);
    }
    let d = shape[idx.len()];
    let arr = v
        .as_array()
        .filter(|a| a.len() == d)
        .ok_or_else(|| Error::Input(format!("{path}: expected an array of length {d} (tensor shape {shape:?})")))?;
    for (k, x) in arr.iter().enumerate() {
        idx.push(k);
        fill(t, x, shape, arity, &format!("{path}[{k}]"), idx)?;
        idx.pop();
    }
    Ok(())
}

fn parse_algebra(v: &Value, path: &str) -> Result<Array3<f64>> {
    match v {
        Value::String(s) => match s.as_str() {
            "so3" => Ok(so3_constants()),
            "se2xr" => Ok(se2xr_constants()),
            other => err(path, format!("unknown algebra \"{other}\" (known: so3, se2xr)")),
        },
        Value::Array(a) => {
            let m = a.len();
            let t = parse_tensor(v, &[m, m, m], 0, path)?;
            Ok(t.eval3(&[])?)
        }
        Value::Object(_) => err(path, "sparse structure constants need an explicit size; use nested arrays"),
        _ => err(path, "expected an algebra name or nested structure constants"),
    }
}

fn metric_or_identity(v: &Option<Value>, m: usize, n: usize, path: &str) -> Result<TensorField> {
    match v {
        Some(g) => parse_tensor(g, &[m, m], n, path),
        None => Ok(identity_metric(m, n)),
    }
}

fn parse_split(v: &Option<Value>, metric: &TensorField, m: usize, n: usize, path: &str) -> Result<SplitChoice> {
    match v {
        None => Ok(SplitChoice::Default),
        Some(Value::String(s)) => match s.as_str() {
            "default" => Ok(SplitChoice::Default),
            "levi_civita" => Ok(SplitChoice::LeviCivita(metric.clone())),
            other => err(path, format!("unknown split \"{other}\" (known: default, levi_civita)")),
        },
        Some(Value::Object(o)) => {
            let dl = o.get("dl").ok_or_else(|| Error::Input(format!("{path}: missing dl")))?;
            let dr = o.get("dr").ok_or_else(|| Error::Input(format!("{path}: missing dr")))?;
            Ok(SplitChoice::Explicit(ConnectionPair::new(
                parse_tensor(dl, &[m, m, m], n, &format!("{path}.dl"))?,
                parse_tensor(dr, &[m, m, m], n, &format!("{path}.dr"))?,
            )?))
        }
        Some(_) => err(path, "expected \"default\", \"levi_civita\" or {\"dl\", \"dr\"}"),
    }
}

fn parse_curvature(v: &Option<Value>, metric: &TensorField, m: usize, n: usize, path: &str) -> Result<CurvatureChoice> {
    match v {
        None => Ok(CurvatureChoice::Zero),
        Some(Value::String(s)) => match s.as_str() {
            "zero" => Ok(CurvatureChoice::Zero),
            "levi_civita" => Ok(CurvatureChoice::LeviCivita(metric.clone())),
            other => err(path, format!("unknown curvature \"{other}\" (known: zero, levi_civita)")),
        },
        Some(t) => Ok(CurvatureChoice::Explicit(CurvatureTensor::from_fields(parse_tensor(t, &[m, m, m, m], n, path)?)?)),
    }
}

fn parse_monitors(list: &[MonitorConfig], arity: usize, path: &str) -> Result<Vec<Monitor>> {
    list.iter()
        .enumerate()
        .map(|(k, mc)| {
            let f = parse_field(&mc.function, arity, &format!("{path}[{k}].function"))?;
            Ok(if mc.casimir { Monitor::casimir(&mc.name, f) } else { Monitor::new(&mc.name, f) })
        })
        .collect()
}

fn potential(v: &Option<Value>, n: usize, path: &str) -> Result<SmoothField> {
    match v {
        Some(p) => parse_field(p, n, path),
        None => Ok(SmoothField::zero(n)),
    }
}

fn ambient(cfg: &AmbientConfig) -> Result<AlgebroidStructure> {
    match cfg {
        AmbientConfig::Canonical { n } => {
            if *n == 0 {
                return err("scenario.ambient.n", "must be at least 1");
            }
            Ok(AlgebroidStructure::canonical(*n))
        }
        AmbientConfig::LieAlgebra { algebra } => AlgebroidStructure::lie_algebra(&parse_algebra(algebra, "scenario.ambient.algebra")?),
    }
}

fn with_context(e: Error) -> Error {
    match e {
        Error::Input(m) if !m.starts_with("scenario") => Error::Input(format!("scenario: {m}")),
        other => other,
    }
}

pub fn build_scenario(cfg: &ScenarioConfig) -> Result<ScenarioBundle> {
    build_inner(cfg).map_err(with_context)
}

fn build_inner(cfg: &ScenarioConfig) -> Result<ScenarioBundle> {
    match cfg {
        ScenarioConfig::Canonical { n, hamiltonian, metric, split, curvature, monitors } => {
            let n = *n;
            if n == 0 {
                return err("scenario.n", "must be at least 1");
            }
            let g = metric_or_identity(metric, n, n, "scenario.metric")?;
            let h = parse_field(hamiltonian, 2 * n, "scenario.hamiltonian")?;
            let mut b = scenarios::canonical(
                n,
                h,
                parse_split(split, &g, n, n, "scenario.split")?,
                parse_curvature(curvature, &g, n, n, "scenario.curvature")?,
            )?;
            b.monitors = parse_monitors(monitors, 2 * n, "scenario.monitors")?;
            Ok(b)
        }
        ScenarioConfig::LiePoisson { algebra, inertia, metric, split, curvature, monitors } => {
            let c = parse_algebra(algebra, "scenario.algebra")?;
            let m = c.shape()[0];
            let g = metric_or_identity(metric, m, 0, "scenario.metric")?;
            let name = match algebra {
                Value::String(s) => format!("lie_poisson_{s}"),
                _ => "lie_poisson".into(),
            };
            let mut b = scenarios::lie_poisson(
                &name,
                &c,
                inertia,
                parse_split(split, &g, m, 0, "scenario.split")?,
                parse_curvature(curvature, &g, m, 0, "scenario.curvature")?,
            )?;
            b.monitors = parse_monitors(monitors, m, "scenario.monitors")?;
            Ok(b)
        }
        ScenarioConfig::GradientExtension { n, metric, vector_field } => {
            let n = *n;
            if n == 0 {
                return err("scenario.n", "must be at least 1");
            }
            let g = metric_or_identity(metric, n, n, "scenario.metric")?;
            let x = parse_tensor(vector_field, &[n], n, "scenario.vector_field")?;
            scenarios::build_gradient_extension(&g, &x)
        }
        ScenarioConfig::Contorsion { n, metric, contorsion, torsion, potential: v } => {
            let n = *n;
            if n == 0 {
                return err("scenario.n", "must be at least 1");
            }
            let g = metric_or_identity(metric, n, n, "scenario.metric")?;
            let t = match (contorsion, torsion) {
                (Some(s), None) => TorsionInput::Contorsion(parse_tensor(s, &[n, n, n], n, "scenario.contorsion")?),
                (None, Some(t)) => TorsionInput::Direct(parse_tensor(t, &[n, n, n], n, "scenario.torsion")?),
                _ => return err("scenario", "give exactly one of contorsion or torsion"),
            };
            scenarios::build_contorsion(&g, &t, &potential(v, n, "scenario.potential")?)
        }
        ScenarioConfig::Constrained { ambient: amb, metric, kinematic, potential: v, curvature }
        | ScenarioConfig::GeneralizedConstrained { ambient: amb, metric, kinematic, potential: v, curvature, .. } => {
            let a = ambient(amb)?;
            let (n, big_m) = (a.n(), a.m());
            let rows = kinematic.as_array().map_or(0, Vec::len);
            if rows == 0 {
                return err("scenario.kinematic", "expected a non-empty array of rows");
            }
            let variational = match cfg {
                ScenarioConfig::GeneralizedConstrained { variational, .. } => {
                    let vr = variational.as_array().map_or(0, Vec::len);
                    if vr != rows {
                        return err("scenario.variational", format!("rank mismatch: {vr} rows, kinematic basis has {rows}"));
                    }
                    Some(parse_tensor(variational, &[rows, big_m], n, "scenario.variational")?)
                }
                _ => None,
            };
            let spec = ConstraintSpec {
                metric: metric_or_identity(metric, big_m, n, "scenario.metric")?,
                kinematic: parse_tensor(kinematic, &[rows, big_m], n, "scenario.kinematic")?,
                variational,
                potential: potential(v, n, "scenario.potential")?,
                ambient: a,
            };
            let mut b = scenarios::build_constrained(&spec)?;
            // the builder already uses the projected Levi-Civita curvature
            match curvature {
                None => {}
                Some(Value::String(s)) if s == "levi_civita" => {}
                Some(Value::String(s)) if s == "zero" => b.curvature = CurvatureTensor::zero(n, rows),
                Some(Value::String(s)) => {
                    return err("scenario.curvature", format!("unknown curvature \"{s}\" (known: zero, levi_civita)"))
                }
                Some(t) => {
                    b.curvature = CurvatureTensor::from_fields(parse_tensor(t, &[rows; 4], n, "scenario.curvature")?)?;
                }
            }
            Ok(b)
        }
        ScenarioConfig::RandomPolynomial { n, m, degree, seed } => {
            if *n > 3 || *m == 0 || *m > 3 {
                return err("scenario", "random_polynomial needs n in 0..=3 and m in 1..=3");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            scenarios::random_bundle(&mut rng, *n, *m, *degree)
        }
    }
}
