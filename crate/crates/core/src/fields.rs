//! Scalar and tensor fields over a coordinate chart, each carrying a first-derivative jet.
//!
//! Three kinds exist: exact multivariate polynomials, code-registered builtins with
//! analytic gradients, and finite-difference-wrapped closures.

use std::fmt;
use std::sync::{Arc, OnceLock};

use ndarray::{Array2, Array3, Array4};

use crate::error::{check_len, input, Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const FD_STEP_ENV: &str = "ALGMECH_FD_STEP";

/// Parses `ALGMECH_FD_STEP`. `Ok(None)` when unset.
pub fn fd_step_from_env() -> Result<Option<f64>> {
    match std::env::var(FD_STEP_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<f64>() {
            Ok(h) if h.is_finite() && h > 0.0 => Ok(Some(h)),
            _ => input(format!("{FD_STEP_ENV} must be a positive number, got {s:?}")),
        },
    }
}

/// FD step used when a field does not pin its own. Read once per process.
pub fn default_fd_step() -> f64 {
    static STEP: OnceLock<f64> = OnceLock::new();
    *STEP.get_or_init(|| fd_step_from_env().ok().flatten().unwrap_or(DEFAULT_FD_STEP))
}

pub type JetFn = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Send + Sync;
pub type ValueFn = dyn Fn(&[f64]) -> Result<f64> + Send + Sync;

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub exp: Vec<u32>,
}

#[derive(Clone)]
enum Repr {
    Polynomial(Arc<[Term]>),
    Builtin { name: Arc<str>, f: Arc<JetFn> },
    FiniteDifference { name: Arc<str>, f: Arc<ValueFn>, step: Option<f64> },
}

#[derive(Clone)]
pub struct SmoothField {
    arity: usize,
    repr: Repr,
}

impl fmt::Debug for SmoothField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Polynomial(t) => write!(f, "Polynomial(arity={}, terms={:?})", self.arity, t),
            Repr::Builtin { name, .. } => write!(f, "Builtin({name}, arity={})", self.arity),
            Repr::FiniteDifference { name, step, .. } => {
                write!(f, "FiniteDifference({name}, arity={}, step={step:?})", self.arity)
            }
        }
    }
}

impl SmoothField {
    /// Builds `sum coef * prod q_i^e_i`. Exponents must be non-negative integers.
    pub fn polynomial(terms: &[(f64, Vec<i64>)], arity: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(terms.len());
        for (k, (coef, exp)) in terms.iter().enumerate() {
            if exp.len() != arity {
                return input(format!(
                    "term {k}: exponent vector has length {}, arity is {arity}",
                    exp.len()
                ));
            }
            if !coef.is_finite() {
                return input(format!("term {k}: coefficient is not finite"));
            }
            let mut e = Vec::with_capacity(arity);
            for &x in exp {
                if x < 0 {
                    return input(format!("term {k}: negative exponent {x}"));
                }
                e.push(u32::try_from(x).map_err(|_| Error::Input(format!("term {k}: exponent too large")))?);
            }
            out.push(Term { coef: *coef, exp: e });
        }
        Ok(Self::from_terms(out, arity))
    }

    pub(crate) fn from_terms(terms: Vec<Term>, arity: usize) -> Self {
        Self { arity, repr: Repr::Polynomial(terms.into()) }
    }

    pub fn zero(arity: usize) -> Self {
        Self::from_terms(Vec::new(), arity)
    }

    pub fn constant(c: f64, arity: usize) -> Self {
        if c == 0.0 {
            return Self::zero(arity);
        }
        Self::from_terms(vec![Term { coef: c, exp: vec![0; arity] }], arity)
    }

    /// The coordinate function `x_i`.
    pub fn coordinate(i: usize, arity: usize) -> Self {
        let mut exp = vec![0; arity];
        exp[i] = 1;
        Self::from_terms(vec![Term { coef: 1.0, exp }], arity)
    }

    /// A closure with an analytic gradient.
    pub fn builtin<F>(name: &str, arity: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Send + Sync + 'static,
    {
        Self { arity, repr: Repr::Builtin { name: name.into(), f: Arc::new(f) } }
    }

    /// A closure differentiated by central differences. `step = None` uses [`default_fd_step`].
    pub fn finite_difference<F>(name: &str, arity: usize, step: Option<f64>, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<f64> + Send + Sync + 'static,
    {
        Self { arity, repr: Repr::FiniteDifference { name: name.into(), f: Arc::new(f), step } }
    }

    /// Looks up a registered builtin: `sin`, `cos` or `exp` of coordinate `index`.
    pub fn registered(name: &str, arity: usize, index: usize) -> Result<Self> {
        if index >= arity {
            return input(format!("builtin {name}: index {index} out of range for arity {arity}"));
        }
        let (f, df): (fn(f64) -> f64, fn(f64) -> f64) = match name {
            "sin" => (f64::sin, f64::cos),
            "cos" => (f64::cos, |x| -x.sin()),
            "exp" => (f64::exp, f64::exp),
            _ => return input(format!("unknown builtin {name:?} (known: sin, cos, exp)")),
        };
        Ok(Self::builtin(name, arity, move |q| {
            let mut g = vec![0.0; q.len()];
            g[index] = df(q[index]);
            Ok((f(q[index]), g))
        }))
    }

    /// Same values, gradient replaced by central differences.
    pub fn with_finite_difference(&self, step: Option<f64>) -> Self {
        let inner = self.clone();
        let name = format!("fd[{}]", self.name());
        Self::finite_difference(&name, self.arity, step, move |q| inner.value(q))
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn name(&self) -> String {
        match &self.repr {
            Repr::Polynomial(_) => "polynomial".to_string(),
            Repr::Builtin { name, .. } | Repr::FiniteDifference { name, .. } => name.to_string(),
        }
    }

    pub fn terms(&self) -> Option<&[Term]> {
        match &self.repr {
            Repr::Polynomial(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self.repr, Repr::Polynomial(_))
    }

    pub fn uses_finite_differences(&self) -> bool {
        matches!(self.repr, Repr::FiniteDifference { .. })
    }

    pub fn is_zero(&self) -> bool {
        self.terms().is_some_and(|t| t.iter().all(|t| t.coef == 0.0))
    }

    pub fn value(&self, q: &[f64]) -> Result<f64> {
        check_len("field argument", self.arity, q.len())?;
        let v = match &self.repr {
            Repr::Polynomial(terms) => poly_value(terms, q),
            Repr::Builtin { f, .. } => f(q)?.0,
            Repr::FiniteDifference { f, .. } => f(q)?,
        };
        finite(v, self)
    }

    /// Value and gradient.
    pub fn eval(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("field argument", self.arity, q.len())?;
        if q.iter().any(|x| !x.is_finite()) {
            return input("field argument has non-finite entries");
        }
        let (v, g) = match &self.repr {
            Repr::Polynomial(terms) => (poly_value(terms, q), poly_gradient(terms, q)),
            Repr::Builtin { f, .. } => {
                let (v, g) = f(q)?;
                check_len("builtin gradient", self.arity, g.len())?;
                (v, g)
            }
            Repr::FiniteDifference { f, step, .. } => {
                let h = step.unwrap_or_else(default_fd_step);
                (f(q)?, central_difference(&**f, q, h)?)
            }
        };
        finite(v, self)?;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient from {}", self.name())));
        }
        Ok((v, g))
    }

    pub fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(q)?.1)
    }
}

fn finite(v: f64, f: &SmoothField) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("non-finite value from {}", f.name())))
    }
}

fn poly_value(terms: &[Term], q: &[f64]) -> f64 {
    terms
        .iter()
        .map(|t| t.coef * t.exp.iter().zip(q).map(|(&e, &x)| x.powi(e as i32)).product::<f64>())
        .sum()
}

fn poly_gradient(terms: &[Term], q: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; q.len()];
    for t in terms {
        for (j, gj) in g.iter_mut().enumerate() {
            let ej = t.exp[j];
            if ej == 0 {
                continue;
            }
            let mut prod = t.coef * f64::from(ej) * q[j].powi(ej as i32 - 1);
            for (i, (&e, &x)) in t.exp.iter().zip(q).enumerate() {
                if i != j {
                    prod *= x.powi(e as i32);
                }
            }
            *gj += prod;
        }
    }
    g
}

/// `(f(q+h e_i) - f(q-h e_i)) / 2h` for every coordinate.
pub fn central_difference(f: &ValueFn, q: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut x = q.to_vec();
    let mut g = Vec::with_capacity(q.len());
    for i in 0..q.len() {
        x[i] = q[i] + h;
        let fp = f(&x)?;
        x[i] = q[i] - h;
        let fm = f(&x)?;
        x[i] = q[i];
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector-valued map; row `k` is the gradient of output `k`.
pub fn central_jacobian<F>(f: F, q: &[f64], h: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = q.to_vec();
    let mut cols = Vec::with_capacity(q.len());
    for i in 0..q.len() {
        x[i] = q[i] + h;
        let fp = f(&x)?;
        x[i] = q[i] - h;
        let fm = f(&x)?;
        x[i] = q[i];
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    let outputs = cols.first().map_or_else(|| f(q).map(|v| v.len()), |c| Ok(c.len()))?;
    Ok((0..outputs).map(|k| cols.iter().map(|c| c[k]).collect()).collect())
}

/// Polynomial algebra used by the scenario builders.
pub mod poly {
    use super::{SmoothField, Term};

    /// Re-indexes a polynomial into a chart of dimension `arity`, its variables starting at `offset`.
    pub fn embed(f: &SmoothField, arity: usize, offset: usize) -> Option<SmoothField> {
        let terms = f.terms()?;
        let out = terms
            .iter()
            .map(|t| {
                let mut exp = vec![0; arity];
                exp[offset..offset + t.exp.len()].copy_from_slice(&t.exp);
                Term { coef: t.coef, exp }
            })
            .collect();
        Some(SmoothField::from_terms(out, arity))
    }

    pub fn add(a: &SmoothField, b: &SmoothField) -> Option<SmoothField> {
        let mut terms = a.terms()?.to_vec();
        terms.extend_from_slice(b.terms()?);
        Some(SmoothField::from_terms(terms, a.arity()))
    }

    pub fn mul(a: &SmoothField, b: &SmoothField) -> Option<SmoothField> {
        let (ta, tb) = (a.terms()?, b.terms()?);
        let mut out = Vec::with_capacity(ta.len() * tb.len());
        for x in ta {
            for y in tb {
                let exp = x.exp.iter().zip(&y.exp).map(|(i, j)| i + j).collect();
                out.push(Term { coef: x.coef * y.coef, exp });
            }
        }
        Some(SmoothField::from_terms(out, a.arity()))
    }

    pub fn scale(a: &SmoothField, c: f64) -> Option<SmoothField> {
        let out = a.terms()?.iter().map(|t| Term { coef: c * t.coef, exp: t.exp.clone() }).collect();
        Some(SmoothField::from_terms(out, a.arity()))
    }
}

/// A dense, row-major family of fields indexed by a multi-index.
#[derive(Clone, Debug)]
pub struct TensorField {
    shape: Vec<usize>,
    arity: usize,
    components: Vec<SmoothField>,
}

impl TensorField {
    pub fn new(shape: Vec<usize>, arity: usize, components: Vec<SmoothField>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if components.len() != count {
            return input(format!(
                "tensor of shape {shape:?} needs {count} components, got {}",
                components.len()
            ));
        }
        if let Some(k) = components.iter().position(|c| c.arity() != arity) {
            return input(format!(
                "tensor component {k} has arity {}, expected {arity}",
                components[k].arity()
            ));
        }
        Ok(Self { shape, arity, components })
    }

    pub fn from_fn(shape: &[usize], arity: usize, mut f: impl FnMut(&[usize]) -> SmoothField) -> Self {
        let count: usize = shape.iter().product();
        let mut idx = vec![0; shape.len()];
        let mut components = Vec::with_capacity(count);
        for flat in 0..count {
            unflatten(flat, shape, &mut idx);
            components.push(f(&idx));
        }
        Self { shape: shape.to_vec(), arity, components }
    }

    pub fn zeros(shape: &[usize], arity: usize) -> Self {
        Self::from_fn(shape, arity, |_| SmoothField::zero(arity))
    }

    pub fn constants(shape: &[usize], arity: usize, values: &[f64]) -> Result<Self> {
        let count: usize = shape.iter().product();
        check_len("constant tensor values", count, values.len())?;
        let mut k = 0;
        Ok(Self::from_fn(shape, arity, |_| {
            k += 1;
            SmoothField::constant(values[k - 1], arity)
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn components(&self) -> &[SmoothField] {
        &self.components
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            debug_assert!(i < n);
            acc * n + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> &SmoothField {
        &self.components[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], f: SmoothField) -> Result<()> {
        check_len("component arity", self.arity, f.arity())?;
        let k = self.flat_index(idx);
        self.components[k] = f;
        Ok(())
    }

    pub fn is_polynomial(&self) -> bool {
        self.components.iter().all(SmoothField::is_polynomial)
    }

    pub fn uses_finite_differences(&self) -> bool {
        self.components.iter().any(SmoothField::uses_finite_differences)
    }

    /// Row-major values.
    pub fn values(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_len("tensor argument", self.arity, q.len())?;
        self.components.iter().map(|c| c.value(q)).collect()
    }

    /// Row-major values and, per component, its gradient.
    pub fn jets(&self, q: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        check_len("tensor argument", self.arity, q.len())?;
        let mut vals = Vec::with_capacity(self.components.len());
        let mut grads = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let (v, g) = c.eval(q)?;
            vals.push(v);
            grads.push(g);
        }
        Ok((vals, grads))
    }

    pub fn eval1(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.expect_rank(1)?;
        self.values(q)
    }

    pub fn eval2(&self, q: &[f64]) -> Result<Array2<f64>> {
        self.expect_rank(2)?;
        let v = self.values(q)?;
        Ok(Array2::from_shape_vec((self.shape[0], self.shape[1]), v).expect("shape checked"))
    }

    pub fn eval3(&self, q: &[f64]) -> Result<Array3<f64>> {
        self.expect_rank(3)?;
        let v = self.values(q)?;
        let s = &self.shape;
        Ok(Array3::from_shape_vec((s[0], s[1], s[2]), v).expect("shape checked"))
    }

    pub fn eval4(&self, q: &[f64]) -> Result<Array4<f64>> {
        self.expect_rank(4)?;
        let v = self.values(q)?;
        let s = &self.shape;
        Ok(Array4::from_shape_vec((s[0], s[1], s[2], s[3]), v).expect("shape checked"))
    }

    fn expect_rank(&self, r: usize) -> Result<()> {
        if self.shape.len() != r {
            return input(format!("expected a rank-{r} tensor, got shape {:?}", self.shape));
        }
        Ok(())
    }
}

fn unflatten(mut flat: usize, shape: &[usize], idx: &mut [usize]) {
    for k in (0..shape.len()).rev() {
        idx[k] = flat % shape[k];
        flat /= shape[k];
    }
}
