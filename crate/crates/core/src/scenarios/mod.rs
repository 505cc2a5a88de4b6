//! Builders turning mechanical examples into algebroid + Hamiltonian + split + curvature bundles.

mod constrained;
mod random;

pub use constrained::{
    lagrangian_reference, AdaptedFrame, ConstrainedSystem, ConstraintSpec, ConstraintResiduals, LagrangianTrajectory,
};
pub use random::{random_bundle, random_curvature, random_hamiltonian, random_polynomial, random_polynomial_algebroid, random_split};

use nalgebra::DMatrix;
use ndarray::Array3;

use crate::algebroid::{identity_anchor, so3_constants, AlgebroidStructure};
use crate::connections::{curvature_tensor, default_split, levi_civita, christoffels_at, ConnectionPair, CurvatureTensor};
use crate::error::{input, Error, Result};
use crate::fields::{poly, SmoothField, TensorField};
use crate::hamiltonian::{Monitor, PhaseFunction};
use crate::prolongation::ProlongationData;

/// Everything needed to simulate one example and run the prolongation checks on it.
#[derive(Clone, Debug)]
pub struct ScenarioBundle {
    pub name: String,
    /// Builder parameters, kept for reports.
    pub parameters: serde_json::Value,
    pub algebroid: AlgebroidStructure,
    pub hamiltonian: PhaseFunction,
    pub split: ConnectionPair,
    pub curvature: CurvatureTensor,
    pub monitors: Vec<Monitor>,
    /// Present for constrained scenarios.
    pub constraint: Option<ConstrainedSystem>,
}

impl ScenarioBundle {
    pub fn prolongation(&self) -> Result<ProlongationData> {
        ProlongationData::new(self.algebroid.clone(), self.split.clone(), self.curvature.clone())
    }

    pub fn n(&self) -> usize {
        self.algebroid.n()
    }

    pub fn m(&self) -> usize {
        self.algebroid.m()
    }

    fn validate(self) -> Result<Self> {
        let arity = self.n() + self.m();
        if self.hamiltonian.arity() != arity {
            return input(format!("Hamiltonian arity {} differs from n + m = {arity}", self.hamiltonian.arity()));
        }
        for mon in &self.monitors {
            if mon.function.arity() != arity {
                return input(format!("monitor {} has arity {}, expected {arity}", mon.name, mon.function.arity()));
            }
        }
        self.prolongation()?;
        Ok(self)
    }
}

/// How to split the bracket into a left/right connection pair.
#[derive(Clone, Debug)]
pub enum SplitChoice {
    Default,
    /// `D^l = D^r = Γ` for the Levi-Civita connection of the metric (skew algebroids with equal anchors).
    LeviCivita(TensorField),
    Explicit(ConnectionPair),
}

#[derive(Clone, Debug)]
pub enum CurvatureChoice {
    Zero,
    /// Curvature of the Levi-Civita connection of the metric.
    LeviCivita(TensorField),
    Explicit(CurvatureTensor),
}

pub fn resolve_split(a: &AlgebroidStructure, choice: &SplitChoice) -> Result<ConnectionPair> {
    match choice {
        SplitChoice::Default => Ok(default_split(a)),
        SplitChoice::LeviCivita(g) => {
            let gamma = christoffel_field(a, g)?;
            ConnectionPair::new(gamma.clone(), gamma)
        }
        SplitChoice::Explicit(cp) => Ok(cp.clone()),
    }
}

pub fn resolve_curvature(a: &AlgebroidStructure, choice: &CurvatureChoice) -> Result<CurvatureTensor> {
    match choice {
        CurvatureChoice::Zero => Ok(CurvatureTensor::zero(a.n(), a.m())),
        CurvatureChoice::LeviCivita(g) => {
            let gamma = christoffel_field(a, g)?;
            if a.n() == 0 || is_constant(&gamma) && is_constant(a.bracket()) {
                let r = crate::connections::curvature(a, &gamma, &vec![0.0; a.n()])?.0;
                return CurvatureTensor::constant(&r, a.n());
            }
            Ok(curvature_tensor(a, &gamma))
        }
        CurvatureChoice::Explicit(r) => {
            if r.n() != a.n() || r.m() != a.m() {
                return input("curvature tensor does not match the algebroid dimensions");
            }
            Ok(r.clone())
        }
    }
}

fn is_constant(t: &TensorField) -> bool {
    t.components()
        .iter()
        .all(|f| f.terms().is_some_and(|ts| ts.iter().all(|t| t.exp.iter().all(|&e| e == 0))))
}

/// Levi-Civita Christoffels, as exact constants when metric, bracket and anchors are constant.
pub fn christoffel_field(a: &AlgebroidStructure, g: &TensorField) -> Result<TensorField> {
    let m = a.m();
    if is_constant(g) && is_constant(a.bracket()) && is_constant(a.anchor_left()) {
        // still validates the metric and the skew/equal-anchor preconditions
        levi_civita(a, g)?;
        let gamma = christoffels_at(a, g, &vec![0.0; a.n()])?;
        let values: Vec<f64> = gamma.iter().copied().collect();
        return TensorField::constants(&[m, m, m], a.n(), &values);
    }
    levi_civita(a, g)
}

/// Constant identity metric of rank `m` over a base of dimension `n`.
pub fn identity_metric(m: usize, n: usize) -> TensorField {
    TensorField::from_fn(&[m, m], n, |i| SmoothField::constant(if i[0] == i[1] { 1.0 } else { 0.0 }, n))
}

/// `½ Σ_a w_a p_a² + V(q)` on the chart `(q_1..q_n, p_1..p_m)`.
pub fn kinetic_plus_potential(n: usize, weights: &[f64], potential: &SmoothField) -> Result<PhaseFunction> {
    let m = weights.len();
    if potential.arity() != n {
        return input(format!("potential arity {} differs from n = {n}", potential.arity()));
    }
    let quad: Vec<(f64, Vec<i64>)> = (0..m)
        .map(|a| {
            let mut e = vec![0; n + m];
            e[n + a] = 2;
            (0.5 * weights[a], e)
        })
        .collect();
    let kinetic = SmoothField::polynomial(&quad, n + m)?;
    if let Some(v) = poly::embed(potential, n + m, 0) {
        return Ok(poly::add(&kinetic, &v).expect("both polynomial"));
    }
    let v = potential.clone();
    let w = weights.to_vec();
    Ok(SmoothField::builtin("kinetic_plus_potential", n + m, move |x| {
        let (vv, vg) = v.eval(&x[..n])?;
        let mut g = vg;
        let mut val = vv;
        for a in 0..m {
            val += 0.5 * w[a] * x[n + a] * x[n + a];
            g.push(w[a] * x[n + a]);
        }
        Ok((val, g))
    }))
}

fn squared_norm_p(n: usize, m: usize) -> PhaseFunction {
    let terms: Vec<(f64, Vec<i64>)> = (0..m)
        .map(|a| {
            let mut e = vec![0; n + m];
            e[n + a] = 2;
            (1.0, e)
        })
        .collect();
    SmoothField::polynomial(&terms, n + m).expect("valid exponents")
}

/// Tangent bundle of `R^n` with a user Hamiltonian.
pub fn canonical(n: usize, hamiltonian: PhaseFunction, split: SplitChoice, curvature: CurvatureChoice) -> Result<ScenarioBundle> {
    if n == 0 {
        return input("canonical scenario needs n >= 1");
    }
    let a = AlgebroidStructure::canonical(n);
    let split = resolve_split(&a, &split)?;
    let curvature = resolve_curvature(&a, &curvature)?;
    ScenarioBundle {
        name: "canonical".into(),
        parameters: serde_json::json!({ "n": n }),
        algebroid: a,
        hamiltonian,
        split,
        curvature,
        monitors: vec![],
        constraint: None,
    }
    .validate()
}

/// Harmonic oscillator `H = ½(|q|² + |p|²)` on `T*R^n`.
pub fn harmonic_oscillator(n: usize) -> Result<ScenarioBundle> {
    let terms: Vec<(f64, Vec<i64>)> = (0..2 * n)
        .map(|k| {
            let mut e = vec![0; 2 * n];
            e[k] = 2;
            (0.5, e)
        })
        .collect();
    let mut b = canonical(n, SmoothField::polynomial(&terms, 2 * n)?, SplitChoice::Default, CurvatureChoice::Zero)?;
    b.name = "harmonic_oscillator".into();
    Ok(b)
}

/// Lie–Poisson dynamics on the dual of a Lie algebra with `H = ½ Σ p_a² / I_a`.
///
/// `metric` selects the Levi-Civita split and curvature when given; identity is a common choice.
pub fn lie_poisson(
    name: &str,
    constants: &Array3<f64>,
    inertia: &[f64],
    split: SplitChoice,
    curvature: CurvatureChoice,
) -> Result<ScenarioBundle> {
    let a = AlgebroidStructure::lie_algebra(constants)?;
    let m = a.m();
    if inertia.len() != m {
        return input(format!("inertia must have {m} entries, got {}", inertia.len()));
    }
    if inertia.iter().any(|&i| !(i > 0.0 && i.is_finite())) {
        return input("inertia entries must be positive");
    }
    let w: Vec<f64> = inertia.iter().map(|i| 1.0 / i).collect();
    let hamiltonian = kinetic_plus_potential(0, &w, &SmoothField::zero(0))?;
    let split = resolve_split(&a, &split)?;
    let curvature = resolve_curvature(&a, &curvature)?;
    ScenarioBundle {
        name: name.into(),
        parameters: serde_json::json!({ "inertia": inertia }),
        algebroid: a,
        hamiltonian,
        split,
        curvature,
        monitors: vec![],
        constraint: None,
    }
    .validate()
}

/// Free rigid body on so(3)* with the Levi-Civita split of the identity metric, its curvature,
/// and the Casimir `|p|²` registered as a monitor.
pub fn euler_top(inertia: &[f64]) -> Result<ScenarioBundle> {
    let g = identity_metric(3, 0);
    let mut b = lie_poisson(
        "euler_top",
        &so3_constants(),
        inertia,
        SplitChoice::LeviCivita(g.clone()),
        CurvatureChoice::LeviCivita(g),
    )?;
    b.monitors.push(Monitor::casimir("casimir", squared_norm_p(0, 3)));
    Ok(b)
}

/// Gradient extension of `q̇ = X(q)`: `B = 2Γ`, `ρ^l = id`, `ρ^r = -id`, `H = p·X`.
pub fn build_gradient_extension(g: &TensorField, x: &TensorField) -> Result<ScenarioBundle> {
    let n = g.arity();
    if n == 0 {
        return input("gradient extension needs n >= 1");
    }
    if x.shape() != [n] || x.arity() != n {
        return input(format!("vector field must have shape [{n}] over arity {n}"));
    }
    let canon = AlgebroidStructure::canonical(n);
    let gamma = christoffel_field(&canon, g)?;
    let bracket = TensorField::from_fn(&[n, n, n], n, |i| scaled(gamma.get(i), 2.0));
    let a = AlgebroidStructure::new(n, n, bracket, identity_anchor(n, 1.0), identity_anchor(n, -1.0))?;
    let neg_gamma = TensorField::from_fn(&[n, n, n], n, |i| scaled(gamma.get(i), -1.0));
    let split = ConnectionPair::new(gamma.clone(), neg_gamma)?;
    let hamiltonian = momentum_pairing(n, x);
    ScenarioBundle {
        name: "gradient_extension".into(),
        parameters: serde_json::json!({ "n": n }),
        algebroid: a,
        hamiltonian,
        split,
        curvature: CurvatureTensor::zero(n, n),
        monitors: vec![],
        constraint: None,
    }
    .validate()
}

/// `c f`, exact for polynomials.
fn scaled(f: &SmoothField, c: f64) -> SmoothField {
    if let Some(g) = poly::scale(f, c) {
        return g;
    }
    let f = f.clone();
    let fd = f.uses_finite_differences();
    if fd {
        SmoothField::finite_difference(&f.name(), f.arity(), None, move |q| Ok(c * f.value(q)?))
    } else {
        SmoothField::builtin(&f.name(), f.arity(), move |q| {
            let (v, g) = f.eval(q)?;
            Ok((c * v, g.into_iter().map(|x| c * x).collect()))
        })
    }
}

/// `Σ_i p_i X^i(q)` on the chart of dimension `2n`.
fn momentum_pairing(n: usize, x: &TensorField) -> PhaseFunction {
    if x.is_polynomial() {
        let mut acc = SmoothField::zero(2 * n);
        for i in 0..n {
            let xi = poly::embed(x.get(&[i]), 2 * n, 0).expect("polynomial");
            let pi = SmoothField::coordinate(n + i, 2 * n);
            acc = poly::add(&acc, &poly::mul(&xi, &pi).expect("polynomial")).expect("polynomial");
        }
        return acc;
    }
    let x = x.clone();
    SmoothField::builtin("momentum_pairing", 2 * n, move |z| {
        let (q, p) = z.split_at(n);
        let (v, g) = x.jets(q)?;
        let mut grad = vec![0.0; 2 * n];
        for i in 0..n {
            for j in 0..n {
                grad[j] += p[i] * g[i][j];
            }
            grad[n + i] = v[i];
        }
        Ok((v.iter().zip(p).map(|(a, b)| a * b).sum(), grad))
    })
}

/// Torsion source for the contorsion builder.
#[derive(Clone, Debug)]
pub enum TorsionInput {
    /// Contorsion `S`; the bracket uses `T^k_{ij} = S^k_{ij} - S^k_{ji}`.
    Contorsion(TensorField),
    /// `T` taken as given, possibly non-skew.
    Direct(TensorField),
}

/// `B = T`, `ρ^l = ρ^r = id`, `H = ½ G^{ij} p_i p_j + V`, with `energy` and `dissipation` monitors.
pub fn build_contorsion(g: &TensorField, torsion: &TorsionInput, potential: &SmoothField) -> Result<ScenarioBundle> {
    let n = g.arity();
    if n == 0 {
        return input("contorsion scenario needs n >= 1");
    }
    if g.shape() != [n, n] {
        return input(format!("metric must have shape [{n},{n}]"));
    }
    if potential.arity() != n {
        return input(format!("potential arity {} differs from n = {n}", potential.arity()));
    }
    crate::connections::check_metric(g, n, &crate::prolongation::probe_points(n))?;
    let t = match torsion {
        TorsionInput::Contorsion(s) => {
            check_cubic(s, n, "contorsion")?;
            TensorField::from_fn(&[n, n, n], n, |i| difference(s.get(i), s.get(&[i[0], i[2], i[1]])))
        }
        TorsionInput::Direct(t) => {
            check_cubic(t, n, "torsion")?;
            t.clone()
        }
    };
    let id = identity_anchor(n, 1.0);
    let a = AlgebroidStructure::new(n, n, t.clone(), id.clone(), id)?;
    let hamiltonian = metric_hamiltonian(g, potential);
    let dissipation = dissipation_monitor(g, &t);
    let split = default_split(&a);
    ScenarioBundle {
        name: "contorsion".into(),
        parameters: serde_json::json!({ "n": n, "direct": matches!(torsion, TorsionInput::Direct(_)) }),
        algebroid: a,
        hamiltonian: hamiltonian.clone(),
        split,
        curvature: CurvatureTensor::zero(n, n),
        monitors: vec![Monitor::new("energy", hamiltonian), Monitor::new("dissipation", dissipation)],
        constraint: None,
    }
    .validate()
}

fn check_cubic(t: &TensorField, n: usize, what: &str) -> Result<()> {
    if t.shape() != [n, n, n] || t.arity() != n {
        return input(format!("{what} must have shape [{n},{n},{n}] over arity {n}"));
    }
    Ok(())
}

fn difference(a: &SmoothField, b: &SmoothField) -> SmoothField {
    if let Some(d) = poly::scale(b, -1.0).and_then(|nb| poly::add(a, &nb)) {
        return d;
    }
    let (a, b) = (a.clone(), b.clone());
    SmoothField::builtin("difference", a.arity(), move |q| {
        let (va, ga) = a.eval(q)?;
        let (vb, gb) = b.eval(q)?;
        Ok((va - vb, ga.iter().zip(&gb).map(|(x, y)| x - y).collect()))
    })
}

fn inverse_at(g: &TensorField, q: &[f64]) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let n = g.shape()[0];
    let (v, grads) = g.jets(q)?;
    let gm = DMatrix::from_row_slice(n, n, &v);
    let inv = gm
        .try_inverse()
        .ok_or_else(|| Error::Numeric(format!("metric is singular at q = {q:?}")))?;
    let d = (0..q.len())
        .map(|k| {
            let dg = DMatrix::from_fn(n, n, |i, j| grads[i * n + j][k]);
            -(&inv * dg * &inv)
        })
        .collect();
    Ok((inv, d))
}

/// `½ G^{ij}(q) p_i p_j + V(q)` with an exact gradient.
fn metric_hamiltonian(g: &TensorField, potential: &SmoothField) -> PhaseFunction {
    let n = g.arity();
    let (g, v) = (g.clone(), potential.clone());
    SmoothField::builtin("metric_hamiltonian", 2 * n, move |z| {
        let (q, p) = z.split_at(n);
        let (inv, dinv) = inverse_at(&g, q)?;
        let pv = nalgebra::DVector::from_column_slice(p);
        let gp = &inv * &pv;
        let (vv, vg) = v.eval(q)?;
        let mut grad = vec![0.0; 2 * n];
        for k in 0..n {
            grad[k] = 0.5 * pv.dot(&(&dinv[k] * &pv)) + vg[k];
            grad[n + k] = gp[k];
        }
        Ok((0.5 * pv.dot(&gp) + vv, grad))
    })
}

/// `{H, H} = -T^k_{ij} (G⁻¹p)_i (G⁻¹p)_j p_k`.
fn dissipation_monitor(g: &TensorField, t: &TensorField) -> PhaseFunction {
    let n = g.arity();
    let (g, t) = (g.clone(), t.clone());
    SmoothField::finite_difference("dissipation", 2 * n, None, move |z| {
        let (q, p) = z.split_at(n);
        let (inv, _) = inverse_at(&g, q)?;
        let gp = &inv * nalgebra::DVector::from_column_slice(p);
        let tv = t.eval3(q)?;
        let mut s = 0.0;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    s += tv[[k, i, j]] * gp[i] * gp[j] * p[k];
                }
            }
        }
        Ok(-s)
    })
}

/// `se(2) x R` with `G = I` restricted to `D = span{e1+e4, e2+e4, e3}`: the projected bracket
/// is skew but fails the Jacobi identity.
pub fn non_jacobi_instance() -> Result<ScenarioBundle> {
    let c = |v: f64| SmoothField::constant(v, 0);
    let z = c(0.0);
    let kinematic = TensorField::new(
        vec![3, 4],
        0,
        vec![
            c(1.0), z.clone(), z.clone(), c(1.0),
            z.clone(), c(1.0), z.clone(), c(1.0),
            z.clone(), z.clone(), c(1.0), z,
        ],
    )?;
    let spec = ConstraintSpec {
        ambient: AlgebroidStructure::lie_algebra(&crate::algebroid::se2xr_constants())?,
        metric: identity_metric(4, 0),
        kinematic,
        variational: None,
        potential: SmoothField::zero(0),
    };
    let mut b = build_constrained(&spec)?;
    b.name = "projected_se2xr".into();
    Ok(b)
}

/// Metric-constrained mechanics on a subbundle; see [`ConstraintSpec`].
pub fn build_constrained(spec: &ConstraintSpec) -> Result<ScenarioBundle> {
    let sys = ConstrainedSystem::new(spec.clone())?;
    sys.bundle()
}
