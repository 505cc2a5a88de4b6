//! Connection pairs splitting a bracket, Levi-Civita connections, curvature and lifts to the dual bundle.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::{Array3, Array4};

use crate::algebroid::AlgebroidStructure;
use crate::error::{check_len, input, Error, Result};
use crate::fields::{SmoothField, TensorField};
use crate::hamiltonian::PhasePoint;

/// FD step for differentiating Christoffel closures.
pub const CHRISTOFFEL_FD_STEP: f64 = 1e-4;

/// Christoffel fields `(D^l)^γ_{αβ}`, `(D^r)^γ_{αβ}`, both `[m, m, m]` in order (γ, α, β).
#[derive(Clone, Debug)]
pub struct ConnectionPair {
    pub dl: TensorField,
    pub dr: TensorField,
}

impl ConnectionPair {
    pub fn new(dl: TensorField, dr: TensorField) -> Result<Self> {
        if dl.shape() != dr.shape() || dl.arity() != dr.arity() || dl.shape().len() != 3 {
            return input("connection pair: Dl and Dr must share a rank-3 shape and arity");
        }
        Ok(Self { dl, dr })
    }

    pub fn uses_finite_differences(&self) -> bool {
        self.dl.uses_finite_differences() || self.dr.uses_finite_differences()
    }
}

type CurvatureFn = dyn Fn(&[f64]) -> Result<Array4<f64>> + Send + Sync;

#[derive(Clone)]
enum CurvatureRepr {
    Fields(TensorField),
    Derived(Arc<CurvatureFn>),
}

/// `R^μ_{αβν}(q)`: value index μ, skew pair (α, β), slot ν.
#[derive(Clone)]
pub struct CurvatureTensor {
    n: usize,
    m: usize,
    repr: CurvatureRepr,
}

impl fmt::Debug for CurvatureTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            CurvatureRepr::Fields(t) => write!(f, "CurvatureTensor(fields, {:?})", t.shape()),
            CurvatureRepr::Derived(_) => write!(f, "CurvatureTensor(derived, n={}, m={})", self.n, self.m),
        }
    }
}

impl CurvatureTensor {
    pub fn zero(n: usize, m: usize) -> Self {
        Self { n, m, repr: CurvatureRepr::Fields(TensorField::zeros(&[m, m, m, m], n)) }
    }

    pub fn from_fields(r: TensorField) -> Result<Self> {
        let s = r.shape();
        if s.len() != 4 || s.iter().any(|&k| k != s[0]) {
            return input(format!("curvature must have shape [m,m,m,m], got {s:?}"));
        }
        Ok(Self { n: r.arity(), m: s[0], repr: CurvatureRepr::Fields(r) })
    }

    pub fn constant(r: &Array4<f64>, n: usize) -> Result<Self> {
        let m = r.shape()[0];
        let values: Vec<f64> = r.iter().copied().collect();
        Self::from_fields(TensorField::constants(&[m, m, m, m], n, &values)?)
    }

    /// A tensor computed as a whole at each point.
    pub fn derived<F>(n: usize, m: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<Array4<f64>> + Send + Sync + 'static,
    {
        Self { n, m, repr: CurvatureRepr::Derived(Arc::new(f)) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eval(&self, q: &[f64]) -> Result<Array4<f64>> {
        check_len("curvature argument", self.n, q.len())?;
        match &self.repr {
            CurvatureRepr::Fields(t) => t.eval4(q),
            CurvatureRepr::Derived(f) => f(q),
        }
    }

    pub fn uses_finite_differences(&self) -> bool {
        match &self.repr {
            CurvatureRepr::Fields(t) => t.uses_finite_differences(),
            CurvatureRepr::Derived(_) => true,
        }
    }

    /// Component-wise field view; derived tensors become closures.
    pub fn to_tensor_field(&self) -> TensorField {
        match &self.repr {
            CurvatureRepr::Fields(t) => t.clone(),
            CurvatureRepr::Derived(f) => {
                let m = self.m;
                TensorField::from_fn(&[m, m, m, m], self.n, |idx| {
                    let (f, i) = (f.clone(), [idx[0], idx[1], idx[2], idx[3]]);
                    SmoothField::finite_difference("curvature", self.n, Some(CHRISTOFFEL_FD_STEP), move |q| Ok(f(q)?[i]))
                })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureReport {
    pub skew_residual: f64,
    pub bianchi_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LiftMode {
    HorizontalLeft,
    HorizontalRight,
    Vertical,
}

/// `D^l = 0`, `(D^r)^γ_{αβ} = -B^γ_{βα}`.
pub fn default_split(a: &AlgebroidStructure) -> ConnectionPair {
    let m = a.m();
    let b = a.bracket();
    let dr = TensorField::from_fn(&[m, m, m], a.n(), |i| negate(b.get(&[i[0], i[2], i[1]])));
    ConnectionPair { dl: TensorField::zeros(&[m, m, m], a.n()), dr }
}

fn negate(f: &SmoothField) -> SmoothField {
    if let Some(g) = crate::fields::poly::scale(f, -1.0) {
        return g;
    }
    let f = f.clone();
    SmoothField::builtin("negated", f.arity(), move |q| {
        let (v, g) = f.eval(q)?;
        Ok((-v, g.into_iter().map(|x| -x).collect()))
    })
}

/// `max |B^γ_{αβ} - (D^l)^γ_{αβ} + (D^r)^γ_{βα}|`.
pub fn verify_split(a: &AlgebroidStructure, cp: &ConnectionPair, q: &[f64]) -> Result<f64> {
    let m = a.m();
    if cp.dl.shape() != [m, m, m] || cp.dl.arity() != a.n() {
        return input("connection pair does not match the algebroid dimensions");
    }
    let b = a.bracket().eval3(q)?;
    let dl = cp.dl.eval3(q)?;
    let dr = cp.dr.eval3(q)?;
    let mut r = 0.0_f64;
    for g in 0..m {
        for al in 0..m {
            for be in 0..m {
                r = r.max((b[[g, al, be]] - dl[[g, al, be]] + dr[[g, be, al]]).abs());
            }
        }
    }
    Ok(r)
}

/// Probe points used to validate metrics: the origin and two diagonal points.
fn metric_probes(n: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; n], vec![0.5; n], vec![-0.5; n]]
}

pub(crate) fn check_metric(g: &TensorField, m: usize, probes: &[Vec<f64>]) -> Result<()> {
    if g.shape() != [m, m] {
        return input(format!("metric must have shape [{m},{m}], got {:?}", g.shape()));
    }
    for q in probes {
        let v = g.eval2(q)?;
        let sym = crate::calculus::max_abs((&v - &v.t()).iter());
        if sym > 1e-12 * (1.0 + crate::calculus::max_abs(v.iter())) {
            return input(format!("metric is not symmetric at q = {q:?}"));
        }
        let mat = DMatrix::from_fn(m, m, |i, j| v[[i, j]]);
        if mat.cholesky().is_none() {
            return input(format!("metric is not positive definite at q = {q:?}"));
        }
    }
    Ok(())
}

/// Christoffel symbols `Γ^c_{ab}` of the metric connection at `q`, from the Koszul formula
///
/// `2 Γ^μ_{ab} G_{μα} = ρ_a G_{bα} + ρ_b G_{aα} - ρ_α G_{ab}
///                    + G_{aμ} C^μ_{αb} + G_{bμ} C^μ_{αa} + G_{αμ} C^μ_{ab}`.
pub fn christoffels_at(a: &AlgebroidStructure, g: &TensorField, q: &[f64]) -> Result<Array3<f64>> {
    let (n, m) = (a.n(), a.m());
    let s = a.structure_eval(q)?;
    let (gv, gg) = g.jets(q)?;
    let gm = |i: usize, j: usize| gv[i * m + j];
    // ρ_a(G_{bc})
    let dg = |a_: usize, b_: usize, c_: usize| -> f64 { (0..n).map(|i| s.rho_l[[i, a_]] * gg[b_ * m + c_][i]).sum() };
    let ginv = DMatrix::from_fn(m, m, gm)
        .try_inverse()
        .ok_or_else(|| Error::Numeric(format!("metric is singular at q = {q:?}")))?;
    let c = &s.b;
    let mut k = Array3::<f64>::zeros((m, m, m)); // k[a, b, α]
    for a_ in 0..m {
        for b_ in 0..m {
            for al in 0..m {
                let mut v = dg(a_, b_, al) + dg(b_, a_, al) - dg(al, a_, b_);
                for mu in 0..m {
                    v += gm(a_, mu) * c[[mu, al, b_]] + gm(b_, mu) * c[[mu, al, a_]] + gm(al, mu) * c[[mu, a_, b_]];
                }
                k[[a_, b_, al]] = v;
            }
        }
    }
    let mut gamma = Array3::zeros((m, m, m));
    for cc in 0..m {
        for a_ in 0..m {
            for b_ in 0..m {
                gamma[[cc, a_, b_]] = 0.5 * (0..m).map(|al| ginv[(cc, al)] * k[[a_, b_, al]]).sum::<f64>();
            }
        }
    }
    Ok(gamma)
}

/// Levi-Civita Christoffel fields of `g` on a Lie algebroid, as FD-differentiable closures.
pub fn levi_civita(a: &AlgebroidStructure, g: &TensorField) -> Result<TensorField> {
    let (n, m) = (a.n(), a.m());
    if g.arity() != n {
        return input(format!("metric arity {} differs from n = {n}", g.arity()));
    }
    let probes = metric_probes(n);
    check_metric(g, m, &probes)?;
    for q in &probes {
        let r = a.structure_checks(q)?;
        if r.skew_defect > 1e-12 || r.anchor_lr_defect > 1e-12 {
            return input("levi_civita needs a skew algebroid with equal anchors");
        }
    }
    if a.is_polynomial() && a.n() == 0 && g.is_polynomial() {
        let gamma = christoffels_at(a, g, &[])?;
        let values: Vec<f64> = gamma.iter().copied().collect();
        return TensorField::constants(&[m, m, m], 0, &values);
    }
    Ok(TensorField::from_fn(&[m, m, m], n, |idx| {
        let (a, g, i) = (a.clone(), g.clone(), [idx[0], idx[1], idx[2]]);
        SmoothField::finite_difference("levi_civita", n, Some(CHRISTOFFEL_FD_STEP), move |q| {
            Ok(christoffels_at(&a, &g, q)?[i])
        })
    }))
}

/// `R^λ_{αβν} = ρ_α(Γ^λ_{βν}) - ρ_β(Γ^λ_{αν}) + Γ^μ_{βν}Γ^λ_{αμ} - Γ^μ_{αν}Γ^λ_{βμ} - C^μ_{αβ}Γ^λ_{μν}`.
pub fn curvature(a: &AlgebroidStructure, gamma: &TensorField, q: &[f64]) -> Result<(Array4<f64>, CurvatureReport)> {
    let (n, m) = (a.n(), a.m());
    if gamma.shape() != [m, m, m] || gamma.arity() != n {
        return input("Christoffel tensor does not match the algebroid dimensions");
    }
    let s = a.structure_eval(q)?;
    let (gv, gg) = gamma.jets(q)?;
    let gi = |l: usize, a_: usize, b_: usize| (l * m + a_) * m + b_;
    let dir = |al: usize, l: usize, a_: usize, b_: usize| -> f64 {
        let grad = &gg[gi(l, a_, b_)];
        (0..n).map(|i| s.rho_l[[i, al]] * grad[i]).sum()
    };
    let mut r = Array4::zeros((m, m, m, m));
    for l in 0..m {
        for al in 0..m {
            for be in 0..m {
                for nu in 0..m {
                    let mut v = dir(al, l, be, nu) - dir(be, l, al, nu);
                    for mu in 0..m {
                        v += gv[gi(mu, be, nu)] * gv[gi(l, al, mu)] - gv[gi(mu, al, nu)] * gv[gi(l, be, mu)]
                            - s.b[[mu, al, be]] * gv[gi(l, mu, nu)];
                    }
                    r[[l, al, be, nu]] = v;
                }
            }
        }
    }
    let report = curvature_identities(&r);
    Ok((r, report))
}

/// Skew and first-Bianchi residuals of a (1,3) tensor.
pub fn curvature_identities(r: &Array4<f64>) -> CurvatureReport {
    let m = r.shape()[0];
    let (mut skew, mut bianchi) = (0.0_f64, 0.0_f64);
    for l in 0..m {
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    skew = skew.max((r[[l, a, b, c]] + r[[l, b, a, c]]).abs());
                    bianchi = bianchi.max((r[[l, a, b, c]] + r[[l, b, c, a]] + r[[l, c, a, b]]).abs());
                }
            }
        }
    }
    CurvatureReport { skew_residual: skew, bianchi_residual: bianchi }
}

/// Curvature of `gamma` as a pointwise-derived tensor.
pub fn curvature_tensor(a: &AlgebroidStructure, gamma: &TensorField) -> CurvatureTensor {
    let (a2, g2) = (a.clone(), gamma.clone());
    CurvatureTensor::derived(a.n(), a.m(), move |q| Ok(curvature(&a2, &g2, q)?.0))
}

/// Tangent vector on the dual-bundle chart, `(q-part, p-part)`.
pub fn lift(a: &AlgebroidStructure, cp: &ConnectionPair, mode: LiftMode, coeffs: &[f64], x: &PhasePoint) -> Result<Vec<f64>> {
    x.check(a)?;
    let (n, m) = (a.n(), a.m());
    check_len("lift coefficients", m, coeffs.len())?;
    let mut out = vec![0.0; n + m];
    if mode == LiftMode::Vertical {
        out[n..].copy_from_slice(coeffs);
        return Ok(out);
    }
    let s = a.structure_eval(&x.q)?;
    let (rho, d) = match mode {
        LiftMode::HorizontalLeft => (&s.rho_l, cp.dl.eval3(&x.q)?),
        _ => (&s.rho_r, cp.dr.eval3(&x.q)?),
    };
    for (al, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for i in 0..n {
            out[i] += c * rho[[i, al]];
        }
        for be in 0..m {
            let v: f64 = (0..m).map(|g| d[[g, al, be]] * x.p[g]).sum();
            out[n + be] += c * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::so3_constants;

    fn warped_metric() -> TensorField {
        let n = 2;
        let one = SmoothField::constant(1.0, n);
        let g22 = SmoothField::polynomial(&[(1.0, vec![0, 0]), (1.0, vec![2, 0])], n).unwrap();
        TensorField::new(vec![2, 2], n, vec![one, SmoothField::zero(n), SmoothField::zero(n), g22]).unwrap()
    }

    fn identity_metric(m: usize, n: usize) -> TensorField {
        TensorField::from_fn(&[m, m], n, |i| SmoothField::constant(if i[0] == i[1] { 1.0 } else { 0.0 }, n))
    }

    #[test]
    fn default_split_examples() {
        let can = AlgebroidStructure::canonical(2);
        let cp = default_split(&can);
        assert!(cp.dl.values(&[0.1, 0.2]).unwrap().iter().all(|&x| x == 0.0));
        assert!(cp.dr.values(&[0.1, 0.2]).unwrap().iter().all(|&x| x == 0.0));
        let so3 = AlgebroidStructure::lie_algebra(&so3_constants()).unwrap();
        let cp = default_split(&so3);
        let dr = cp.dr.eval3(&[]).unwrap();
        for (c, a, b) in itertools(3) {
            assert_eq!(dr[[c, a, b]], crate::algebroid::epsilon(a, b, c));
        }
        assert_eq!(verify_split(&so3, &cp, &[]).unwrap(), 0.0);
    }

    fn itertools(m: usize) -> Vec<(usize, usize, usize)> {
        let mut v = Vec::new();
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    v.push((a, b, c));
                }
            }
        }
        v
    }

    #[test]
    fn perturbed_split_residual_is_linear() {
        let so3 = AlgebroidStructure::lie_algebra(&so3_constants()).unwrap();
        let mut cp = default_split(&so3);
        cp.dl.set(&[0, 1, 2], SmoothField::constant(1e-3, 0)).unwrap();
        assert!((verify_split(&so3, &cp, &[]).unwrap() - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn flat_and_warped_christoffels() {
        let can = AlgebroidStructure::canonical(2);
        let g = levi_civita(&can, &identity_metric(2, 2)).unwrap();
        assert!(g.values(&[0.3, -0.4]).unwrap().iter().all(|&x| x == 0.0));

        let g = levi_civita(&can, &warped_metric()).unwrap();
        let q1 = 0.7;
        let v = g.eval3(&[q1, 0.2]).unwrap();
        let w = q1 / (1.0 + q1 * q1);
        assert!((v[[1, 0, 1]] - w).abs() < 1e-14);
        assert!((v[[1, 1, 0]] - w).abs() < 1e-14);
        assert!((v[[0, 1, 1]] + q1).abs() < 1e-14);
        for (c, a, b) in [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 1)] {
            assert!(v[[c, a, b]].abs() < 1e-14);
        }
        let lc = ConnectionPair::new(g.clone(), g).unwrap();
        assert!(verify_split(&can, &lc, &[q1, 0.2]).unwrap() < 1e-14);
    }

    #[test]
    fn so3_bi_invariant_connection_and_curvature() {
        let so3 = AlgebroidStructure::lie_algebra(&so3_constants()).unwrap();
        let g = levi_civita(&so3, &identity_metric(3, 0)).unwrap();
        let v = g.eval3(&[]).unwrap();
        for (c, a, b) in itertools(3) {
            assert!((v[[c, a, b]] - 0.5 * crate::algebroid::epsilon(a, b, c)).abs() < 1e-15);
        }
        let (r, rep) = curvature(&so3, &g, &[]).unwrap();
        assert!((r[[0, 0, 1, 1]] - 0.25).abs() < 1e-15);
        assert!(rep.skew_residual <= 1e-15 && rep.bianchi_residual <= 1e-15);
        let lc = ConnectionPair::new(g.clone(), g).unwrap();
        assert!(verify_split(&so3, &lc, &[]).unwrap() < 1e-15);
    }

    #[test]
    fn warped_curvature_identities() {
        let can = AlgebroidStructure::canonical(2);
        let g = levi_civita(&can, &warped_metric()).unwrap();
        let (r, rep) = curvature(&can, &g, &[0.4, 0.0]).unwrap();
        assert!(rep.skew_residual <= 1e-6 && rep.bianchi_residual <= 1e-6);
        // Surface of revolution with radius f = sqrt(1+q1^2): Gaussian curvature -f''/f.
        let q1: f64 = 0.4;
        let k = -1.0 / (1.0 + q1 * q1).powi(2);
        // R(e1,e2)e2 = K * G22 * e1.
        assert!((r[[0, 0, 1, 1]] - k * (1.0 + q1 * q1)).abs() < 1e-6);
    }

    #[test]
    fn lifts() {
        let can = AlgebroidStructure::canonical(1);
        let cp = default_split(&can);
        let x = PhasePoint::new(vec![0.3], vec![2.0]);
        assert_eq!(lift(&can, &cp, LiftMode::HorizontalLeft, &[1.0], &x).unwrap(), vec![1.0, 0.0]);

        let so3 = AlgebroidStructure::lie_algebra(&so3_constants()).unwrap();
        let cp = default_split(&so3);
        let x = PhasePoint::new(vec![], vec![1.0, 2.0, 3.0]);
        assert_eq!(lift(&so3, &cp, LiftMode::HorizontalLeft, &[1.0, 0.0, 0.0], &x).unwrap(), vec![0.0; 3]);
        assert_eq!(lift(&so3, &cp, LiftMode::HorizontalRight, &[1.0, 0.0, 0.0], &x).unwrap(), vec![0.0, 3.0, -2.0]);

        let two = AlgebroidStructure::canonical(2);
        let x = PhasePoint::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let v = lift(&two, &default_split(&two), LiftMode::Vertical, &[2.0, 5.0], &x).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 2.0, 5.0]);
    }

    #[test]
    fn singular_metric_rejected() {
        let can = AlgebroidStructure::canonical(2);
        let g = TensorField::constants(&[2, 2], 2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(levi_civita(&can, &g), Err(Error::Input(_))));
        let g = TensorField::constants(&[2, 2], 2, &[1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(levi_civita(&can, &g), Err(Error::Input(_))));
    }
}
