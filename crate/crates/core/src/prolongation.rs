//! The prolongation algebroid over the dual-bundle chart and its exact symplectic section.
//!
//! Frame order is `(h_1..h_m, v^1..v^m)`: `h_α` is the `D^l`-horizontal lift of `σ_α` and
//! `v^α` the vertical lift of `σ^α`. Chart coordinates are `(q_1..q_n, p_1..p_m)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};

use crate::algebroid::AlgebroidStructure;
use crate::calculus;
use crate::connections::{verify_split, ConnectionPair, CurvatureTensor};
use crate::error::{check_len, input, Error, Result};
use crate::fields::{central_jacobian, default_fd_step, SmoothField, TensorField};
use crate::hamiltonian::{PhaseFunction, PhasePoint};

/// Largest split residual accepted at construction.
pub const SPLIT_TOLERANCE: f64 = 1e-10;

/// Base points at which structural preconditions are checked.
pub fn probe_points(n: usize) -> Vec<Vec<f64>> {
    if n == 0 {
        return vec![vec![]];
    }
    vec![vec![0.0; n], vec![0.5; n], vec![-0.5; n], (0..n).map(|i| 0.3 - 0.2 * i as f64).collect()]
}

#[derive(Clone, Debug)]
pub struct ProlongationData {
    base: AlgebroidStructure,
    split: ConnectionPair,
    curvature: CurvatureTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProlongationSnapshot {
    pub rho_l: Array2<f64>,
    pub rho_r: Array2<f64>,
    /// `bracket[[C, A, B]]` is the `f_C` coefficient of `B(f_A, f_B)`.
    pub bracket: Array3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OmegaMethod {
    FrameFormula,
    GenericDlr,
}

type FormFn = dyn Fn(&[f64]) -> Result<Array2<f64>> + Send + Sync;

/// Frame components of a (0,2) section as functions on the dual-bundle chart.
#[derive(Clone)]
pub enum FormComponents {
    Constant(Array2<f64>),
    /// `[2m, 2m]` fields of arity `n + m`; gradients come from the fields.
    Fields(TensorField),
    /// Whole-array closure differentiated by central differences.
    Closure { f: Arc<FormFn>, step: f64 },
}

impl fmt::Debug for FormComponents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(a) => write!(f, "Constant({a:?})"),
            Self::Fields(t) => write!(f, "Fields({:?})", t.shape()),
            Self::Closure { step, .. } => write!(f, "Closure(step={step})"),
        }
    }
}

impl FormComponents {
    pub fn closure<F>(f: F, step: f64) -> Self
    where
        F: Fn(&[f64]) -> Result<Array2<f64>> + Send + Sync + 'static,
    {
        Self::Closure { f: Arc::new(f), step }
    }

    /// Values `[K, K]` and chart gradients `[K, K, N]`.
    pub fn jet(&self, x: &[f64], k: usize) -> Result<(Array2<f64>, Array3<f64>)> {
        let nn = x.len();
        match self {
            Self::Constant(a) => {
                if a.shape() != [k, k] {
                    return input(format!("form must be {k}x{k}, got {:?}", a.shape()));
                }
                Ok((a.clone(), Array3::zeros((k, k, nn))))
            }
            Self::Fields(t) => {
                if t.shape() != [k, k] || t.arity() != nn {
                    return input(format!("form fields must be [{k},{k}] over arity {nn}"));
                }
                let (v, g) = t.jets(x)?;
                Ok((
                    Array2::from_shape_vec((k, k), v).expect("shape"),
                    Array3::from_shape_vec((k, k, nn), g.into_iter().flatten().collect()).expect("shape"),
                ))
            }
            Self::Closure { f, step } => {
                let v = f(x)?;
                if v.shape() != [k, k] {
                    return input(format!("form closure must return {k}x{k}"));
                }
                let jac = central_jacobian(|y| Ok(f(y)?.iter().copied().collect()), x, *step)?;
                let g = Array3::from_shape_vec((k, k, nn), jac.into_iter().flatten().collect()).expect("shape");
                Ok((v, g))
            }
        }
    }
}

impl ProlongationData {
    pub fn new(base: AlgebroidStructure, split: ConnectionPair, curvature: CurvatureTensor) -> Result<Self> {
        let (n, m) = (base.n(), base.m());
        if split.dl.shape() != [m, m, m] || split.dl.arity() != n {
            return input("split does not match the base algebroid dimensions");
        }
        if curvature.m() != m || curvature.n() != n {
            return input("curvature does not match the base algebroid dimensions");
        }
        for q in probe_points(n) {
            let r = verify_split(&base, &split, &q)?;
            if !(r <= SPLIT_TOLERANCE) {
                return Err(Error::InvalidStructure(format!(
                    "split residual {r:.3e} exceeds {SPLIT_TOLERANCE:e} at q = {q:?}"
                )));
            }
        }
        Ok(Self { base, split, curvature })
    }

    pub fn base(&self) -> &AlgebroidStructure {
        &self.base
    }

    pub fn split(&self) -> &ConnectionPair {
        &self.split
    }

    pub fn curvature(&self) -> &CurvatureTensor {
        &self.curvature
    }

    pub fn with_curvature(&self, curvature: CurvatureTensor) -> Result<Self> {
        Self::new(self.base.clone(), self.split.clone(), curvature)
    }

    /// Chart dimension `n + m`.
    pub fn chart_dim(&self) -> usize {
        self.base.n() + self.base.m()
    }

    /// Frame size `2m`.
    pub fn rank(&self) -> usize {
        2 * self.base.m()
    }

    pub fn uses_finite_differences(&self) -> bool {
        self.base.uses_finite_differences() || self.split.uses_finite_differences() || self.curvature.uses_finite_differences()
    }
}

/// Anchors and bracket coefficients of the prolongation frame at `x`.
pub fn prolong_eval(pd: &ProlongationData, x: &PhasePoint) -> Result<ProlongationSnapshot> {
    let a = &pd.base;
    x.check(a)?;
    let (n, m) = (a.n(), a.m());
    let s = a.structure_eval(&x.q)?;
    let dl = pd.split.dl.eval3(&x.q)?;
    let dr = pd.split.dr.eval3(&x.q)?;
    let r = pd.curvature.eval(&x.q)?;
    let (nn, k) = (n + m, 2 * m);
    let contract_p = |d: &Array3<f64>, al: usize, be: usize| -> f64 { (0..m).map(|g| d[[g, al, be]] * x.p[g]).sum() };

    let mut rho_l = Array2::zeros((nn, k));
    let mut rho_r = Array2::zeros((nn, k));
    for al in 0..m {
        for i in 0..n {
            rho_l[[i, al]] = s.rho_l[[i, al]];
            rho_r[[i, al]] = s.rho_r[[i, al]];
        }
        for be in 0..m {
            rho_l[[n + be, al]] = contract_p(&dl, al, be);
            rho_r[[n + be, al]] = contract_p(&dr, al, be);
        }
        rho_l[[n + al, m + al]] = 1.0;
        rho_r[[n + al, m + al]] = 1.0;
    }

    let mut c = Array3::zeros((k, k, k));
    for al in 0..m {
        for be in 0..m {
            for g in 0..m {
                c[[g, al, be]] = s.b[[g, al, be]];
                c[[m + g, al, m + be]] = -dl[[be, al, g]];
                c[[m + g, m + al, be]] = dr[[al, be, g]];
            }
            for nu in 0..m {
                c[[m + nu, al, be]] = (0..m).map(|mu| r[[mu, al, be, nu]] * x.p[mu]).sum();
            }
        }
    }
    Ok(ProlongationSnapshot { rho_l, rho_r, bracket: c })
}

/// Liouville section in the dual frame: `(p, 0)`.
pub fn liouville(pd: &ProlongationData, x: &PhasePoint) -> Result<Vec<f64>> {
    x.check(&pd.base)?;
    let mut out = x.p.clone();
    out.extend(std::iter::repeat_n(0.0, pd.base.m()));
    Ok(out)
}

/// `[[0, I], [-I, 0]]`.
pub fn omega_frame(m: usize) -> Array2<f64> {
    let mut w = Array2::zeros((2 * m, 2 * m));
    for a in 0..m {
        w[[a, m + a]] = 1.0;
        w[[m + a, a]] = -1.0;
    }
    w
}

pub fn omega(pd: &ProlongationData, x: &PhasePoint, method: OmegaMethod) -> Result<Array2<f64>> {
    x.check(&pd.base)?;
    let (n, m) = (pd.base.n(), pd.base.m());
    match method {
        OmegaMethod::FrameFormula => Ok(omega_frame(m)),
        OmegaMethod::GenericDlr => {
            let snap = prolong_eval(pd, x)?;
            let lambda = liouville(pd, x)?;
            // λ_{h_α} = p_α, λ_{v^α} = 0: exact chart gradients.
            let mut grad = Array2::zeros((2 * m, n + m));
            for al in 0..m {
                grad[[al, n + al]] = 1.0;
            }
            let d = calculus::lr_differential(snap.rho_l.view(), snap.rho_r.view(), snap.bracket.view(), &lambda, grad.view());
            Ok(-d)
        }
    }
}

fn hamiltonian_gradient(pd: &ProlongationData, h: &PhaseFunction, x: &PhasePoint) -> Result<Vec<f64>> {
    check_len("Hamiltonian arity", pd.chart_dim(), h.arity())?;
    x.check(&pd.base)?;
    h.gradient(&x.flat())
}

/// Closed-form right Hamiltonian section in the prolongation frame.
pub fn right_ham_section(pd: &ProlongationData, h: &PhaseFunction, x: &PhasePoint) -> Result<Vec<f64>> {
    let (n, m) = (pd.base.n(), pd.base.m());
    let dh = hamiltonian_gradient(pd, h, x)?;
    let (dq, dp) = dh.split_at(n);
    let s = pd.base.structure_eval(&x.q)?;
    let dr = pd.split.dr.eval3(&x.q)?;
    let mut xi = vec![0.0; 2 * m];
    xi[..m].copy_from_slice(dp);
    for al in 0..m {
        let mut v: f64 = (0..n).map(|i| dq[i] * s.rho_r[[i, al]]).sum();
        for be in 0..m {
            for g in 0..m {
                v += dp[be] * dr[[g, al, be]] * x.p[g];
            }
        }
        xi[m + al] = -v;
    }
    Ok(xi)
}

/// Solves `Ω(ξ, ·) = d^r H` for ξ with Ω from `method`.
pub fn right_ham_section_solve(pd: &ProlongationData, h: &PhaseFunction, x: &PhasePoint, method: OmegaMethod) -> Result<Vec<f64>> {
    let dh = hamiltonian_gradient(pd, h, x)?;
    let snap = prolong_eval(pd, x)?;
    let w = omega(pd, x, method)?;
    let k = pd.rank();
    let rhs = DVector::from_iterator(k, (0..k).map(|b| calculus::along(snap.rho_r.view(), b, &dh)));
    // Σ_A ξ^A Ω_{AB} = rhs_B  ⇔  Ω^T ξ = rhs
    let mt = DMatrix::from_fn(k, k, |i, j| w[[j, i]]);
    let xi = mt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("symplectic section is singular".into()))?;
    Ok(xi.iter().copied().collect())
}

/// `ρ^l` applied to the right Hamiltonian section obtained by solving against Ω.
pub fn lr_ham_field(pd: &ProlongationData, h: &PhaseFunction, x: &PhasePoint) -> Result<Vec<f64>> {
    let xi = right_ham_section_solve(pd, h, x, OmegaMethod::FrameFormula)?;
    let snap = prolong_eval(pd, x)?;
    let nn = pd.chart_dim();
    Ok((0..nn).map(|i| (0..xi.len()).map(|a| snap.rho_l[[i, a]] * xi[a]).sum()).collect())
}

/// `d^A T^A` with averaged anchors and the skew part of the bracket.
pub fn d_skew(pd: &ProlongationData, t: &FormComponents, x: &PhasePoint) -> Result<Array3<f64>> {
    let snap = prolong_eval(pd, x)?;
    let (tv, tg) = t.jet(&x.flat(), pd.rank())?;
    let rho = calculus::anchor_average(snap.rho_l.view(), snap.rho_r.view());
    let b = calculus::skew_part(snap.bracket.view());
    Ok(calculus::d_skew_two_form(rho.view(), b.view(), tv.view(), tg.view()))
}

/// `d^S T^S` with half-difference anchors and the symmetric part of the bracket.
pub fn d_sym(pd: &ProlongationData, t: &FormComponents, x: &PhasePoint) -> Result<Array3<f64>> {
    let snap = prolong_eval(pd, x)?;
    let (tv, tg) = t.jet(&x.flat(), pd.rank())?;
    let rho = calculus::anchor_half_difference(snap.rho_l.view(), snap.rho_r.view());
    let b = calculus::sym_part(snap.bracket.view());
    Ok(calculus::d_sym_two_form(rho.view(), b.view(), tv.view(), tg.view()))
}

/// `d^{AS} T = d^A T^A + d^S T^S`.
pub fn d_as(pd: &ProlongationData, t: &FormComponents, x: &PhasePoint) -> Result<Array3<f64>> {
    Ok(d_skew(pd, t, x)? + d_sym(pd, t, x)?)
}

/// Max-abs entry of `d^{AS} Ω`.
pub fn closedness_residual(pd: &ProlongationData, x: &PhasePoint) -> Result<f64> {
    let w = FormComponents::Constant(omega_frame(pd.base.m()));
    Ok(calculus::max_abs(d_as(pd, &w, x)?.iter()))
}

fn skew_data(pd: &ProlongationData, y: &[f64]) -> Result<(Array2<f64>, Array3<f64>)> {
    let snap = prolong_eval(pd, &PhasePoint::from_flat(pd.base.n(), y))?;
    Ok((
        calculus::anchor_average(snap.rho_l.view(), snap.rho_r.view()),
        calculus::skew_part(snap.bracket.view()),
    ))
}

/// `d^A f` as frame components at `y`.
fn da_function(pd: &ProlongationData, f: &SmoothField, y: &[f64]) -> Result<Vec<f64>> {
    let (rho, _) = skew_data(pd, y)?;
    Ok(calculus::d_function(rho.view(), &f.gradient(y)?).to_vec())
}

/// Max-abs entry of `(d^A)^2 f` for a function on the chart (arity `n + m`).
pub fn da_squared_function(pd: &ProlongationData, f: &SmoothField, x: &PhasePoint) -> Result<f64> {
    check_len("function arity", pd.chart_dim(), f.arity())?;
    let y = x.flat();
    let theta = da_function(pd, f, &y)?;
    let jac = central_jacobian(|z| da_function(pd, f, z), &y, default_fd_step())?;
    let grad = Array2::from_shape_vec((theta.len(), y.len()), jac.into_iter().flatten().collect()).expect("shape");
    let (rho, b) = skew_data(pd, &y)?;
    Ok(calculus::max_abs(calculus::d_skew_one_form(rho.view(), b.view(), &theta, grad.view()).iter()))
}

/// `d^A θ` at `y` for a one-section given by `[2m]` fields on the chart.
fn da_one_form(pd: &ProlongationData, theta: &TensorField, y: &[f64]) -> Result<Array2<f64>> {
    let (rho, b) = skew_data(pd, y)?;
    let (v, g) = theta.jets(y)?;
    let grad = Array2::from_shape_vec((v.len(), y.len()), g.into_iter().flatten().collect()).expect("shape");
    Ok(calculus::d_skew_one_form(rho.view(), b.view(), &v, grad.view()))
}

/// Max-abs entry of `(d^A)^2 θ` for a one-section. The inner differential uses field
/// gradients, the outer one central differences with `step`.
pub fn da_squared_one_form(pd: &ProlongationData, theta: &TensorField, x: &PhasePoint, step: f64) -> Result<f64> {
    let k = pd.rank();
    if theta.shape() != [k] || theta.arity() != pd.chart_dim() {
        return input(format!("one-section must be [{k}] fields of arity {}", pd.chart_dim()));
    }
    let pd2 = pd.clone();
    let th = theta.clone();
    let form = FormComponents::closure(move |z| da_one_form(&pd2, &th, z), step);
    Ok(calculus::max_abs(d_skew(pd, &form, x)?.iter()))
}

/// `max |ρ^l(B(f_A, f_B)) - [ρ^l f_A, ρ^l f_B]|` over frame pairs, vector-field brackets by
/// central differences of the anchor columns.
pub fn anchor_bracket_residual(pd: &ProlongationData, x: &PhasePoint, step: f64) -> Result<f64> {
    let y = x.flat();
    let snap = prolong_eval(pd, x)?;
    let (nn, k) = (y.len(), pd.rank());
    let n = pd.base.n();
    let jac = central_jacobian(
        |z| Ok(prolong_eval(pd, &PhasePoint::from_flat(n, z))?.rho_l.iter().copied().collect()),
        &y,
        step,
    )?;
    // jac[i * k + A][j] = ∂_j ρ^l[i, A]
    let d = |i: usize, a: usize, j: usize| jac[i * k + a][j];
    let mut worst = 0.0_f64;
    for a in 0..k {
        for b in 0..k {
            for i in 0..nn {
                let lhs: f64 = (0..k).map(|c| snap.bracket[[c, a, b]] * snap.rho_l[[i, c]]).sum();
                let rhs: f64 = (0..nn).map(|j| snap.rho_l[[j, a]] * d(i, b, j) - snap.rho_l[[j, b]] * d(i, a, j)).sum();
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::{epsilon, so3_constants};
    use crate::connections::default_split;
    use crate::hamiltonian::{ham_field, Variant};
    use ndarray::Array4;

    fn so3_default() -> ProlongationData {
        let a = AlgebroidStructure::lie_algebra(&so3_constants()).unwrap();
        let cp = default_split(&a);
        ProlongationData::new(a, cp, CurvatureTensor::zero(0, 3)).unwrap()
    }

    fn euler_h() -> PhaseFunction {
        SmoothField::polynomial(&[(0.5, vec![2, 0, 0]), (0.25, vec![0, 2, 0]), (0.5 / 3.0, vec![0, 0, 2])], 3).unwrap()
    }

    #[test]
    fn canonical_prolongation_is_canonical() {
        let a = AlgebroidStructure::canonical(1);
        let pd = ProlongationData::new(a.clone(), default_split(&a), CurvatureTensor::zero(1, 1)).unwrap();
        let snap = prolong_eval(&pd, &PhasePoint::new(vec![0.2], vec![0.9])).unwrap();
        assert!(snap.bracket.iter().all(|&c| c == 0.0));
        assert_eq!(snap.rho_l, Array2::<f64>::eye(2));
    }

    #[test]
    fn so3_bracket_coefficients() {
        let pd = so3_default();
        let snap = prolong_eval(&pd, &PhasePoint::new(vec![], vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(snap.bracket[[2, 0, 1]], 1.0);
        assert!((3..6).all(|c| snap.bracket[[c, 0, 1]] == 0.0));
        let v: Vec<f64> = (3..6).map(|c| snap.bracket[[c, 3, 1]] + 0.0).collect();
        assert_eq!(v, vec![0.0, 0.0, 1.0]);
        for al in 0..3 {
            assert!((0..3).all(|i| snap.rho_l[[i, 3 + al]] == if i == al { 1.0 } else { 0.0 }));
        }
    }

    #[test]
    fn liouville_components() {
        let pd = so3_default();
        assert_eq!(liouville(&pd, &PhasePoint::new(vec![], vec![1.0, 2.0, 3.0])).unwrap(), vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(liouville(&pd, &PhasePoint::new(vec![], vec![0.0; 3])).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn omega_routes_agree() {
        assert_eq!(
            omega_frame(2),
            ndarray::array![[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0], [-1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0]]
        );
        let pd = so3_default();
        let x = PhasePoint::new(vec![], vec![1.0, 2.0, 3.0]);
        let g = omega(&pd, &x, OmegaMethod::GenericDlr).unwrap();
        assert!(calculus::max_abs((&g - &omega_frame(3)).iter()) <= 1e-15);
    }

    #[test]
    fn euler_right_section_and_field() {
        let pd = so3_default();
        let x = PhasePoint::new(vec![], vec![1.0, 1.0, 1.0]);
        let xi = right_ham_section(&pd, &euler_h(), &x).unwrap();
        assert_eq!(&xi[..3], &[1.0, 0.5, 1.0 / 3.0]);
        let solved = right_ham_section_solve(&pd, &euler_h(), &x, OmegaMethod::FrameFormula).unwrap();
        for k in 0..6 {
            assert!((xi[k] - solved[k]).abs() < 1e-15);
        }
        let lr = lr_ham_field(&pd, &euler_h(), &x).unwrap();
        let want = [-1.0 / 6.0, 2.0 / 3.0, -0.5];
        for k in 0..3 {
            assert!((lr[k] - want[k]).abs() < 1e-15);
        }
        let std = ham_field(pd.base(), &euler_h(), &x, Variant::Standard).unwrap();
        assert!(lr.iter().zip(&std).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn harmonic_right_section() {
        let a = AlgebroidStructure::canonical(1);
        let pd = ProlongationData::new(a.clone(), default_split(&a), CurvatureTensor::zero(1, 1)).unwrap();
        let h = SmoothField::polynomial(&[(0.5, vec![2, 0]), (0.5, vec![0, 2])], 2).unwrap();
        let x = PhasePoint::new(vec![1.0], vec![2.0]);
        assert_eq!(right_ham_section(&pd, &h, &x).unwrap(), vec![2.0, -1.0]);
        assert_eq!(lr_ham_field(&pd, &h, &x).unwrap(), vec![2.0, -1.0]);
    }

    #[test]
    fn bianchi_violating_curvature_breaks_closedness() {
        let pd = so3_default();
        let mut r = Array4::zeros((3, 3, 3, 3));
        r[[0, 0, 1, 2]] = 1.0;
        r[[0, 1, 0, 2]] = -1.0;
        let pd = pd.with_curvature(CurvatureTensor::constant(&r, 0).unwrap()).unwrap();
        let x = PhasePoint::new(vec![], vec![1.0, 0.0, 0.0]);
        let w = FormComponents::Constant(omega_frame(3));
        let d = d_skew(&pd, &w, &x).unwrap();
        assert!((d[[0, 1, 2]] - 1.0).abs() < 1e-15);
        assert!((closedness_residual(&pd, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(closedness_residual(&so3_default(), &x).unwrap() <= 1e-15);
    }

    #[test]
    fn invalid_split_rejected() {
        let a = AlgebroidStructure::lie_algebra(&so3_constants()).unwrap();
        let mut cp = default_split(&a);
        cp.dl.set(&[0, 0, 0], SmoothField::constant(1e-3, 0)).unwrap();
        assert!(matches!(ProlongationData::new(a, cp, CurvatureTensor::zero(0, 3)), Err(Error::InvalidStructure(_))));
    }

    #[test]
    fn epsilon_sanity() {
        assert_eq!(epsilon(0, 1, 2), 1.0);
    }
}
