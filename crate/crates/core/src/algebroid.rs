//! Algebroids given by structure functions in a fixed frame, and their left/right calculus.

use ndarray::{Array1, Array2, Array3, Array4};

use crate::calculus;
use crate::error::{check_len, input, Result};
use crate::fields::{SmoothField, TensorField};

/// Bracket `B^γ_{αβ}(q)` stored as shape `[m, m, m]` in order (γ, α, β), anchors as `[n, m]`.
#[derive(Clone, Debug)]
pub struct AlgebroidStructure {
    n: usize,
    m: usize,
    bracket: TensorField,
    anchor_left: TensorField,
    anchor_right: TensorField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureSnapshot {
    pub b: Array3<f64>,
    pub rho_l: Array2<f64>,
    pub rho_r: Array2<f64>,
    pub q: Vec<f64>,
}

/// Snapshot plus gradients: `b_grad[[γ, α, β, i]]`, `rho_*_grad[[j, α, i]]`.
#[derive(Clone, Debug)]
pub struct StructureJet {
    pub snapshot: StructureSnapshot,
    pub b_grad: Array4<f64>,
    pub rho_l_grad: Array3<f64>,
    pub rho_r_grad: Array3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymSkewParts {
    pub b_a: Array3<f64>,
    pub rho_a: Array2<f64>,
    pub b_s: Array3<f64>,
    pub rho_s: Array2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureReport {
    pub skew_defect: f64,
    pub anchor_lr_defect: f64,
    pub jacobiator_norm: f64,
    pub anchor_morphism_defect: f64,
}

impl StructureReport {
    pub fn max(&self) -> f64 {
        self.skew_defect
            .max(self.anchor_lr_defect)
            .max(self.jacobiator_norm)
            .max(self.anchor_morphism_defect)
    }
}

impl AlgebroidStructure {
    pub fn new(
        n: usize,
        m: usize,
        bracket: TensorField,
        anchor_left: TensorField,
        anchor_right: TensorField,
    ) -> Result<Self> {
        if m == 0 {
            return input("algebroid rank m must be at least 1");
        }
        for (name, t, shape) in [
            ("bracket", &bracket, vec![m, m, m]),
            ("anchor_left", &anchor_left, vec![n, m]),
            ("anchor_right", &anchor_right, vec![n, m]),
        ] {
            if t.shape() != shape.as_slice() {
                return input(format!("{name}: expected shape {shape:?}, got {:?}", t.shape()));
            }
            if t.arity() != n {
                return input(format!("{name}: component arity {} differs from n = {n}", t.arity()));
            }
        }
        Ok(Self { n, m, bracket, anchor_left, anchor_right })
    }

    /// Tangent bundle of R^n in the coordinate frame.
    pub fn canonical(n: usize) -> Self {
        let id = identity_anchor(n, 1.0);
        Self::new(n, n, TensorField::zeros(&[n, n, n], n), id.clone(), id).expect("shapes fixed")
    }

    /// A Lie algebra as an algebroid over a point; `c[[γ, α, β]]` are the structure constants.
    pub fn lie_algebra(c: &Array3<f64>) -> Result<Self> {
        let m = c.shape()[0];
        if c.shape() != [m, m, m] {
            return input(format!("structure constants must be cubic, got {:?}", c.shape()));
        }
        let values: Vec<f64> = c.iter().copied().collect();
        let b = TensorField::constants(&[m, m, m], 0, &values)?;
        Self::new(0, m, b, TensorField::zeros(&[0, m], 0), TensorField::zeros(&[0, m], 0))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn bracket(&self) -> &TensorField {
        &self.bracket
    }

    pub fn anchor_left(&self) -> &TensorField {
        &self.anchor_left
    }

    pub fn anchor_right(&self) -> &TensorField {
        &self.anchor_right
    }

    pub fn is_polynomial(&self) -> bool {
        self.bracket.is_polynomial() && self.anchor_left.is_polynomial() && self.anchor_right.is_polynomial()
    }

    pub fn uses_finite_differences(&self) -> bool {
        self.bracket.uses_finite_differences()
            || self.anchor_left.uses_finite_differences()
            || self.anchor_right.uses_finite_differences()
    }

    pub fn structure_eval(&self, q: &[f64]) -> Result<StructureSnapshot> {
        check_len("base point", self.n, q.len())?;
        Ok(StructureSnapshot {
            b: self.bracket.eval3(q)?,
            rho_l: self.anchor_left.eval2(q)?,
            rho_r: self.anchor_right.eval2(q)?,
            q: q.to_vec(),
        })
    }

    pub fn structure_jet(&self, q: &[f64]) -> Result<StructureJet> {
        let (n, m) = (self.n, self.m);
        let snapshot = self.structure_eval(q)?;
        let (_, bg) = self.bracket.jets(q)?;
        let (_, lg) = self.anchor_left.jets(q)?;
        let (_, rg) = self.anchor_right.jets(q)?;
        let flat = |g: Vec<Vec<f64>>| g.into_iter().flatten().collect::<Vec<_>>();
        Ok(StructureJet {
            snapshot,
            b_grad: Array4::from_shape_vec((m, m, m, n), flat(bg)).expect("shape"),
            rho_l_grad: Array3::from_shape_vec((n, m, n), flat(lg)).expect("shape"),
            rho_r_grad: Array3::from_shape_vec((n, m, n), flat(rg)).expect("shape"),
        })
    }

    pub fn decompose_sym_skew(&self, q: &[f64]) -> Result<SymSkewParts> {
        let s = self.structure_eval(q)?;
        Ok(SymSkewParts {
            b_a: calculus::skew_part(s.b.view()),
            rho_a: calculus::anchor_average(s.rho_l.view(), s.rho_r.view()),
            b_s: calculus::sym_part(s.b.view()),
            rho_s: calculus::anchor_half_difference(s.rho_l.view(), s.rho_r.view()),
        })
    }

    /// `(d^l F, d^r F)` as frame components.
    pub fn left_right_diff(&self, f: &SmoothField, q: &[f64]) -> Result<(Array1<f64>, Array1<f64>)> {
        check_len("function arity", self.n, f.arity())?;
        let s = self.structure_eval(q)?;
        let g = f.gradient(q)?;
        Ok(calculus::lr_function(s.rho_l.view(), s.rho_r.view(), &g))
    }

    /// `d^{lr} κ` as the `[m, m]` array of its values on frame pairs.
    pub fn diff_lr_section(&self, kappa: &TensorField, q: &[f64]) -> Result<Array2<f64>> {
        if kappa.shape() != [self.m] || kappa.arity() != self.n {
            return input(format!(
                "section must have shape [{}] over arity {}, got {:?} over arity {}",
                self.m,
                self.n,
                kappa.shape(),
                kappa.arity()
            ));
        }
        let s = self.structure_eval(q)?;
        let (vals, grads) = kappa.jets(q)?;
        let g = Array2::from_shape_vec((self.m, self.n), grads.into_iter().flatten().collect()).expect("shape");
        Ok(calculus::lr_differential(s.rho_l.view(), s.rho_r.view(), s.b.view(), &vals, g.view()))
    }

    /// Skewness, anchor agreement, Jacobiator and anchor-morphism diagnostics.
    ///
    /// The Jacobiator of frame sections expands `B(σ_α, B(σ_β, σ_γ))` with the left Leibniz rule
    /// and sums cyclically; the morphism defect compares `ρ^l(B(σ_α, σ_β))` with the vector-field
    /// bracket of the left anchor images.
    pub fn structure_checks(&self, q: &[f64]) -> Result<StructureReport> {
        let (n, m) = (self.n, self.m);
        let jet = self.structure_jet(q)?;
        let s = &jet.snapshot;
        let (b, rl) = (&s.b, &s.rho_l);

        let mut skew_defect = 0.0_f64;
        for g in 0..m {
            for a in 0..m {
                for c in 0..m {
                    skew_defect = skew_defect.max((b[[g, a, c]] + b[[g, c, a]]).abs());
                }
            }
        }
        let anchor_lr_defect = calculus::max_abs((&s.rho_l - &s.rho_r).iter());

        // term(α, β, γ, ν) = ρ^l_α(B^ν_{βγ}) + Σ_μ B^μ_{βγ} B^ν_{αμ}
        let term = |a: usize, bb: usize, c: usize, nu: usize| {
            let mut v: f64 = (0..n).map(|i| rl[[i, a]] * jet.b_grad[[nu, bb, c, i]]).sum();
            for mu in 0..m {
                v += b[[mu, bb, c]] * b[[nu, a, mu]];
            }
            v
        };
        let mut jacobiator_norm = 0.0_f64;
        for a in 0..m {
            for bb in 0..m {
                for c in 0..m {
                    for nu in 0..m {
                        let j = term(a, bb, c, nu) + term(bb, c, a, nu) + term(c, a, bb, nu);
                        jacobiator_norm = jacobiator_norm.max(j.abs());
                    }
                }
            }
        }

        let mut anchor_morphism_defect = 0.0_f64;
        for a in 0..m {
            for bb in 0..m {
                for i in 0..n {
                    let mut lhs = 0.0;
                    for mu in 0..m {
                        lhs += b[[mu, a, bb]] * rl[[i, mu]];
                    }
                    let mut rhs = 0.0;
                    for j in 0..n {
                        rhs += rl[[j, a]] * jet.rho_l_grad[[i, bb, j]] - rl[[j, bb]] * jet.rho_l_grad[[i, a, j]];
                    }
                    anchor_morphism_defect = anchor_morphism_defect.max((lhs - rhs).abs());
                }
            }
        }

        Ok(StructureReport { skew_defect, anchor_lr_defect, jacobiator_norm, anchor_morphism_defect })
    }
}

pub(crate) fn identity_anchor(n: usize, sign: f64) -> TensorField {
    TensorField::from_fn(&[n, n], n, |idx| {
        if idx[0] == idx[1] {
            SmoothField::constant(sign, n)
        } else {
            SmoothField::zero(n)
        }
    })
}

/// Levi-Civita symbol on three indices.
pub fn epsilon(a: usize, b: usize, c: usize) -> f64 {
    match (a, b, c) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Structure constants of so(3): `[e_a, e_b] = ε_{abc} e_c`.
pub fn so3_constants() -> Array3<f64> {
    Array3::from_shape_fn((3, 3, 3), |(c, a, b)| epsilon(a, b, c))
}

/// se(2) x R with basis (rotation, two translations, central): `[e1,e2]=e3`, `[e1,e3]=-e2`.
pub fn se2xr_constants() -> Array3<f64> {
    let mut c = Array3::zeros((4, 4, 4));
    c[[2, 0, 1]] = 1.0;
    c[[2, 1, 0]] = -1.0;
    c[[1, 0, 2]] = -1.0;
    c[[1, 2, 0]] = 1.0;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(terms: &[(f64, Vec<i64>)], n: usize) -> SmoothField {
        SmoothField::polynomial(terms, n).unwrap()
    }

    /// TR^1 with B^1_{11} = 0, ρ^l = 1, ρ^r = -1.
    fn symmetric_product_line() -> AlgebroidStructure {
        AlgebroidStructure::new(1, 1, TensorField::zeros(&[1, 1, 1], 1), identity_anchor(1, 1.0), identity_anchor(1, -1.0))
            .unwrap()
    }

    #[test]
    fn canonical_snapshot() {
        let s = AlgebroidStructure::canonical(2).structure_eval(&[0.3, -1.0]).unwrap();
        assert!(s.b.iter().all(|&x| x == 0.0));
        assert_eq!(s.rho_l, Array2::<f64>::eye(2));
        assert_eq!(s.rho_r, Array2::<f64>::eye(2));
    }

    #[test]
    fn so3_snapshot_has_epsilon_entries() {
        let a = AlgebroidStructure::lie_algebra(&so3_constants()).unwrap();
        let s = a.structure_eval(&[]).unwrap();
        assert_eq!(s.b[[2, 0, 1]], 1.0);
        assert_eq!(s.b[[2, 1, 0]], -1.0);
        assert_eq!(s.rho_l.shape(), &[0, 3]);
    }

    #[test]
    fn symmetric_product_parts() {
        let a = symmetric_product_line();
        let s = a.structure_eval(&[0.7]).unwrap();
        assert_eq!((s.rho_l[[0, 0]], s.rho_r[[0, 0]]), (1.0, -1.0));
        let p = a.decompose_sym_skew(&[0.7]).unwrap();
        assert_eq!(p.rho_a[[0, 0]], 0.0);
        assert_eq!(p.rho_s[[0, 0]], 1.0);
        assert!(p.b_a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn so3_is_its_own_skew_part() {
        let a = AlgebroidStructure::lie_algebra(&so3_constants()).unwrap();
        let p = a.decompose_sym_skew(&[]).unwrap();
        assert_eq!(p.b_a, so3_constants());
        assert!(p.b_s.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn left_right_differentials() {
        let can = AlgebroidStructure::canonical(1);
        let f = poly(&[(1.0, vec![2])], 1);
        let (dl, dr) = can.left_right_diff(&f, &[1.5]).unwrap();
        assert_eq!((dl[0], dr[0]), (3.0, 3.0));

        let sp = symmetric_product_line();
        let (dl, dr) = sp.left_right_diff(&SmoothField::coordinate(0, 1), &[4.0]).unwrap();
        assert_eq!((dl[0], dr[0]), (1.0, -1.0));

        let so3 = AlgebroidStructure::lie_algebra(&so3_constants()).unwrap();
        let (dl, dr) = so3.left_right_diff(&SmoothField::constant(2.0, 0), &[]).unwrap();
        assert_eq!(dl, Array1::<f64>::zeros(3));
        assert_eq!(dr, Array1::<f64>::zeros(3));
    }

    #[test]
    fn lr_section_cancels_on_canonical_line() {
        let a = AlgebroidStructure::canonical(1);
        let kappa = TensorField::new(vec![1], 1, vec![SmoothField::coordinate(0, 1)]).unwrap();
        assert_eq!(a.diff_lr_section(&kappa, &[0.4]).unwrap()[[0, 0]], 0.0);
    }

    #[test]
    fn lr_section_bracket_term_uses_defining_sign() {
        let mut b = TensorField::zeros(&[2, 2, 2], 1);
        b.set(&[0, 0, 1], SmoothField::constant(1.0, 1)).unwrap();
        let a = AlgebroidStructure::new(1, 2, b, TensorField::zeros(&[1, 2], 1), TensorField::zeros(&[1, 2], 1)).unwrap();
        let kappa = TensorField::constants(&[2], 1, &[1.0, 0.0]).unwrap();
        let d = a.diff_lr_section(&kappa, &[0.0]).unwrap();
        assert_eq!(d[[0, 1]], -1.0);
        assert_eq!(d.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn structure_checks_on_lie_examples() {
        let r = AlgebroidStructure::canonical(3).structure_checks(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(r.max(), 0.0);
        let r = AlgebroidStructure::lie_algebra(&so3_constants()).unwrap().structure_checks(&[]).unwrap();
        assert_eq!(r.max(), 0.0);
        let r = AlgebroidStructure::lie_algebra(&se2xr_constants()).unwrap().structure_checks(&[]).unwrap();
        assert_eq!(r.max(), 0.0);
    }

    #[test]
    fn morphism_defect_sees_a_bad_bracket() {
        // ρ = (1, q) on m=2, n=1 with zero bracket: [∂, q∂] = ∂ ≠ ρ(0).
        let n = 1;
        let rho = TensorField::new(vec![1, 2], n, vec![SmoothField::constant(1.0, n), SmoothField::coordinate(0, n)]).unwrap();
        let a = AlgebroidStructure::new(n, 2, TensorField::zeros(&[2, 2, 2], n), rho.clone(), rho).unwrap();
        assert_eq!(a.structure_checks(&[0.5]).unwrap().anchor_morphism_defect, 1.0);
    }
}
