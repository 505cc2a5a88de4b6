//! Seeded random polynomial algebroids, splits, curvatures and Hamiltonians.

use rand::Rng;

use super::{CurvatureChoice, ScenarioBundle, SplitChoice};
use crate::algebroid::AlgebroidStructure;
use crate::connections::{ConnectionPair, CurvatureTensor};
use crate::error::{input, Result};
use crate::fields::{poly, SmoothField, TensorField};
use crate::hamiltonian::PhaseFunction;

/// All exponent vectors in `arity` variables with total degree `<= degree`.
fn monomials(arity: usize, degree: u32) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..arity {
        out = out
            .into_iter()
            .flat_map(|e: Vec<i64>| {
                let used: i64 = e.iter().sum();
                (0..=(degree as i64 - used)).map(move |k| {
                    let mut e2 = e.clone();
                    e2.push(k);
                    e2
                })
            })
            .collect();
    }
    out
}

/// Dense polynomial with coefficients uniform in `[-1, 1]`.
pub fn random_polynomial<R: Rng>(rng: &mut R, arity: usize, degree: u32) -> SmoothField {
    let terms: Vec<(f64, Vec<i64>)> = monomials(arity, degree)
        .into_iter()
        .map(|e| (rng.gen_range(-1.0..=1.0), e))
        .collect();
    SmoothField::polynomial(&terms, arity).expect("nonnegative exponents")
}

fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], arity: usize, degree: u32) -> TensorField {
    TensorField::from_fn(shape, arity, |_| random_polynomial(rng, arity, degree))
}

/// Bracket and both anchors with independent random polynomial components.
pub fn random_polynomial_algebroid<R: Rng>(rng: &mut R, n: usize, m: usize, degree: u32) -> Result<AlgebroidStructure> {
    let b = random_tensor(rng, &[m, m, m], n, degree);
    let rl = random_tensor(rng, &[n, m], n, degree);
    let rr = random_tensor(rng, &[n, m], n, degree);
    AlgebroidStructure::new(n, m, b, rl, rr)
}

/// A random valid split: random `D^l`, then `(D^r)^γ_{αβ} = (D^l)^γ_{βα} - B^γ_{βα}`.
pub fn random_split<R: Rng>(rng: &mut R, a: &AlgebroidStructure, degree: u32) -> Result<ConnectionPair> {
    if !a.bracket().is_polynomial() {
        return input("random_split needs a polynomial bracket");
    }
    let (n, m) = (a.n(), a.m());
    let dl = random_tensor(rng, &[m, m, m], n, degree);
    let dr = TensorField::from_fn(&[m, m, m], n, |i| {
        let (g, al, be) = (i[0], i[1], i[2]);
        let minus_b = poly::scale(a.bracket().get(&[g, be, al]), -1.0).expect("polynomial");
        poly::add(dl.get(&[g, be, al]), &minus_b).expect("polynomial")
    });
    ConnectionPair::new(dl, dr)
}

pub fn random_curvature<R: Rng>(rng: &mut R, n: usize, m: usize, degree: u32) -> Result<CurvatureTensor> {
    CurvatureTensor::from_fields(random_tensor(rng, &[m, m, m, m], n, degree))
}

/// Random polynomial on the chart `(q, p)` of dimension `n + m`.
pub fn random_hamiltonian<R: Rng>(rng: &mut R, n: usize, m: usize, degree: u32) -> PhaseFunction {
    random_polynomial(rng, n + m, degree)
}

/// Random algebroid with a random Hamiltonian of degree 3, default split and zero curvature.
pub fn random_bundle<R: Rng>(rng: &mut R, n: usize, m: usize, degree: u32) -> Result<ScenarioBundle> {
    let a = random_polynomial_algebroid(rng, n, m, degree)?;
    let hamiltonian = random_hamiltonian(rng, n, m, 3);
    let split = super::resolve_split(&a, &SplitChoice::Default)?;
    let curvature = super::resolve_curvature(&a, &CurvatureChoice::Zero)?;
    ScenarioBundle {
        name: "random_polynomial".into(),
        parameters: serde_json::json!({ "n": n, "m": m, "degree": degree }),
        algebroid: a,
        hamiltonian,
        split,
        curvature,
        monitors: vec![],
        constraint: None,
    }
    .validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_count() {
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(0, 2), vec![Vec::<i64>::new()]);
        assert_eq!(monomials(3, 3).len(), 20);
    }
}
