//! Pointwise frame calculus shared by base algebroids and the prolongation.
//!
//! Every routine takes the anchors as `[N, K]` arrays (chart dimension N, frame size K),
//! brackets as `[K, K, K]` arrays indexed (value, first, second), and derivatives of
//! section components as `[.., N]` gradient arrays over the chart.

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};

/// Directional derivative of a function along the anchor image of frame element `a`.
pub fn along(rho: ArrayView2<f64>, a: usize, grad: &[f64]) -> f64 {
    rho.column(a).iter().zip(grad).map(|(r, g)| r * g).sum()
}

/// `(B - B^T) / 2` in the two argument slots.
pub fn skew_part(b: ArrayView3<f64>) -> Array3<f64> {
    let bt = b.permuted_axes([0, 2, 1]);
    (&b - &bt) * 0.5
}

/// `(B + B^T) / 2` in the two argument slots.
pub fn sym_part(b: ArrayView3<f64>) -> Array3<f64> {
    let bt = b.permuted_axes([0, 2, 1]);
    (&b + &bt) * 0.5
}

pub fn anchor_average(rho_l: ArrayView2<f64>, rho_r: ArrayView2<f64>) -> Array2<f64> {
    (&rho_l + &rho_r) * 0.5
}

pub fn anchor_half_difference(rho_l: ArrayView2<f64>, rho_r: ArrayView2<f64>) -> Array2<f64> {
    (&rho_l - &rho_r) * 0.5
}

/// Left, right differentials of a function with chart gradient `grad`.
pub fn lr_function(rho_l: ArrayView2<f64>, rho_r: ArrayView2<f64>, grad: &[f64]) -> (Array1<f64>, Array1<f64>) {
    let k = rho_l.ncols();
    let dl = (0..k).map(|a| along(rho_l, a, grad)).collect();
    let dr = (0..k).map(|a| along(rho_r, a, grad)).collect();
    (dl, dr)
}

/// `d^{lr} kappa (A, B) = rho^l(A) kappa_B - rho^r(B) kappa_A - kappa(B(A, B))`.
///
/// `kappa_grad[[c, i]]` is the derivative of component `c` along chart coordinate `i`.
pub fn lr_differential(
    rho_l: ArrayView2<f64>,
    rho_r: ArrayView2<f64>,
    bracket: ArrayView3<f64>,
    kappa: &[f64],
    kappa_grad: ArrayView2<f64>,
) -> Array2<f64> {
    let k = kappa.len();
    let mut out = Array2::zeros((k, k));
    for a in 0..k {
        for b in 0..k {
            let mut v = along(rho_l, a, &row(kappa_grad, b)) - along(rho_r, b, &row(kappa_grad, a));
            for c in 0..k {
                v -= bracket[[c, a, b]] * kappa[c];
            }
            out[[a, b]] = v;
        }
    }
    out
}

fn row(g: ArrayView2<f64>, r: usize) -> Vec<f64> {
    g.row(r).to_vec()
}

/// Skew differential of a function: `(d f)(A) = rho(A) f`.
pub fn d_function(rho: ArrayView2<f64>, grad: &[f64]) -> Array1<f64> {
    (0..rho.ncols()).map(|a| along(rho, a, grad)).collect()
}

/// Skew differential of a one-form with the six-term pattern truncated to degree one:
/// `(d theta)(A, B) = rho(A) theta_B - rho(B) theta_A - theta(B(A, B))`.
pub fn d_skew_one_form(
    rho: ArrayView2<f64>,
    bracket: ArrayView3<f64>,
    theta: &[f64],
    theta_grad: ArrayView2<f64>,
) -> Array2<f64> {
    let k = theta.len();
    let mut out = Array2::zeros((k, k));
    for a in 0..k {
        for b in 0..k {
            let mut v = along(rho, a, &row(theta_grad, b)) - along(rho, b, &row(theta_grad, a));
            for c in 0..k {
                v -= bracket[[c, a, b]] * theta[c];
            }
            out[[a, b]] = v;
        }
    }
    out
}

/// Contraction `T(B(A, B), C) = sum_M B^M_{AB} T_{MC}`.
fn t_of_bracket(bracket: ArrayView3<f64>, t: ArrayView2<f64>, a: usize, b: usize, c: usize) -> f64 {
    bracket.index_axis(Axis(2), b).column(a).iter().zip(t.column(c)).map(|(x, y)| x * y).sum()
}

/// Skew differential of a (0,2) tensor, applied to its skew part:
///
/// `dT(A,B,C) = rho(A)T(B,C) - rho(B)T(A,C) + rho(C)T(A,B)
///             - T(B(A,B),C) + T(B(A,C),B) - T(B(B,C),A)`.
///
/// `t_grad[[A, B, i]]` is the chart derivative of `T_{AB}`.
pub fn d_skew_two_form(
    rho: ArrayView2<f64>,
    bracket: ArrayView3<f64>,
    t: ArrayView2<f64>,
    t_grad: ArrayView3<f64>,
) -> Array3<f64> {
    let ta = skew_two(t);
    let ga = skew_grad(t_grad);
    let k = t.nrows();
    let d = |a: usize, x: usize, y: usize| along(rho, a, &ga.slice(ndarray::s![x, y, ..]).to_vec());
    let mut out = Array3::zeros((k, k, k));
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                out[[a, b, c]] = d(a, b, c) - d(b, a, c) + d(c, a, b)
                    - t_of_bracket(bracket, ta.view(), a, b, c)
                    + t_of_bracket(bracket, ta.view(), a, c, b)
                    - t_of_bracket(bracket, ta.view(), b, c, a);
            }
        }
    }
    out
}

/// Symmetric differential of a (0,2) tensor, applied to its symmetric part:
///
/// `dT(A,B,C) = rho(A)T(B,C) + rho(B)T(A,C) + rho(C)T(A,B)
///             - T(B(A,B),C) - T(B(A,C),B) - T(B(B,C),A)`.
pub fn d_sym_two_form(
    rho: ArrayView2<f64>,
    bracket: ArrayView3<f64>,
    t: ArrayView2<f64>,
    t_grad: ArrayView3<f64>,
) -> Array3<f64> {
    let ts = sym_two(t);
    let gs = sym_grad(t_grad);
    let k = t.nrows();
    let d = |a: usize, x: usize, y: usize| along(rho, a, &gs.slice(ndarray::s![x, y, ..]).to_vec());
    let mut out = Array3::zeros((k, k, k));
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                out[[a, b, c]] = d(a, b, c) + d(b, a, c) + d(c, a, b)
                    - t_of_bracket(bracket, ts.view(), a, b, c)
                    - t_of_bracket(bracket, ts.view(), a, c, b)
                    - t_of_bracket(bracket, ts.view(), b, c, a);
            }
        }
    }
    out
}

pub fn skew_two(t: ArrayView2<f64>) -> Array2<f64> {
    (&t - &t.t()) * 0.5
}

pub fn sym_two(t: ArrayView2<f64>) -> Array2<f64> {
    (&t + &t.t()) * 0.5
}

fn skew_grad(g: ArrayView3<f64>) -> Array3<f64> {
    let gt = g.permuted_axes([1, 0, 2]);
    (&g - &gt) * 0.5
}

fn sym_grad(g: ArrayView3<f64>) -> Array3<f64> {
    let gt = g.permuted_axes([1, 0, 2]);
    (&g + &gt) * 0.5
}

pub fn max_abs<'a>(it: impl IntoIterator<Item = &'a f64>) -> f64 {
    it.into_iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
