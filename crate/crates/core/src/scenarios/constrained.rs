//! Mechanical systems on a subbundle `D` of a Lie algebroid `E`, with variational subbundle `D̃`.
//!
//! Frames are built pointwise: metric Gram–Schmidt of the kinematic basis gives `{σ_a}`,
//! completed by an orthonormal basis `{σ_A}` of `D̃^⊥`. Ambient vectors are columns in the
//! algebroid's own frame `{e_α}`; derivatives of frame fields use central differences.

use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3, Array4};

use super::{christoffel_field, kinetic_plus_potential, ScenarioBundle};
use crate::algebroid::AlgebroidStructure;
use crate::connections::{check_metric, christoffels_at, curvature, ConnectionPair, CurvatureTensor};
use crate::error::{input, Error, Result};
use crate::fields::{central_jacobian, default_fd_step, SmoothField, TensorField};
use crate::prolongation::probe_points;

/// Pivot tolerance of the metric Gram–Schmidt.
pub const PIVOT_TOLERANCE: f64 = 1e-12;
/// Smallest accepted singular value of the adapted frame.
const COMPATIBILITY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct ConstraintSpec {
    /// Lie algebroid `E` of rank `M` over a base of dimension `n`.
    pub ambient: AlgebroidStructure,
    /// Bundle metric `[M, M]`.
    pub metric: TensorField,
    /// Rows span `D`: shape `[r, M]`.
    pub kinematic: TensorField,
    /// Rows span `D̃`; `None` means `D̃ = D`.
    pub variational: Option<TensorField>,
    pub potential: SmoothField,
}

impl ConstraintSpec {
    pub fn rank(&self) -> usize {
        self.kinematic.shape()[0]
    }

    pub fn is_classical(&self) -> bool {
        self.variational.is_none()
    }

    fn validate(&self) -> Result<()> {
        let (n, big_m) = (self.ambient.n(), self.ambient.m());
        if self.metric.shape() != [big_m, big_m] || self.metric.arity() != n {
            return input(format!("metric must have shape [{big_m},{big_m}] over arity {n}"));
        }
        let ks = self.kinematic.shape();
        if ks.len() != 2 || ks[1] != big_m || ks[0] == 0 || ks[0] > big_m || self.kinematic.arity() != n {
            return input(format!("kinematic basis must have shape [r,{big_m}] with 1 <= r <= {big_m} over arity {n}"));
        }
        if let Some(v) = &self.variational {
            if v.shape() != ks || v.arity() != n {
                return input(format!(
                    "rank mismatch: variational basis has shape {:?}, kinematic basis {:?}",
                    v.shape(),
                    ks
                ));
            }
        }
        if self.potential.arity() != n {
            return input(format!("potential arity {} differs from n = {n}", self.potential.arity()));
        }
        check_metric(&self.metric, big_m, &probe_points(n))
    }
}

/// Pointwise adapted frame and projectors.
#[derive(Clone, Debug)]
pub struct AdaptedFrame {
    pub g: DMatrix<f64>,
    /// `M x r`, columns `σ_a`.
    pub f_d: DMatrix<f64>,
    /// `M x (M - r)`, columns `σ_A`.
    pub f_perp: DMatrix<f64>,
    /// Raw `D̃` basis as columns.
    pub w_var: DMatrix<f64>,
    /// Orthogonal projector onto `D`.
    pub p: DMatrix<f64>,
    /// Projector onto `D̃` along `D^⊥`.
    pub pi: DMatrix<f64>,
    /// `𝓖_{aA}`.
    pub k: DMatrix<f64>,
    /// Top-left block `𝓖^{cd}` of the inverse adapted metric.
    pub g_inv_top: DMatrix<f64>,
    /// Which unit vectors completed the frame.
    pub selection: Vec<usize>,
}

impl AdaptedFrame {
    /// `[F_D | F_perp]`.
    pub fn full(&self) -> DMatrix<f64> {
        let (big_m, r) = self.f_d.shape();
        let mut s = DMatrix::zeros(big_m, big_m);
        s.columns_mut(0, r).copy_from(&self.f_d);
        s.columns_mut(r, big_m - r).copy_from(&self.f_perp);
        s
    }
}

fn rows_as_columns(t: &TensorField, q: &[f64]) -> Result<DMatrix<f64>> {
    let (r, big_m) = (t.shape()[0], t.shape()[1]);
    let v = t.values(q)?;
    Ok(DMatrix::from_fn(big_m, r, |i, a| v[a * big_m + i]))
}

fn gram_schmidt(g: &DMatrix<f64>, raw: &DMatrix<f64>, q: &[f64]) -> Result<DMatrix<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(raw.ncols());
    for col in raw.column_iter() {
        let mut v = col.into_owned();
        for u in &out {
            let c = u.dot(&(g * &v));
            v -= u * c;
        }
        let norm = v.dot(&(g * &v)).max(0.0).sqrt();
        if norm < PIVOT_TOLERANCE {
            return input(format!("kinematic basis is rank deficient at q = {q:?}"));
        }
        out.push(v / norm);
    }
    Ok(DMatrix::from_columns(&out))
}

/// Orthonormal completion of `basis` by unit vectors, greedily unless `selection` is given.
fn complement(g: &DMatrix<f64>, basis: &DMatrix<f64>, selection: Option<&[usize]>) -> (DMatrix<f64>, Vec<usize>) {
    let big_m = g.nrows();
    let want = big_m - basis.ncols();
    let mut acc: Vec<DVector<f64>> = basis.column_iter().map(|c| c.into_owned()).collect();
    let mut chosen = Vec::with_capacity(want);
    let mut out = Vec::with_capacity(want);
    let residual = |acc: &[DVector<f64>], k: usize| {
        let mut v = DVector::zeros(big_m);
        v[k] = 1.0;
        for u in acc {
            let c = u.dot(&(g * &v));
            v -= u * c;
        }
        let norm = v.dot(&(g * &v)).max(0.0).sqrt();
        (v, norm)
    };
    for step in 0..want {
        let k = match selection {
            Some(sel) => sel[step],
            None => (0..big_m)
                .filter(|k| !chosen.contains(k))
                .map(|k| (k, residual(&acc, k).1))
                .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0,
        };
        let (v, norm) = residual(&acc, k);
        let u = v / norm;
        acc.push(u.clone());
        out.push(u);
        chosen.push(k);
    }
    let m = if out.is_empty() { DMatrix::zeros(big_m, 0) } else { DMatrix::from_columns(&out) };
    (m, chosen)
}

fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    m.clone().singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Adapted frame at `q`; `selection` pins the completion so nearby frames vary smoothly.
pub(crate) fn frame_at(spec: &ConstraintSpec, q: &[f64], selection: Option<&[usize]>) -> Result<AdaptedFrame> {
    let big_m = spec.ambient.m();
    let g = DMatrix::from_row_slice(big_m, big_m, &spec.metric.values(q)?);
    let raw_d = rows_as_columns(&spec.kinematic, q)?;
    let f_d = gram_schmidt(&g, &raw_d, q)?;
    let w_var = match &spec.variational {
        Some(v) => rows_as_columns(v, q)?,
        None => f_d.clone(),
    };
    let var_on = match &spec.variational {
        Some(_) => gram_schmidt(&g, &w_var, q)
            .map_err(|_| Error::Input(format!("variational basis is rank deficient at q = {q:?}")))?,
        None => f_d.clone(),
    };
    let (f_perp, selection) = complement(&g, &var_on, selection);
    let r = f_d.ncols();
    let mut s = DMatrix::zeros(big_m, big_m);
    s.columns_mut(0, r).copy_from(&f_d);
    s.columns_mut(r, big_m - r).copy_from(&f_perp);
    let cross = f_d.transpose() * &g * &w_var;
    if smallest_singular_value(&s) < COMPATIBILITY_TOLERANCE || smallest_singular_value(&cross) < COMPATIBILITY_TOLERANCE {
        return input(format!("compatibility condition E = D + D̃^⊥ (direct) fails at q = {q:?}"));
    }
    let p = &f_d * f_d.transpose() * &g;
    let cross_inv = cross.try_inverse().ok_or_else(|| Error::Numeric("projector is singular".into()))?;
    let pi = &w_var * cross_inv * f_d.transpose() * &g;
    let k = f_d.transpose() * &g * &f_perp;
    let adapted = s.transpose() * &g * &s;
    let inv = adapted
        .try_inverse()
        .ok_or_else(|| Error::Numeric(format!("adapted metric is singular at q = {q:?}")))?;
    let g_inv_top = inv.view((0, 0), (r, r)).into_owned();
    Ok(AdaptedFrame { g, f_d, f_perp, w_var, p, pi, k, g_inv_top, selection })
}

/// A vector field's value and its partial derivatives `∂_i`.
#[derive(Clone, Debug)]
struct Jet {
    v: DVector<f64>,
    d: Vec<DVector<f64>>,
}

impl Jet {
    /// Derivative along the base vector `w`.
    fn along(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.v.len());
        for (i, di) in self.d.iter().enumerate() {
            out += di * w[i];
        }
        out
    }
}

/// Frame, frame derivatives and ambient structure at one point.
struct FrameJet {
    frame: AdaptedFrame,
    /// `∂_i F_D`, `∂_i (Π F_D)`, `∂_i F_perp`, `∂_i K`.
    d_fd: Vec<DMatrix<f64>>,
    d_pifd: Vec<DMatrix<f64>>,
    d_fperp: Vec<DMatrix<f64>>,
    d_k: Vec<DMatrix<f64>>,
    /// Ambient anchor `[n, M]`, bracket `c^γ_{αβ}`, Levi-Civita `Γ^γ_{αβ}`.
    rho: DMatrix<f64>,
    c: Array3<f64>,
    gamma: Array3<f64>,
}

fn flatten(ms: &[&DMatrix<f64>]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.iter().copied()).collect()
}

fn unflatten(jac: &[Vec<f64>], offset: usize, shape: (usize, usize), n: usize) -> Vec<DMatrix<f64>> {
    (0..n)
        .map(|i| DMatrix::from_iterator(shape.0, shape.1, (0..shape.0 * shape.1).map(|k| jac[offset + k][i])))
        .collect()
}

impl FrameJet {
    fn new(spec: &ConstraintSpec, q: &[f64]) -> Result<Self> {
        let frame = frame_at(spec, q, None)?;
        let n = q.len();
        let sel = frame.selection.clone();
        let pifd_of = |f: &AdaptedFrame| &f.pi * &f.f_d;
        let jac = central_jacobian(
            |y| {
                let f = frame_at(spec, y, Some(&sel))?;
                Ok(flatten(&[&f.f_d, &pifd_of(&f), &f.f_perp, &f.k]))
            },
            q,
            default_fd_step(),
        )?;
        let (big_m, r) = frame.f_d.shape();
        let sizes = [(big_m, r), (big_m, r), (big_m, big_m - r), (r, big_m - r)];
        let mut off = 0;
        let mut parts = Vec::with_capacity(4);
        for s in sizes {
            parts.push(if n == 0 { Vec::new() } else { unflatten(&jac, off, s, n) });
            off += s.0 * s.1;
        }
        let d_k = parts.pop().expect("four parts");
        let d_fperp = parts.pop().expect("four parts");
        let d_pifd = parts.pop().expect("four parts");
        let d_fd = parts.pop().expect("four parts");
        let snap = spec.ambient.structure_eval(q)?;
        let rho = DMatrix::from_fn(n, big_m, |i, a| snap.rho_l[[i, a]]);
        let gamma = christoffels_at(&spec.ambient, &spec.metric, q)?;
        Ok(Self { frame, d_fd, d_pifd, d_fperp, d_k, rho, c: snap.b, gamma })
    }

    fn column_jet(m: &DMatrix<f64>, dm: &[DMatrix<f64>], j: usize) -> Jet {
        Jet { v: m.column(j).into_owned(), d: dm.iter().map(|d| d.column(j).into_owned()).collect() }
    }

    fn sigma(&self, a: usize) -> Jet {
        Self::column_jet(&self.frame.f_d, &self.d_fd, a)
    }

    fn pi_sigma(&self, a: usize) -> Jet {
        Self::column_jet(&(&self.frame.pi * &self.frame.f_d), &self.d_pifd, a)
    }

    /// Adapted frame element: `σ_a` for `a < r`, then `σ_A`.
    fn adapted(&self, mu: usize) -> Jet {
        let r = self.frame.f_d.ncols();
        if mu < r {
            self.sigma(mu)
        } else {
            Self::column_jet(&self.frame.f_perp, &self.d_fperp, mu - r)
        }
    }

    fn quadratic(&self, t: &Array3<f64>, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let big_m = x.len();
        DVector::from_fn(big_m, |g, _| {
            let mut s = 0.0;
            for a in 0..big_m {
                for b in 0..big_m {
                    s += t[[g, a, b]] * x[a] * y[b];
                }
            }
            s
        })
    }

    fn bracket(&self, x: &Jet, y: &Jet) -> DVector<f64> {
        y.along(&(&self.rho * &x.v)) - x.along(&(&self.rho * &y.v)) + self.quadratic(&self.c, &x.v, &y.v)
    }

    fn nabla(&self, x: &DVector<f64>, y: &Jet) -> DVector<f64> {
        y.along(&(&self.rho * x)) + self.quadratic(&self.gamma, x, &y.v)
    }

    /// Components `G(σ_c, v)` in the orthonormal `D` frame.
    fn d_coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.frame.f_d.transpose() * (&self.frame.g * v)
    }
}

/// Structure functions of the constrained algebroid at one point.
#[derive(Clone, Debug)]
pub struct ConstrainedSnapshot {
    /// `bracket[[c, a, b]] = G(σ_c, [σ_a, Πσ_b])`.
    pub bracket: Array3<f64>,
    pub rho_l: Array2<f64>,
    pub rho_r: Array2<f64>,
    /// `G(σ_c, ∇_{σ_a} Πσ_b)` and `G(σ_c, ∇_{Πσ_a} σ_b)`.
    pub dl: Array3<f64>,
    pub dr: Array3<f64>,
}

fn snapshot_from(fj: &FrameJet) -> ConstrainedSnapshot {
    let r = fj.frame.f_d.ncols();
    let n = fj.rho.nrows();
    let sig: Vec<Jet> = (0..r).map(|a| fj.sigma(a)).collect();
    let psig: Vec<Jet> = (0..r).map(|a| fj.pi_sigma(a)).collect();
    let mut bracket = Array3::zeros((r, r, r));
    let mut dl = Array3::zeros((r, r, r));
    let mut dr = Array3::zeros((r, r, r));
    for a in 0..r {
        for b in 0..r {
            let br = fj.d_coords(&fj.bracket(&sig[a], &psig[b]));
            let l = fj.d_coords(&fj.nabla(&sig[a].v, &psig[b]));
            let rr = fj.d_coords(&fj.nabla(&psig[a].v, &sig[b]));
            for c in 0..r {
                bracket[[c, a, b]] = br[c];
                dl[[c, a, b]] = l[c];
                dr[[c, a, b]] = rr[c];
            }
        }
    }
    let rl = &fj.rho * &fj.frame.f_d;
    let rr = &fj.rho * (&fj.frame.pi * &fj.frame.f_d);
    ConstrainedSnapshot {
        bracket,
        rho_l: Array2::from_shape_fn((n, r), |(i, a)| rl[(i, a)]),
        rho_r: Array2::from_shape_fn((n, r), |(i, a)| rr[(i, a)]),
        dl,
        dr,
    }
}

/// Residuals of the internal consistency relations at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConstraintResiduals {
    /// Closed-form adapted-frame coefficients against the projected bracket.
    pub ctilde: f64,
    /// `D^l_{ab}^c - D^r_{ba}^c` against the projected bracket.
    pub split: f64,
    /// Projector identities and the closed-form right anchor.
    pub projector: f64,
    /// Leibniz rules of `D^l`, `D^r` on `f σ_b`.
    pub leibniz: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.ctilde.max(self.split).max(self.projector).max(self.leibniz)
    }
}

type Cache = Arc<Mutex<Option<(Vec<f64>, Arc<ConstrainedSnapshot>)>>>;

/// A validated constraint specification with cached pointwise structure.
#[derive(Clone)]
pub struct ConstrainedSystem {
    spec: ConstraintSpec,
    cache: Cache,
}

impl fmt::Debug for ConstrainedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstrainedSystem").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl ConstrainedSystem {
    pub fn new(spec: ConstraintSpec) -> Result<Self> {
        spec.validate()?;
        // Levi-Civita needs a skew ambient bracket with equal anchors.
        christoffel_field(&spec.ambient, &spec.metric)?;
        for q in probe_points(spec.ambient.n()) {
            frame_at(&spec, &q, None)?;
        }
        Ok(Self { spec, cache: Arc::new(Mutex::new(None)) })
    }

    pub fn spec(&self) -> &ConstraintSpec {
        &self.spec
    }

    pub fn rank(&self) -> usize {
        self.spec.rank()
    }

    pub fn frame(&self, q: &[f64]) -> Result<AdaptedFrame> {
        frame_at(&self.spec, q, None)
    }

    pub fn snapshot(&self, q: &[f64]) -> Result<Arc<ConstrainedSnapshot>> {
        if let Some((cq, s)) = self.cache.lock().expect("cache lock").as_ref() {
            if cq.as_slice() == q {
                return Ok(s.clone());
            }
        }
        let s = Arc::new(snapshot_from(&FrameJet::new(&self.spec, q)?));
        *self.cache.lock().expect("cache lock") = Some((q.to_vec(), s.clone()));
        Ok(s)
    }

    /// Coefficients of the projected bracket from the adapted-frame structure functions
    /// `C^μ_{αβ}` of `E` and the adapted metric `𝓖`:
    ///
    /// `C̃^a_{bc} = -𝓖^{cd} [C^a_{db} + 𝓖_{aA} C^A_{db} - 𝓖_{dA} C^a_{Ab}
    ///             - 𝓖_{dA} 𝓖_{aB} C^B_{Ab} - 𝓖_{dA} ρ_b(𝓖_{aA})]`,
    ///
    /// returned as `[a, b, c]`.
    pub fn ctilde(&self, q: &[f64]) -> Result<Array3<f64>> {
        let fj = FrameJet::new(&self.spec, q)?;
        Ok(ctilde_from(&fj))
    }

    pub fn residuals(&self, q: &[f64], f: &SmoothField) -> Result<ConstraintResiduals> {
        let fj = FrameJet::new(&self.spec, q)?;
        let snap = snapshot_from(&fj);
        let r = self.rank();
        let ct = ctilde_from(&fj);
        let mut res = ConstraintResiduals::default();
        for a in 0..r {
            for b in 0..r {
                for c in 0..r {
                    res.ctilde = res.ctilde.max((ct[[a, b, c]] - snap.bracket[[a, b, c]]).abs());
                    let diff = snap.dl[[a, b, c]] - snap.dr[[a, c, b]];
                    res.split = res.split.max((diff - snap.bracket[[a, b, c]]).abs());
                }
            }
        }
        res.projector = projector_residual(&fj.frame, &fj.rho);
        res.leibniz = self.leibniz_residual(q, f, &fj, &snap)?;
        Ok(res)
    }

    /// Compares `D^l_{σ_a}(f σ_b)` and `D^r_{σ_a}(f σ_b)`, computed from their ambient definitions
    /// with the product differentiated as a whole, against the Leibniz expansion.
    fn leibniz_residual(&self, q: &[f64], f: &SmoothField, fj: &FrameJet, snap: &ConstrainedSnapshot) -> Result<f64> {
        let r = self.rank();
        let (fv, fg) = f.eval(q)?;
        let sel = fj.frame.selection.clone();
        let h = default_fd_step();
        let mut worst = 0.0_f64;
        for b in 0..r {
            let field = |pi_first: bool| -> Result<Jet> {
                let sel = sel.clone();
                let get = move |y: &[f64]| -> Result<DVector<f64>> {
                    let fr = frame_at(&self.spec, y, Some(&sel))?;
                    let col = if pi_first { (&fr.pi * &fr.f_d).column(b).into_owned() } else { fr.f_d.column(b).into_owned() };
                    Ok(col * f.value(y)?)
                };
                let v = get(q)?;
                let jac = central_jacobian(|y| Ok(get(y)?.iter().copied().collect()), q, h)?;
                let d = (0..q.len()).map(|i| DVector::from_fn(v.len(), |k, _| jac[k][i])).collect();
                Ok(Jet { v, d })
            };
            let (pif, fsig) = (field(true)?, field(false)?);
            for a in 0..r {
                let l = fj.d_coords(&fj.nabla(&fj.sigma(a).v, &pif));
                let rr = fj.d_coords(&fj.nabla(&fj.pi_sigma(a).v, &fsig));
                let rl_f: f64 = (0..q.len()).map(|i| snap.rho_l[[i, a]] * fg[i]).sum();
                let rr_f: f64 = (0..q.len()).map(|i| snap.rho_r[[i, a]] * fg[i]).sum();
                for c in 0..r {
                    let delta = if c == b { 1.0 } else { 0.0 };
                    worst = worst.max((l[c] - (rl_f * delta + fv * snap.dl[[c, a, b]])).abs());
                    worst = worst.max((rr[c] - (rr_f * delta + fv * snap.dr[[c, a, b]])).abs());
                }
            }
        }
        Ok(worst)
    }

    /// Projected ambient Levi-Civita curvature `G(σ_c, R(σ_a, σ_b) σ_d)` as `[c, a, b, d]`.
    pub fn projected_curvature(&self, gamma: &TensorField, q: &[f64]) -> Result<Array4<f64>> {
        let amb = curvature(&self.spec.ambient, gamma, q)?.0;
        let fr = frame_at(&self.spec, q, None)?;
        let (big_m, r) = fr.f_d.shape();
        let gs = &fr.g * &fr.f_d; // column c is G σ_c
        let mut out = Array4::zeros((r, r, r, r));
        for c in 0..r {
            for a in 0..r {
                for b in 0..r {
                    for d in 0..r {
                        let mut s = 0.0;
                        for l in 0..big_m {
                            for al in 0..big_m {
                                for be in 0..big_m {
                                    for nu in 0..big_m {
                                        s += gs[(l, c)] * amb[[l, al, be, nu]] * fr.f_d[(al, a)] * fr.f_d[(be, b)] * fr.f_d[(nu, d)];
                                    }
                                }
                            }
                        }
                        out[[c, a, b, d]] = s;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Builds the constrained scenario: bracket, anchors and split from the projected
    /// definitions, `H = ½|p|² + V`, curvature from the projected ambient curvature.
    pub fn bundle(&self) -> Result<ScenarioBundle> {
        let n = self.spec.ambient.n();
        let r = self.rank();
        let gamma = christoffel_field(&self.spec.ambient, &self.spec.metric)?;
        let (algebroid, split, curv) = if n == 0 {
            let s = self.snapshot(&[])?;
            let cst = |shape: &[usize], v: Vec<f64>| TensorField::constants(shape, 0, &v);
            let a = AlgebroidStructure::new(
                0,
                r,
                cst(&[r, r, r], s.bracket.iter().copied().collect())?,
                TensorField::zeros(&[0, r], 0),
                TensorField::zeros(&[0, r], 0),
            )?;
            let split = ConnectionPair::new(
                cst(&[r, r, r], s.dl.iter().copied().collect())?,
                cst(&[r, r, r], s.dr.iter().copied().collect())?,
            )?;
            let curv = CurvatureTensor::constant(&self.projected_curvature(&gamma, &[])?, 0)?;
            (a, split, curv)
        } else {
            let field = |shape: &[usize], pick: fn(&ConstrainedSnapshot, &[usize]) -> f64| {
                TensorField::from_fn(shape, n, |idx| {
                    let (sys, idx) = (self.clone(), idx.to_vec());
                    SmoothField::finite_difference("constrained", n, None, move |q| Ok(pick(&*sys.snapshot(q)?, &idx)))
                })
            };
            let a = AlgebroidStructure::new(
                n,
                r,
                field(&[r, r, r], |s, i| s.bracket[[i[0], i[1], i[2]]]),
                field(&[n, r], |s, i| s.rho_l[[i[0], i[1]]]),
                field(&[n, r], |s, i| s.rho_r[[i[0], i[1]]]),
            )?;
            let split = ConnectionPair::new(
                field(&[r, r, r], |s, i| s.dl[[i[0], i[1], i[2]]]),
                field(&[r, r, r], |s, i| s.dr[[i[0], i[1], i[2]]]),
            )?;
            let sys = self.clone();
            let curv = CurvatureTensor::derived(n, r, move |q| sys.projected_curvature(&gamma, q));
            (a, split, curv)
        };
        let hamiltonian = kinetic_plus_potential(n, &vec![1.0; r], &self.spec.potential)?;
        ScenarioBundle {
            name: if self.spec.is_classical() { "constrained" } else { "generalized_constrained" }.into(),
            parameters: serde_json::json!({ "n": n, "ambient_rank": self.spec.ambient.m(), "rank": r }),
            algebroid,
            hamiltonian,
            split,
            curvature: curv,
            monitors: vec![],
            constraint: Some(self.clone()),
        }
        .validate()
    }
}

fn ctilde_from(fj: &FrameJet) -> Array3<f64> {
    let fr = &fj.frame;
    let (big_m, r) = fr.f_d.shape();
    let s = fr.full();
    let s_inv = s.clone().try_inverse().expect("frame checked at construction");
    let jets: Vec<Jet> = (0..big_m).map(|mu| fj.adapted(mu)).collect();
    // cc[[μ, α, β]]: adapted-frame structure functions of E
    let mut cc = Array3::zeros((big_m, big_m, big_m));
    for al in 0..big_m {
        for be in 0..big_m {
            let v = &s_inv * fj.bracket(&jets[al], &jets[be]);
            for mu in 0..big_m {
                cc[[mu, al, be]] = v[mu];
            }
        }
    }
    let k = &fr.k;
    let big_a = big_m - r;
    let rho_b = |b: usize| &fj.rho * fr.f_d.column(b);
    let mut out = Array3::zeros((r, r, r));
    for b in 0..r {
        let w = rho_b(b);
        let dk = if fj.d_k.is_empty() {
            DMatrix::zeros(r, big_a)
        } else {
            fj.d_k.iter().enumerate().fold(DMatrix::zeros(r, big_a), |acc, (i, d)| acc + d * w[i])
        };
        for a in 0..r {
            for c in 0..r {
                let mut total = 0.0;
                for d in 0..r {
                    let mut t = cc[[a, d, b]];
                    for aa in 0..big_a {
                        t += k[(a, aa)] * cc[[r + aa, d, b]];
                        t -= k[(d, aa)] * cc[[a, r + aa, b]];
                        for bb in 0..big_a {
                            t -= k[(d, aa)] * k[(a, bb)] * cc[[r + bb, r + aa, b]];
                        }
                        t -= k[(d, aa)] * dk[(a, aa)];
                    }
                    total -= fr.g_inv_top[(c, d)] * t;
                }
                out[[a, b, c]] = total;
            }
        }
    }
    out
}

fn projector_residual(fr: &AdaptedFrame, rho: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    let mut upd = |m: DMatrix<f64>| worst = worst.max(m.amax());
    // P σ_a = σ_a, P σ_A = 𝓖_{cA} σ_c
    upd(&fr.p * &fr.f_d - &fr.f_d);
    upd(&fr.p * &fr.f_perp - &fr.f_d * &fr.k);
    // Π σ_a = 𝓖^{ad}(σ_d - 𝓖_{dA} σ_A)
    let pi_closed = (&fr.f_d - &fr.f_perp * fr.k.transpose()) * &fr.g_inv_top;
    upd(&fr.pi * &fr.f_d - &pi_closed);
    // P Π = id on D, both idempotent
    upd(&fr.p * &fr.pi * &fr.f_d - &fr.f_d);
    upd(&fr.p * &fr.p - &fr.p);
    upd(&fr.pi * &fr.pi - &fr.pi);
    // (ρ^r_D)_c = 𝓖^{cd}(ρ_d - 𝓖_{dA} ρ_A)
    if rho.nrows() > 0 {
        upd(rho * &fr.pi * &fr.f_d - rho * &pi_closed);
    }
    worst
}

/// Lagrangian-side trajectory, states `(q, v)` with `v` in the orthonormal `D` frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianTrajectory {
    pub n: usize,
    pub h: f64,
    pub states: Vec<Vec<f64>>,
}

/// RK4 on `q̇ = ρ(u)`, `W^T G (u̇ + Γ(u, u) + grad V) = 0` with `u = F_D v`, `W` spanning `D̃`.
///
/// Uses only the metric connection and frame derivatives; no projected bracket enters.
pub fn lagrangian_reference(spec: &ConstraintSpec, v0: &[f64], q0: &[f64], h: f64, steps: usize) -> Result<LagrangianTrajectory> {
    spec.validate()?;
    let (n, r) = (spec.ambient.n(), spec.rank());
    if q0.len() != n || v0.len() != r {
        return input(format!("initial state must have q of length {n} and v of length {r}"));
    }
    if !(h > 0.0 && h.is_finite()) || steps == 0 {
        return input("step h must be positive and steps at least 1");
    }
    let rhs = |y: &[f64]| -> Result<Vec<f64>> {
        let (q, v) = y.split_at(n);
        let fr = frame_at(spec, q, None)?;
        let snap = spec.ambient.structure_eval(q)?;
        let big_m = spec.ambient.m();
        let rho = DMatrix::from_fn(n, big_m, |i, a| snap.rho_l[[i, a]]);
        let vv = DVector::from_column_slice(v);
        let u = &fr.f_d * &vv;
        let qdot = &rho * &u;
        let jac = central_jacobian(|z| Ok(frame_at(spec, z, None)?.f_d.iter().copied().collect()), q, default_fd_step())?;
        let mut fdot = DMatrix::zeros(big_m, r);
        for i in 0..n {
            fdot += DMatrix::from_iterator(big_m, r, (0..big_m * r).map(|k| jac[k][i])) * qdot[i];
        }
        let gamma = christoffels_at(&spec.ambient, &spec.metric, q)?;
        let gu = DVector::from_fn(big_m, |g, _| {
            let mut s = 0.0;
            for a in 0..big_m {
                for b in 0..big_m {
                    s += gamma[[g, a, b]] * u[a] * u[b];
                }
            }
            s
        });
        let dv = DVector::from_vec(spec.potential.gradient(q)?);
        let ginv = fr.g.clone().try_inverse().ok_or_else(|| Error::Numeric("metric is singular".into()))?;
        let grad_v = ginv * rho.transpose() * dv;
        let wg = fr.w_var.transpose() * &fr.g;
        let lhs = &wg * &fr.f_d;
        let rhs = -(&wg * (fdot * &vv + gu + grad_v));
        let vdot = lhs.lu().solve(&rhs).ok_or_else(|| Error::Numeric("constraint system is singular".into()))?;
        let mut out: Vec<f64> = qdot.iter().copied().collect();
        out.extend(vdot.iter());
        Ok(out)
    };
    let y0: Vec<f64> = q0.iter().chain(v0).copied().collect();
    let (states, diverged) = crate::hamiltonian::rk4(rhs, &y0, h, steps);
    if let Some(k) = diverged {
        return Err(Error::Numeric(format!("Lagrangian reference diverged after step {k}")));
    }
    Ok(LagrangianTrajectory { n, h, states })
}
