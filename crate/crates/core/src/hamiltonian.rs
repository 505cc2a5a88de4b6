//! The linear tensor Π on the dual bundle, its bracket, Hamiltonian vector fields and RK4 integration.

use std::io::{self, Write};

use ndarray::Array2;

use crate::algebroid::AlgebroidStructure;
use crate::error::{check_len, Error, Result};
use crate::fields::SmoothField;

/// A function on the dual-bundle chart with inputs ordered `(q_1..q_n, p_1..p_m)`.
pub type PhaseFunction = SmoothField;

#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        Self { q, p }
    }

    pub fn from_flat(n: usize, x: &[f64]) -> Self {
        Self { q: x[..n].to_vec(), p: x[n..].to_vec() }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut x = self.q.clone();
        x.extend_from_slice(&self.p);
        x
    }

    pub fn check(&self, a: &AlgebroidStructure) -> Result<()> {
        check_len("phase point q", a.n(), self.q.len())?;
        check_len("phase point p", a.m(), self.p.len())?;
        if self.q.iter().chain(&self.p).any(|v| !v.is_finite()) {
            return Err(Error::Input("phase point has non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Standard,
    Tilde,
}

#[derive(Clone, Debug)]
pub struct Monitor {
    pub name: String,
    pub function: PhaseFunction,
    /// Expected to be conserved by every flow of the bracket.
    pub casimir: bool,
}

impl Monitor {
    pub fn new(name: &str, function: PhaseFunction) -> Self {
        Self { name: name.to_string(), function, casimir: false }
    }

    pub fn casimir(name: &str, function: PhaseFunction) -> Self {
        Self { name: name.to_string(), function, casimir: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub energy: f64,
    pub energy_rate: f64,
    pub monitors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub monitor_names: Vec<String>,
    pub samples: Vec<Sample>,
}

fn check_arity(a: &AlgebroidStructure, f: &PhaseFunction, what: &str) -> Result<()> {
    check_len(what, a.n() + a.m(), f.arity())
}

/// Π with rows and columns ordered (q-block, p-block).
pub fn poisson_tensor(a: &AlgebroidStructure, x: &PhasePoint) -> Result<Array2<f64>> {
    x.check(a)?;
    let (n, m) = (a.n(), a.m());
    let s = a.structure_eval(&x.q)?;
    let mut pi = Array2::zeros((n + m, n + m));
    for i in 0..n {
        for al in 0..m {
            pi[[i, n + al]] = s.rho_r[[i, al]];
            pi[[n + al, i]] = -s.rho_l[[i, al]];
        }
    }
    for al in 0..m {
        for be in 0..m {
            let mut v = 0.0;
            for g in 0..m {
                v -= s.b[[g, al, be]] * x.p[g];
            }
            pi[[n + al, n + be]] = v;
        }
    }
    Ok(pi)
}

fn contract(pi: &Array2<f64>, u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            s += ui * pi[[i, j]] * vj;
        }
    }
    s
}

/// `{φ, ψ} = dφ^T Π dψ`.
pub fn poisson_bracket(a: &AlgebroidStructure, phi: &PhaseFunction, psi: &PhaseFunction, x: &PhasePoint) -> Result<f64> {
    check_arity(a, phi, "phi arity")?;
    check_arity(a, psi, "psi arity")?;
    let pi = poisson_tensor(a, x)?;
    let z = x.flat();
    Ok(contract(&pi, &phi.gradient(&z)?, &psi.gradient(&z)?))
}

/// Hamiltonian vector field in (q̇, ṗ) order.
pub fn ham_field(a: &AlgebroidStructure, h: &PhaseFunction, x: &PhasePoint, variant: Variant) -> Result<Vec<f64>> {
    check_arity(a, h, "Hamiltonian arity")?;
    x.check(a)?;
    let (n, m) = (a.n(), a.m());
    let s = a.structure_eval(&x.q)?;
    let dh = h.gradient(&x.flat())?;
    let (dq, dp) = dh.split_at(n);
    let (lead, trail) = match variant {
        Variant::Standard => (&s.rho_l, &s.rho_r),
        Variant::Tilde => (&s.rho_r, &s.rho_l),
    };
    let mut out = vec![0.0; n + m];
    for i in 0..n {
        out[i] = (0..m).map(|al| lead[[i, al]] * dp[al]).sum();
    }
    for be in 0..m {
        let anchor: f64 = (0..n).map(|j| trail[[j, be]] * dq[j]).sum();
        let mut bterm = 0.0;
        for al in 0..m {
            for g in 0..m {
                bterm += match variant {
                    Variant::Standard => s.b[[g, al, be]],
                    Variant::Tilde => s.b[[g, be, al]],
                } * x.p[g]
                    * dp[al];
            }
        }
        out[n + be] = match variant {
            Variant::Standard => -(anchor - bterm),
            Variant::Tilde => -(anchor + bterm),
        };
    }
    Ok(out)
}

/// `dH/dt` along the standard field, i.e. `-{H, H}`.
pub fn energy_rate(a: &AlgebroidStructure, h: &PhaseFunction, x: &PhasePoint) -> Result<f64> {
    Ok(-poisson_bracket(a, h, h, x)?)
}

fn sample(a: &AlgebroidStructure, h: &PhaseFunction, monitors: &[Monitor], t: f64, y: &[f64]) -> Result<Sample> {
    let x = PhasePoint::from_flat(a.n(), y);
    Ok(Sample {
        t,
        x: y.to_vec(),
        energy: h.value(y)?,
        energy_rate: energy_rate(a, h, &x)?,
        monitors: monitors.iter().map(|mon| mon.function.value(y)).collect::<Result<_>>()?,
    })
}

/// Generic fixed-step RK4 on `y' = f(y)`; `t_k = k h`. Returns every state including `y0`.
///
/// A step producing a non-finite state (or failing numerically) stops the loop and returns the
/// states computed so far together with the index of the last good one.
pub fn rk4<F>(f: F, y0: &[f64], h: f64, steps: usize) -> (Vec<Vec<f64>>, Option<usize>)
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut states = Vec::with_capacity(steps + 1);
    states.push(y0.to_vec());
    let axpy = |y: &[f64], k: &[f64], c: f64| y.iter().zip(k).map(|(a, b)| a + c * b).collect::<Vec<_>>();
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    for step in 1..=steps {
        let y = states.last().expect("nonempty");
        let next = (|| -> Option<Vec<f64>> {
            let k1 = f(y).ok().filter(|k| finite(k))?;
            let y2 = axpy(y, &k1, h / 2.0);
            let k2 = f(&y2).ok().filter(|k| finite(k))?;
            let y3 = axpy(y, &k2, h / 2.0);
            let k3 = f(&y3).ok().filter(|k| finite(k))?;
            let y4 = axpy(y, &k3, h);
            let k4 = f(&y4).ok().filter(|k| finite(k))?;
            let yn: Vec<f64> = (0..y.len())
                .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect();
            finite(&yn).then_some(yn)
        })();
        match next {
            Some(yn) => states.push(yn),
            None => return (states, Some(step - 1)),
        }
    }
    (states, None)
}

/// RK4 on the standard Hamiltonian field, recording H, dH/dt and monitors at every step.
pub fn integrate(
    a: &AlgebroidStructure,
    h: &PhaseFunction,
    x0: &PhasePoint,
    dt: f64,
    steps: usize,
    monitors: &[Monitor],
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Input("step h must be positive".into()));
    }
    if steps == 0 {
        return Err(Error::Input("steps must be at least 1".into()));
    }
    check_arity(a, h, "Hamiltonian arity")?;
    for mon in monitors {
        check_arity(a, &mon.function, &format!("monitor {} arity", mon.name))?;
    }
    x0.check(a)?;
    let n = a.n();
    let field = |y: &[f64]| ham_field(a, h, &PhasePoint::from_flat(n, y), Variant::Standard);
    let (states, diverged) = rk4(field, &x0.flat(), dt, steps);
    let mut traj = Trajectory {
        n,
        m: a.m(),
        h: dt,
        monitor_names: monitors.iter().map(|m| m.name.clone()).collect(),
        samples: Vec::with_capacity(states.len()),
    };
    for (k, y) in states.iter().enumerate() {
        match sample(a, h, monitors, k as f64 * dt, y) {
            Ok(s) => traj.samples.push(s),
            Err(Error::Numeric(_)) => {
                let last = k.saturating_sub(1);
                return Err(Error::Diverged { last_good_step: last, partial: Box::new(traj) });
            }
            Err(e) => return Err(e),
        }
    }
    match diverged {
        Some(last_good_step) => Err(Error::Diverged { last_good_step, partial: Box::new(traj) }),
        None => Ok(traj),
    }
}

/// Formats with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trajectory {
    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=self.n).map(|i| format!("q{i}")));
        cols.extend((1..=self.m).map(|i| format!("p{i}")));
        cols.push("H".into());
        cols.push("dHdt".into());
        cols.extend(self.monitor_names.iter().cloned());
        cols
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.header().join(","))?;
        for s in &self.samples {
            let mut row: Vec<String> = Vec::with_capacity(s.x.len() + 3 + s.monitors.len());
            row.push(fmt17(s.t));
            row.extend(s.x.iter().map(|&v| fmt17(v)));
            row.push(fmt17(s.energy));
            row.push(fmt17(s.energy_rate));
            row.extend(s.monitors.iter().map(|&v| fmt17(v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn final_state(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn monitor_series(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.monitor_names.iter().position(|m| m == name)?;
        Some(self.samples.iter().map(|s| s.monitors[k]).collect())
    }

    /// `max_k |H_k - H_0|`.
    pub fn energy_drift(&self) -> f64 {
        let h0 = self.samples.first().map_or(0.0, |s| s.energy);
        self.samples.iter().fold(0.0, |m, s| m.max((s.energy - h0).abs()))
    }
}
