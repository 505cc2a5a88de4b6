//! Named numerical checks run on a scenario at seeded random probe points, and the JSON report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::calculus::max_abs;
use crate::config::{CheckEntry, RunConfig, Tolerances};
use crate::connections::{curvature_identities, verify_split};
use crate::error::{Error, Result};
use crate::hamiltonian::{energy_rate, ham_field, integrate, PhasePoint, Trajectory, Variant};
use crate::prolongation::{
    closedness_residual, da_squared_function, da_squared_one_form, lr_ham_field, omega, omega_frame, OmegaMethod,
    ProlongationData,
};
use crate::scenarios::{lagrangian_reference, random_polynomial, ScenarioBundle};
use crate::fields::{default_fd_step, TensorField};

/// Registered check names, in stream order.
pub const CHECK_NAMES: [&str; 11] = [
    "theorem43_equivalence",
    "omega_frame",
    "omega_dlr_consistency",
    "closedness",
    "curvature_identities",
    "structure_checks",
    "split_consistency",
    "legendre_equivalence",
    "casimir_drift",
    "energy_rate_fd",
    "dA_squared",
];

/// Tolerance used when the config gives none for this check; `None` means the analytic or FD
/// default. Trajectory checks keep theirs even when the scenario uses finite differences.
pub fn default_tolerance(check: &str, fd: bool) -> Option<f64> {
    match check {
        "casimir_drift" => Some(1e-8),
        "omega_dlr_consistency" | "dA_squared" if !fd => Some(1e-8),
        "legendre_equivalence" | "energy_rate_fd" => Some(1e-6),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub points: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub expect_fail: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub scenario: String,
    pub seed: u64,
    pub points: usize,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// `K` points with every coordinate uniform in `[-1, 1]`, one ChaCha stream per check.
pub fn probe_points(seed: u64, stream: u64, k: usize, n: usize, m: usize) -> Vec<PhasePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..k)
        .map(|_| {
            let q = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let p = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            PhasePoint::new(q, p)
        })
        .collect()
}

/// Everything a check needs besides its name.
pub struct Context<'a> {
    pub bundle: &'a ScenarioBundle,
    pub points: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub x0: Option<PhasePoint>,
    pub h: f64,
    pub steps: usize,
}

impl<'a> Context<'a> {
    pub fn from_config(cfg: &RunConfig, bundle: &'a ScenarioBundle) -> Result<Self> {
        Ok(Self {
            bundle,
            points: cfg.verification.points,
            seed: cfg.verification.seed,
            tolerances: cfg.verification.tolerances,
            x0: Some(cfg.initial_state(bundle)?),
            h: cfg.integration.h,
            steps: cfg.integration.steps,
        })
    }

    fn x0(&self, check: &str) -> Result<&PhasePoint> {
        self.x0.as_ref().ok_or_else(|| Error::Input(format!("{check} needs an initial state")))
    }
}

fn uses_fd(b: &ScenarioBundle, pd: &ProlongationData) -> bool {
    pd.uses_finite_differences() || b.hamiltonian.uses_finite_differences()
}

/// Runs one check. Unknown names and checks that do not apply to the scenario are input errors.
pub fn run_check(ctx: &Context, entry: &CheckEntry) -> Result<CheckResult> {
    let name = entry.name();
    let stream = CHECK_NAMES
        .iter()
        .position(|c| *c == name)
        .ok_or_else(|| Error::Input(format!("unknown check \"{name}\"")))? as u64;
    let b = ctx.bundle;
    let pd = b.prolongation()?;
    let fd = uses_fd(b, &pd);
    let tolerance = entry.tolerance().or_else(|| default_tolerance(name, fd)).unwrap_or(if fd {
        ctx.tolerances.fd
    } else {
        ctx.tolerances.analytic
    });
    let pts = || probe_points(ctx.seed, stream, ctx.points, b.n(), b.m());
    let over = |f: &dyn Fn(&PhasePoint) -> Result<f64>| -> Result<(usize, f64)> {
        let ps = pts();
        let mut worst = 0.0_f64;
        for x in &ps {
            worst = nan_max(worst, f(x)?);
        }
        Ok((ps.len(), worst))
    };

    let mut details = None;
    let (points, residual) = match name {
        "theorem43_equivalence" => over(&|x| {
            let lr = lr_ham_field(&pd, &b.hamiltonian, x)?;
            let hf = ham_field(&b.algebroid, &b.hamiltonian, x, Variant::Standard)?;
            let scale = max_abs(hf.iter()).max(1.0);
            Ok(lr.iter().zip(&hf).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max) / scale)
        })?,
        "omega_frame" => over(&|x| {
            let w = omega(&pd, x, OmegaMethod::FrameFormula)?;
            let skew = max_abs((&w + &w.t()).iter());
            Ok(max_abs((&w - &omega_frame(b.m())).iter()).max(skew))
        })?,
        "omega_dlr_consistency" => over(&|x| {
            let a = omega(&pd, x, OmegaMethod::GenericDlr)?;
            let c = omega(&pd, x, OmegaMethod::FrameFormula)?;
            Ok(max_abs((&a - &c).iter()))
        })?,
        "closedness" => over(&|x| closedness_residual(&pd, x))?,
        "curvature_identities" => {
            let (mut skew, mut bianchi) = (0.0_f64, 0.0_f64);
            let ps = pts();
            for x in &ps {
                let r = curvature_identities(&b.curvature.eval(&x.q)?);
                skew = nan_max(skew, r.skew_residual);
                bianchi = nan_max(bianchi, r.bianchi_residual);
            }
            details = Some(json!({ "skew_residual": skew, "bianchi_residual": bianchi }));
            (ps.len(), nan_max(skew, bianchi))
        }
        "structure_checks" => {
            let mut w = [0.0_f64; 4];
            let ps = pts();
            for x in &ps {
                let r = b.algebroid.structure_checks(&x.q)?;
                for (slot, v) in w.iter_mut().zip([r.skew_defect, r.anchor_lr_defect, r.jacobiator_norm, r.anchor_morphism_defect]) {
                    *slot = nan_max(*slot, v);
                }
            }
            details = Some(json!({
                "skew_defect": w[0],
                "anchor_lr_defect": w[1],
                "jacobiator_norm": w[2],
                "anchor_morphism_defect": w[3],
            }));
            (ps.len(), w.iter().copied().fold(0.0, nan_max))
        }
        "split_consistency" => over(&|x| verify_split(&b.algebroid, &b.split, &x.q))?,
        "legendre_equivalence" => {
            let sys = b
                .constraint
                .as_ref()
                .ok_or_else(|| Error::Input("legendre_equivalence needs a constrained scenario".into()))?;
            let x0 = ctx.x0(name)?;
            let lag = lagrangian_reference(sys.spec(), &x0.p, &x0.q, ctx.h, ctx.steps)?;
            let ham = simulate_plain(b, x0, ctx.h, ctx.steps)?;
            let gap = lag
                .states
                .iter()
                .zip(&ham.samples)
                .flat_map(|(l, s)| l.iter().zip(&s.x).map(|(a, c)| (a - c).abs()))
                .fold(0.0, nan_max);
            (lag.states.len(), gap)
        }
        "casimir_drift" => {
            let names: Vec<&str> = b.monitors.iter().filter(|m| m.casimir).map(|m| m.name.as_str()).collect();
            if names.is_empty() {
                return Err(Error::Input(format!("casimir_drift: scenario {} has no Casimir monitors", b.name)));
            }
            let traj = simulate(b, ctx.x0(name)?, ctx.h, ctx.steps)?;
            let mut worst = 0.0_f64;
            let mut per = serde_json::Map::new();
            for n in names {
                let s = traj.monitor_series(n).expect("monitor is recorded");
                let d = s.iter().map(|v| (v - s[0]).abs()).fold(0.0, nan_max);
                per.insert(n.to_string(), json!(d));
                worst = nan_max(worst, d);
            }
            per.insert("energy_drift".into(), json!(traj.energy_drift()));
            details = Some(Value::Object(per));
            (traj.samples.len(), worst)
        }
        "energy_rate_fd" => {
            let x0 = ctx.x0(name)?;
            let traj = simulate_plain(b, x0, ctx.h, ctx.steps)?;
            let s = &traj.samples;
            if s.len() < 5 {
                return Err(Error::Input("energy_rate_fd needs integration.steps >= 4".into()));
            }
            let interior = s.len() - 4;
            let k = ctx.points.min(interior);
            let mut worst = 0.0_f64;
            for j in 0..k {
                let i = 2 + j * interior / k;
                // five-point central stencil
                let e = |o: usize| s[o].energy;
                let fd = (e(i - 2) - 8.0 * e(i - 1) + 8.0 * e(i + 1) - e(i + 2)) / (12.0 * ctx.h);
                worst = nan_max(worst, (fd - s[i].energy_rate).abs());
            }
            (k, worst)
        }
        "dA_squared" => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            rng.set_stream(stream + CHECK_NAMES.len() as u64);
            let arity = b.n() + b.m();
            let f = random_polynomial(&mut rng, arity, 3);
            let theta = TensorField::from_fn(&[2 * b.m()], arity, |_| random_polynomial(&mut rng, arity, 2));
            let step = default_fd_step();
            let (mut fun, mut form) = (0.0_f64, 0.0_f64);
            let ps = pts();
            for x in &ps {
                fun = nan_max(fun, da_squared_function(&pd, &f, x)?);
                form = nan_max(form, da_squared_one_form(&pd, &theta, x, step)?);
            }
            details = Some(json!({ "function": fun, "one_form": form }));
            (ps.len(), nan_max(fun, form))
        }
        _ => unreachable!("name validated against CHECK_NAMES"),
    };

    let within = residual <= tolerance;
    let pass = if entry.expect_fail() { residual.is_finite() && !within } else { within };
    Ok(CheckResult {
        check: name.to_string(),
        points,
        max_residual: residual,
        tolerance,
        pass,
        expect_fail: entry.expect_fail(),
        details,
    })
}

/// NaN-propagating max, so a NaN residual can never pass.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// RK4 trajectory with the scenario's monitors.
pub fn simulate(b: &ScenarioBundle, x0: &PhasePoint, h: f64, steps: usize) -> Result<Trajectory> {
    integrate(&b.algebroid, &b.hamiltonian, x0, h, steps, &b.monitors)
}

fn simulate_plain(b: &ScenarioBundle, x0: &PhasePoint, h: f64, steps: usize) -> Result<Trajectory> {
    integrate(&b.algebroid, &b.hamiltonian, x0, h, steps, &[])
}

/// Runs every check listed in the config; an empty list runs the checks that apply to any scenario.
pub fn run_suite(cfg: &RunConfig, bundle: &ScenarioBundle) -> Result<VerificationReport> {
    let ctx = Context::from_config(cfg, bundle)?;
    let entries: Vec<CheckEntry> = if cfg.verification.checks.is_empty() {
        ["theorem43_equivalence", "omega_frame", "omega_dlr_consistency", "split_consistency"]
            .iter()
            .map(|s| CheckEntry::Name(s.to_string()))
            .collect()
    } else {
        cfg.verification.checks.clone()
    };
    let checks = entries.iter().map(|e| run_check(&ctx, e)).collect::<Result<Vec<_>>>()?;
    Ok(VerificationReport {
        scenario: bundle.name.clone(),
        seed: ctx.seed,
        points: ctx.points,
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}

/// Energy rate at one state; exposed for reports.
pub fn energy_rate_at(b: &ScenarioBundle, x: &PhasePoint) -> Result<f64> {
    energy_rate(&b.algebroid, &b.hamiltonian, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(scenario: Value, checks: Value) -> RunConfig {
        let v = json!({
            "scenario": scenario,
            "integration": {"h": 1e-3, "steps": 200, "x0": {"q": [], "p": [1.0, 1.0, 1.0]}},
            "verification": {"points": 10, "seed": 7, "checks": checks},
        });
        RunConfig::from_json(&v.to_string()).unwrap()
    }

    fn euler() -> Value {
        json!({"kind": "lie_poisson", "algebra": "so3", "inertia": [1.0, 2.0, 3.0], "split": "levi_civita",
               "curvature": "levi_civita",
               "monitors": [{"name": "casimir", "function": {"poly": [[1.0, [2, 0, 0]], [1.0, [0, 2, 0]], [1.0, [0, 0, 2]]]}, "casimir": true}]})
    }

    #[test]
    fn probe_streams_differ_and_repeat() {
        let a = probe_points(3, 0, 5, 2, 2);
        assert_eq!(a, probe_points(3, 0, 5, 2, 2));
        assert_ne!(a, probe_points(3, 1, 5, 2, 2));
        assert!(a.iter().flat_map(|x| x.flat()).all(|v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn euler_suite_passes() {
        let cfg = config(
            euler(),
            json!(["theorem43_equivalence", "omega_frame", "omega_dlr_consistency", "closedness",
                   "curvature_identities", "structure_checks", "split_consistency", "casimir_drift",
                   "energy_rate_fd", "dA_squared"]),
        );
        let b = cfg.build().unwrap();
        let r = run_suite(&cfg, &b).unwrap();
        for c in &r.checks {
            assert!(c.pass, "{c:?}");
        }
        assert!(r.pass);
    }

    #[test]
    fn expect_fail_inverts() {
        let cfg = config(euler(), json!([{"name": "omega_frame", "expect_fail": true}]));
        let b = cfg.build().unwrap();
        let r = run_suite(&cfg, &b).unwrap();
        assert!(!r.checks[0].pass && !r.pass);
    }

    #[test]
    fn inapplicable_check_is_an_input_error() {
        let cfg = config(euler(), json!(["legendre_equivalence"]));
        let b = cfg.build().unwrap();
        assert!(matches!(run_suite(&cfg, &b), Err(Error::Input(_))));
    }

    #[test]
    fn report_is_deterministic() {
        let cfg = config(euler(), json!(["theorem43_equivalence", "dA_squared"]));
        let b = cfg.build().unwrap();
        assert_eq!(run_suite(&cfg, &b).unwrap().to_json(), run_suite(&cfg, &b).unwrap().to_json());
    }
}
