//! File interface shared with the browser piloting task, and dynamics parity
//! between its fixed-step integrator and the library simulator.
//!
//! The browser side is not built here; `UiIntegrator` restates its contract
//! (RK4 at 100 Hz, commands held between input samples, 20 Hz recording on the
//! simulation clock) independently of the library code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pilot_sysid::cli::{cmd_estimate, EstimateArgs};
use pilot_sysid::model::{PilotParams, VehicleConfig};
use pilot_sysid::runlog::{RunLog, SCHEMA_VERSION};
use pilot_sysid::simulate::{replay_commands, DEFAULT_DT_INT};
use pilot_sysid::synth::{generate_runs, Scenario, REFERENCE_THETA};

const RATE: f64 = 20.0;
const PHYSICS_HZ: usize = 100;
const PARITY_TOL: f64 = 1e-3;

struct UiIntegrator {
    cfg: VehicleConfig<f64>,
    x: [f64; 6],
}

impl UiIntegrator {
    fn new(cfg: VehicleConfig<f64>) -> Self {
        Self { cfg, x: [0.0; 6] }
    }

    fn rhs(&self, s: &[f64; 6], u: f64) -> [f64; 6] {
        let c = &self.cfg;
        let [_, phi, v, q, wf, wb] = *s;
        let hover_thrust = c.mass_kg * c.gravity / 4.0;
        let tf = hover_thrust + c.thrust_slope * wf;
        let tb = hover_thrust + c.thrust_slope * wb;
        let delta = c.gain_k[0] * (c.command_scale * u - phi) - c.gain_k[1] * q;
        let prop = |w: f64, e: f64| -c.prop_decay * w + c.prop_gain * (e - c.hover_throttle);
        [
            v,
            q,
            2.0 / c.mass_kg * (tf + tb) * phi.sin(),
            2f64.sqrt() / c.inertia_yy * (tf - tb),
            prop(wf, c.hover_throttle - delta),
            prop(wb, c.hover_throttle + delta),
        ]
    }

    fn step(&mut self, u: f64, h: f64) {
        let x = self.x;
        let shift = |k: &[f64; 6], a: f64| std::array::from_fn::<f64, 6, _>(|i| x[i] + a * k[i]);
        let k1 = self.rhs(&x, u);
        let k2 = self.rhs(&shift(&k1, h / 2.0), u);
        let k3 = self.rhs(&shift(&k2, h / 2.0), u);
        let k4 = self.rhs(&shift(&k3, h), u);
        for i in 0..6 {
            self.x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    /// Records `(t, y_v, u)` at 20 Hz while `input(t)` is sampled once per
    /// physics step and clamped.
    fn run(mut self, duration: f64, input: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let per_sample = PHYSICS_HZ / RATE as usize;
        let h = 1.0 / PHYSICS_HZ as f64;
        let n = (duration * RATE).round() as usize;
        let (mut t, mut y, mut u) = (vec![], vec![], vec![]);
        for k in 0..=n {
            let tk = k as f64 / RATE;
            let uk = input(tk).clamp(-1.0, 1.0);
            t.push(tk);
            y.push(self.x[0]);
            u.push(uk);
            if k == n {
                break;
            }
            for s in 0..per_sample {
                let us = input(tk + s as f64 * h).clamp(-1.0, 1.0);
                self.step(us, h);
            }
        }
        (t, y, u)
    }
}

/// Keyboard ramp: slew 2 per second toward a held key target.
fn scripted_keys(t: f64) -> f64 {
    let target = |t: f64| match t {
        t if t < 1.0 => 0.0,
        t if t < 4.0 => 1.0,
        t if t < 6.0 => 0.0,
        t if t < 9.0 => -1.0,
        t if t < 11.0 => 0.3,
        _ => 0.0,
    };
    // integrate the slew-limited ramp exactly on a 1 ms grid
    let mut u: f64 = 0.0;
    let h = 1e-3;
    let steps = (t / h).round() as usize;
    for i in 0..steps {
        let goal = target(i as f64 * h);
        u += (goal - u).clamp(-2.0 * h, 2.0 * h);
    }
    u
}

/// Writes a run the way the browser exports it.
fn write_ui_record(dir: &Path, name: &str, yhat: f64, t: &[f64], y: &[f64], u: &[f64]) -> PathBuf {
    let mut csv = String::from("t,y_v,u\n");
    for k in 0..t.len() {
        writeln!(csv, "{:.16e},{:.16e},{:.16e}", t[k], y[k], u[k]).unwrap();
    }
    let path = dir.join(format!("{name}.csv"));
    fs::write(&path, csv).unwrap();
    let meta = serde_json::json!({
        "yhat": yhat,
        "sample_rate": RATE,
        "duration": (t.len() - 1) as f64 / RATE,
        "noise_sigma": 0.0,
        "seed": 0,
        "schema_version": SCHEMA_VERSION,
    });
    fs::write(dir.join(format!("{name}.meta.json")), meta.to_string()).unwrap();
    path
}

#[test]
fn idle_session_stays_at_hover() {
    let (t, y, u) = UiIntegrator::new(VehicleConfig::default()).run(15.0, |_| 0.0);
    assert_eq!(t.len(), 301);
    assert!(y.iter().all(|v| *v == 0.0));
    assert!(u.iter().all(|v| *v == 0.0));
}

#[test]
fn scripted_replay_matches_library_simulator() {
    let cfg = VehicleConfig::default();
    // command sequence held per 20 Hz sample on both sides
    let script: Vec<f64> = (0..=300).map(|k| scripted_keys(k as f64 / RATE)).collect();
    let (_, ui, _) =
        UiIntegrator::new(cfg).run(15.0, |t| script[((t * RATE) + 1e-9).floor() as usize]);
    let lib = replay_commands(&cfg, &script, 1.0 / RATE, DEFAULT_DT_INT).unwrap();
    assert_eq!(ui.len(), lib.len());
    let worst = ui
        .iter()
        .zip(&lib)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let travel = lib.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("parity: max |dy| = {worst:.3e} m over 15 s (travel {travel:.2} m)");
    assert!(travel > 1.0, "script should move the vehicle");
    assert!(worst < PARITY_TOL, "{worst}");
}

#[test]
fn exported_records_pass_schema_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (t, y, u) = UiIntegrator::new(VehicleConfig::default()).run(15.0, scripted_keys);
    assert!(u.iter().all(|v| v.abs() <= 1.0));
    let p = write_ui_record(dir.path(), "ui_00", 10.0, &t, &y, &u);
    let log = RunLog::read(&p).unwrap();
    assert_eq!(log.t.len(), 301);
    assert_eq!(log.yhat, 10.0);
    assert_eq!(log.noise_sigma, 0.0);
    assert_eq!(log.u_joystick.as_deref(), Some(u.as_slice()));
    assert!(log
        .t
        .iter()
        .enumerate()
        .all(|(k, tk)| *tk == k as f64 / RATE));

    // a meta file with another schema version is refused
    let meta = dir.path().join("ui_00.meta.json");
    let text = fs::read_to_string(&meta).unwrap().replace(
        &format!("\"schema_version\":{SCHEMA_VERSION}"),
        "\"schema_version\":99",
    );
    fs::write(&meta, text).unwrap();
    assert!(RunLog::read(&p).is_err());
}

#[test]
fn exported_records_feed_the_estimator_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios: Vec<Scenario> = [10.0, 20.0]
        .iter()
        .map(|&yhat| Scenario {
            yhat,
            duration: 15.0,
            sample_rate: RATE,
            noise_sigma: 0.0,
            seed: 0,
            repetitions: 3,
        })
        .collect();
    let runs = generate_runs(
        &PilotParams::new(REFERENCE_THETA),
        &VehicleConfig::default(),
        &scenarios,
        true,
    )
    .unwrap();
    let paths: Vec<PathBuf> = runs
        .iter()
        .map(|r| {
            let l = &r.log;
            write_ui_record(
                dir.path(),
                &r.name,
                l.yhat,
                &l.t,
                &l.y_v,
                l.u_joystick.as_ref().unwrap(),
            )
        })
        .collect();
    assert_eq!(paths.len(), 6);
    let out = dir.path().join("out");
    let report = cmd_estimate(EstimateArgs {
        runs: paths,
        config: None,
        out: Some(out.clone()),
        direct: true,
        tol_eq: None,
        max_iter: None,
    })
    .unwrap();
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(doc["mode"], "direct");
    assert_eq!(doc["runs"].as_array().unwrap().len(), 6);
}
