//! Recorded runs on disk: `<name>.csv` with header `t,y_v[,u]` plus a
//! `<name>.meta.json` sidecar. Numbers are written with 17 significant digits
//! so that a write/read cycle is lossless.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Relative tolerance on `t_k = k / sample_rate`.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Meta {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("schema violation: {0}")]
    Schema(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub yhat: f64,
    pub sample_rate: f64,
    pub duration: f64,
    pub t: Vec<f64>,
    pub y_v: Vec<f64>,
    pub u_joystick: Option<Vec<f64>>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub schema_version: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RunMeta {
    yhat: f64,
    sample_rate: f64,
    duration: f64,
    noise_sigma: f64,
    seed: u64,
    schema_version: u32,
}

pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// `foo.csv` -> `foo.meta.json`
pub fn meta_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

impl RunLog {
    /// Number of intervals `N` of the sample grid.
    pub fn intervals(&self) -> usize {
        self.t.len().saturating_sub(1)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn expected_len(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize + 1
    }

    pub fn validate(&self) -> Result<(), RunLogError> {
        let bad = |m: String| Err(RunLogError::Schema(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.sample_rate > 0.0) || !(self.duration > 0.0) || !self.yhat.is_finite() {
            return bad("sample_rate and duration must be positive, yhat finite".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        let n = self.expected_len();
        if self.t.len() != n || self.y_v.len() != n {
            return bad(format!(
                "expected {n} samples, found t={} y_v={}",
                self.t.len(),
                self.y_v.len()
            ));
        }
        let dt = self.dt();
        for (k, &t) in self.t.iter().enumerate() {
            let want = k as f64 * dt;
            if (t - want).abs() > GRID_TOL * (1.0 + want.abs()) {
                return bad(format!("t[{k}] = {t} is off the uniform grid ({want})"));
            }
        }
        if self.y_v.iter().any(|y| !y.is_finite()) {
            return bad("non-finite y_v sample".into());
        }
        if let Some(u) = &self.u_joystick {
            if u.len() != n {
                return bad(format!(
                    "joystick channel has {} samples, expected {n}",
                    u.len()
                ));
            }
            if u.iter().any(|x| !(x.abs() <= 1.0)) {
                return bad("joystick sample outside [-1, 1]".into());
            }
        }
        Ok(())
    }

    /// Writes `<dir>/<name>.csv` and its sidecar; returns the CSV path.
    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf, RunLogError> {
        let path = dir.join(format!("{name}.csv"));
        self.write_to(&path)?;
        Ok(path)
    }

    pub fn write_to(&self, csv_path: &Path) -> Result<(), RunLogError> {
        let csv_err = |source| RunLogError::Csv {
            path: csv_path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(csv_path).map_err(csv_err)?;
        if self.u_joystick.is_some() {
            w.write_record(["t", "y_v", "u"]).map_err(csv_err)?;
        } else {
            w.write_record(["t", "y_v"]).map_err(csv_err)?;
        }
        for k in 0..self.t.len() {
            let mut rec = vec![fmt17(self.t[k]), fmt17(self.y_v[k])];
            if let Some(u) = &self.u_joystick {
                rec.push(fmt17(u[k]));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|source| RunLogError::Io {
            path: csv_path.display().to_string(),
            source,
        })?;
        let meta = RunMeta {
            yhat: self.yhat,
            sample_rate: self.sample_rate,
            duration: self.duration,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            schema_version: self.schema_version,
        };
        let mpath = meta_path(csv_path);
        let text = serde_json::to_string_pretty(&meta).map_err(|source| RunLogError::Meta {
            path: mpath.display().to_string(),
            source,
        })?;
        fs::write(&mpath, text + "\n").map_err(|source| RunLogError::Io {
            path: mpath.display().to_string(),
            source,
        })
    }

    /// Reads a run and validates it against the schema.
    pub fn read(csv_path: &Path) -> Result<Self, RunLogError> {
        let mpath = meta_path(csv_path);
        let text = fs::read_to_string(&mpath).map_err(|source| RunLogError::Io {
            path: mpath.display().to_string(),
            source,
        })?;
        let meta: RunMeta = serde_json::from_str(&text).map_err(|source| RunLogError::Meta {
            path: mpath.display().to_string(),
            source,
        })?;
        let csv_err = |source| RunLogError::Csv {
            path: csv_path.display().to_string(),
            source,
        };
        let mut r = csv::Reader::from_path(csv_path).map_err(csv_err)?;
        let header: Vec<String> = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_owned)
            .collect();
        let has_u = match header
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .as_slice()
        {
            ["t", "y_v"] => false,
            ["t", "y_v", "u"] => true,
            other => {
                return Err(RunLogError::Schema(format!(
                    "{}: header {other:?}, expected t,y_v[,u]",
                    csv_path.display()
                )))
            }
        };
        let (mut t, mut y, mut u) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let num = |i: usize| -> Result<f64, RunLogError> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        RunLogError::Schema(format!(
                            "{}: bad number in row {rec:?}",
                            csv_path.display()
                        ))
                    })
            };
            t.push(num(0)?);
            y.push(num(1)?);
            if has_u {
                u.push(num(2)?);
            }
        }
        let log = RunLog {
            yhat: meta.yhat,
            sample_rate: meta.sample_rate,
            duration: meta.duration,
            t,
            y_v: y,
            u_joystick: has_u.then_some(u),
            noise_sigma: meta.noise_sigma,
            seed: meta.seed,
            schema_version: meta.schema_version,
        };
        log.validate()?;
        Ok(log)
    }
}
