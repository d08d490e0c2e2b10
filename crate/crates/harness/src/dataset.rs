//! Trajectory datasets: a CSV table plus a JSON manifest describing units,
//! rate and columns. Values are written with 17 significant digits so a
//! write → read → write cycle is byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use diffnea_core::dynamics::{forward_kinematics, KinematicTree};
use diffnea_core::se3::Vec3;
use diffnea_core::string::BallState;
use diffnea_core::sysid::{ArmSample, BallSample};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::filter::savitzky_golay;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    ArmExcitation,
    BallExcitation,
    /// Oracle execution of a policy.
    Rollout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub kind: RecordKind,
    pub rate: f64,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: RecordKind,
    pub rate_hz: f64,
    pub rows: usize,
    pub data_file: String,
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

/// Names of the per-joint columns `q0…`, `qd0…`, `qdd0…`, `u0…`.
pub fn joint_columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|j| format!("{prefix}{j}")).collect()
}

pub fn vector_columns(prefix: &str) -> Vec<String> {
    ["x", "y", "z"]
        .iter()
        .map(|a| format!("{prefix}_{a}"))
        .collect()
}

fn unit_of(name: &str) -> &'static str {
    let stem = name.trim_end_matches(|c: char| c.is_ascii_digit());
    match stem {
        "t" => "s",
        "q" => "rad",
        "qd" => "rad/s",
        "qdd" => "rad/s^2",
        "u" => "N*m",
        _ if name.starts_with("xbdd_") => "m/s^2",
        _ if name.starts_with("xbd_") => "m/s",
        _ if name.starts_with("xb_") || name.starts_with("xc_") => "m",
        _ => "1",
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

impl TrajectoryDataset {
    pub fn new(kind: RecordKind, rate: f64, columns: Vec<String>) -> Self {
        Self {
            kind,
            rate,
            columns,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Recorded time span, `rows / rate` (s).
    pub fn duration(&self) -> f64 {
        self.rows.len() as f64 / self.rate
    }

    pub fn has(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c == name)
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| HarnessError::Validation(format!("dataset is missing column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    fn gather(&self, names: &[String], row: usize) -> Result<Vec<f64>> {
        names
            .iter()
            .map(|n| Ok(self.rows[row][self.index(n)?]))
            .collect()
    }

    /// Number of joints, from the `q<j>` columns.
    pub fn dof(&self) -> usize {
        (0..).take_while(|j| self.has(&format!("q{j}"))).count()
    }

    /// Strictly increasing, uniformly spaced timestamps matching the rate;
    /// finite values; consistent row widths.
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return Err(HarnessError::Validation(format!(
                "sample rate must be positive, got {}",
                self.rate
            )));
        }
        let t = self.index("t")?;
        let dt = 1.0 / self.rate;
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.columns.len() {
                return Err(HarnessError::Validation(format!(
                    "row {i} has {} values for {} columns",
                    r.len(),
                    self.columns.len()
                )));
            }
            if let Some(k) = r.iter().position(|x| !x.is_finite()) {
                return Err(HarnessError::Validation(format!(
                    "row {i}, column `{}` is not finite",
                    self.columns[k]
                )));
            }
            if i > 0 {
                let step = r[t] - self.rows[i - 1][t];
                if !(step > 0.0) || (step - dt).abs() > 1e-6 * dt {
                    return Err(HarnessError::Validation(format!(
                        "timestamps must be uniform at {} Hz (row {i} steps by {step})",
                        self.rate
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn manifest(&self, data_file: &str) -> Manifest {
        Manifest {
            version: FORMAT_VERSION,
            kind: self.kind,
            rate_hz: self.rate,
            rows: self.rows.len(),
            data_file: data_file.to_string(),
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSpec {
                    name: c.clone(),
                    unit: unit_of(c).into(),
                })
                .collect(),
            notes: BTreeMap::new(),
        }
    }

    /// Write `<stem>.csv` and `<stem>.json` into `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut w =
            csv::Writer::from_path(&csv_path).map_err(|e| HarnessError::format(&csv_path, e))?;
        w.write_record(&self.columns)
            .map_err(|e| HarnessError::format(&csv_path, e))?;
        for r in &self.rows {
            w.write_record(r.iter().map(|&x| fmt(x)))
                .map_err(|e| HarnessError::format(&csv_path, e))?;
        }
        w.flush().map_err(|e| HarnessError::io(&csv_path, e))?;
        let manifest_path = dir.join(format!("{stem}.json"));
        crate::report::write_json(&manifest_path, &self.manifest(&format!("{stem}.csv")))?;
        Ok(manifest_path)
    }

    /// Read a dataset from its manifest.
    pub fn read(manifest_path: &Path) -> Result<Self> {
        let m: Manifest = crate::report::read_json(manifest_path)?;
        if m.version != FORMAT_VERSION {
            return Err(HarnessError::format(
                manifest_path,
                format!("unsupported format version {}", m.version),
            ));
        }
        let csv_path = manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&m.data_file);
        let mut r =
            csv::Reader::from_path(&csv_path).map_err(|e| HarnessError::format(&csv_path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| HarnessError::format(&csv_path, e))?
            .iter()
            .map(String::from)
            .collect();
        let expected: Vec<String> = m.columns.iter().map(|c| c.name.clone()).collect();
        if header != expected {
            return Err(HarnessError::format(
                &csv_path,
                "CSV header does not match the manifest",
            ));
        }
        let mut rows = Vec::with_capacity(m.rows);
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| HarnessError::format(&csv_path, e))?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| HarnessError::format(&csv_path, format!("row {i}: {e}")))?;
            rows.push(row);
        }
        if rows.len() != m.rows {
            return Err(HarnessError::format(
                &csv_path,
                format!("expected {} rows, found {}", m.rows, rows.len()),
            ));
        }
        let ds = Self {
            kind: m.kind,
            rate: m.rate_hz,
            columns: expected,
            rows,
        };
        ds.validate()
            .map_err(|e| HarnessError::format(&csv_path, e))?;
        Ok(ds)
    }

    /// Rows as arm samples. Without a `qdd` column, accelerations come from
    /// Savitzky–Golay differentiation of `qd` over `window` samples.
    pub fn arm_samples(&self, window: Option<usize>) -> Result<Vec<ArmSample>> {
        let n = self.dof();
        if n == 0 {
            return Err(HarnessError::Validation(
                "dataset has no joint columns".into(),
            ));
        }
        let (q, qd, u) = (
            joint_columns("q", n),
            joint_columns("qd", n),
            joint_columns("u", n),
        );
        let qdd_names = joint_columns("qdd", n);
        let qdd: Vec<Vec<f64>> = if self.has(&qdd_names[0]) {
            (0..self.len())
                .map(|i| self.gather(&qdd_names, i))
                .collect::<Result<_>>()?
        } else {
            let Some(w) = window else {
                return Err(diffnea_core::Error::MissingColumn("qdd").into());
            };
            let per_joint: Vec<Vec<f64>> = qd
                .iter()
                .map(|c| savitzky_golay(&self.column(c)?, 1.0 / self.rate, w, 2, 1))
                .collect::<Result<_>>()?;
            (0..self.len())
                .map(|i| per_joint.iter().map(|c| c[i]).collect())
                .collect()
        };
        (0..self.len())
            .map(|i| {
                Ok(ArmSample {
                    q: self.gather(&q, i)?,
                    qd: self.gather(&qd, i)?,
                    qdd: qdd[i].clone(),
                    u: self
                        .gather(&u, i)
                        .map_err(|_| diffnea_core::Error::MissingColumn("u"))?,
                })
            })
            .collect()
    }

    /// Rows as ball samples; the last-link motion comes from `tree`.
    pub fn ball_samples(&self, tree: &KinematicTree) -> Result<Vec<BallSample>> {
        let n = tree.dof();
        let (q, qd, qdd) = (
            joint_columns("q", n),
            joint_columns("qd", n),
            joint_columns("qdd", n),
        );
        let (xb, xbd, xbdd) = (
            vector_columns("xb"),
            vector_columns("xbd"),
            vector_columns("xbdd"),
        );
        let rt = tree.realize();
        let v3 = |v: Vec<f64>| Vec3::new(v[0], v[1], v[2]);
        (0..self.len())
            .map(|i| {
                let links = forward_kinematics(
                    &rt,
                    &self.gather(&q, i)?,
                    &self.gather(&qd, i)?,
                    &self.gather(&qdd, i)?,
                )?;
                Ok(BallSample {
                    link: *links.last().expect("tree has links"),
                    ball: BallState::new(v3(self.gather(&xb, i)?), v3(self.gather(&xbd, i)?)),
                    ball_acc: v3(self.gather(&xbdd, i)?),
                })
            })
            .collect()
    }
}
