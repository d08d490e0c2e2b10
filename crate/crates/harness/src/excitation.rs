//! Identification datasets: multi-sine arm excitation and slow-cosine ball
//! excitation recorded in the oracle.

use std::f64::consts::PI;

use diffnea_core::dynamics::{rnea, KinematicTree, RealizedTree};
use diffnea_core::policy::JointTrajectory;
use diffnea_core::se3::{Mat3, Vec3};
use diffnea_core::sysid::ArmSample;
use diffnea_core::virtual_params::SpatialInertia;
use diffnea_core::Execution;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arm;
use crate::dataset::{joint_columns, vector_columns, RecordKind, TrajectoryDataset};
use crate::error::{HarnessError, Result};
use crate::filter::savitzky_golay;
use crate::oracle::Oracle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmExcitationConfig {
    pub duration: f64,
    pub rate: f64,
    /// Center posture of the excitation.
    pub center: Vec<f64>,
    /// Peak excursion per joint (rad), split evenly over the frequencies.
    pub amplitudes: Vec<f64>,
    /// Frequencies of the sine components (Hz).
    pub frequencies: Vec<f64>,
    /// Allowed excursion `[lo, hi]` per joint (rad).
    pub joint_limits: Vec<[f64; 2]>,
    /// Standard deviation of additive torque noise (N·m).
    pub torque_noise: f64,
    pub seed: u64,
}

impl Default for ArmExcitationConfig {
    fn default() -> Self {
        Self {
            duration: 40.0,
            rate: 500.0,
            center: arm::HOME_POSTURE.to_vec(),
            amplitudes: vec![1.2, 0.9, 1.4, 1.1],
            frequencies: vec![0.11, 0.23, 0.37, 0.53, 0.79, 1.13],
            joint_limits: vec![[-2.6, 2.6], [-2.0, 2.0], [-2.8, 2.8], [-0.9, 3.1]],
            torque_noise: 0.0,
            seed: 0,
        }
    }
}

/// Joint trajectory `q_j(t) = c_j + Σ_k (a_j/K) sin(2π f_k t + φ_jk)` with
/// phases drawn from `seed`.
pub struct MultiSine {
    center: Vec<f64>,
    amplitudes: Vec<f64>,
    frequencies: Vec<f64>,
    phases: Vec<Vec<f64>>,
}

impl MultiSine {
    pub fn new(cfg: &ArmExcitationConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let phases = cfg
            .amplitudes
            .iter()
            .map(|_| {
                cfg.frequencies
                    .iter()
                    .map(|_| rng.random_range(0.0..2.0 * PI))
                    .collect()
            })
            .collect();
        Self {
            center: cfg.center.clone(),
            amplitudes: cfg.amplitudes.clone(),
            frequencies: cfg.frequencies.clone(),
            phases,
        }
    }

    pub fn eval(&self, t: f64) -> [Vec<f64>; 3] {
        let n = self.center.len();
        let mut out = [self.center.clone(), vec![0.0; n], vec![0.0; n]];
        let k = self.frequencies.len().max(1) as f64;
        for j in 0..n {
            let a = self.amplitudes[j] / k;
            for (f, ph) in self.frequencies.iter().zip(&self.phases[j]) {
                let w = 2.0 * PI * f;
                let (s, c) = (w * t + ph).sin_cos();
                out[0][j] += a * s;
                out[1][j] += a * w * c;
                out[2][j] -= a * w * w * s;
            }
        }
        out
    }
}

impl ArmExcitationConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.center.len() != n || self.amplitudes.len() != n || self.joint_limits.len() != n {
            return Err(HarnessError::Validation(format!(
                "excitation schedule must cover all {n} joints"
            )));
        }
        if !(self.duration > 0.0 && self.rate > 0.0) || self.amplitudes.iter().any(|a| !(*a >= 0.0))
        {
            return Err(HarnessError::Validation(
                "duration, rate and amplitudes must be positive".into(),
            ));
        }
        if !(self.torque_noise >= 0.0) {
            return Err(HarnessError::Validation(
                "torque noise must be nonnegative".into(),
            ));
        }
        for j in 0..n {
            let [lo, hi] = self.joint_limits[j];
            let (a, c) = (self.amplitudes[j], self.center[j]);
            if c - a < lo || c + a > hi {
                return Err(HarnessError::Validation(format!(
                    "joint {j} excursion [{:.3}, {:.3}] leaves its limits [{lo}, {hi}]",
                    c - a,
                    c + a
                )));
            }
        }
        Ok(())
    }
}

/// Torques from the true model along a multi-sine trajectory, with optional
/// Gaussian torque noise. Accelerations are stored exactly.
pub fn generate_arm_excitation(
    truth: &KinematicTree,
    cfg: &ArmExcitationConfig,
) -> Result<TrajectoryDataset> {
    let n = truth.dof();
    cfg.validate(n)?;
    let rows = (cfg.duration * cfg.rate).round() as usize;
    let sine = MultiSine::new(cfg);
    let rt = truth.realize();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let noise =
        Normal::new(0.0, cfg.torque_noise).map_err(|e| HarnessError::Validation(e.to_string()))?;
    let mut columns = vec!["t".to_string()];
    for p in ["q", "qd", "qdd", "u"] {
        columns.extend(joint_columns(p, n));
    }
    let mut ds = TrajectoryDataset::new(RecordKind::ArmExcitation, cfg.rate, columns);
    for i in 0..rows {
        let t = i as f64 / cfg.rate;
        let [q, qd, qdd] = sine.eval(t);
        let u = rnea(&rt, &q, &qd, &qdd)?.torques;
        let mut row = vec![t];
        row.extend(&q);
        row.extend(&qd);
        row.extend(&qdd);
        row.extend(u.iter().map(|x| {
            x + if cfg.torque_noise > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            }
        }));
        ds.rows.push(row);
    }
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseParameterReport {
    /// Standard parameters (10 inertial + friction per link).
    pub parameters: usize,
    /// Numerical rank of the regressor.
    pub rank: usize,
    /// Condition number of the column-normalized base regressor.
    pub condition: f64,
}

/// Torques are linear in the standard parameters `(m, h, J, d)` of every
/// link. Build that regressor column by column, pick base columns by
/// pivoted QR and report their condition number.
pub fn base_parameter_condition(
    tree: &KinematicTree,
    samples: &[ArmSample],
) -> Result<BaseParameterReport> {
    let n = tree.dof();
    let per_link = 11;
    let cols = n * per_link;
    let base = tree.realize();
    let mut y = DMatrix::zeros(samples.len() * n, cols);
    for c in 0..cols {
        let mut rt: RealizedTree<'_, f64> = base.clone();
        rt.inertias
            .iter_mut()
            .for_each(|i| *i = SpatialInertia::zeros());
        rt.friction.iter_mut().for_each(|d| *d = 0.0);
        let (link, k) = (c / per_link, c % per_link);
        let inertia = &mut rt.inertias[link];
        let mut j = [[0.0; 3]; 3];
        match k {
            0 => inertia.mass = 1.0,
            1..=3 => {
                inertia.first_moment =
                    Vec3::from_f64(std::array::from_fn(|a| if a == k - 1 { 1.0 } else { 0.0 }))
            }
            4..=6 => j[k - 4][k - 4] = 1.0,
            7 => (j[0][1], j[1][0]) = (1.0, 1.0),
            8 => (j[0][2], j[2][0]) = (1.0, 1.0),
            9 => (j[1][2], j[2][1]) = (1.0, 1.0),
            _ => rt.friction[link] = 1.0,
        }
        inertia.rot_inertia = Mat3::from_rows(j);
        let torques = Execution::Parallel.map_slice(samples, |s| {
            rnea(&rt, &s.q, &s.qd, &s.qdd).map(|r| r.torques)
        });
        for (i, tau) in torques.into_iter().enumerate() {
            for (a, v) in tau?.into_iter().enumerate() {
                y[(i * n + a, c)] = v;
            }
        }
    }
    let norms: Vec<f64> = (0..cols).map(|c| y.column(c).norm()).collect();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..cols).filter(|&c| norms[c] > 1e-12 * max).collect();
    let scaled = DMatrix::from_fn(y.nrows(), keep.len(), |r, c| {
        y[(r, keep[c])] / norms[keep[c]]
    });
    let qr = scaled.clone().col_piv_qr();
    let r = qr.r();
    let r0 = r[(0, 0)].abs();
    let rank = (0..keep.len().min(r.nrows()))
        .take_while(|&i| r[(i, i)].abs() > 1e-9 * r0)
        .count();
    let mut order = DMatrix::from_fn(1, keep.len(), |_, c| c as f64);
    qr.p().permute_columns(&mut order);
    let chosen: Vec<usize> = (0..rank).map(|i| order[(0, i)] as usize).collect();
    let basis = DMatrix::from_fn(scaled.nrows(), rank, |r, c| scaled[(r, chosen[c])]);
    let sv = basis.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    Ok(BaseParameterReport {
        parameters: cols,
        rank,
        condition: hi / lo,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BallExcitationConfig {
    pub duration: f64,
    pub rate: f64,
    /// Cosine excursion `q_j = home_j + a_j (1 − cos 2π f_j t)`.
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub repeats: usize,
    /// Standard deviation of ball position noise (m).
    pub position_noise: f64,
    /// Savitzky–Golay window for ball velocity and acceleration (samples).
    pub window: usize,
    /// Amplitude scale applied after a contact, and how often to retry.
    pub backoff: f64,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for BallExcitationConfig {
    fn default() -> Self {
        Self {
            duration: 40.0,
            rate: 500.0,
            amplitudes: vec![0.2, 0.3, 0.15, 0.3],
            frequencies: vec![0.17, 1.0, 0.29, 1.2],
            repeats: 5,
            position_noise: 0.0,
            window: 21,
            backoff: 0.8,
            max_retries: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallExcitationReport {
    /// Fraction of samples with the chain within 0.5% of full extension.
    pub taut_fraction: f64,
    /// Fraction of recorded samples with the ball inside the cup.
    pub in_cup_fraction: f64,
    pub retries: usize,
    pub amplitude_scale: f64,
    pub min_clearance: f64,
    pub max_segment_error: f64,
    /// Recorded time, counting every repeat (s).
    pub recorded_seconds: f64,
}

/// Slow cosine schedule sampled at the oracle time step.
pub fn cosine_schedule(
    home: &[f64],
    amplitudes: &[f64],
    frequencies: &[f64],
    duration: f64,
    dt: f64,
) -> JointTrajectory {
    let steps = (duration / dt).round() as usize + 1;
    let n = home.len();
    let mut tr = JointTrajectory {
        dt,
        q: Vec::with_capacity(steps),
        qd: Vec::with_capacity(steps),
        qdd: Vec::with_capacity(steps),
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        let (mut q, mut qd, mut qdd) = (home.to_vec(), vec![0.0; n], vec![0.0; n]);
        for j in 0..n {
            let w = 2.0 * PI * frequencies[j];
            let (s, c) = (w * t).sin_cos();
            q[j] += amplitudes[j] * (1.0 - c);
            qd[j] = amplitudes[j] * w * s;
            qdd[j] = amplitudes[j] * w * w * c;
        }
        tr.q.push(q);
        tr.qd.push(qd);
        tr.qdd.push(qdd);
    }
    tr
}

/// Record the ball in the oracle while the arm tracks a slow cosine
/// schedule with `controller` as its feedforward model. Each repeat adds
/// fresh position noise; repeats are averaged pointwise before velocities
/// and accelerations are obtained by Savitzky–Golay differentiation.
/// A ball that comes closer to the arm than the oracle clearance triggers a
/// retry with reduced amplitudes.
pub fn generate_ball_excitation(
    oracle: &Oracle,
    controller: &KinematicTree,
    cfg: &BallExcitationConfig,
) -> Result<(TrajectoryDataset, BallExcitationReport)> {
    let n = oracle.arm.dof();
    if cfg.amplitudes.len() != n || cfg.frequencies.len() != n {
        return Err(HarnessError::Validation(format!(
            "ball schedule must cover all {n} joints"
        )));
    }
    if cfg.repeats == 0
        || !(cfg.position_noise >= 0.0)
        || !(cfg.rate > 0.0)
        || !(cfg.duration > 0.0)
    {
        return Err(HarnessError::Validation(
            "ball excitation needs repeats ≥ 1, noise ≥ 0 and positive rate".into(),
        ));
    }
    let dt = oracle.config.dt;
    let sub = (1.0 / (cfg.rate * dt)).round() as usize;
    if sub == 0 || ((sub as f64) * dt * cfg.rate - 1.0).abs() > 1e-9 {
        return Err(HarnessError::Validation(format!(
            "rate {} Hz must divide the oracle rate",
            cfg.rate
        )));
    }
    let mut scale = 1.0;
    let mut retries = 0;
    let rollout = loop {
        let amps: Vec<f64> = cfg.amplitudes.iter().map(|a| a * scale).collect();
        let desired = cosine_schedule(
            &arm::HOME_POSTURE,
            &amps,
            &cfg.frequencies,
            cfg.duration,
            dt,
        );
        let r = oracle.rollout(&desired, controller)?;
        if r.min_clearance >= oracle.config.clearance {
            break r;
        }
        if retries == cfg.max_retries {
            return Err(HarnessError::Validation(format!(
                "ball touches the arm (clearance {:.4} m) even at amplitude scale {scale:.3}",
                r.min_clearance
            )));
        }
        retries += 1;
        scale *= cfg.backoff;
    };
    // the oracle is deterministic, so later repeats differ only in noise
    for _ in 1..cfg.repeats {
        oracle.rollout(
            &cosine_schedule(
                &arm::HOME_POSTURE,
                &cfg.amplitudes.iter().map(|a| a * scale).collect::<Vec<_>>(),
                &cfg.frequencies,
                cfg.duration,
                dt,
            ),
            controller,
        )?;
    }
    let rows = (cfg.duration * cfg.rate).round() as usize;
    let idx: Vec<usize> = (0..rows).map(|i| i * sub).collect();
    let noise = Normal::new(0.0, cfg.position_noise)
        .map_err(|e| HarnessError::Validation(e.to_string()))?;
    let mut mean = vec![[0.0; 3]; rows];
    for rep in 0..cfg.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rep as u64);
        for (i, &k) in idx.iter().enumerate() {
            let x = rollout.ball[k].position.to_array();
            for a in 0..3 {
                let e = if cfg.position_noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                mean[i][a] += (x[a] + e) / cfg.repeats as f64;
            }
        }
    }
    let h = 1.0 / cfg.rate;
    let mut derivs = Vec::with_capacity(3);
    for a in 0..3 {
        let x: Vec<f64> = mean.iter().map(|m| m[a]).collect();
        derivs.push((
            savitzky_golay(&x, h, cfg.window, 3, 1)?,
            savitzky_golay(&x, h, cfg.window, 3, 2)?,
        ));
    }
    let mut columns = vec!["t".to_string()];
    for p in ["q", "qd", "qdd"] {
        columns.extend(joint_columns(p, n));
    }
    for p in ["xb", "xbd", "xbdd"] {
        columns.extend(vector_columns(p));
    }
    let mut ds = TrajectoryDataset::new(RecordKind::BallExcitation, cfg.rate, columns);
    let length = oracle.config.string_length;
    let mut taut = 0;
    let mut caught = 0;
    for (i, &k) in idx.iter().enumerate() {
        let mut row = vec![i as f64 * h];
        row.extend(&rollout.q[k]);
        row.extend(&rollout.qd[k]);
        row.extend(&rollout.qdd[k]);
        row.extend(mean[i]);
        row.extend((0..3).map(|a| derivs[a].0[i]));
        row.extend((0..3).map(|a| derivs[a].1[i]));
        ds.rows.push(row);
        if (rollout.ball[k].position - rollout.cups[k].position).norm() >= 0.995 * length {
            taut += 1;
        }
        if rollout.in_cup[k] {
            caught += 1;
        }
    }
    let report = BallExcitationReport {
        taut_fraction: taut as f64 / rows as f64,
        in_cup_fraction: caught as f64 / rows as f64,
        retries,
        amplitude_scale: scale,
        min_clearance: rollout.min_clearance,
        max_segment_error: rollout.max_segment_error,
        recorded_seconds: cfg.duration * cfg.repeats as f64,
    };
    Ok((ds, report))
}
