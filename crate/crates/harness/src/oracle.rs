//! Ground-truth environment: the true arm under a computed-torque tracking
//! controller, carrying a cup with a ball on a chain of point masses.
//!
//! The chain is simulated with position-based dynamics. Each substep
//! predicts particle positions under gravity and damping, then projects the
//! segment-length constraints with a few Newton iterations on the
//! tridiagonal system `J W Jᵀ Δλ = −C`, which solves them to round-off.
//! A ball that drops through the cup mouth is kept inside the cup.

use std::sync::atomic::{AtomicUsize, Ordering};

use diffnea_core::dynamics::{aba, forward_kinematics, rnea, KinematicTree, LinkMotion};
use diffnea_core::policy::{JointTrajectory, RolloutStates};
use diffnea_core::se3::Vec3;
use diffnea_core::string::{semi_implicit_euler, BallState, CupMotion};
use diffnea_core::sysid::cup_motion;
use diffnea_core::virtual_params::VirtualKinematicParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arm;
use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub segments: usize,
    pub substeps: usize,
    /// Maximum Newton iterations of the constraint projection per substep.
    pub iterations: usize,
    /// Mass of the chain itself, spread evenly over the non-ball particles (kg).
    pub chain_mass: f64,
    pub ball_mass: f64,
    /// Linear velocity damping of the chain particles (1/s).
    pub damping: f64,
    /// Linear drag of the ball (1/s).
    pub ball_drag: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            segments: 20,
            substeps: 4,
            iterations: 20,
            chain_mass: 5e-4,
            ball_mass: arm::BALL_MASS,
            damping: 0.05,
            ball_drag: 0.05,
        }
    }
}

/// Catch geometry: a cylinder along the cup normal starting at the string
/// anchor on the cup bottom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CupGeometry {
    pub radius: f64,
    pub depth: f64,
}

impl Default for CupGeometry {
    fn default() -> Self {
        Self {
            radius: 0.04,
            depth: 0.08,
        }
    }
}

impl CupGeometry {
    /// Axial and radial coordinates of `x` in the cup frame.
    pub fn coordinates(&self, cup: &CupMotion, x: &Vec3<f64>) -> (f64, f64) {
        let d = *x - cup.position;
        let axial = d.dot(&cup.normal);
        let radial = (d - cup.normal.scale(axial)).norm();
        (axial, radial)
    }

    pub fn contains(&self, cup: &CupMotion, x: &Vec3<f64>) -> bool {
        let (a, r) = self.coordinates(cup, x);
        (0.0..=self.depth).contains(&a) && r <= self.radius
    }

    /// Clamp `x` into the cup (walls and bottom; the mouth stays open).
    fn confine(&self, cup: &CupMotion, x: &Vec3<f64>) -> Vec3<f64> {
        let d = *x - cup.position;
        let a = d.dot(&cup.normal);
        let radial = d - cup.normal.scale(a);
        let rn = radial.norm();
        let radial = if rn > self.radius {
            radial.scale(self.radius / rn)
        } else {
            radial
        };
        cup.position + cup.normal.scale(a.max(0.0)) + radial
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub string_length: f64,
    pub chain: ChainConfig,
    pub cup: CupGeometry,
    pub dt: f64,
    /// Minimum allowed distance between ball and arm links (m).
    pub clearance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            string_length: 0.4,
            chain: ChainConfig::default(),
            cup: CupGeometry::default(),
            dt: 1e-3,
            clearance: 0.03,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.chain;
        let ok = self.string_length > 0.0
            && c.segments >= 1
            && c.substeps >= 1
            && c.iterations >= 1
            && c.chain_mass >= 0.0
            && c.ball_mass > 0.0
            && c.damping >= 0.0
            && c.ball_drag >= 0.0
            && self.cup.radius > 0.0
            && self.cup.depth > 0.0
            && self.dt > 0.0;
        if !ok {
            return Err(HarnessError::Validation(format!(
                "invalid oracle configuration {self:?}"
            )));
        }
        if c.segments > 1 && c.chain_mass <= 0.0 {
            return Err(HarnessError::Validation(
                "a multi-segment chain needs positive mass".into(),
            ));
        }
        Ok(())
    }
}

/// Execution noise for repeated runs of the same reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    /// Standard deviation of the torque added to each joint command (N·m).
    pub torque_std: f64,
    pub seed: u64,
}

/// Positions and velocities of the chain particles; the last one is the ball.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub positions: Vec<Vec3<f64>>,
    pub velocities: Vec<Vec3<f64>>,
    pub in_cup: bool,
}

impl ChainState {
    /// Straight chain hanging below `anchor`, at rest.
    pub fn hanging(anchor: Vec3<f64>, segments: usize, length: f64) -> Self {
        let l = length / segments as f64;
        Self {
            positions: (1..=segments)
                .map(|i| anchor + Vec3::new(0.0, 0.0, -l * i as f64))
                .collect(),
            velocities: vec![Vec3::zeros(); segments],
            in_cup: false,
        }
    }

    pub fn ball(&self) -> BallState {
        BallState::new(
            *self.positions.last().expect("chain has a ball"),
            *self.velocities.last().expect("ball"),
        )
    }

    /// Largest deviation of a segment length from `length / segments`.
    pub fn segment_error(&self, anchor: &Vec3<f64>, length: f64) -> f64 {
        let l = length / self.positions.len() as f64;
        let mut prev = *anchor;
        let mut worst: f64 = 0.0;
        for x in &self.positions {
            worst = worst.max(((*x - prev).norm() - l).abs());
            prev = *x;
        }
        worst
    }

    /// Sum of segment lengths.
    pub fn total_length(&self, anchor: &Vec3<f64>) -> f64 {
        let mut prev = *anchor;
        let mut sum = 0.0;
        for x in &self.positions {
            sum += (*x - prev).norm();
            prev = *x;
        }
        sum
    }
}

/// Unit direction from `a` to `b`, straight down when they coincide.
fn unit(a: &Vec3<f64>, b: &Vec3<f64>) -> Vec3<f64> {
    let d = *b - *a;
    let len = d.norm();
    if len > 1e-12 {
        d.scale(1.0 / len)
    } else {
        Vec3::new(0.0, 0.0, -1.0)
    }
}

/// Solve the chain length constraints by Newton iterations and return the
/// largest remaining violation. With `frozen = Some((old, old_anchor))` the
/// correction directions are the segment directions of the previous
/// configuration (SHAKE, second order); with `None` they follow the current
/// iterate (nearest-point projection, robust but dissipative). `w` holds
/// inverse masses; the anchor is immovable.
fn project_chain(
    x: &mut [Vec3<f64>],
    anchor: &Vec3<f64>,
    frozen: Option<(&[Vec3<f64>], &Vec3<f64>)>,
    l: f64,
    w: &[f64],
    iterations: usize,
) -> f64 {
    let n = x.len();
    let tol = 1e-14 * l.max(1.0);
    let mut d: Vec<Vec3<f64>> = match frozen {
        Some((old, old_anchor)) => (0..n)
            .map(|i| unit(if i == 0 { old_anchor } else { &old[i - 1] }, &old[i]))
            .collect(),
        None => vec![Vec3::zeros(); n],
    };
    let mut nrm = vec![Vec3::zeros(); n];
    let (mut lower, mut diag, mut upper, mut rhs) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut lambda = vec![0.0; n];
    let violation = |x: &[Vec3<f64>], nrm: &mut [Vec3<f64>], rhs: &mut [f64]| {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let prev = if i == 0 { *anchor } else { x[i - 1] };
            let c = (x[i] - prev).norm() - l;
            nrm[i] = unit(&prev, &x[i]);
            rhs[i] = -c;
            worst = worst.max(c.abs());
        }
        worst
    };
    let mut worst = violation(x, &mut nrm, &mut rhs);
    for _ in 0..iterations {
        if !(worst >= tol) {
            break;
        }
        if frozen.is_none() {
            d.copy_from_slice(&nrm);
        }
        for i in 0..n {
            let w_prev = if i == 0 { 0.0 } else { w[i - 1] };
            diag[i] = (w[i] + w_prev) * nrm[i].dot(&d[i]);
            lower[i] = if i > 0 {
                -w_prev * nrm[i].dot(&d[i - 1])
            } else {
                0.0
            };
            upper[i] = if i + 1 < n {
                -w[i] * nrm[i].dot(&d[i + 1])
            } else {
                0.0
            };
        }
        // tridiagonal Newton system, Thomas algorithm
        for i in 1..n {
            let m = lower[i] / diag[i - 1];
            diag[i] -= m * upper[i - 1];
            rhs[i] -= m * rhs[i - 1];
        }
        lambda[n - 1] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            lambda[i] = (rhs[i] - upper[i] * lambda[i + 1]) / diag[i];
        }
        for i in 0..n {
            let mut dx = d[i].scale(lambda[i]);
            if i + 1 < n {
                dx = dx - d[i + 1].scale(lambda[i + 1]);
            }
            x[i] = x[i] + dx.scale(w[i]);
        }
        worst = violation(x, &mut nrm, &mut rhs);
    }
    worst
}

/// Ground-truth environment. Every rollout increments an access counter so
/// tests can prove that training never touched it.
#[derive(Debug)]
pub struct Oracle {
    pub arm: KinematicTree,
    pub cup_offset: VirtualKinematicParams,
    pub config: OracleConfig,
    accesses: AtomicUsize,
}

impl Clone for Oracle {
    fn clone(&self) -> Self {
        Self {
            arm: self.arm.clone(),
            cup_offset: self.cup_offset,
            config: self.config,
            accesses: AtomicUsize::new(self.accesses()),
        }
    }
}

/// Everything recorded during one oracle rollout, one entry per time step.
#[derive(Clone, Debug)]
pub struct OracleRollout {
    pub dt: f64,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    pub qdd: Vec<Vec<f64>>,
    pub links: Vec<LinkMotion<f64>>,
    pub cups: Vec<CupMotion>,
    pub ball: Vec<BallState>,
    pub in_cup: Vec<bool>,
    /// Worst segment-length error over the rollout (m).
    pub max_segment_error: f64,
    /// Smallest ball-to-arm distance over the rollout (m).
    pub min_clearance: f64,
}

impl OracleRollout {
    /// Longest uninterrupted stay of the ball in the cup (s).
    pub fn longest_in_cup(&self) -> f64 {
        let (mut best, mut run) = (0usize, 0usize);
        for &c in &self.in_cup {
            run = if c { run + 1 } else { 0 };
            best = best.max(run);
        }
        best as f64 * self.dt
    }

    /// Reward inputs over the first `steps` samples, from measured joints.
    pub fn states(&self, steps: usize) -> RolloutStates {
        crate::model::reward_states(&self.q, &self.qd, &self.cups, &self.ball, steps)
    }
}

impl Oracle {
    pub fn new(
        arm: KinematicTree,
        cup_offset: VirtualKinematicParams,
        config: OracleConfig,
    ) -> Result<Self> {
        config.validate()?;
        arm.validate()?;
        Ok(Self {
            arm,
            cup_offset,
            config,
            accesses: AtomicUsize::new(0),
        })
    }

    /// True arm and cup with the given string length and default settings.
    pub fn standard(length: f64) -> Result<Self> {
        Self::new(
            arm::true_arm(),
            arm::cup_offset(arm::CUP_TRANSLATION),
            OracleConfig {
                string_length: length,
                ..OracleConfig::default()
            },
        )
    }

    pub fn accesses(&self) -> usize {
        self.accesses.load(Ordering::SeqCst)
    }

    fn inverse_masses(&self) -> Vec<f64> {
        let c = &self.config.chain;
        let n = c.segments;
        let mut w = vec![0.0; n];
        if n > 1 {
            let m = c.chain_mass / (n - 1) as f64;
            w[..n - 1].iter_mut().for_each(|x| *x = 1.0 / m);
        }
        w[n - 1] = 1.0 / c.ball_mass;
        w
    }

    /// Advance the chain by `dt` while the anchor moves from `cup0` to
    /// `cup1` (linear interpolation over substeps).
    pub fn oracle_step(
        &self,
        state: &mut ChainState,
        cup0: &CupMotion,
        cup1: &CupMotion,
        dt: f64,
    ) -> Result<()> {
        if !(dt > 0.0) {
            return Err(HarnessError::Validation(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let c = &self.config.chain;
        let n = state.positions.len();
        let w = self.inverse_masses();
        let l = self.config.string_length / n as f64;
        let g = Vec3::from_f64(self.arm.gravity);
        let h = dt / c.substeps as f64;
        for s in 0..c.substeps {
            let lerp = |f: f64| cup0.position.scale(1.0 - f) + cup1.position.scale(f);
            let old_anchor = lerp(s as f64 / c.substeps as f64);
            let anchor = lerp((s + 1) as f64 / c.substeps as f64);
            let cup = CupMotion {
                position: anchor,
                ..*cup1
            };
            let old = state.positions.clone();
            for i in 0..n {
                let damp = if i + 1 == n { c.ball_drag } else { c.damping };
                let a = g - state.velocities[i].scale(damp);
                let (mut x, mut v) = (
                    state.positions[i].to_array(),
                    state.velocities[i].to_array(),
                );
                semi_implicit_euler(&mut x, &mut v, &a.to_array(), h);
                state.positions[i] = Vec3::from_f64(x);
            }
            let ball = n - 1;
            let was_above = {
                let (a, r) = self.config.cup.coordinates(&cup, &old[ball]);
                a > self.config.cup.depth && r <= self.config.cup.radius
            };
            let inside_now = self.config.cup.contains(&cup, &state.positions[ball]);
            if state.in_cup || (was_above && inside_now) {
                state.in_cup = true;
                state.positions[ball] = self.config.cup.confine(&cup, &state.positions[ball]);
            }
            let predicted = state.positions.clone();
            let left = project_chain(
                &mut state.positions,
                &anchor,
                Some((&old, &old_anchor)),
                l,
                &w,
                c.iterations,
            );
            // SHAKE fails when segments turn fast within a substep
            if !(left < 1e-9 * l) {
                state.positions = predicted;
                project_chain(&mut state.positions, &anchor, None, l, &w, c.iterations);
            }
            for i in 0..n {
                state.velocities[i] = (state.positions[i] - old[i]).scale(1.0 / h);
            }
            if state.in_cup {
                let (a, _) = self.config.cup.coordinates(&cup, &state.positions[ball]);
                if a > self.config.cup.depth {
                    state.in_cup = false;
                }
            }
        }
        Ok(())
    }

    /// Track `desired` with the computed-torque controller whose feedforward
    /// uses `controller` (the model the robot believes in) and simulate the
    /// ball. Counts as one oracle access.
    pub fn rollout(
        &self,
        desired: &JointTrajectory,
        controller: &KinematicTree,
    ) -> Result<OracleRollout> {
        self.rollout_with(desired, controller, &Disturbance::default())
    }

    /// [`Oracle::rollout`] with white torque noise added to the commands.
    pub fn rollout_with(
        &self,
        desired: &JointTrajectory,
        controller: &KinematicTree,
        disturbance: &Disturbance,
    ) -> Result<OracleRollout> {
        self.accesses.fetch_add(1, Ordering::SeqCst);
        if !(disturbance.torque_std >= 0.0) {
            return Err(HarnessError::Validation(
                "torque noise must be nonnegative".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(disturbance.seed);
        let n = self.arm.dof();
        if controller.dof() != n || desired.q.first().is_some_and(|q| q.len() != n) {
            return Err(HarnessError::Validation(
                "controller and trajectory must match the arm".into(),
            ));
        }
        if desired.is_empty() {
            return Err(HarnessError::Validation("empty trajectory".into()));
        }
        let dt = desired.dt;
        let truth = self.arm.realize();
        let model = controller.realize();
        let steps = desired.len();
        let mut q = desired.q[0].clone();
        let mut qd = desired.qd[0].clone();
        let mut out = OracleRollout {
            dt,
            q: Vec::with_capacity(steps),
            qd: Vec::with_capacity(steps),
            qdd: Vec::with_capacity(steps),
            links: Vec::with_capacity(steps),
            cups: Vec::with_capacity(steps),
            ball: Vec::with_capacity(steps),
            in_cup: Vec::with_capacity(steps),
            max_segment_error: 0.0,
            min_clearance: f64::INFINITY,
        };
        let string = arm_string(self.cup_offset)?;
        for k in 0..steps {
            let ff = rnea(&model, &desired.q[k], &desired.qd[k], &desired.qdd[k])?.torques;
            let u: Vec<f64> = (0..n)
                .map(|j| {
                    let noise = if disturbance.torque_std > 0.0 {
                        disturbance.torque_std * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    ff[j]
                        + arm::KP[j] * (desired.q[k][j] - q[j])
                        + arm::KD[j] * (desired.qd[k][j] - qd[j])
                        + noise
                })
                .collect();
            let qdd = aba(&truth, &q, &qd, &u)?.qdd;
            let links = forward_kinematics(&truth, &q, &qd, &qdd)?;
            let last = *links.last().expect("arm has links");
            out.cups.push(cup_motion(&last, &string));
            out.links.push(last);
            out.q.push(q.clone());
            out.qd.push(qd.clone());
            out.qdd.push(qdd.clone());
            semi_implicit_euler(&mut q, &mut qd, &qdd, dt);
            if !q.iter().chain(&qd).all(|x| x.is_finite()) {
                return Err(diffnea_core::Error::Divergence { step: k }.into());
            }
        }
        let mut chain = ChainState::hanging(
            out.cups[0].position,
            self.config.chain.segments,
            self.config.string_length,
        );
        for k in 0..steps {
            let ball = chain.ball();
            if !ball.is_finite() {
                return Err(diffnea_core::Error::Divergence { step: k }.into());
            }
            out.min_clearance = out
                .min_clearance
                .min(self.clearance(&out.q[k], &ball.position)?);
            out.ball.push(ball);
            out.in_cup.push(chain.in_cup);
            if k + 1 < steps {
                self.oracle_step(&mut chain, &out.cups[k], &out.cups[k + 1], dt)?;
                out.max_segment_error = out
                    .max_segment_error
                    .max(chain.segment_error(&out.cups[k + 1].position, self.config.string_length));
            }
        }
        Ok(out)
    }

    /// Distance from `x` to the polyline through the joint origins and the
    /// wrist, [`arm::WRIST`] along the last link.
    pub fn clearance(&self, q: &[f64], x: &Vec3<f64>) -> Result<f64> {
        let zeros = vec![0.0; q.len()];
        let links = forward_kinematics(&self.arm.realize(), q, &zeros, &zeros)?;
        let mut points = vec![Vec3::zeros()];
        points.extend(links.iter().map(|l| l.pose.translation));
        let last = links.last().expect("arm has links");
        points.push(last.pose.transform_point(&Vec3::from_f64(arm::WRIST)));
        let mut best = f64::INFINITY;
        for pair in points.windows(2) {
            best = best.min(segment_distance(&pair[0], &pair[1], x));
        }
        Ok(best)
    }
}

fn arm_string(offset: VirtualKinematicParams) -> Result<diffnea_core::string::StringModelParams> {
    Ok(diffnea_core::string::StringModelParams::new(
        offset,
        1.0,
        arm::BALL_MASS,
        0.0,
    )?)
}

fn segment_distance(a: &Vec3<f64>, b: &Vec3<f64>, x: &Vec3<f64>) -> f64 {
    let ab = *b - *a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((*x - *a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (*a + ab.scale(t) - *x).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_solves_a_folded_chain() {
        let anchor = Vec3::zeros();
        let mut x: Vec<Vec3<f64>> = (0..6)
            .map(|i| Vec3::new(0.05 * (i % 2) as f64, 0.01 * i as f64, -0.02 * i as f64))
            .collect();
        let w = vec![500.0, 500.0, 500.0, 500.0, 500.0, 50.0];
        project_chain(&mut x, &anchor, None, 0.1, &w, 8);
        let state = ChainState {
            velocities: vec![Vec3::zeros(); 6],
            positions: x,
            in_cup: false,
        };
        assert!(state.segment_error(&anchor, 0.6) < 1e-12);
    }

    #[test]
    fn confine_keeps_points_inside() {
        let cup = CupMotion::fixed(Vec3::zeros());
        let g = CupGeometry::default();
        let p = g.confine(&cup, &Vec3::new(0.1, 0.0, -0.01));
        assert!((p.x - g.radius).abs() < 1e-15 && p.z == 0.0);
    }
}
