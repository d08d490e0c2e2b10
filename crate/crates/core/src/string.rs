//! Ball on an inextensible string in maximal coordinates.
//!
//! The string is the inequality constraint `‖x_B − x_C‖ ≤ r`, written as
//! `g = σ(‖Δ‖² − r²)` with `Δ = x_B − x_C`. In hard mode `σ` is a ReLU and is
//! used for simulation; soft mode replaces it by `softplus(β h)/β` so the
//! identification losses stay smooth. The tension is solved in closed form
//! so that the second derivative of the constraint hits its target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::se3::{RigidTransform, Vec3};
use crate::virtual_params::{realize_transform, VirtualKinematicParams, KINEMATIC_PARAM_COUNT};

pub const STRING_PARAM_COUNT: usize = KINEMATIC_PARAM_COUNT + 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    Hard,
    Soft,
}

/// Fixed numerical settings of the constraint solver (not identified).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintSettings {
    /// Denominator regularizer (m²).
    pub delta: f64,
    /// Softplus sharpness used in soft mode.
    pub beta: f64,
    /// Baumgarte gains, applied only in hard mode while taut.
    pub kp: f64,
    pub kd: f64,
    pub gravity: [f64; 3],
}

impl Default for ConstraintSettings {
    fn default() -> Self {
        Self {
            delta: 1e-10,
            beta: 200.0,
            kp: 100.0,
            kd: 20.0,
            gravity: crate::dynamics::DEFAULT_GRAVITY,
        }
    }
}

/// String-model parameters in virtual form.
///
/// Flat layout: `[T_E (6), √r, √m_B, √c_d]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StringModelParams<T = f64> {
    /// Last-joint frame to cup frame.
    pub cup_offset: VirtualKinematicParams<T>,
    pub sqrt_length: T,
    pub sqrt_ball_mass: T,
    pub sqrt_drag: T,
    pub settings: ConstraintSettings,
}

impl StringModelParams<f64> {
    pub fn new(
        cup_offset: VirtualKinematicParams<f64>,
        length: f64,
        ball_mass: f64,
        drag: f64,
    ) -> Result<Self> {
        if !(length > 0.0) || !(ball_mass > 0.0) || !(drag >= 0.0) {
            return Err(Error::Implausible(format!(
                "string needs r > 0, m_B > 0, c_d ≥ 0 (got r = {length}, m_B = {ball_mass}, c_d = {drag})"
            )));
        }
        Ok(Self {
            cup_offset,
            sqrt_length: length.sqrt(),
            sqrt_ball_mass: ball_mass.sqrt(),
            sqrt_drag: drag.sqrt(),
            settings: ConstraintSettings::default(),
        })
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![0.0; STRING_PARAM_COUNT];
        self.write_to(&mut out);
        out
    }

    /// Same settings, parameters taken from a flat (possibly dual) vector.
    pub fn with_params<T: Real>(&self, p: &[T]) -> Result<StringModelParams<T>> {
        if p.len() != STRING_PARAM_COUNT {
            return Err(Error::Dimension {
                what: "string parameters",
                expected: STRING_PARAM_COUNT,
                got: p.len(),
            });
        }
        Ok(StringModelParams {
            cup_offset: VirtualKinematicParams::read_from(&p[..KINEMATIC_PARAM_COUNT]),
            sqrt_length: p[KINEMATIC_PARAM_COUNT],
            sqrt_ball_mass: p[KINEMATIC_PARAM_COUNT + 1],
            sqrt_drag: p[KINEMATIC_PARAM_COUNT + 2],
            settings: self.settings,
        })
    }

    pub fn lift<T: Real>(&self) -> StringModelParams<T> {
        self.with_params(
            &self
                .params()
                .iter()
                .map(|&x| T::from_f64(x))
                .collect::<Vec<_>>(),
        )
        .expect("own layout")
    }
}

impl<T: Real> StringModelParams<T> {
    pub fn length(&self) -> T {
        self.sqrt_length.powi2()
    }

    pub fn ball_mass(&self) -> T {
        self.sqrt_ball_mass.powi2()
    }

    pub fn drag(&self) -> T {
        self.sqrt_drag.powi2()
    }

    pub fn cup_transform(&self) -> RigidTransform<T> {
        realize_transform(&self.cup_offset)
    }

    pub fn write_to(&self, out: &mut [T]) {
        self.cup_offset.write_to(&mut out[..KINEMATIC_PARAM_COUNT]);
        out[KINEMATIC_PARAM_COUNT] = self.sqrt_length;
        out[KINEMATIC_PARAM_COUNT + 1] = self.sqrt_ball_mass;
        out[KINEMATIC_PARAM_COUNT + 2] = self.sqrt_drag;
    }

    fn gravity(&self) -> Vec3<T> {
        Vec3::from_f64(self.settings.gravity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallState<T = f64> {
    pub position: Vec3<T>,
    pub velocity: Vec3<T>,
}

impl<T: Real> BallState<T> {
    pub fn new(position: Vec3<T>, velocity: Vec3<T>) -> Self {
        Self { position, velocity }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }
}

/// Cup (string anchor) motion in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CupMotion<T = f64> {
    pub position: Vec3<T>,
    pub velocity: Vec3<T>,
    pub acceleration: Vec3<T>,
    /// Outward normal of the cup opening.
    pub normal: Vec3<T>,
}

impl<T: Real> CupMotion<T> {
    pub fn fixed(position: Vec3<T>) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            normal: Vec3::new(T::zero(), T::zero(), T::one()),
        }
    }

    pub fn lift(c: &CupMotion<f64>) -> Self {
        Self {
            position: Vec3::lift(&c.position),
            velocity: Vec3::lift(&c.velocity),
            acceleration: Vec3::lift(&c.acceleration),
            normal: Vec3::lift(&c.normal),
        }
    }
}

/// `σ(h)`, `σ'(h)` and `σ''(h)` of the chosen relaxation.
fn relax<T: Real>(h: T, mode: ConstraintMode, beta: f64) -> (T, T, T) {
    match mode {
        ConstraintMode::Hard => {
            if h.value() >= 0.0 {
                (h, T::one(), T::zero())
            } else {
                (T::zero(), T::zero(), T::zero())
            }
        }
        ConstraintMode::Soft => {
            let s = (h * beta).sigmoid();
            ((h * beta).softplus() / beta, s, s * (T::one() - s) * beta)
        }
    }
}

/// Activation `σ'(z)` gating the constraint force, `z = ‖Δ‖ − r`.
fn activation<T: Real>(z: T, mode: ConstraintMode, beta: f64) -> T {
    match mode {
        ConstraintMode::Hard => {
            if z.value() >= 0.0 {
                T::one()
            } else {
                T::zero()
            }
        }
        ConstraintMode::Soft => (z * beta).sigmoid(),
    }
}

/// `g = σ(‖Δ‖² − r²)`.
pub fn constraint_value<T: Real>(
    ball: &BallState<T>,
    cup: &CupMotion<T>,
    p: &StringModelParams<T>,
    mode: ConstraintMode,
) -> T {
    let d = ball.position - cup.position;
    let r = p.length();
    relax(d.norm_squared() - r * r, mode, p.settings.beta).0
}

/// `g`, `ġ` and the split `g̈ = free + force_coeff · f_c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintDerivatives<T> {
    pub g: T,
    pub g_dot: T,
    /// Part of `g̈` that does not depend on the constraint force.
    pub free: T,
    pub force_coeff: Vec3<T>,
}

impl<T: Real> ConstraintDerivatives<T> {
    pub fn g_ddot(&self, f_c: &Vec3<T>) -> T {
        self.free + self.force_coeff.dot(f_c)
    }
}

pub fn constraint_derivatives<T: Real>(
    ball: &BallState<T>,
    cup: &CupMotion<T>,
    p: &StringModelParams<T>,
    mode: ConstraintMode,
) -> ConstraintDerivatives<T> {
    let d = ball.position - cup.position;
    let dd = ball.velocity - cup.velocity;
    let r = p.length();
    let (g, s1, s2) = relax(d.norm_squared() - r * r, mode, p.settings.beta);
    let h_dot = d.dot(&dd) * 2.0;
    let unforced = p.gravity() - ball.velocity.scale(p.drag()) - cup.acceleration;
    let h_ddot_free = (dd.norm_squared() + d.dot(&unforced)) * 2.0;
    ConstraintDerivatives {
        g,
        g_dot: s1 * h_dot,
        free: s2 * h_dot * h_dot + s1 * h_ddot_free,
        force_coeff: d.scale(s1 * 2.0 / p.ball_mass()),
    }
}

/// `g̈` given a measured ball acceleration.
pub fn constraint_second_derivative<T: Real>(
    ball: &BallState<T>,
    ball_acc: &Vec3<T>,
    cup: &CupMotion<T>,
    p: &StringModelParams<T>,
    mode: ConstraintMode,
) -> T {
    let d = ball.position - cup.position;
    let dd = ball.velocity - cup.velocity;
    let r = p.length();
    let (_, s1, s2) = relax(d.norm_squared() - r * r, mode, p.settings.beta);
    let h_dot = d.dot(&dd) * 2.0;
    let h_ddot = (dd.norm_squared() + d.dot(&(*ball_acc - cup.acceleration))) * 2.0;
    s2 * h_dot * h_dot + s1 * h_ddot
}

/// String force on the ball, `f_c = λ Δ`.
///
/// `λ = −m_B σ'(z) (Δᵀ(g − c_d ẋ_B − ẍ_C) + Δ̇ᵀΔ̇ + b) / (ΔᵀΔ + δ)` where
/// `b = ½K_p h + ½K_d ḣ` in hard mode and `0` in soft mode. The string can
/// only pull, so `λ` is clamped at zero.
pub fn constraint_force<T: Real>(
    ball: &BallState<T>,
    cup: &CupMotion<T>,
    p: &StringModelParams<T>,
    mode: ConstraintMode,
) -> Vec3<T> {
    let d = ball.position - cup.position;
    let dd = ball.velocity - cup.velocity;
    let r = p.length();
    let d2 = d.norm_squared();
    let gate = activation(d2.sqrt() - r, mode, p.settings.beta);
    if gate.value() == 0.0 {
        return Vec3::zeros();
    }
    let unforced = p.gravity() - ball.velocity.scale(p.drag()) - cup.acceleration;
    let mut rhs = d.dot(&unforced) + dd.norm_squared();
    if mode == ConstraintMode::Hard {
        let h = d2 - r * r;
        let h_dot = d.dot(&dd) * 2.0;
        rhs += h * (0.5 * p.settings.kp) + h_dot * (0.5 * p.settings.kd);
    }
    let lambda = -(p.ball_mass() * gate * rhs) / (d2 + p.settings.delta);
    // pull only; a NaN multiplier is kept so divergence stays visible
    if lambda.value() > 0.0 {
        Vec3::zeros()
    } else {
        d.scale(lambda)
    }
}

/// `ẍ_B = g + f_c/m_B − c_d ẋ_B`.
pub fn ball_acceleration<T: Real>(
    ball: &BallState<T>,
    cup: &CupMotion<T>,
    p: &StringModelParams<T>,
    mode: ConstraintMode,
) -> Vec3<T> {
    let f = constraint_force(ball, cup, p, mode);
    p.gravity() - ball.velocity.scale(p.drag()) + f.scale(T::one() / p.ball_mass())
}

/// Semi-implicit Euler on flat position/velocity slices:
/// `v⁺ = v + dt a`, `x⁺ = x + dt v⁺`.
pub fn semi_implicit_euler(x: &mut [f64], v: &mut [f64], a: &[f64], dt: f64) {
    for ((xi, vi), ai) in x.iter_mut().zip(v.iter_mut()).zip(a) {
        *vi += dt * ai;
        *xi += dt * *vi;
    }
}

/// One hard-mode step with the cup sampled at the start of the interval.
pub fn step(ball: &BallState, cup: &CupMotion, p: &StringModelParams, dt: f64) -> BallState {
    let a = ball_acceleration(ball, cup, p, ConstraintMode::Hard);
    let mut x = ball.position.to_array();
    let mut v = ball.velocity.to_array();
    semi_implicit_euler(&mut x, &mut v, &a.to_array(), dt);
    BallState::new(Vec3::from_f64(x), Vec3::from_f64(v))
}

/// Roll the ball forward along a sampled cup trajectory.
///
/// Returns `cups.len()` states: the initial one followed by one per step.
/// A non-finite state aborts with the offending step index.
pub fn simulate(
    ball0: BallState,
    cups: &[CupMotion],
    p: &StringModelParams,
    dt: f64,
) -> Result<Vec<BallState>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let mut out = Vec::with_capacity(cups.len());
    let mut ball = ball0;
    for (k, cup) in cups.iter().enumerate() {
        if !ball.is_finite() {
            return Err(Error::Divergence { step: k });
        }
        out.push(ball);
        if k + 1 < cups.len() {
            ball = step(&ball, cup, p, dt);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Dual;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const G: f64 = 9.81;

    fn params(r: f64) -> StringModelParams {
        StringModelParams::new(VirtualKinematicParams::identity(), r, 0.02, 0.0).unwrap()
    }

    fn at(x: [f64; 3], v: [f64; 3]) -> BallState {
        BallState::new(Vec3::from_f64(x), Vec3::from_f64(v))
    }

    fn origin_cup() -> CupMotion {
        CupMotion::fixed(Vec3::zeros())
    }

    #[test]
    fn constraint_value_cases() {
        let p = params(0.4);
        let cup = origin_cup();
        assert_eq!(
            constraint_value(
                &at([0.0, 0.0, -0.4], [0.0; 3]),
                &cup,
                &p,
                ConstraintMode::Hard
            ),
            0.0
        );
        assert_eq!(
            constraint_value(
                &at([0.0, 0.2, 0.0], [0.0; 3]),
                &cup,
                &p,
                ConstraintMode::Hard
            ),
            0.0
        );
        let g = constraint_value(
            &at([0.0, 0.0, -0.5], [0.0; 3]),
            &cup,
            &p,
            ConstraintMode::Hard,
        );
        assert!((g - 0.09).abs() < 1e-14);
        let soft = constraint_value(
            &at([0.0, 0.0, -0.5], [0.0; 3]),
            &cup,
            &p,
            ConstraintMode::Soft,
        );
        assert!((soft - 0.09).abs() < 1e-3 && soft > 0.09);
    }

    #[test]
    fn squared_and_linear_forms_share_the_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = params(0.4);
        for _ in 0..200 {
            let x = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let d: Vec3<f64> = Vec3::from_f64(x);
            let h: f64 = d.norm_squared() - 0.16;
            let z: f64 = d.norm() - 0.4;
            assert_eq!(h > 0.0, z > 0.0);
            // on the manifold both vanish; scale d onto it
            let on: Vec3<f64> = d.scale(0.4 / d.norm());
            assert!((on.norm_squared() - p.length() * p.length()).abs() < 1e-15);
        }
    }

    #[test]
    fn derivatives_at_rest_and_conical() {
        let p = params(0.4);
        let cup = origin_cup();
        let d = constraint_derivatives(
            &at([0.0, 0.0, -0.4], [0.0; 3]),
            &cup,
            &p,
            ConstraintMode::Hard,
        );
        assert_eq!(d.g_dot, 0.0);
        let alpha: f64 = 0.5;
        let r = 0.4;
        let rho = r * alpha.sin();
        let w = (G / (r * alpha.cos())).sqrt();
        // a hair outside the circle so the hard gate is open
        let ball = at(
            [rho * (1.0 + 1e-12), 0.0, -r * alpha.cos() * (1.0 + 1e-12)],
            [0.0, w * rho, 0.0],
        );
        let d = constraint_derivatives(&ball, &cup, &p, ConstraintMode::Hard);
        assert!(d.g_dot.abs() < 1e-15);
        // free part holds 2‖Δ̇‖² + 2Δ·g
        let oracle = 2.0 * (w * rho).powi(2) + 2.0 * G * r * alpha.cos();
        assert!((d.free - oracle).abs() < 1e-9);
        // with the solved force the second derivative vanishes
        let f = constraint_force(&ball, &cup, &p, ConstraintMode::Hard);
        assert!(d.g_ddot(&f).abs() < 1e-8);
    }

    #[test]
    fn force_cases() {
        let p = params(0.4);
        let cup = origin_cup();
        let slack = constraint_force(
            &at([0.1, 0.0, -0.2], [1.0, 0.0, 0.0]),
            &cup,
            &p,
            ConstraintMode::Hard,
        );
        assert_eq!(slack.to_array(), [0.0; 3]);
        let hang = constraint_force(
            &at([0.0, 0.0, -0.4], [0.0; 3]),
            &cup,
            &p,
            ConstraintMode::Hard,
        );
        let err = (hang + Vec3::new(0.0, 0.0, -G * p.ball_mass())).norm();
        assert!(err < 1e-8, "equilibrium error {err}");
        let acc = ball_acceleration(
            &at([0.0, 0.0, -0.4], [0.0; 3]),
            &cup,
            &p,
            ConstraintMode::Hard,
        );
        assert!(acc.norm() < 1e-8);
        let free = ball_acceleration(
            &at([0.0, 0.0, -0.1], [0.0; 3]),
            &cup,
            &p,
            ConstraintMode::Hard,
        );
        assert_eq!(free.to_array(), [0.0, 0.0, -G]);
    }

    #[test]
    fn conical_pendulum_tension() {
        let p = params(0.4);
        let cup = origin_cup();
        for &alpha in &[0.2_f64, 0.6, 1.0] {
            let r = 0.4;
            let rho = r * alpha.sin();
            let w = (G / (r * alpha.cos())).sqrt();
            let ball = at([rho, 0.0, -r * alpha.cos()], [0.0, w * rho, 0.0]);
            let f = constraint_force(&ball, &cup, &p, ConstraintMode::Hard);
            let oracle = p.ball_mass() * G / alpha.cos();
            assert!(
                (f.norm() - oracle).abs() < 1e-6 * oracle,
                "{} vs {oracle}",
                f.norm()
            );
        }
    }

    #[test]
    fn force_is_parallel_and_pulls() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = params(0.4);
        p.sqrt_drag = 0.3;
        for _ in 0..500 {
            let x = [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ];
            let v = [
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ];
            let cup = CupMotion {
                position: Vec3::from_f64([0.0, 0.1, 0.0]),
                velocity: Vec3::from_f64([0.5, 0.0, 0.0]),
                acceleration: Vec3::from_f64([rng.random_range(-5.0..5.0), 0.0, 3.0]),
                normal: Vec3::from_f64([0.0, 0.0, 1.0]),
            };
            let ball = at(x, v);
            for mode in [ConstraintMode::Hard, ConstraintMode::Soft] {
                let f = constraint_force(&ball, &cup, &p, mode);
                let d = ball.position - cup.position;
                assert!(f.cross(&d).norm() <= 1e-12 * (f.norm() * d.norm()).max(1e-300));
                assert!(f.dot(&d) <= 0.0);
            }
        }
    }

    #[test]
    fn free_fall_step() {
        let p = params(0.4);
        let s = step(&at([0.0; 3], [0.0; 3]), &origin_cup(), &p, 1e-3);
        assert!((s.velocity.z + 9.81e-3).abs() < 1e-17);
        assert!((s.position.z + 9.81e-6).abs() < 1e-20);
    }

    fn swing(p: &StringModelParams, theta0: f64, dt: f64, seconds: f64) -> Vec<BallState> {
        let r = p.length();
        let n = (seconds / dt).round() as usize + 1;
        let cups = vec![origin_cup(); n];
        simulate(
            at([r * theta0.sin(), 0.0, -r * theta0.cos()], [0.0; 3]),
            &cups,
            p,
            dt,
        )
        .unwrap()
    }

    /// RK4 on `θ̈ = −(g/r) sin θ` with a fine step.
    fn reduced_pendulum(r: f64, theta0: f64, seconds: f64, samples: usize) -> Vec<f64> {
        let h = 1e-5;
        let f = |th: f64, om: f64| (om, -(G / r) * th.sin());
        let (mut th, mut om) = (theta0, 0.0);
        let per = (seconds / h / (samples - 1) as f64).round() as usize;
        let mut out = vec![th];
        for _ in 1..samples {
            for _ in 0..per {
                let (a1, b1) = f(th, om);
                let (a2, b2) = f(th + 0.5 * h * a1, om + 0.5 * h * b1);
                let (a3, b3) = f(th + 0.5 * h * a2, om + 0.5 * h * b2);
                let (a4, b4) = f(th + h * a3, om + h * b3);
                th += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
                om += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
            }
            out.push(th);
        }
        out
    }

    #[test]
    fn planar_swing_matches_reduced_coordinates() {
        let p = params(0.4);
        let traj = swing(&p, 0.6, 1e-3, 5.0);
        let oracle = reduced_pendulum(0.4, 0.6, 5.0, 501);
        let mut worst: f64 = 0.0;
        for (k, th) in oracle.iter().enumerate() {
            let b = traj[k * 10].position;
            let x = Vec3::new(0.4 * th.sin(), 0.0, -0.4 * th.cos());
            worst = worst.max((b - x).norm());
        }
        assert!(worst < 1e-3, "position error {worst}");
    }

    #[test]
    fn taut_swing_violation_bound() {
        let p = params(0.4);
        let traj = swing(&p, 1.2, 1e-3, 10.0);
        let worst = traj
            .iter()
            .map(|b| b.position.norm() - 0.4)
            .fold(f64::MIN, f64::max);
        assert!(worst < 5e-3, "violation {worst}");
    }

    fn pendulum_energy(b: &BallState, m: f64) -> f64 {
        // potential measured from the lowest point
        0.5 * m * b.velocity.norm_squared() + m * G * (b.position.z + 0.4)
    }

    #[test]
    fn taut_swing_energy_drift_without_dissipation() {
        let mut p = params(0.4);
        p.settings.kd = 0.0;
        let dt = 1e-3;
        let traj = swing(&p, 1.0, dt, 10.0);
        let m = p.ball_mass();
        let e: Vec<f64> = traj.iter().map(|b| pendulum_energy(b, m)).collect();
        let w = (1.0 / dt) as usize;
        let first = e[..w].iter().sum::<f64>() / w as f64;
        let last = e[e.len() - w..].iter().sum::<f64>() / w as f64;
        let drift = (last - first).abs() / first;
        assert!(drift < 1e-2, "drift {drift}");
    }

    #[test]
    fn halving_the_step_converges() {
        let p = params(0.4);
        let end = |dt: f64| *swing(&p, 0.5, dt, 1.0).last().unwrap();
        let (e1, e2, e4) = (end(2e-3), end(1e-3), end(5e-4));
        // Richardson extrapolation of a first-order method
        let reference = e4.position.scale(2.0) - e2.position;
        let err1 = (e1.position - reference).norm();
        let err2 = (e2.position - reference).norm();
        assert!(err1 / err2 >= 1.8, "ratio {}", err1 / err2);
    }

    #[test]
    fn divergence_reports_step() {
        let p = params(0.4);
        let mut cups = vec![origin_cup(); 10];
        cups[3].acceleration = Vec3::new(f64::NAN, 0.0, 0.0);
        let err = simulate(at([0.0, 0.0, -0.4], [0.0; 3]), &cups, &p, 1e-3).unwrap_err();
        assert_eq!(err, Error::Divergence { step: 4 });
    }

    #[test]
    fn g_dot_matches_finite_differences() {
        // random smooth ball and cup paths crossing the taut boundary
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = params(0.4);
        for _ in 0..20 {
            let c: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let path = |t: f64| {
                let rad = 0.4 + 0.1 * (3.0 * t + c[0]).sin();
                let (a, b) = (2.0 * t + c[1], 1.3 * t + c[2]);
                let x = Vec3::new(
                    rad * a.cos() * b.sin(),
                    rad * a.sin() * b.sin(),
                    -rad * b.cos(),
                );
                let cup = Vec3::new(0.1 * (t + c[3]).sin(), 0.05 * (2.0 * t).cos(), 0.02 * t * t);
                (x + cup, cup)
            };
            let h = 1e-6;
            let state = |t: f64| {
                let (x, cx) = path(t);
                let v = (path(t + h).0 - path(t - h).0).scale_f64(0.5 / h);
                let cv = (path(t + h).1 - path(t - h).1).scale_f64(0.5 / h);
                let cup = CupMotion {
                    position: cx,
                    velocity: cv,
                    acceleration: Vec3::zeros(),
                    normal: Vec3::zeros(),
                };
                (BallState::new(x, v), cup)
            };
            for k in 0..10 {
                let t = 0.1 * k as f64 + c[4];
                for mode in [ConstraintMode::Soft, ConstraintMode::Hard] {
                    let (b, cup) = state(t);
                    let d = constraint_derivatives(&b, &cup, &p, mode);
                    let g = |t: f64| {
                        let (b, cup) = state(t);
                        constraint_value(&b, &cup, &p, mode)
                    };
                    let dt = 1e-5;
                    let (gp, gm) = (g(t + dt), g(t - dt));
                    if mode == ConstraintMode::Hard && (gp == 0.0) != (gm == 0.0) {
                        continue;
                    }
                    let fd = (gp - gm) / (2.0 * dt);
                    assert!(
                        (d.g_dot - fd).abs() <= 1e-4 * fd.abs().max(1e-3),
                        "{mode:?}: {} vs {fd}",
                        d.g_dot
                    );
                }
            }
        }
    }

    #[test]
    fn acceleration_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = StringModelParams::new(
            VirtualKinematicParams {
                rpy: [0.1, -0.2, 0.3],
                translation: [0.0, 0.02, 0.1],
            },
            0.4,
            0.02,
            0.1,
        )
        .unwrap();
        let anchor = RigidTransform::new(
            crate::se3::rpy_to_rotation(0.3, 0.1, -0.4),
            Vec3::new(0.1, 0.2, 0.5),
        );
        for mode in [ConstraintMode::Soft, ConstraintMode::Hard] {
            for _ in 0..20 {
                let dir: Vec<f64> = (0..STRING_PARAM_COUNT)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                // taut by 2-8 cm so the hard gate is away from its kink
                let u = Vec3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    -1.0,
                );
                let pos = anchor.transform_point(&base.cup_transform().translation)
                    + u.scale_f64((0.4 + rng.random_range(0.02..0.08)) / u.norm());
                let vel = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    0.0,
                );
                let eval = |p: &StringModelParams<Dual<1>>| {
                    let t = RigidTransform::lift(&anchor).compose(&p.cup_transform());
                    let cup = CupMotion {
                        position: t.translation,
                        velocity: Vec3::zeros(),
                        acceleration: Vec3::zeros(),
                        normal: t.rotation.col(2),
                    };
                    let ball = BallState::new(Vec3::lift(&pos), Vec3::lift(&vel));
                    ball_acceleration(&ball, &cup, p, mode)
                };
                let theta = base.params();
                let seeded: Vec<Dual<1>> = theta
                    .iter()
                    .zip(&dir)
                    .map(|(&v, &d)| Dual { re: v, eps: [d] })
                    .collect();
                let ad = eval(&base.with_params(&seeded).unwrap());
                let h = 1e-6;
                let shifted = |s: f64| {
                    let ps: Vec<Dual<1>> = theta
                        .iter()
                        .zip(&dir)
                        .map(|(&v, &d)| Dual::constant(v + s * d))
                        .collect();
                    eval(&base.with_params(&ps).unwrap())
                };
                let (ap, am) = (shifted(h), shifted(-h));
                for (k, (a, (x, y))) in ad
                    .to_array()
                    .iter()
                    .zip(ap.to_array().iter().zip(am.to_array().iter()))
                    .enumerate()
                {
                    let fd = (x.re - y.re) / (2.0 * h);
                    assert!(
                        (a.eps[0] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                        "{mode:?} axis {k}: {} vs {fd}",
                        a.eps[0]
                    );
                }
            }
        }
    }
}
