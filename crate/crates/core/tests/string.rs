use diffnea_core::se3::Vec3;
use diffnea_core::string::{
    constraint_force, simulate, BallState, ConstraintMode, CupMotion, StringModelParams,
};
use diffnea_core::virtual_params::VirtualKinematicParams;
use proptest::prelude::*;

const G: f64 = 9.81;

fn string(length: f64, drag: f64) -> StringModelParams {
    StringModelParams::new(VirtualKinematicParams::identity(), length, 0.02, drag).unwrap()
}

fn vec3(s: f64) -> impl Strategy<Value = Vec3<f64>> {
    prop::array::uniform3(-s..s).prop_map(Vec3::from_f64)
}

fn cup() -> impl Strategy<Value = CupMotion> {
    (vec3(1.0), vec3(3.0), vec3(20.0)).prop_map(|(position, velocity, acceleration)| CupMotion {
        position,
        velocity,
        acceleration,
        normal: Vec3::new(0.0, 0.0, 1.0),
    })
}

proptest! {
    #[test]
    fn slack_string_exerts_no_force(
        c in cup(),
        dir in vec3(1.0),
        frac in 0.0..0.999f64,
        v in vec3(5.0),
        length in 0.2..0.6f64,
    ) {
        prop_assume!(dir.norm() > 1e-3);
        let p = string(length, 0.1);
        let ball = BallState::new(c.position + dir.scale(frac * length / dir.norm()), v);
        let f = constraint_force(&ball, &c, &p, ConstraintMode::Hard);
        prop_assert_eq!(f.to_array(), [0.0; 3]);
    }

    #[test]
    fn string_only_pulls_along_itself(c in cup(), dir in vec3(1.0), stretch in 0.98..1.02f64, v in vec3(5.0)) {
        prop_assume!(dir.norm() > 1e-3);
        let p = string(0.4, 0.1);
        let ball = BallState::new(c.position + dir.scale(stretch * 0.4 / dir.norm()), v);
        for mode in [ConstraintMode::Hard, ConstraintMode::Soft] {
            let f = constraint_force(&ball, &c, &p, mode);
            let d = ball.position - c.position;
            prop_assert!(f.dot(&d) <= 0.0);
            prop_assert!(f.cross(&d).norm() <= 1e-12 * (f.norm() * d.norm()).max(1e-300));
        }
    }

    #[test]
    fn force_is_translation_invariant(c in cup(), dir in vec3(1.0), v in vec3(5.0), shift in vec3(10.0)) {
        prop_assume!(dir.norm() > 1e-3);
        let p = string(0.4, 0.1);
        let ball = BallState::new(c.position + dir.scale(0.401 / dir.norm()), v);
        let moved_cup = CupMotion { position: c.position + shift, ..c };
        let moved = BallState::new(ball.position + shift, v);
        let a = constraint_force(&ball, &c, &p, ConstraintMode::Hard);
        let b = constraint_force(&moved, &moved_cup, &p, ConstraintMode::Hard);
        prop_assert!(a.max_abs_diff(&b) <= 1e-9 * (1.0 + a.norm()));
    }
}

#[test]
fn hanging_ball_is_in_equilibrium() {
    let p = string(0.4, 0.0);
    let ball = BallState::new(Vec3::new(0.0, 0.0, -0.4), Vec3::zeros());
    let f = constraint_force(
        &ball,
        &CupMotion::fixed(Vec3::zeros()),
        &p,
        ConstraintMode::Hard,
    );
    assert!((f - Vec3::new(0.0, 0.0, 0.02 * G)).norm() < 1e-8);
}

#[test]
fn conical_pendulum_tension_balances_gravity() {
    let p = string(0.4, 0.0);
    for alpha in [0.3_f64, 0.7, 1.1] {
        let rho = 0.4 * alpha.sin();
        let w = (G / (0.4 * alpha.cos())).sqrt();
        let ball = BallState::new(
            Vec3::new(rho, 0.0, -0.4 * alpha.cos()),
            Vec3::new(0.0, w * rho, 0.0),
        );
        let f = constraint_force(
            &ball,
            &CupMotion::fixed(Vec3::zeros()),
            &p,
            ConstraintMode::Hard,
        );
        let expected = 0.02 * G / alpha.cos();
        assert!((f.norm() - expected).abs() < 1e-6 * expected);
    }
}

#[test]
fn swinging_ball_stays_on_the_string() {
    let p = string(0.4, 0.0);
    let cups = vec![CupMotion::fixed(Vec3::zeros()); 10_001];
    let ball0 = BallState::new(
        Vec3::new(0.4 * 1.2f64.sin(), 0.0, -0.4 * 1.2f64.cos()),
        Vec3::zeros(),
    );
    let traj = simulate(ball0, &cups, &p, 1e-3).unwrap();
    let worst = traj
        .iter()
        .map(|b| (b.position.norm() - 0.4).abs())
        .fold(0.0, f64::max);
    assert!(worst < 5e-3, "violation {worst}");
}
