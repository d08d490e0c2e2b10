#![allow(dead_code)]

use std::f64::consts::PI;

use diffnea_core::dynamics::{
    forward_kinematics, rnea, Joint, JointKind, KinematicTree, LinkParams, DEFAULT_GRAVITY,
};
use diffnea_core::se3::{rpy_to_rotation, Mat3, RigidTransform, Vec3};
use diffnea_core::string::{ball_acceleration, step, BallState, ConstraintMode, StringModelParams};
use diffnea_core::sysid::{cup_motion, ArmSample, BallSample};
use diffnea_core::virtual_params::{initial_virtual_from_physical, VirtualKinematicParams};

/// Shoulder yaw followed by an elbow pitch, 0.3 m apart.
pub fn two_link_arm() -> KinematicTree {
    let joints = vec![
        Joint {
            name: "yaw".into(),
            kind: JointKind::Revolute,
            axis: [0.0, 0.0, 1.0],
            parent: None,
        },
        Joint {
            name: "pitch".into(),
            kind: JointKind::Revolute,
            axis: [0.0, 1.0, 0.0],
            parent: Some(0),
        },
    ];
    let link = |origin: [f64; 3], mass: f64, com: [f64; 3], moments: [f64; 3], friction: f64| {
        let axes = rpy_to_rotation(0.1, -0.2, 0.3);
        let j = axes
            .mul_mat(&Mat3::diag(moments[0], moments[1], moments[2]))
            .mul_mat(&axes.transpose());
        let t = RigidTransform::from_translation(Vec3::from_f64(origin));
        let (inertia, origin) = initial_virtual_from_physical(mass, &j, com, &t).unwrap();
        LinkParams {
            origin,
            inertia,
            sqrt_friction: friction,
        }
    };
    let links = vec![
        link(
            [0.0, 0.0, 0.2],
            2.0,
            [0.02, 0.01, 0.1],
            [0.02, 0.025, 0.015],
            0.3,
        ),
        link(
            [0.0, 0.0, 0.3],
            1.2,
            [0.15, 0.0, 0.02],
            [0.004, 0.012, 0.011],
            0.2,
        ),
    ];
    KinematicTree::new(joints, links, DEFAULT_GRAVITY).unwrap()
}

/// Multi-sine joint trajectory: `q_j(t) = Σ_k a_k sin(2π f_k t + φ_jk)`.
pub fn multi_sine(n: usize, t: f64, amps: &[f64], freqs: &[f64], phase: f64) -> [Vec<f64>; 3] {
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for j in 0..n {
        for (k, (&a, &f)) in amps.iter().zip(freqs).enumerate() {
            let w = 2.0 * PI * f;
            let ph = phase * (1.0 + j as f64) * (1.0 + k as f64);
            out[0][j] += a * (w * t + ph).sin();
            out[1][j] += a * w * (w * t + ph).cos();
            out[2][j] -= a * w * w * (w * t + ph).sin();
        }
    }
    out
}

/// Noise-free torque data from the tree itself.
pub fn arm_samples(tree: &KinematicTree, duration: f64, rate: f64, phase: f64) -> Vec<ArmSample> {
    let rt = tree.realize();
    let n = (duration * rate).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let [q, qd, qdd] =
                multi_sine(tree.dof(), t, &[0.6, 0.3, 0.15], &[0.3, 0.9, 1.7], phase);
            let u = rnea(&rt, &q, &qd, &qdd).unwrap().torques;
            ArmSample { q, qd, qdd, u }
        })
        .collect()
}

/// Cup 0.15 m beyond the elbow link, opening up.
pub fn string_params(length: f64, drag: f64) -> StringModelParams {
    StringModelParams::new(
        VirtualKinematicParams::from_translation([0.15, 0.0, 0.3]),
        length,
        0.02,
        drag,
    )
    .unwrap()
}

/// Ball rollout under the analytic model while the arm follows a slow
/// cosine schedule; measured accelerations are the model's own.
pub fn ball_samples_with(
    tree: &KinematicTree,
    p: &StringModelParams,
    duration: f64,
    freqs: [f64; 2],
    amps: [f64; 2],
) -> Vec<BallSample> {
    let dt = 1e-3;
    let sub = 2;
    let n = (duration / dt).round() as usize;
    let motion = |t: f64| {
        let w = freqs.map(|f| 2.0 * PI * f);
        let a = amps;
        let q: Vec<f64> = (0..2).map(|j| a[j] * (1.0 - (w[j] * t).cos())).collect();
        let qd: Vec<f64> = (0..2).map(|j| a[j] * w[j] * (w[j] * t).sin()).collect();
        let qdd: Vec<f64> = (0..2)
            .map(|j| a[j] * w[j] * w[j] * (w[j] * t).cos())
            .collect();
        let links = forward_kinematics(&tree.realize(), &q, &qd, &qdd).unwrap();
        *links.last().unwrap()
    };
    let cup0 = cup_motion(&motion(0.0), p);
    let mut ball = BallState::new(
        cup0.position + Vec3::new(0.0, 0.0, -p.length()),
        Vec3::zeros(),
    );
    let mut out = Vec::new();
    for k in 0..n {
        let link = motion(k as f64 * dt);
        let cup = cup_motion(&link, p);
        if k % sub == 0 {
            let acc = ball_acceleration(&ball, &cup, p, ConstraintMode::Hard);
            out.push(BallSample {
                link,
                ball,
                ball_acc: acc,
            });
        }
        ball = step(&ball, &cup, p, dt);
    }
    out
}

/// Fraction of samples with the string within `tol` of full length.
pub fn taut_fraction(samples: &[BallSample], p: &StringModelParams, tol: f64) -> f64 {
    let taut = samples
        .iter()
        .filter(|s| {
            let c = cup_motion(&s.link, p);
            (s.ball.position - c.position).norm() > p.length() - tol
        })
        .count();
    taut as f64 / samples.len() as f64
}
