//! The synthetic 4-DoF arm: true parameters, the nominal (CAD) guess and
//! the cup mounting.

use std::f64::consts::FRAC_PI_2;

use diffnea_core::dynamics::{KinematicTree, ParamGroup};
use diffnea_core::string::StringModelParams;
use diffnea_core::virtual_params::VirtualKinematicParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

const TRUTH_JSON: &str = include_str!("../assets/arm_truth.json");

/// Joints driven by the swing-up policy (shoulder and elbow pitch).
pub const ACTIVE_JOINTS: [bool; 4] = [false, true, false, true];

/// Start posture: forearm horizontal, cup opening up.
pub const HOME_POSTURE: [f64; 4] = [0.0, 0.8, 0.0, FRAC_PI_2 - 0.8];

/// Cup mounting in the forearm frame.
pub const CUP_TRANSLATION: [f64; 3] = [0.0, 0.0, 0.38];
pub const CUP_RPY: [f64; 3] = [0.0, -FRAC_PI_2, 0.0];

/// End of the forearm in its own frame; the cup sits on a bracket beyond it.
pub const WRIST: [f64; 3] = [0.0, 0.0, 0.3];

/// The CAD drawing places the cup a little off.
pub const CAD_CUP_TRANSLATION: [f64; 3] = [0.012, -0.006, 0.36];

pub const BALL_MASS: f64 = 0.02;

/// Drag coefficient assumed by the nominal string model (1/s).
pub const NOMINAL_DRAG: f64 = 0.1;

/// Gains of the joint-space tracking controller.
pub const KP: [f64; 4] = [400.0, 400.0, 100.0, 100.0];
pub const KD: [f64; 4] = [40.0, 40.0, 10.0, 10.0];

pub fn true_arm() -> KinematicTree {
    let tree: KinematicTree = serde_json::from_str(TRUTH_JSON).expect("bundled arm asset parses");
    tree.validate().expect("bundled arm asset is valid");
    tree
}

/// Load an arm description from JSON, validating it.
pub fn arm_from_json(path: &std::path::Path) -> Result<KinematicTree> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let tree: KinematicTree =
        serde_json::from_str(&text).map_err(|e| HarnessError::format(path, e))?;
    tree.validate()?;
    Ok(tree)
}

/// Truth with every mass scaled by `1 ± 20%` and centers of mass moved by up
/// to 20% of their norm (at least 1 cm), reproducible from `seed`.
pub fn nominal_arm(seed: u64) -> KinematicTree {
    let mut tree = true_arm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for link in &mut tree.links {
        let inertia = &mut link.inertia;
        let s = 1.0 + rng.random_range(-0.2..0.2);
        inertia.sqrt_mass *= f64::sqrt(s);
        let norm = inertia
            .com
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt()
            .max(0.05);
        for c in &mut inertia.com {
            *c += 0.2 * norm * rng.random_range(-1.0..1.0);
        }
        link.sqrt_friction *= (1.0 + rng.random_range(-0.2..0.2_f64)).sqrt();
    }
    tree
}

/// Parameters fitted during arm identification (kinematics come from CAD).
pub fn arm_identification_mask(tree: &KinematicTree) -> Vec<bool> {
    tree.param_mask(&[ParamGroup::Inertial, ParamGroup::Friction])
}

pub fn cup_offset(translation: [f64; 3]) -> VirtualKinematicParams {
    VirtualKinematicParams {
        rpy: CUP_RPY,
        translation,
    }
}

/// Analytic string model with the true mounting.
pub fn true_string(length: f64, drag: f64) -> Result<StringModelParams> {
    Ok(StringModelParams::new(
        cup_offset(CUP_TRANSLATION),
        length,
        BALL_MASS,
        drag,
    )?)
}

/// Nominal string model: known length, CAD mounting, default drag.
pub fn nominal_string(length: f64) -> Result<StringModelParams> {
    Ok(StringModelParams::new(
        cup_offset(CAD_CUP_TRANSLATION),
        length,
        BALL_MASS,
        NOMINAL_DRAG,
    )?)
}
