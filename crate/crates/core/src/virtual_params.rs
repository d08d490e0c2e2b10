//! Unconstrained "virtual" parameters and their realization as physically
//! plausible kinematic transforms and spatial inertias.
//!
//! Every real-valued parameter vector maps to a valid rigid transform, a
//! nonnegative mass and a rotational inertia whose principal moments satisfy
//! the triangle inequalities, so identification can run unconstrained.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::se3::{
    rotation_to_rpy, rpy_to_rotation, Mat3, RigidTransform, SpatialMatrix, SpatialVector, Vec3,
};

/// Fixed transform parametrized by RPY angles and a translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualKinematicParams<T = f64> {
    /// `[φ_x, φ_y, φ_z]` in radians.
    pub rpy: [T; 3],
    /// Translation in meters.
    pub translation: [T; 3],
}

pub const KINEMATIC_PARAM_COUNT: usize = 6;
pub const INERTIA_PARAM_COUNT: usize = 10;

impl<T: Real> VirtualKinematicParams<T> {
    pub fn identity() -> Self {
        Self {
            rpy: [T::zero(); 3],
            translation: [T::zero(); 3],
        }
    }

    pub fn from_translation(p: [f64; 3]) -> Self {
        Self {
            rpy: [T::zero(); 3],
            translation: p.map(T::from_f64),
        }
    }

    pub fn realize(&self) -> RigidTransform<T> {
        realize_transform(self)
    }

    pub fn write_to(&self, out: &mut [T]) {
        out[..3].copy_from_slice(&self.rpy);
        out[3..6].copy_from_slice(&self.translation);
    }

    pub fn read_from(p: &[T]) -> Self {
        Self {
            rpy: [p[0], p[1], p[2]],
            translation: [p[3], p[4], p[5]],
        }
    }
}

impl VirtualKinematicParams<f64> {
    pub fn lift<T: Real>(&self) -> VirtualKinematicParams<T> {
        VirtualKinematicParams {
            rpy: self.rpy.map(T::from_f64),
            translation: self.translation.map(T::from_f64),
        }
    }

    pub fn from_transform(t: &RigidTransform<f64>) -> Self {
        Self {
            rpy: rotation_to_rpy(&t.rotation),
            translation: t.translation.to_array(),
        }
    }
}

pub fn realize_transform<T: Real>(p: &VirtualKinematicParams<T>) -> RigidTransform<T> {
    let [x, y, z] = p.rpy;
    RigidTransform::new(
        rpy_to_rotation(x, y, z),
        Vec3::new(p.translation[0], p.translation[1], p.translation[2]),
    )
}

/// Inertial parameters of one rigid body in unconstrained form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualInertiaParams<T = f64> {
    /// Square roots of the central second moments of mass `L_i` (√(kg·m²)).
    pub sqrt_second_moments: [T; 3],
    /// Square root of the mass (√kg).
    pub sqrt_mass: T,
    /// RPY angles of the principal axes relative to the link frame.
    pub principal_rpy: [T; 3],
    /// Center of mass in the link frame (m).
    pub com: [T; 3],
}

impl<T: Real> VirtualInertiaParams<T> {
    pub fn zeros() -> Self {
        Self {
            sqrt_second_moments: [T::zero(); 3],
            sqrt_mass: T::zero(),
            principal_rpy: [T::zero(); 3],
            com: [T::zero(); 3],
        }
    }

    pub fn realize(&self) -> SpatialInertia<T> {
        realize_inertia(self)
    }

    pub fn write_to(&self, out: &mut [T]) {
        out[..3].copy_from_slice(&self.sqrt_second_moments);
        out[3] = self.sqrt_mass;
        out[4..7].copy_from_slice(&self.principal_rpy);
        out[7..10].copy_from_slice(&self.com);
    }

    pub fn read_from(p: &[T]) -> Self {
        Self {
            sqrt_second_moments: [p[0], p[1], p[2]],
            sqrt_mass: p[3],
            principal_rpy: [p[4], p[5], p[6]],
            com: [p[7], p[8], p[9]],
        }
    }
}

impl VirtualInertiaParams<f64> {
    pub fn lift<T: Real>(&self) -> VirtualInertiaParams<T> {
        VirtualInertiaParams {
            sqrt_second_moments: self.sqrt_second_moments.map(T::from_f64),
            sqrt_mass: T::from_f64(self.sqrt_mass),
            principal_rpy: self.principal_rpy.map(T::from_f64),
            com: self.com.map(T::from_f64),
        }
    }
}

/// Rigid-body inertia about a link frame, stored in the form that is linear
/// in the standard inertial parameters: mass `m`, first moment `h = m·c` and
/// rotational inertia `J` about the frame origin.
///
/// The generalized inertia is `M = [[J, [h]], [[h]ᵀ, m·I]]` in the
/// `[angular; linear]` ordering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialInertia<T> {
    pub mass: T,
    pub first_moment: Vec3<T>,
    pub rot_inertia: Mat3<T>,
}

impl<T: Real> SpatialInertia<T> {
    pub fn zeros() -> Self {
        Self {
            mass: T::zero(),
            first_moment: Vec3::zeros(),
            rot_inertia: Mat3::zeros(),
        }
    }

    /// Point mass at `c`.
    pub fn point_mass(mass: T, c: Vec3<T>) -> Self {
        let ctc = c.skew().transpose().mul_mat(&c.skew());
        Self {
            mass,
            first_moment: c.scale(mass),
            rot_inertia: ctc.scale(mass),
        }
    }

    /// Center of mass, or `None` for a massless body.
    pub fn com(&self) -> Option<Vec3<T>> {
        if self.mass.value() > 0.0 {
            Some(self.first_moment.scale(T::one() / self.mass))
        } else {
            None
        }
    }

    /// Rotational inertia about the center of mass. Massless bodies return
    /// the frame inertia unchanged.
    pub fn com_inertia(&self) -> Mat3<T> {
        match self.com() {
            Some(c) => {
                let ctc = c.skew().transpose().mul_mat(&c.skew());
                self.rot_inertia.add_mat(&ctc.scale(-self.mass))
            }
            None => self.rot_inertia,
        }
    }

    /// Momentum `M v`.
    #[inline]
    pub fn apply(&self, v: &SpatialVector<T>) -> SpatialVector<T> {
        let ang = self.rot_inertia.mul_vec(&v.angular) + self.first_moment.cross(&v.linear);
        let lin = v.linear.scale(self.mass) + v.angular.cross(&self.first_moment);
        SpatialVector::new(ang, lin)
    }

    pub fn matrix(&self) -> SpatialMatrix<T> {
        let h = self.first_moment.skew();
        let m = self.mass;
        SpatialMatrix::from_blocks(&self.rot_inertia, &h, &h.transpose(), &Mat3::diag(m, m, m))
    }

    /// Inertia of the same body expressed in the frame `T_{parent,self}` points to.
    pub fn transformed(&self, t: &RigidTransform<T>) -> Self {
        let r = &t.rotation;
        let p = t.translation;
        let h_rot = r.mul_vec(&self.first_moment);
        let j_rot = r.mul_mat(&self.rot_inertia).mul_mat(&r.transpose());
        // J' = J_rot + m[p]ᵀ[p] + [p]ᵀ[h_rot] + [h_rot]ᵀ[p]
        let px = p.skew();
        let hx = h_rot.skew();
        let j = j_rot
            .add_mat(&px.transpose().mul_mat(&px).scale(self.mass))
            .add_mat(&px.transpose().mul_mat(&hx))
            .add_mat(&hx.transpose().mul_mat(&px));
        Self {
            mass: self.mass,
            first_moment: h_rot + p.scale(self.mass),
            rot_inertia: j,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            mass: self.mass + o.mass,
            first_moment: self.first_moment + o.first_moment,
            rot_inertia: self.rot_inertia.add_mat(&o.rot_inertia),
        }
    }

    pub fn values(&self) -> SpatialInertia<f64> {
        SpatialInertia {
            mass: self.mass.value(),
            first_moment: self.first_moment.values(),
            rot_inertia: self.rot_inertia.values(),
        }
    }
}

/// Realize mass, center of mass and rotational inertia from virtual parameters.
///
/// Principal moments are `(L₂+L₃, L₁+L₃, L₁+L₂)` with `L_i = θ_i²`, rotated by
/// the principal-axis RPY angles and shifted to the link frame with the
/// parallel-axis term `m[c]ᵀ[c]` (the positive semi-definite sign).
pub fn realize_inertia<T: Real>(p: &VirtualInertiaParams<T>) -> SpatialInertia<T> {
    let l = p.sqrt_second_moments.map(|t| t * t);
    let jp = Mat3::diag(l[1] + l[2], l[0] + l[2], l[0] + l[1]);
    let [a, b, c] = p.principal_rpy;
    let r = rpy_to_rotation(a, b, c);
    let j_com = r.mul_mat(&jp).mul_mat(&r.transpose());
    let mass = p.sqrt_mass * p.sqrt_mass;
    let com = Vec3::new(p.com[0], p.com[1], p.com[2]);
    let cx = com.skew();
    let rot_inertia = j_com.add_mat(&cx.transpose().mul_mat(&cx).scale(mass));
    SpatialInertia {
        mass,
        first_moment: com.scale(mass),
        rot_inertia,
    }
}

/// Principal moments (ascending) and principal axes of a symmetric 3×3 matrix.
pub fn principal_moments(j: &Mat3<f64>) -> ([f64; 3], Mat3<f64>) {
    let m = Matrix3::from_fn(|i, k| j.m[i][k]);
    let eig = SymmetricEigen::new(m);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.map(|i| eig.eigenvalues[i]);
    let mut axes = Mat3::zeros();
    for (col, &i) in idx.iter().enumerate() {
        for row in 0..3 {
            axes.m[row][col] = eig.eigenvectors[(row, i)];
        }
    }
    (vals, axes)
}

/// Check that a realized inertia is physically plausible: nonnegative mass,
/// positive semi-definite spatial inertia and principal moments about the
/// center of mass satisfying the triangle inequality. `tol` is relative to
/// the largest principal moment.
pub fn check_plausible(inertia: &SpatialInertia<f64>, tol: f64) -> Result<()> {
    if !(inertia.mass >= 0.0) {
        return Err(Error::Implausible(format!(
            "negative or non-finite mass {}",
            inertia.mass
        )));
    }
    let (moments, _) = principal_moments(&inertia.com_inertia());
    let scale = moments[2]
        .abs()
        .max(inertia.mass * 1e-12)
        .max(f64::MIN_POSITIVE);
    if moments[0] < -tol * scale {
        return Err(Error::Implausible(format!(
            "rotational inertia has negative moment {:e}",
            moments[0]
        )));
    }
    if moments[2] > moments[0] + moments[1] + tol * scale {
        return Err(Error::Implausible(format!(
            "principal moments ({:e}, {:e}, {:e}) violate the triangle inequality",
            moments[0], moments[1], moments[2]
        )));
    }
    let m = inertia.matrix();
    let d = nalgebra::DMatrix::from_fn(6, 6, |i, j| m.m[i][j]);
    let spatial_scale = d.amax().max(f64::MIN_POSITIVE);
    let min_eig = SymmetricEigen::new(d).eigenvalues.min();
    if min_eig < -tol * spatial_scale {
        return Err(Error::Implausible(format!(
            "spatial inertia is indefinite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

/// Seed virtual parameters from nominal physical values.
///
/// `j_com` is the rotational inertia about the center of mass expressed in the
/// link frame, `com` the center-of-mass offset and `t` the link's fixed
/// kinematic transform. Square-root parameters take nonnegative roots.
pub fn initial_virtual_from_physical(
    mass: f64,
    j_com: &Mat3<f64>,
    com: [f64; 3],
    t: &RigidTransform<f64>,
) -> Result<(VirtualInertiaParams<f64>, VirtualKinematicParams<f64>)> {
    if !(mass > 0.0) {
        return Err(Error::Implausible(format!(
            "mass must be positive, got {mass}"
        )));
    }
    let scale = (0..3)
        .map(|i| j_com.m[i][i].abs())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let asym = j_com.max_abs_diff(&j_com.transpose());
    if asym > 1e-9 * scale {
        return Err(Error::Implausible(format!(
            "rotational inertia is not symmetric (|J − Jᵀ| = {asym:e})"
        )));
    }
    let (moments, mut axes) = principal_moments(j_com);
    if axes.determinant() < 0.0 {
        for row in 0..3 {
            axes.m[row][2] = -axes.m[row][2];
        }
    }
    let [jx, jy, jz] = moments;
    let tol = 1e-12 * scale;
    let names = ["J_x ≤ J_y + J_z", "J_y ≤ J_x + J_z", "J_z ≤ J_x + J_y"];
    let second = [
        (jy + jz - jx) / 2.0,
        (jx + jz - jy) / 2.0,
        (jx + jy - jz) / 2.0,
    ];
    for (k, l) in second.iter().enumerate() {
        if *l < -tol {
            return Err(Error::Implausible(format!(
                "principal moments ({jx:e}, {jy:e}, {jz:e}) violate triangle inequality {}",
                names[k]
            )));
        }
    }
    let inertia = VirtualInertiaParams {
        sqrt_second_moments: second.map(|l| l.max(0.0).sqrt()),
        sqrt_mass: mass.sqrt(),
        principal_rpy: rotation_to_rpy(&axes),
        com,
    };
    Ok((inertia, VirtualKinematicParams::from_transform(t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Dual;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_virtual(rng: &mut ChaCha8Rng) -> VirtualInertiaParams<f64> {
        let mut p = [0.0; 10];
        for v in &mut p {
            *v = rng.random_range(-3.0..3.0);
        }
        VirtualInertiaParams::read_from(&p)
    }

    fn sym_eigs(m: &SpatialMatrix<f64>) -> Vec<f64> {
        let d = nalgebra::DMatrix::from_fn(6, 6, |i, j| m.m[i][j]);
        SymmetricEigen::new(d).eigenvalues.iter().copied().collect()
    }

    #[test]
    fn zero_params_realize_identity_and_zero() {
        let t = realize_transform(&VirtualKinematicParams::<f64>::identity());
        assert!(t.rotation.max_abs_diff(&Mat3::identity()) < 1e-15);
        assert!(t.translation.norm() == 0.0);
        let t = realize_transform(&VirtualKinematicParams::<f64>::from_translation([
            0.0, 0.0, 0.55,
        ]));
        assert!(t.rotation.max_abs_diff(&Mat3::identity()) < 1e-15);
        assert_eq!(t.translation.to_array(), [0.0, 0.0, 0.55]);
        let i = realize_inertia(&VirtualInertiaParams::<f64>::zeros());
        assert_eq!(i.mass, 0.0);
        assert!(i.rot_inertia.max_abs_diff(&Mat3::zeros()) == 0.0);
    }

    #[test]
    fn transform_is_periodic_in_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let rpy = [
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            ];
            let a = realize_transform(&VirtualKinematicParams {
                rpy,
                translation: [0.1, 0.2, 0.3],
            });
            let b = realize_transform(&VirtualKinematicParams {
                rpy: rpy.map(|x| x + 2.0 * PI),
                translation: [0.1, 0.2, 0.3],
            });
            assert!(a.rotation.max_abs_diff(&b.rotation) < 1e-12);
        }
    }

    #[test]
    fn isotropic_case() {
        let a = 0.7;
        let p = VirtualInertiaParams {
            sqrt_second_moments: [a; 3],
            sqrt_mass: 1.3,
            principal_rpy: [0.0; 3],
            com: [0.0; 3],
        };
        let i = realize_inertia(&p);
        assert!(
            i.rot_inertia
                .max_abs_diff(&Mat3::diag(2.0 * a * a, 2.0 * a * a, 2.0 * a * a))
                < 1e-15
        );
        assert!((i.mass - 1.69).abs() < 1e-15);
    }

    #[test]
    fn random_draws_are_plausible() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let i = realize_inertia(&random_virtual(&mut rng));
            assert!(i.mass >= 0.0);
            let (m, _) = principal_moments(&i.com_inertia());
            let [a, b, c] = m;
            let tol = -1e-12 * (a.abs() + b.abs() + c.abs()).max(1.0);
            assert!(b + c - a >= tol && a + c - b >= tol && a + b - c >= tol);
            let scale = i.mass.max(1.0) + m[2];
            assert!(sym_eigs(&i.matrix()).iter().all(|&e| e >= -1e-10 * scale));
        }
    }

    #[test]
    fn inverse_map_diagonal_case() {
        let (v, _) = initial_virtual_from_physical(
            1.0,
            &Mat3::diag(2.0, 2.0, 2.0),
            [0.0; 3],
            &RigidTransform::identity(),
        )
        .unwrap();
        for s in v.sqrt_second_moments {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((v.sqrt_mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_map_rod_round_trip() {
        let j = Mat3::diag(1.0 / 12.0, 1.0 / 12.0, 1e-9);
        let com = [0.0, 0.0, 0.5];
        let tf = RigidTransform::new(rpy_to_rotation(0.1, 0.2, 0.3), Vec3::new(0.0, 0.0, 0.55));
        let (vi, vk) = initial_virtual_from_physical(1.0, &j, com, &tf).unwrap();
        let i = realize_inertia(&vi);
        assert!((i.mass - 1.0).abs() < 1e-12);
        assert!(i.com_inertia().max_abs_diff(&j) < 1e-8);
        assert!(i.com().unwrap().max_abs_diff(&Vec3::from_f64(com)) < 1e-12);
        let t2 = realize_transform(&vk);
        assert!(t2.rotation.max_abs_diff(&tf.rotation) < 1e-8);
        assert!(t2.translation.max_abs_diff(&tf.translation) < 1e-12);
    }

    #[test]
    fn inverse_map_rejects_triangle_violation() {
        let err = initial_virtual_from_physical(
            1.0,
            &Mat3::diag(5.0, 1.0, 1.0),
            [0.0; 3],
            &RigidTransform::identity(),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("J_z ≤ J_x + J_y"), "{msg}");
        assert!(initial_virtual_from_physical(
            0.0,
            &Mat3::diag(1.0, 1.0, 1.0),
            [0.0; 3],
            &RigidTransform::identity()
        )
        .is_err());
    }

    #[test]
    fn realize_inertia_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let base = random_virtual(&mut rng);
            let mut flat = [0.0; 10];
            base.write_to(&mut flat);
            let dir: [f64; 10] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let dual: Vec<Dual<1>> = (0..10)
                .map(|k| Dual {
                    re: flat[k],
                    eps: [dir[k]],
                })
                .collect();
            let di = realize_inertia(&VirtualInertiaParams::read_from(&dual)).matrix();
            let h = 1e-6;
            let eval = |s: f64| {
                let p: Vec<f64> = (0..10).map(|k| flat[k] + s * dir[k]).collect();
                realize_inertia(&VirtualInertiaParams::read_from(&p)).matrix()
            };
            let (mp, mm) = (eval(h), eval(-h));
            for i in 0..6 {
                for j in 0..6 {
                    let fd = (mp.m[i][j] - mm.m[i][j]) / (2.0 * h);
                    let ad = di.m[i][j].eps[0];
                    assert!((ad - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{ad} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn transformed_inertia_matches_point_mass_sum() {
        let a = SpatialInertia::point_mass(2.0, Vec3::new(0.1, 0.0, 0.3));
        let t = RigidTransform::new(rpy_to_rotation(0.3, 0.1, -0.2), Vec3::new(0.5, -0.1, 0.2));
        let moved = a.transformed(&t);
        let direct = SpatialInertia::point_mass(2.0, t.transform_point(&Vec3::new(0.1, 0.0, 0.3)));
        assert!(moved.rot_inertia.max_abs_diff(&direct.rot_inertia) < 1e-12);
        assert!(moved.first_moment.max_abs_diff(&direct.first_moment) < 1e-12);
    }

    #[test]
    fn apply_matches_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let i = realize_inertia(&random_virtual(&mut rng));
        let v = SpatialVector::new(Vec3::new(0.3, -0.1, 0.8), Vec3::new(-0.5, 0.2, 0.1));
        let a = i.apply(&v);
        let b = i.matrix().mul_vec(&v);
        assert!((a - b).to_array().iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn plausibility_check_accepts_draws_and_rejects_violations() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..1000 {
            check_plausible(&realize_inertia(&random_virtual(&mut rng)), 1e-9).unwrap();
        }
        let mut bad = SpatialInertia::point_mass(1.0, Vec3::new(0.1, 0.0, 0.0));
        bad.rot_inertia = bad.rot_inertia.add_mat(&Mat3::diag(5.0, 1.0, 1.0));
        assert!(check_plausible(&bad, 1e-9).is_err());
        let neg = SpatialInertia {
            mass: -1.0,
            ..SpatialInertia::zeros()
        };
        assert!(check_plausible(&neg, 1e-9).is_err());
    }
}
