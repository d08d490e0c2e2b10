//! Kinematic trees and their dynamics: forward kinematics, inverse dynamics
//! (RNEA) and forward dynamics (ABA) in body-frame Lie-algebra form.
//!
//! Gravity enters by seeding the root acceleration with `−g`, so the
//! per-link accelerations returned by [`rnea`] and [`aba`] include that
//! offset. [`forward_kinematics`] reports true (gravity-free) accelerations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::se3::{
    ad_mul, ad_star_mul, axis_angle, RigidTransform, SpatialMatrix, SpatialVector, Vec3,
};
use crate::virtual_params::{
    realize_inertia, realize_transform, SpatialInertia, VirtualInertiaParams,
    VirtualKinematicParams, INERTIA_PARAM_COUNT, KINEMATIC_PARAM_COUNT,
};

/// Threshold below which `sᵀ M_A s` is treated as singular.
pub const ABA_EPSILON: f64 = 1e-12;

/// Number of virtual parameters per link: origin (6), inertia (10), friction (1).
pub const LINK_PARAM_COUNT: usize = KINEMATIC_PARAM_COUNT + INERTIA_PARAM_COUNT + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One-DoF joint connecting a link to its parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Unit axis in the joint (child) frame.
    pub axis: [f64; 3],
    /// Parent link index; `None` attaches to the fixed world frame.
    pub parent: Option<usize>,
}

impl Joint {
    /// Unit screw `s` in the child frame.
    pub fn screw<T: Real>(&self) -> SpatialVector<T> {
        let a = Vec3::from_f64(self.axis);
        match self.kind {
            JointKind::Revolute => SpatialVector::new(a, Vec3::zeros()),
            JointKind::Prismatic => SpatialVector::new(Vec3::zeros(), a),
        }
    }

    /// Joint motion `exp(s q)`.
    pub fn motion<T: Real>(&self, q: T) -> RigidTransform<T> {
        let a = Vec3::from_f64(self.axis);
        match self.kind {
            JointKind::Revolute => RigidTransform::from_rotation(axis_angle(&a, q)),
            JointKind::Prismatic => RigidTransform::from_translation(a.scale(q)),
        }
    }
}

/// Virtual parameters of one link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams<T = f64> {
    /// Parent frame to joint frame at `q = 0`.
    pub origin: VirtualKinematicParams<T>,
    pub inertia: VirtualInertiaParams<T>,
    /// Viscous friction `d = θ_d²` (N·m·s/rad).
    pub sqrt_friction: T,
}

impl<T: Real> LinkParams<T> {
    pub fn write_to(&self, out: &mut [T]) {
        self.origin.write_to(&mut out[..KINEMATIC_PARAM_COUNT]);
        self.inertia
            .write_to(&mut out[KINEMATIC_PARAM_COUNT..KINEMATIC_PARAM_COUNT + INERTIA_PARAM_COUNT]);
        out[LINK_PARAM_COUNT - 1] = self.sqrt_friction;
    }

    pub fn read_from(p: &[T]) -> Self {
        Self {
            origin: VirtualKinematicParams::read_from(&p[..KINEMATIC_PARAM_COUNT]),
            inertia: VirtualInertiaParams::read_from(&p[KINEMATIC_PARAM_COUNT..]),
            sqrt_friction: p[LINK_PARAM_COUNT - 1],
        }
    }
}

/// Groups of link parameters, used to build identification masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Kinematic,
    Inertial,
    Friction,
}

/// Articulated tree: joints in topological order plus per-link parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicTree {
    pub joints: Vec<Joint>,
    pub links: Vec<LinkParams<f64>>,
    /// Gravity vector in the world frame (m/s²).
    pub gravity: [f64; 3],
}

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

impl KinematicTree {
    pub fn new(joints: Vec<Joint>, links: Vec<LinkParams<f64>>, gravity: [f64; 3]) -> Result<Self> {
        let tree = Self {
            joints,
            links,
            gravity,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::Config(
                "kinematic tree needs at least one joint".into(),
            ));
        }
        if self.links.len() != self.joints.len() {
            return Err(Error::Dimension {
                what: "links",
                expected: self.joints.len(),
                got: self.links.len(),
            });
        }
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(Error::Config(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )));
                }
            }
            let n = j.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "joint {i} axis is not unit length (|a| = {n})"
                )));
            }
        }
        Ok(())
    }

    /// Random plausible tree of `n` one-DoF joints (80% revolute) with
    /// random topology, axes, origins and inertias. Masses lie in
    /// `[0.25, 2.25]` kg.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Self {
        let mut joints = Vec::new();
        let mut links = Vec::new();
        for i in 0..n {
            let parent = if i == 0 {
                None
            } else {
                Some(rng.random_range(0..i))
            };
            let mut axis = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            if axis.iter().all(|a: &f64| a.abs() < 1e-3) {
                axis = [0.0, 0.0, 1.0];
            }
            let norm = axis.iter().map(|a: &f64| a * a).sum::<f64>().sqrt();
            axis.iter_mut().for_each(|a| *a /= norm);
            let kind = if rng.random_bool(0.8) {
                JointKind::Revolute
            } else {
                JointKind::Prismatic
            };
            joints.push(Joint {
                name: format!("j{i}"),
                kind,
                axis,
                parent,
            });
            let mut r = |s: f64| rng.random_range(-s..s);
            links.push(LinkParams {
                origin: VirtualKinematicParams {
                    rpy: [r(3.0), r(3.0), r(3.0)],
                    translation: [r(0.5), r(0.5), r(0.5)],
                },
                inertia: VirtualInertiaParams {
                    sqrt_second_moments: [0.2 + r(0.1), 0.2 + r(0.1), 0.2 + r(0.1)],
                    sqrt_mass: 1.0 + r(0.5),
                    principal_rpy: [r(3.0), r(3.0), r(3.0)],
                    com: [r(0.3), r(0.3), r(0.3)],
                },
                sqrt_friction: r(0.3),
            });
        }
        Self::new(joints, links, DEFAULT_GRAVITY).expect("generated tree is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn param_count(&self) -> usize {
        self.dof() * LINK_PARAM_COUNT
    }

    /// Flat parameter vector, `LINK_PARAM_COUNT` entries per link.
    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.param_count()];
        for (i, l) in self.links.iter().enumerate() {
            l.write_to(&mut out[i * LINK_PARAM_COUNT..(i + 1) * LINK_PARAM_COUNT]);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_len("tree parameters", self.param_count(), p.len())?;
        for (i, l) in self.links.iter_mut().enumerate() {
            *l = LinkParams::read_from(&p[i * LINK_PARAM_COUNT..]);
        }
        Ok(())
    }

    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        let mut t = self.clone();
        t.set_params(p)?;
        Ok(t)
    }

    /// Mask selecting the given parameter groups in the flat vector.
    pub fn param_mask(&self, groups: &[ParamGroup]) -> Vec<bool> {
        let mut mask = vec![false; self.param_count()];
        for i in 0..self.dof() {
            let base = i * LINK_PARAM_COUNT;
            for g in groups {
                let range = match g {
                    ParamGroup::Kinematic => 0..KINEMATIC_PARAM_COUNT,
                    ParamGroup::Inertial => {
                        KINEMATIC_PARAM_COUNT..KINEMATIC_PARAM_COUNT + INERTIA_PARAM_COUNT
                    }
                    ParamGroup::Friction => LINK_PARAM_COUNT - 1..LINK_PARAM_COUNT,
                };
                for k in range {
                    mask[base + k] = true;
                }
            }
        }
        mask
    }

    pub fn realize(&self) -> RealizedTree<'_, f64> {
        self.realize_with(&self.params())
            .expect("own parameter vector has the right length")
    }

    /// Realize transforms, inertias and friction from a (possibly dual-valued)
    /// flat parameter vector.
    pub fn realize_with<T: Real>(&self, p: &[T]) -> Result<RealizedTree<'_, T>> {
        check_len("tree parameters", self.param_count(), p.len())?;
        let n = self.dof();
        let mut origins = Vec::with_capacity(n);
        let mut inertias = Vec::with_capacity(n);
        let mut friction = Vec::with_capacity(n);
        for i in 0..n {
            let l = LinkParams::read_from(&p[i * LINK_PARAM_COUNT..(i + 1) * LINK_PARAM_COUNT]);
            origins.push(realize_transform(&l.origin));
            inertias.push(realize_inertia(&l.inertia));
            friction.push(l.sqrt_friction * l.sqrt_friction);
        }
        Ok(RealizedTree {
            joints: &self.joints,
            origins,
            inertias,
            friction,
            gravity: Vec3::from_f64(self.gravity),
        })
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Tree with all virtual parameters realized in scalar type `T`.
#[derive(Clone, Debug)]
pub struct RealizedTree<'a, T> {
    pub joints: &'a [Joint],
    pub origins: Vec<RigidTransform<T>>,
    pub inertias: Vec<SpatialInertia<T>>,
    pub friction: Vec<T>,
    pub gravity: Vec3<T>,
}

impl<'a, T: Real> RealizedTree<'a, T> {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    fn without_gravity(&self) -> Self {
        let mut t = self.clone();
        t.gravity = Vec3::zeros();
        t
    }

    fn root_acceleration(&self) -> SpatialVector<T> {
        SpatialVector::new(Vec3::zeros(), -self.gravity)
    }

    /// `T_{λ,i}(q_i)` for every link.
    fn joint_transforms(&self, q: &[T]) -> Vec<RigidTransform<T>> {
        self.joints
            .iter()
            .zip(&self.origins)
            .zip(q)
            .map(|((j, o), &qi)| o.compose(&j.motion(qi)))
            .collect()
    }
}

/// Joint-space state of a tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

impl JointState {
    pub fn zeros(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            qd: vec![0.0; n],
            qdd: vec![0.0; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_len("q", n, self.q.len())?;
        check_len("qd", n, self.qd.len())?;
        check_len("qdd", n, self.qdd.len())?;
        if !self
            .q
            .iter()
            .chain(&self.qd)
            .chain(&self.qdd)
            .all(|x| x.is_finite())
        {
            return Err(Error::Config("joint state has non-finite entries".into()));
        }
        Ok(())
    }
}

/// World pose plus body-frame twist and twist derivative of one link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkMotion<T> {
    /// `T_{0,i}`.
    pub pose: RigidTransform<T>,
    pub twist: SpatialVector<T>,
    pub accel: SpatialVector<T>,
}

impl<T: Real> LinkMotion<T> {
    /// World position, velocity and acceleration of a point fixed in the link.
    pub fn point_motion(&self, p: &Vec3<T>) -> (Vec3<T>, Vec3<T>, Vec3<T>) {
        let r = &self.pose.rotation;
        let w = self.twist.angular;
        let wxp = w.cross(p);
        let x = self.pose.transform_point(p);
        let xd = r.mul_vec(&(wxp + self.twist.linear));
        let body_acc = w.cross(&wxp)
            + self.accel.angular.cross(p)
            + w.cross(&self.twist.linear)
            + self.accel.linear;
        (x, xd, r.mul_vec(&body_acc))
    }

    pub fn lift(m: &LinkMotion<f64>) -> Self {
        Self {
            pose: RigidTransform::lift(&m.pose),
            twist: SpatialVector::lift(&m.twist),
            accel: SpatialVector::lift(&m.accel),
        }
    }
}

fn check_state<T>(
    tree: &RealizedTree<'_, T>,
    q: &[T],
    qd: &[T],
    third: &[T],
    what: &'static str,
) -> Result<()> {
    let n = tree.joints.len();
    check_len("q", n, q.len())?;
    check_len("qd", n, qd.len())?;
    check_len(what, n, third.len())
}

/// Poses, body twists and gravity-free body accelerations of every link.
pub fn forward_kinematics<T: Real>(
    tree: &RealizedTree<'_, T>,
    q: &[T],
    qd: &[T],
    qdd: &[T],
) -> Result<Vec<LinkMotion<T>>> {
    check_state(tree, q, qd, qdd, "qdd")?;
    let tf = tree.joint_transforms(q);
    let mut out: Vec<LinkMotion<T>> = Vec::with_capacity(tree.dof());
    for (i, joint) in tree.joints.iter().enumerate() {
        let s = joint.screw::<T>();
        let sqd = s.scale(qd[i]);
        let (pose_p, v_p, a_p) = match joint.parent {
            Some(p) => (out[p].pose, out[p].twist, out[p].accel),
            None => (
                RigidTransform::identity(),
                SpatialVector::zeros(),
                SpatialVector::zeros(),
            ),
        };
        let v = tf[i].inverse_adjoint_mul(&v_p) + sqd;
        let a = tf[i].inverse_adjoint_mul(&a_p) + ad_mul(&v, &sqd) + s.scale(qdd[i]);
        out.push(LinkMotion {
            pose: pose_p.compose(&tf[i]),
            twist: v,
            accel: a,
        });
    }
    Ok(out)
}

/// Output of [`rnea`].
#[derive(Clone, Debug)]
pub struct InverseDynamics<T> {
    pub torques: Vec<T>,
    /// Body accelerations including the `−g` root offset.
    pub accelerations: Vec<SpatialVector<T>>,
    /// Wrench transmitted through each joint, in the child frame.
    pub forces: Vec<SpatialVector<T>>,
}

/// Recursive Newton–Euler inverse dynamics.
pub fn rnea<T: Real>(
    tree: &RealizedTree<'_, T>,
    q: &[T],
    qd: &[T],
    qdd: &[T],
) -> Result<InverseDynamics<T>> {
    check_state(tree, q, qd, qdd, "qdd")?;
    let n = tree.dof();
    let tf = tree.joint_transforms(q);
    let a0 = tree.root_acceleration();
    let mut v = Vec::with_capacity(n);
    let mut a: Vec<SpatialVector<T>> = Vec::with_capacity(n);
    for (i, joint) in tree.joints.iter().enumerate() {
        let s = joint.screw::<T>();
        let sqd = s.scale(qd[i]);
        let (vp, ap) = match joint.parent {
            Some(p) => (v[p], a[p]),
            None => (SpatialVector::zeros(), a0),
        };
        let vi = tf[i].inverse_adjoint_mul(&vp) + sqd;
        a.push(tf[i].inverse_adjoint_mul(&ap) + ad_mul(&vi, &sqd) + s.scale(qdd[i]));
        v.push(vi);
    }
    let mut f: Vec<SpatialVector<T>> = (0..n)
        .map(|i| {
            let m = &tree.inertias[i];
            m.apply(&a[i]) - ad_star_mul(&v[i], &m.apply(&v[i]))
        })
        .collect();
    let mut u = vec![T::zero(); n];
    for i in (0..n).rev() {
        let joint = &tree.joints[i];
        u[i] = joint.screw::<T>().dot(&f[i]) + tree.friction[i] * qd[i];
        if let Some(p) = joint.parent {
            let fp = tf[i].inverse_coadjoint_mul(&f[i]);
            f[p] += fp;
        }
    }
    Ok(InverseDynamics {
        torques: u,
        accelerations: a,
        forces: f,
    })
}

/// Output of [`aba`].
#[derive(Clone, Debug)]
pub struct ForwardDynamics<T> {
    pub qdd: Vec<T>,
    pub accelerations: Vec<SpatialVector<T>>,
    pub forces: Vec<SpatialVector<T>>,
}

/// Articulated-body forward dynamics.
///
/// The bias force of each articulated body collects `−ad*_v M_i v` of the
/// link itself plus the transported bias and `β` terms of its children.
pub fn aba<T: Real>(
    tree: &RealizedTree<'_, T>,
    q: &[T],
    qd: &[T],
    u: &[T],
) -> Result<ForwardDynamics<T>> {
    check_state(tree, q, qd, u, "u")?;
    let n = tree.dof();
    let tf = tree.joint_transforms(q);
    let screws: Vec<SpatialVector<T>> = tree.joints.iter().map(|j| j.screw()).collect();

    let mut v: Vec<SpatialVector<T>> = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    for (i, joint) in tree.joints.iter().enumerate() {
        let sqd = screws[i].scale(qd[i]);
        let vp = joint
            .parent
            .map(|p| v[p])
            .unwrap_or_else(SpatialVector::zeros);
        let vi = tf[i].inverse_adjoint_mul(&vp) + sqd;
        eta.push(ad_mul(&vi, &sqd));
        v.push(vi);
    }

    let mut m_art: Vec<SpatialMatrix<T>> = tree.inertias.iter().map(|m| m.matrix()).collect();
    let mut f_bias: Vec<SpatialVector<T>> = (0..n)
        .map(|i| -ad_star_mul(&v[i], &tree.inertias[i].apply(&v[i])))
        .collect();
    let mut psi = vec![T::zero(); n];
    let u_eff: Vec<T> = (0..n).map(|i| u[i] - tree.friction[i] * qd[i]).collect();

    for i in (0..n).rev() {
        let s = &screws[i];
        let ms = m_art[i].mul_vec(s);
        let d = s.dot(&ms);
        if !(d.value() > ABA_EPSILON) {
            return Err(Error::DegenerateInertia {
                joint: i,
                value: d.value(),
            });
        }
        psi[i] = T::one() / d;
        if let Some(p) = tree.joints[i].parent {
            let pi = m_art[i].sub_mat(&SpatialMatrix::outer(&ms, &ms).scale(psi[i]));
            let m_eta = m_art[i].mul_vec(&eta[i]);
            let coeff = psi[i] * (u_eff[i] - s.dot(&(m_eta + f_bias[i])));
            let beta = m_eta + ms.scale(coeff);
            let x = tf[i].inverse().adjoint();
            let pi_parent = x.transpose().mul_mat(&pi).mul_mat(&x);
            m_art[p] = m_art[p].add_mat(&pi_parent);
            let fb = tf[i].inverse_coadjoint_mul(&(f_bias[i] + beta));
            f_bias[p] += fb;
        }
    }

    let a0 = tree.root_acceleration();
    let mut qdd = vec![T::zero(); n];
    let mut a: Vec<SpatialVector<T>> = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    for (i, joint) in tree.joints.iter().enumerate() {
        let ap = joint.parent.map(|p| a[p]).unwrap_or(a0);
        let a_pre = tf[i].inverse_adjoint_mul(&ap) + eta[i];
        let s = &screws[i];
        qdd[i] = psi[i] * (u_eff[i] - s.dot(&(m_art[i].mul_vec(&a_pre) + f_bias[i])));
        let ai = a_pre + s.scale(qdd[i]);
        f.push(m_art[i].mul_vec(&ai) + f_bias[i]);
        a.push(ai);
    }
    Ok(ForwardDynamics {
        qdd,
        accelerations: a,
        forces: f,
    })
}

/// Joint-space inertia matrix (row-major), column `j` = `rnea(q, 0, e_j)`
/// without gravity.
pub fn mass_matrix<T: Real>(tree: &RealizedTree<'_, T>, q: &[T]) -> Result<Vec<Vec<T>>> {
    let n = tree.dof();
    check_len("q", n, q.len())?;
    let t0 = tree.without_gravity();
    let zeros = vec![T::zero(); n];
    let mut m = vec![vec![T::zero(); n]; n];
    for j in 0..n {
        let mut e = zeros.clone();
        e[j] = T::one();
        let col = rnea(&t0, q, &zeros, &e)?.torques;
        for i in 0..n {
            m[i][j] = col[i];
        }
    }
    Ok(m)
}

/// Kinetic and potential energy `(T, V)` with `V = −Σ m g·c`.
pub fn energy<T: Real>(tree: &RealizedTree<'_, T>, q: &[T], qd: &[T]) -> Result<(T, T)> {
    let zeros = vec![T::zero(); tree.dof()];
    let fk = forward_kinematics(tree, q, qd, &zeros)?;
    let mut kin = T::zero();
    let mut pot = T::zero();
    for (m, inertia) in fk.iter().zip(&tree.inertias) {
        kin += m.twist.dot(&inertia.apply(&m.twist)) * 0.5;
        // m g·c_world = g·(R h + m p)
        let h_world =
            m.pose.rotation.mul_vec(&inertia.first_moment) + m.pose.translation.scale(inertia.mass);
        pot -= tree.gravity.dot(&h_world);
    }
    Ok((kin, pot))
}
