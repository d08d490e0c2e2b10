//! Spatial algebra on SE(3): rotations, rigid transforms, adjoint maps and
//! 6D spatial vectors.
//!
//! Convention used everywhere in this crate: spatial vectors are ordered
//! `[angular; linear]`. A twist is `(ω, v)` with `v` the velocity of the frame
//! origin, a wrench is `(n, f)` with `n` the moment about the frame origin.
//! A transform `T_{j,i}` maps coordinates of frame `i` into frame `j`:
//! `x_j = R x_i + p`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn from_f64(v: [f64; 3]) -> Self {
        Self::new(T::from_f64(v[0]), T::from_f64(v[1]), T::from_f64(v[2]))
    }

    #[inline]
    pub fn lift(v: &Vec3<f64>) -> Self {
        Self::from_f64(v.to_array())
    }

    #[inline]
    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn values(&self) -> Vec3<f64> {
        Vec3::new(self.x.value(), self.y.value(), self.z.value())
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn scale(&self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    #[inline]
    pub fn scale_f64(&self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    /// Skew-symmetric matrix `[v]` with `[v] w = v × w`.
    pub fn skew(&self) -> Mat3<T> {
        let z = T::zero();
        Mat3::from_rows([
            [z, -self.z, self.y],
            [self.z, z, -self.x],
            [-self.y, self.x, z],
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Vec3<f64> {
    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        (self.x - o.x)
            .abs()
            .max((self.y - o.y).abs())
            .max((self.z - o.z).abs())
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    #[inline]
    pub fn from_rows(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        Self::diag(T::one(), T::one(), T::one())
    }

    pub fn zeros() -> Self {
        Self {
            m: [[T::zero(); 3]; 3],
        }
    }

    pub fn diag(a: T, b: T, c: T) -> Self {
        let z = T::zero();
        Self::from_rows([[a, z, z], [z, b, z], [z, z, c]])
    }

    pub fn lift(m: &Mat3<f64>) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = T::from_f64(m.m[i][j]);
            }
        }
        out
    }

    pub fn values(&self) -> Mat3<f64> {
        let mut out = Mat3::<f64>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[i][j].value();
            }
        }
        out
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self::from_rows([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// `selfᵀ v` without forming the transpose.
    #[inline]
    pub fn tr_mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] =
                    self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        out
    }

    pub fn add_mat(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for row in &mut out.m {
            for e in row {
                *e *= s;
            }
        }
        out
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

impl Mat3<f64> {
    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.m[i][j] - o.m[i][j]).abs());
            }
        }
        d
    }
}

/// Elementary rotation about x.
pub fn rot_x<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = (a.sin(), a.cos());
    let (o, z) = (T::one(), T::zero());
    Mat3::from_rows([[o, z, z], [z, c, -s], [z, s, c]])
}

/// Elementary rotation about y.
pub fn rot_y<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = (a.sin(), a.cos());
    let (o, z) = (T::one(), T::zero());
    Mat3::from_rows([[c, z, s], [z, o, z], [-s, z, c]])
}

/// Elementary rotation about z.
pub fn rot_z<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = (a.sin(), a.cos());
    let (o, z) = (T::one(), T::zero());
    Mat3::from_rows([[c, -s, z], [s, c, z], [z, z, o]])
}

/// Roll-pitch-yaw angles to `R_z(φ_z) R_y(φ_y) R_x(φ_x)`, expanded in closed form.
pub fn rpy_to_rotation<T: Real>(roll: T, pitch: T, yaw: T) -> Mat3<T> {
    let (sr, cr) = (roll.sin(), roll.cos());
    let (sp, cp) = (pitch.sin(), pitch.cos());
    let (sy, cy) = (yaw.sin(), yaw.cos());
    Mat3::from_rows([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])
}

/// Inverse of [`rpy_to_rotation`] for a proper rotation matrix. Returns
/// `(roll, pitch, yaw)` with pitch in `[-π/2, π/2]`; at gimbal lock roll is 0.
pub fn rotation_to_rpy(r: &Mat3<f64>) -> [f64; 3] {
    let m = &r.m;
    let pitch = (-m[2][0]).atan2((m[0][0] * m[0][0] + m[1][0] * m[1][0]).sqrt());
    if (m[0][0] * m[0][0] + m[1][0] * m[1][0]).sqrt() < 1e-12 {
        // cos(pitch) == 0: only yaw ∓ roll is determined
        let yaw = (-m[0][1]).atan2(m[1][1]);
        return [0.0, pitch, yaw];
    }
    let roll = m[2][1].atan2(m[2][2]);
    let yaw = m[1][0].atan2(m[0][0]);
    [roll, pitch, yaw]
}

/// Rotation by angle `q` about the unit axis `a` (Rodrigues).
pub fn axis_angle<T: Real>(a: &Vec3<T>, q: T) -> Mat3<T> {
    let k = a.skew();
    let k2 = k.mul_mat(&k);
    Mat3::identity()
        .add_mat(&k.scale(q.sin()))
        .add_mat(&k2.scale(T::one() - q.cos()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(p: Vec3<T>) -> Self {
        Self::new(Mat3::identity(), p)
    }

    pub fn from_rotation(r: Mat3<T>) -> Self {
        Self::new(r, Vec3::zeros())
    }

    pub fn lift(t: &RigidTransform<f64>) -> Self {
        Self::new(Mat3::lift(&t.rotation), Vec3::lift(&t.translation))
    }

    pub fn values(&self) -> RigidTransform<f64> {
        RigidTransform::new(self.rotation.values(), self.translation.values())
    }

    /// `self · other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation.mul_mat(&other.rotation),
            self.rotation.mul_vec(&other.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let p = -rt.mul_vec(&self.translation);
        Self::new(rt, p)
    }

    #[inline]
    pub fn transform_point(&self, x: &Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(x) + self.translation
    }

    /// `Ad_T v`: twist expressed in the source frame to the target frame.
    #[inline]
    pub fn adjoint_mul(&self, v: &SpatialVector<T>) -> SpatialVector<T> {
        let w = self.rotation.mul_vec(&v.angular);
        let lin = self.translation.cross(&w) + self.rotation.mul_vec(&v.linear);
        SpatialVector::new(w, lin)
    }

    /// `Ad_{T⁻¹} v`.
    #[inline]
    pub fn inverse_adjoint_mul(&self, v: &SpatialVector<T>) -> SpatialVector<T> {
        let w = self.rotation.tr_mul_vec(&v.angular);
        let lin = self
            .rotation
            .tr_mul_vec(&(v.linear - self.translation.cross(&v.angular)));
        SpatialVector::new(w, lin)
    }

    /// `Ad_Tᵀ f`: wrench expressed in the target frame pulled back to the source frame.
    #[inline]
    pub fn coadjoint_mul(&self, f: &SpatialVector<T>) -> SpatialVector<T> {
        let n = self
            .rotation
            .tr_mul_vec(&(f.angular - self.translation.cross(&f.linear)));
        let lin = self.rotation.tr_mul_vec(&f.linear);
        SpatialVector::new(n, lin)
    }

    /// `Ad_{T⁻¹}ᵀ f`: wrench in the source frame pushed to the target frame
    /// (child-to-parent force transport when `self = T_{parent,child}`).
    #[inline]
    pub fn inverse_coadjoint_mul(&self, f: &SpatialVector<T>) -> SpatialVector<T> {
        let lin = self.rotation.mul_vec(&f.linear);
        let n = self.rotation.mul_vec(&f.angular) + self.translation.cross(&lin);
        SpatialVector::new(n, lin)
    }

    /// 6×6 adjoint matrix `[[R, 0], [[p]R, R]]`.
    pub fn adjoint(&self) -> SpatialMatrix<T> {
        let r = &self.rotation;
        let pr = self.translation.skew().mul_mat(r);
        let z = Mat3::zeros();
        SpatialMatrix::from_blocks(r, &z, &pr, r)
    }

    /// Transpose of [`RigidTransform::adjoint`].
    pub fn coadjoint(&self) -> SpatialMatrix<T> {
        self.adjoint().transpose()
    }
}

/// Stacked `[angular; linear]` 6-vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialVector<T> {
    pub angular: Vec3<T>,
    pub linear: Vec3<T>,
}

impl<T: Real> SpatialVector<T> {
    #[inline]
    pub fn new(angular: Vec3<T>, linear: Vec3<T>) -> Self {
        Self { angular, linear }
    }

    #[inline]
    pub fn zeros() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn from_array(a: [T; 6]) -> Self {
        Self::new(Vec3::new(a[0], a[1], a[2]), Vec3::new(a[3], a[4], a[5]))
    }

    pub fn lift(v: &SpatialVector<f64>) -> Self {
        Self::new(Vec3::lift(&v.angular), Vec3::lift(&v.linear))
    }

    pub fn to_array(&self) -> [T; 6] {
        let (a, l) = (&self.angular, &self.linear);
        [a.x, a.y, a.z, l.x, l.y, l.z]
    }

    pub fn values(&self) -> SpatialVector<f64> {
        SpatialVector::new(self.angular.values(), self.linear.values())
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.angular.dot(&o.angular) + self.linear.dot(&o.linear)
    }

    #[inline]
    pub fn scale(&self, s: T) -> Self {
        Self::new(self.angular.scale(s), self.linear.scale(s))
    }
}

impl<T: Real> Add for SpatialVector<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.angular + o.angular, self.linear + o.linear)
    }
}

impl<T: Real> Sub for SpatialVector<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.angular - o.angular, self.linear - o.linear)
    }
}

impl<T: Real> Neg for SpatialVector<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.angular, -self.linear)
    }
}

impl<T: Real> AddAssign for SpatialVector<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Lie bracket `ad_v w = [ω×ω_w ; v×ω_w + ω×v_w]`.
#[inline]
pub fn ad_mul<T: Real>(v: &SpatialVector<T>, w: &SpatialVector<T>) -> SpatialVector<T> {
    SpatialVector::new(
        v.angular.cross(&w.angular),
        v.linear.cross(&w.angular) + v.angular.cross(&w.linear),
    )
}

/// `ad_vᵀ f = [-ω×n - v×f ; -ω×f]` for a wrench `f = (n, f)`.
#[inline]
pub fn ad_star_mul<T: Real>(v: &SpatialVector<T>, f: &SpatialVector<T>) -> SpatialVector<T> {
    SpatialVector::new(
        -(v.angular.cross(&f.angular) + v.linear.cross(&f.linear)),
        -v.angular.cross(&f.linear),
    )
}

/// Matrix of `ad_v`: `[[ [ω], 0 ], [ [v], [ω] ]]`.
pub fn small_ad<T: Real>(v: &SpatialVector<T>) -> SpatialMatrix<T> {
    let w = v.angular.skew();
    SpatialMatrix::from_blocks(&w, &Mat3::zeros(), &v.linear.skew(), &w)
}

/// Dual of [`small_ad`], `ad_vᵀ`, the operator appearing in the bias force
/// `f = M a − ad_vᵀ M v`.
pub fn small_ad_star<T: Real>(v: &SpatialVector<T>) -> SpatialMatrix<T> {
    small_ad(v).transpose()
}

/// Dense 6×6 matrix acting on [`SpatialVector`]s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialMatrix<T> {
    pub m: [[T; 6]; 6],
}

impl<T: Real> SpatialMatrix<T> {
    pub fn zeros() -> Self {
        Self {
            m: [[T::zero(); 6]; 6],
        }
    }

    pub fn identity() -> Self {
        let mut out = Self::zeros();
        for i in 0..6 {
            out.m[i][i] = T::one();
        }
        out
    }

    pub fn from_blocks(a: &Mat3<T>, b: &Mat3<T>, c: &Mat3<T>, d: &Mat3<T>) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = a.m[i][j];
                out.m[i][j + 3] = b.m[i][j];
                out.m[i + 3][j] = c.m[i][j];
                out.m[i + 3][j + 3] = d.m[i][j];
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros();
        for i in 0..6 {
            for j in 0..6 {
                out.m[j][i] = self.m[i][j];
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &SpatialVector<T>) -> SpatialVector<T> {
        let a = v.to_array();
        let mut out = [T::zero(); 6];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.m[i];
            *o = row[0] * a[0]
                + row[1] * a[1]
                + row[2] * a[2]
                + row[3] * a[3]
                + row[4] * a[4]
                + row[5] * a[5];
        }
        SpatialVector::from_array(out)
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..6 {
            for j in 0..6 {
                let mut s = T::zero();
                for k in 0..6 {
                    s += self.m[i][k] * o.m[k][j];
                }
                out.m[i][j] = s;
            }
        }
        out
    }

    pub fn add_mat(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..6 {
            for j in 0..6 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }

    pub fn sub_mat(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..6 {
            for j in 0..6 {
                out.m[i][j] -= o.m[i][j];
            }
        }
        out
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: &SpatialVector<T>, b: &SpatialVector<T>) -> Self {
        let (a, b) = (a.to_array(), b.to_array());
        let mut out = Self::zeros();
        for i in 0..6 {
            for j in 0..6 {
                out.m[i][j] = a[i] * b[j];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for row in &mut out.m {
            for e in row {
                *e *= s;
            }
        }
        out
    }

    pub fn values(&self) -> SpatialMatrix<f64> {
        let mut out = SpatialMatrix::<f64>::zeros();
        for i in 0..6 {
            for j in 0..6 {
                out.m[i][j] = self.m[i][j].value();
            }
        }
        out
    }
}

impl SpatialMatrix<f64> {
    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                d = d.max((self.m[i][j] - o.m[i][j]).abs());
            }
        }
        d
    }
}

impl<T: Real> Mul for SpatialMatrix<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.mul_mat(&o)
    }
}
