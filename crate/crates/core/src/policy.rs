//! Episodic policy search over movement-primitive weights.
//!
//! A [`TrajectoryGenerator`] maps a weight vector to a smooth joint
//! trajectory, a [`PolicyDistribution`] is a Gaussian over those weights, and
//! [`ereps_update`] reweights sampled episodes under a KL trust region.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::se3::Vec3;

/// Radial bases over normalized time, premultiplied by `s²` so every basis
/// and its first derivative vanish at `s = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGenerator {
    pub q0: Vec<f64>,
    /// Joints driven by the primitive; the others hold `q0`.
    pub active: Vec<bool>,
    pub n_basis: usize,
    /// Basis width in normalized time.
    pub width: f64,
    /// Episode duration (s).
    pub duration: f64,
}

/// Sampled joint trajectory, one row per time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub dt: f64,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    pub qdd: Vec<Vec<f64>>,
}

impl JointTrajectory {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

impl TrajectoryGenerator {
    pub fn new(q0: Vec<f64>, active: Vec<bool>, n_basis: usize, duration: f64) -> Result<Self> {
        let g = Self {
            width: 1.0 / n_basis.max(1) as f64,
            q0,
            active,
            n_basis,
            duration,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.active.len() != self.q0.len() {
            return Err(Error::Dimension {
                what: "active joint mask",
                expected: self.q0.len(),
                got: self.active.len(),
            });
        }
        if self.n_basis < 2 || !(self.width > 0.0) || !(self.duration > 0.0) {
            return Err(Error::Config(
                "generator needs ≥ 2 bases, positive width and duration".into(),
            ));
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.q0.len()
    }

    pub fn weight_dim(&self) -> usize {
        self.active.iter().filter(|&&a| a).count() * self.n_basis
    }

    fn center(&self, k: usize) -> f64 {
        k as f64 / (self.n_basis - 1) as f64
    }

    /// Basis values and their first two derivatives in normalized time.
    pub fn basis(&self, s: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let w2 = self.width * self.width;
        let mut phi = Vec::with_capacity(self.n_basis);
        let mut d1 = Vec::with_capacity(self.n_basis);
        let mut d2 = Vec::with_capacity(self.n_basis);
        for k in 0..self.n_basis {
            let u = s - self.center(k);
            let e = (-0.5 * u * u / w2).exp();
            phi.push(s * s * e);
            d1.push(e * (2.0 * s - s * s * u / w2));
            d2.push(e * (2.0 - 4.0 * s * u / w2 + s * s * (u * u / (w2 * w2) - 1.0 / w2)));
        }
        (phi, d1, d2)
    }

    /// Joint position, velocity and acceleration at time `t`. Past the end
    /// of the episode the final posture is held.
    pub fn evaluate(&self, weights: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if weights.len() != self.weight_dim() {
            return Err(Error::Dimension {
                what: "policy weights",
                expected: self.weight_dim(),
                got: weights.len(),
            });
        }
        let hold = t > self.duration;
        let s = (t / self.duration).clamp(0.0, 1.0);
        let (phi, d1, d2) = self.basis(s);
        let n = self.n_joints();
        let mut q = self.q0.clone();
        let mut qd = vec![0.0; n];
        let mut qdd = vec![0.0; n];
        let mut block = 0;
        for j in 0..n {
            if !self.active[j] {
                continue;
            }
            let w = &weights[block * self.n_basis..(block + 1) * self.n_basis];
            block += 1;
            q[j] += phi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            if !hold {
                qd[j] = d1.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / self.duration;
                qdd[j] = d2.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
                    / (self.duration * self.duration);
            }
        }
        Ok((q, qd, qdd))
    }

    /// Sample the trajectory on `[0, horizon]` at step `dt`.
    pub fn rollout(&self, weights: &[f64], dt: f64, horizon: f64) -> Result<JointTrajectory> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let steps = (horizon / dt).round() as usize + 1;
        let mut out = JointTrajectory {
            dt,
            q: Vec::with_capacity(steps),
            qd: Vec::with_capacity(steps),
            qdd: Vec::with_capacity(steps),
        };
        for k in 0..steps {
            let (q, qd, qdd) = self.evaluate(weights, k as f64 * dt)?;
            out.q.push(q);
            out.qd.push(qd);
            out.qdd.push(qdd);
        }
        Ok(out)
    }
}

/// Gaussian over primitive weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyDistribution {
    pub mean: Vec<f64>,
    /// Full covariance, row-major.
    pub cov: Vec<Vec<f64>>,
    /// Eigenvalue floor enforced after every update.
    pub sigma2_min: f64,
}

impl PolicyDistribution {
    pub fn isotropic(mean: Vec<f64>, variance: f64, sigma2_min: f64) -> Self {
        let d = mean.len();
        let cov = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| if i == j { variance } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            mean,
            cov,
            sigma2_min,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.cov[i][j])
    }

    fn from_parts(mean: &DVector<f64>, cov: &DMatrix<f64>, sigma2_min: f64) -> Self {
        let d = mean.len();
        Self {
            mean: mean.iter().copied().collect(),
            cov: (0..d)
                .map(|i| (0..d).map(|j| cov[(i, j)]).collect())
                .collect(),
            sigma2_min,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension {
                what: "policy covariance",
                expected: d,
                got: self.cov.len(),
            });
        }
        let c = self.cov_matrix();
        if (&c - c.transpose()).amax() > 1e-9 * c.amax().max(1.0) {
            return Err(Error::Config("policy covariance is not symmetric".into()));
        }
        if min_eigenvalue(&c) < -1e-12 {
            return Err(Error::Config(
                "policy covariance is not positive semi-definite".into(),
            ));
        }
        Ok(())
    }

    /// Draw one weight vector using a symmetric square root of `Σ`.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let root = sqrt_psd(&self.cov_matrix());
        self.sample_with(&root, rng)
    }

    fn sample_with(&self, root: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let w = root * z;
        self.mean.iter().zip(w.iter()).map(|(m, x)| m + x).collect()
    }

    /// `n` draws from a seeded stream.
    pub fn sample_many(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let root = sqrt_psd(&self.cov_matrix());
        (0..n).map(|_| self.sample_with(&root, &mut rng)).collect()
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let s = DMatrix::from_diagonal(&e.eigenvalues.map(|x| x.max(0.0).sqrt()));
    &e.eigenvectors * s * e.eigenvectors.transpose()
}

fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|x| x.max(floor)));
    let out = &e.eigenvectors * d * e.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Sample a weight vector and expand it into a joint trajectory.
pub fn sample_trajectory(
    policy: &PolicyDistribution,
    gen: &TrajectoryGenerator,
    seed: u64,
    dt: f64,
) -> Result<(Vec<f64>, JointTrajectory)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = policy.sample(&mut rng);
    let traj = gen.rollout(&w, dt, gen.duration)?;
    Ok((w, traj))
}

/// `KL(new ‖ old)` between two Gaussians.
pub fn gaussian_kl(new: &PolicyDistribution, old: &PolicyDistribution) -> f64 {
    let d = new.dim();
    let (c1, c0) = (new.cov_matrix(), old.cov_matrix());
    let Some(ch0) = c0.clone().cholesky() else {
        return f64::INFINITY;
    };
    let Some(ch1) = c1.clone().cholesky() else {
        return f64::INFINITY;
    };
    let dm = DVector::from_iterator(d, old.mean.iter().zip(&new.mean).map(|(a, b)| a - b));
    let trace = ch0.solve(&c1).trace();
    let maha = dm.dot(&ch0.solve(&dm));
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
    0.5 * (trace + maha - d as f64 + logdet(&ch0.l()) - logdet(&ch1.l()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Dipole regularizer (m²).
    pub epsilon: f64,
    pub lambda_q: f64,
    pub lambda_qd: f64,
    /// Use `−m̂` instead of `m̂` in the dipole term.
    pub flip_normal: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            lambda_q: 0.0,
            lambda_qd: 0.0,
            flip_normal: false,
        }
    }
}

/// Per-step quantities an episode reward is computed from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutStates {
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    /// `x_B − x_C` in the world frame.
    pub delta: Vec<Vec3<f64>>,
    /// Cup opening normal in the world frame.
    pub normal: Vec<Vec3<f64>>,
}

/// `ψ = Δᵀm̂ / (ΔᵀΔ + ε)`.
pub fn dipole(delta: &Vec3<f64>, normal: &Vec3<f64>, epsilon: f64) -> f64 {
    delta.dot(normal) / (delta.norm_squared() + epsilon)
}

/// `R = exp(½ max_t ψ_t + ½ ψ_N) − (1/N) Σ (λ_q‖q − q₀‖² + λ_q̇‖q̇‖²)`.
pub fn episode_reward(states: &RolloutStates, q0: &[f64], cfg: &RewardConfig) -> Result<f64> {
    let n = states.delta.len();
    if n == 0 || states.normal.len() != n {
        return Err(Error::Dimension {
            what: "rollout normals",
            expected: n,
            got: states.normal.len(),
        });
    }
    let sign = if cfg.flip_normal { -1.0 } else { 1.0 };
    let psi: Vec<f64> = states
        .delta
        .iter()
        .zip(&states.normal)
        .map(|(d, m)| sign * dipole(d, m, cfg.epsilon))
        .collect();
    let peak = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut penalty = 0.0;
    if cfg.lambda_q > 0.0 {
        penalty += cfg.lambda_q
            * states
                .q
                .iter()
                .map(|q| q.iter().zip(q0).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .sum::<f64>();
    }
    if cfg.lambda_qd > 0.0 {
        penalty += cfg.lambda_qd
            * states
                .qd
                .iter()
                .map(|v| v.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>();
    }
    Ok((0.5 * peak + 0.5 * psi[n - 1]).exp() - penalty / n as f64)
}

/// Sample weights `dᵢ ∝ exp((Rᵢ − max R)/η)` with `η` minimizing the REPS
/// dual `g(η) = ηε + η ln mean exp((R − max R)/η)`. Returns `(weights, η)`;
/// all-equal rewards give uniform weights and `η = ∞`.
///
/// `g` is convex, so `η` is the root of the increasing derivative
/// `g'(η) = ε + ln mean exp(A/η) − Σ dᵢ Aᵢ/η`, found by bisection in `ln η`.
pub fn reps_weights(rewards: &[f64], eps_kl: f64) -> (Vec<f64>, f64) {
    let n = rewards.len();
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return (vec![1.0 / n as f64; n], f64::INFINITY);
    }
    let adv: Vec<f64> = rewards.iter().map(|r| r - max).collect();
    let weights = |eta: f64| {
        let e: Vec<f64> = adv.iter().map(|a| (a / eta).exp()).collect();
        let s: f64 = e.iter().sum();
        (e, s)
    };
    let slope = |log_eta: f64| {
        let eta = log_eta.exp();
        let (e, s) = weights(eta);
        let mean_adv = e.iter().zip(&adv).map(|(w, a)| w * a).sum::<f64>() / s;
        eps_kl + (s / n as f64).ln() - mean_adv / eta
    };
    let (mut a, mut b) = ((range * 1e-9).ln(), (range * 1e6).ln());
    if slope(a) < 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if slope(mid) < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
    } else {
        b = a;
    }
    let eta = (0.5 * (a + b)).exp();
    let (e, s) = weights(eta);
    (e.into_iter().map(|x| x / s).collect(), eta)
}

/// One eREPS step: dual-weighted maximum likelihood, covariance floor, then a
/// KL trust region on the Gaussian update by interpolating toward the old
/// policy.
pub fn ereps_update(
    samples: &[Vec<f64>],
    rewards: &[f64],
    eps_kl: f64,
    policy: &PolicyDistribution,
) -> Result<PolicyDistribution> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "eREPS needs at least 2 samples, got {n}"
        )));
    }
    if rewards.len() != n {
        return Err(Error::Dimension {
            what: "rewards",
            expected: n,
            got: rewards.len(),
        });
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFiniteLoss { sample: i });
    }
    if !(eps_kl > 0.0) {
        return Err(Error::Config("KL bound must be positive".into()));
    }
    let d = policy.dim();
    for s in samples {
        if s.len() != d {
            return Err(Error::Dimension {
                what: "sample weights",
                expected: d,
                got: s.len(),
            });
        }
    }
    let (weights, eta) = reps_weights(rewards, eps_kl);
    let old_mean = DVector::from_vec(policy.mean.clone());
    let mut mean = DVector::zeros(d);
    for (s, &w) in samples.iter().zip(&weights) {
        mean += DVector::from_column_slice(s) * w;
    }
    if eta.is_infinite() {
        mean = old_mean.clone();
    }
    let mut cov = DMatrix::zeros(d, d);
    let center = if eta.is_infinite() {
        let mut m = DVector::zeros(d);
        for s in samples {
            m += DVector::from_column_slice(s) / n as f64;
        }
        m
    } else {
        mean.clone()
    };
    for (s, &w) in samples.iter().zip(&weights) {
        let x = DVector::from_column_slice(s) - &center;
        cov += &x * x.transpose() * w;
    }
    let cov = floor_eigenvalues(&cov, policy.sigma2_min);
    let old_cov = floor_eigenvalues(&policy.cov_matrix(), policy.sigma2_min);
    let candidate = |alpha: f64| {
        let m = &old_mean + (&mean - &old_mean) * alpha;
        let c = &old_cov + (&cov - &old_cov) * alpha;
        PolicyDistribution::from_parts(&m, &c, policy.sigma2_min)
    };
    let old = PolicyDistribution::from_parts(&old_mean, &old_cov, policy.sigma2_min);
    let full = candidate(1.0);
    if gaussian_kl(&full, &old) <= eps_kl {
        return Ok(full);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if gaussian_kl(&candidate(mid), &old) <= eps_kl {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(candidate(lo))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_iters: usize,
    pub n_samples: usize,
    pub eps_kl: f64,
    /// Reward assigned to episodes whose rollout fails.
    pub floor_reward: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iters: 100,
            n_samples: 32,
            eps_kl: 0.5,
            floor_reward: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    /// Mean reward of the iteration's samples.
    pub mean_reward: f64,
    pub best_reward: f64,
    /// Rollouts that failed and received the floor reward.
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub policy: PolicyDistribution,
    pub curve: Vec<IterationStats>,
    /// Best sampled weights over all iterations and their reward.
    pub best_weights: Vec<f64>,
    pub best_reward: f64,
}

/// Episodic policy search against a reward oracle `episode(weights)`.
///
/// The oracle is expected to roll the weights out inside a learned model;
/// failures get `floor_reward` instead of aborting. Samples of one iteration
/// are evaluated concurrently and the update is deterministic given the seed.
pub fn train_offline<F>(
    episode: F,
    policy0: &PolicyDistribution,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    policy0.validate()?;
    let mut policy = policy0.clone();
    let mut curve = Vec::with_capacity(cfg.n_iters);
    let mut best: (Vec<f64>, f64) = (policy0.mean.clone(), f64::NEG_INFINITY);
    for it in 0..cfg.n_iters {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(it as u64);
        let root = sqrt_psd(&policy.cov_matrix());
        let samples: Vec<Vec<f64>> = (0..cfg.n_samples)
            .map(|_| policy.sample_with(&root, &mut rng))
            .collect();
        let results = exec.map_slice(&samples, |w| episode(w).ok().filter(|r| r.is_finite()));
        let failures = results.iter().filter(|r| r.is_none()).count();
        let rewards: Vec<f64> = results
            .into_iter()
            .map(|r| r.unwrap_or(cfg.floor_reward))
            .collect();
        let (k, &top) = rewards
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("n_samples ≥ 2");
        if top > best.1 {
            best = (samples[k].clone(), top);
        }
        curve.push(IterationStats {
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            best_reward: top,
            failures,
        });
        policy = ereps_update(&samples, &rewards, cfg.eps_kl, &policy)?;
    }
    Ok(TrainResult {
        policy,
        curve,
        best_weights: best.0,
        best_reward: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gen2() -> TrajectoryGenerator {
        TrajectoryGenerator::new(vec![0.1, -0.2, 0.3], vec![true, false, true], 10, 2.0).unwrap()
    }

    #[test]
    fn basis_vanishes_at_start() {
        let g = gen2();
        let (phi, d1, _) = g.basis(0.0);
        assert!(phi.iter().chain(&d1).all(|x| *x == 0.0));
        let w: Vec<f64> = (0..g.weight_dim()).map(|i| (i as f64).cos()).collect();
        let (q, qd, _) = g.evaluate(&w, 0.0).unwrap();
        assert_eq!(q, g.q0);
        assert!(qd.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn zero_weights_hold_posture() {
        let g = gen2();
        let t = g.rollout(&vec![0.0; g.weight_dim()], 0.01, 2.0).unwrap();
        assert!(t.q.iter().all(|q| *q == g.q0));
        assert!(t.qd.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let g = gen2();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..g.weight_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let h = 1e-6;
        for &t in &[0.1, 0.77, 1.5, 1.99] {
            let (_, qd, qdd) = g.evaluate(&w, t).unwrap();
            let (qp, qdp, _) = g.evaluate(&w, t + h).unwrap();
            let (qm, qdm, _) = g.evaluate(&w, t - h).unwrap();
            for j in 0..3 {
                assert!((qd[j] - (qp[j] - qm[j]) / (2.0 * h)).abs() < 1e-6);
                assert!((qdd[j] - (qdp[j] - qdm[j]) / (2.0 * h)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn zero_covariance_gives_mean_trajectory() {
        let g = gen2();
        let mean: Vec<f64> = (0..g.weight_dim()).map(|i| 0.1 * i as f64).collect();
        let p = PolicyDistribution::isotropic(mean.clone(), 0.0, 0.0);
        let (w, t) = sample_trajectory(&p, &g, 3, 0.01).unwrap();
        assert_eq!(w, mean);
        assert_eq!(t.q, g.rollout(&mean, 0.01, g.duration).unwrap().q);
    }

    #[test]
    fn orthogonal_dipole_gives_unit_reward() {
        let s = RolloutStates {
            q: vec![vec![0.0]; 3],
            qd: vec![vec![0.0]; 3],
            delta: vec![Vec3::new(0.3, 0.0, 0.0); 3],
            normal: vec![Vec3::new(0.0, 0.0, 1.0); 3],
        };
        assert_eq!(
            episode_reward(&s, &[0.0], &RewardConfig::default()).unwrap(),
            1.0
        );
    }

    #[test]
    fn dipole_peak_at_root_epsilon() {
        let eps = 0.01_f64;
        let m = Vec3::new(0.0, 0.0, 1.0);
        let best = dipole(&m.scale(eps.sqrt()), &m, eps);
        assert!((best - 1.0 / (2.0 * eps.sqrt())).abs() < 1e-12);
        for d in [0.05, 0.08, 0.12, 0.3] {
            assert!(dipole(&m.scale(d), &m, eps) < best);
        }
    }

    #[test]
    fn velocity_penalty_lowers_reward() {
        let s = RolloutStates {
            q: vec![vec![0.0]; 2],
            qd: vec![vec![1.0]; 2],
            delta: vec![Vec3::new(0.0, 0.0, 0.1); 2],
            normal: vec![Vec3::new(0.0, 0.0, 1.0); 2],
        };
        let base = RewardConfig::default();
        let pen = RewardConfig {
            lambda_qd: 0.1,
            ..base
        };
        assert!(
            episode_reward(&s, &[0.0], &pen).unwrap() < episode_reward(&s, &[0.0], &base).unwrap()
        );
    }

    #[test]
    fn uniform_rewards_keep_mean() {
        let p = PolicyDistribution::isotropic(vec![0.5, -0.5], 1.0, 1e-6);
        let samples = p.sample_many(16, 4);
        let new = ereps_update(&samples, &[2.0; 16], 0.5, &p).unwrap();
        assert_eq!(new.mean, p.mean);
    }

    #[test]
    fn large_kl_budget_concentrates_on_best_sample() {
        let p = PolicyDistribution::isotropic(vec![0.0; 3], 1.0, 1e-6);
        let samples = p.sample_many(20, 5);
        let rewards: Vec<f64> = samples
            .iter()
            .map(|w| -w.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>())
            .collect();
        let best = rewards
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let new = ereps_update(&samples, &rewards, 1e3, &p).unwrap();
        for (a, b) in new.mean.iter().zip(&samples[best]) {
            assert!(
                (a - b).abs() < 1e-6,
                "{:?} vs {:?}",
                new.mean,
                samples[best]
            );
        }
    }
}
