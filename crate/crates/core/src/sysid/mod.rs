//! Gradient-based identification of virtual parameters.
//!
//! Every loss is a mean of squared residuals over dataset rows. Models expose
//! their residual vector generically over [`Real`], so derivatives come from
//! forward-mode dual numbers: the Jacobian is assembled in chunks of
//! [`CHUNK`] parameter columns per evaluation.

mod losses;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use losses::{
    cup_motion, forward_dynamics_loss, identify_string, inverse_dynamics_loss,
    string_constrained_loss, string_identification_mask, ArmLoss, ArmSample, BallSample,
    LossConfig, LossKind, PenaltyWeights, StringLoss,
};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::scalar::{Dual, Real};

/// Number of Jacobian columns propagated per dual evaluation.
pub const CHUNK: usize = 8;

/// A least-squares objective `loss = Σ r² / row_count`.
pub trait ResidualModel: Sync {
    fn param_count(&self) -> usize;
    fn row_count(&self) -> usize;
    /// Residual entries contributed by each row.
    fn row_width(&self) -> usize;
    /// All residuals, row-major.
    fn residuals<T: Real>(&self, params: &[T], exec: Execution) -> Result<Vec<T>>;

    /// Named loss terms; the default reports only the total.
    fn breakdown(&self, params: &[f64], exec: Execution) -> Result<BTreeMap<String, f64>> {
        Ok(BTreeMap::from([(
            "total".to_string(),
            loss(self, params, exec)?,
        )]))
    }
}

fn check_params<M: ResidualModel + ?Sized>(model: &M, params: &[f64]) -> Result<()> {
    if params.len() != model.param_count() {
        return Err(Error::Dimension {
            what: "parameters",
            expected: model.param_count(),
            got: params.len(),
        });
    }
    Ok(())
}

fn mean_square<T: Real>(r: &[T], rows: usize, width: usize) -> Result<T> {
    let mut acc = T::zero();
    for (k, &x) in r.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFiniteLoss {
                sample: k / width.max(1),
            });
        }
        acc += x * x;
    }
    Ok(acc / rows.max(1) as f64)
}

/// Loss value at `params`. Non-finite residuals report the offending row.
pub fn loss<M: ResidualModel + ?Sized>(model: &M, params: &[f64], exec: Execution) -> Result<f64> {
    check_params(model, params)?;
    let r = model.residuals(params, exec)?;
    mean_square(&r, model.row_count(), model.row_width())
}

/// Residuals and their Jacobian with respect to the parameters in `free`.
pub fn jacobian<M: ResidualModel + ?Sized>(
    model: &M,
    params: &[f64],
    free: &[usize],
    exec: Execution,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_params(model, params)?;
    let m = model.row_count() * model.row_width();
    let mut jac = DMatrix::zeros(m, free.len());
    let mut res = DVector::zeros(m);
    let chunks = free.len().div_ceil(CHUNK).max(1);
    for c in 0..chunks {
        let cols = &free[(c * CHUNK).min(free.len())..((c + 1) * CHUNK).min(free.len())];
        let mut p: Vec<Dual<CHUNK>> = params.iter().map(|&x| Dual::constant(x)).collect();
        for (j, &k) in cols.iter().enumerate() {
            p[k] = Dual::variable(params[k], j);
        }
        let r = model.residuals(&p, exec)?;
        if r.len() != m {
            return Err(Error::Dimension {
                what: "residuals",
                expected: m,
                got: r.len(),
            });
        }
        for (i, ri) in r.iter().enumerate() {
            if c == 0 {
                res[i] = ri.re;
            }
            for j in 0..cols.len() {
                jac[(i, c * CHUNK + j)] = ri.eps[j];
            }
        }
    }
    Ok((res, jac))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    LevenbergMarquardt,
    GradientDescent,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Initial step size (gradient methods).
    pub step_size: f64,
    /// Multiplicative step decay per iteration (gradient methods).
    pub step_decay: f64,
    pub momentum: f64,
    /// Halve the step until the loss does not increase (gradient descent).
    pub backtracking: bool,
    pub max_iters: usize,
    /// Stop once the relative loss decrease stays below this for several steps.
    pub tolerance: f64,
    pub grad_clip: Option<f64>,
    /// Total number of starts, including the unperturbed one.
    pub restarts: usize,
    /// Relative size of restart perturbations.
    pub restart_scale: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::LevenbergMarquardt,
            step_size: 1e-2,
            step_decay: 1.0,
            momentum: 0.9,
            backtracking: true,
            max_iters: 200,
            tolerance: 1e-12,
            grad_clip: None,
            restarts: 4,
            restart_scale: 0.1,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.step_decay > 0.0) {
            return Err(Error::Config("step size and decay must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("at least one start is required".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("gradient clip must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub directions: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub initial_loss: f64,
    pub loss: f64,
    pub terms: BTreeMap<String, f64>,
    pub iterations: usize,
    pub converged: bool,
    pub params: Vec<f64>,
    /// Final loss of every start, in start order.
    pub restart_losses: Vec<f64>,
    /// Best-so-far loss after each iteration of the winning start.
    pub history: Vec<f64>,
    pub gradient_check: Option<GradientCheckReport>,
}

struct RunResult {
    params: Vec<f64>,
    loss: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn scatter(full: &[f64], free: &[usize], z: &[f64]) -> Vec<f64> {
    let mut out = full.to_vec();
    for (&k, &v) in free.iter().zip(z) {
        out[k] = v;
    }
    out
}

/// Loss at a trial point; non-finite values count as +∞ so a step into a
/// bad region is simply rejected.
fn trial_loss<M: ResidualModel + ?Sized>(model: &M, p: &[f64], exec: Execution) -> f64 {
    loss(model, p, exec).unwrap_or(f64::INFINITY)
}

fn gradient(r: &DVector<f64>, j: &DMatrix<f64>, rows: usize) -> DVector<f64> {
    j.tr_mul(r) * (2.0 / rows.max(1) as f64)
}

fn clip(g: &mut DVector<f64>, limit: Option<f64>) {
    if let Some(c) = limit {
        let n = g.norm();
        if n > c {
            *g *= c / n;
        }
    }
}

struct Stall {
    count: usize,
}

impl Stall {
    const PATIENCE: usize = 5;

    /// Track consecutive small relative improvements.
    fn update(&mut self, old: f64, new: f64, tol: f64) -> bool {
        if (old - new).abs() <= tol * old.abs() {
            self.count += 1;
        } else {
            self.count = 0;
        }
        self.count >= Self::PATIENCE
    }
}

fn run_lm<M: ResidualModel + ?Sized>(
    model: &M,
    x0: &[f64],
    free: &[usize],
    cfg: &OptimizerConfig,
    exec: Execution,
) -> Result<RunResult> {
    let rows = model.row_count().max(1) as f64;
    let mut x = x0.to_vec();
    let mut f = loss(model, &x, exec)?;
    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut mu = -1.0;
    let mut nu = 2.0;
    let mut stall = Stall { count: 0 };
    let mut converged = false;
    let mut iters = 0;
    let mut diag = vec![0.0; free.len()];
    while iters < cfg.max_iters {
        iters += 1;
        let (r, j) = jacobian(model, &x, free, exec)?;
        let (a, g) = (j.tr_mul(&j) / rows, j.tr_mul(&r) / rows);
        if g.amax() <= 1e-300 || f == 0.0 {
            converged = true;
            history.push(f);
            break;
        }
        let amax = a.diagonal().amax();
        for (i, d) in diag.iter_mut().enumerate() {
            *d = d.max(a[(i, i)]).max(1e-12 * amax).max(1e-300);
        }
        if mu < 0.0 {
            mu = 1e-3;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut lhs = a.clone();
            for i in 0..free.len() {
                lhs[(i, i)] += mu * diag[i];
            }
            let step = match lhs.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    mu *= nu;
                    nu *= 2.0;
                    continue;
                }
            };
            let z: Vec<f64> = free
                .iter()
                .zip(step.iter())
                .map(|(&k, s)| x[k] + s)
                .collect();
            let xn = scatter(&x, free, &z);
            let fn_ = trial_loss(model, &xn, exec);
            // predicted decrease of ½‖r‖²/N along the step
            let pred: f64 = 0.5
                * step
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s * (mu * diag[i] * s - g[i]))
                    .sum::<f64>();
            let rho = (0.5 * (f - fn_)) / pred.max(1e-300);
            if fn_.is_finite() && fn_ <= f && rho > 1e-3 {
                let done = stall.update(f, fn_, cfg.tolerance);
                let step_small = step.amax()
                    <= 1e-15 * (1.0 + free.iter().map(|&k| x[k].abs()).fold(0.0, f64::max));
                x = xn;
                f = fn_;
                mu *= (1.0_f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                accepted = true;
                converged = done || step_small;
                break;
            }
            mu *= nu;
            nu *= 2.0;
            if mu > 1e30 {
                break;
            }
        }
        history.push(f);
        if !accepted {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Ok(RunResult {
        params: x,
        loss: f,
        iterations: iters,
        converged,
        history,
    })
}

fn run_gradient<M: ResidualModel + ?Sized>(
    model: &M,
    x0: &[f64],
    free: &[usize],
    cfg: &OptimizerConfig,
    exec: Execution,
) -> Result<RunResult> {
    let rows = model.row_count();
    let mut x = x0.to_vec();
    let mut f = loss(model, &x, exec)?;
    let mut best = (x.clone(), f);
    let mut history = Vec::with_capacity(cfg.max_iters);
    let n = free.len();
    let mut vel = DVector::<f64>::zeros(n);
    let mut m2 = DVector::<f64>::zeros(n);
    let mut alpha = cfg.step_size;
    let mut stall = Stall { count: 0 };
    let mut converged = false;
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        let (r, j) = jacobian(model, &x, free, exec)?;
        let mut g = gradient(&r, &j, rows);
        clip(&mut g, cfg.grad_clip);
        let step = match cfg.kind {
            OptimizerKind::Adam => {
                let (b1, b2) = (cfg.momentum, 0.999);
                vel = &vel * b1 + &g * (1.0 - b1);
                m2 = &m2 * b2 + g.component_mul(&g) * (1.0 - b2);
                let t = iters as i32;
                let mhat = &vel / (1.0 - b1.powi(t));
                let vhat = &m2 / (1.0 - b2.powi(t));
                -mhat.zip_map(&vhat, |a, b| a / (b.sqrt() + 1e-12)) * alpha
            }
            _ => {
                vel = &vel * cfg.momentum - &g * alpha;
                vel.clone()
            }
        };
        let trial = |s: &DVector<f64>| {
            let z: Vec<f64> = free.iter().zip(s.iter()).map(|(&k, d)| x[k] + d).collect();
            let xn = scatter(&x, free, &z);
            let fn_ = trial_loss(model, &xn, exec);
            (xn, fn_)
        };
        let (mut xn, mut fn_) = trial(&step);
        if cfg.backtracking && cfg.kind == OptimizerKind::GradientDescent {
            let mut shrink = 1.0;
            while !(fn_ <= f) && shrink > 1e-12 {
                shrink *= 0.5;
                vel = -&g * (alpha * shrink);
                (xn, fn_) = trial(&vel);
            }
            if !(fn_ <= f) {
                history.push(best.1);
                converged = true;
                break;
            }
            alpha *= if shrink < 1.0 { shrink.max(0.1) } else { 1.0 };
        }
        if fn_.is_finite() {
            let done = stall.update(f, fn_, cfg.tolerance);
            x = xn;
            f = fn_;
            if f < best.1 {
                best = (x.clone(), f);
            }
            if done {
                converged = true;
            }
        } else {
            vel.fill(0.0);
            alpha *= 0.5;
        }
        alpha *= cfg.step_decay;
        history.push(best.1);
        if converged || g.amax() == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(RunResult {
        params: best.0,
        loss: best.1,
        iterations: iters,
        converged,
        history,
    })
}

fn perturbed_start(x0: &[f64], free: &[usize], k: usize, cfg: &OptimizerConfig) -> Vec<f64> {
    if k == 0 {
        return x0.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(k as u64);
    let mut x = x0.to_vec();
    for &i in free {
        let n: f64 = StandardNormal.sample(&mut rng);
        x[i] += cfg.restart_scale * x0[i].abs().max(1e-2) * n;
    }
    x
}

/// Fit the parameters selected by `mask` (all when `None`), keeping the rest
/// fixed. Returns the best start; deterministic for a given seed.
pub fn identify<M: ResidualModel + ?Sized>(
    model: &M,
    params0: &[f64],
    mask: Option<&[bool]>,
    cfg: &OptimizerConfig,
    exec: Execution,
) -> Result<FitReport> {
    cfg.validate()?;
    check_params(model, params0)?;
    if !params0.iter().all(|x| x.is_finite()) {
        return Err(Error::Config("initial parameters must be finite".into()));
    }
    let free: Vec<usize> = match mask {
        Some(m) => {
            if m.len() != params0.len() {
                return Err(Error::Dimension {
                    what: "parameter mask",
                    expected: params0.len(),
                    got: m.len(),
                });
            }
            (0..m.len()).filter(|&i| m[i]).collect()
        }
        None => (0..params0.len()).collect(),
    };
    let initial_loss = loss(model, params0, exec)?;
    let runs: Vec<Result<RunResult>> = exec.map_range(cfg.restarts, |k| {
        let x = perturbed_start(params0, &free, k, cfg);
        if cfg.max_iters == 0 || free.is_empty() {
            let f = loss(model, &x, exec)?;
            return Ok(RunResult {
                params: x,
                loss: f,
                iterations: 0,
                converged: false,
                history: Vec::new(),
            });
        }
        match cfg.kind {
            OptimizerKind::LevenbergMarquardt => run_lm(model, &x, &free, cfg, exec),
            _ => run_gradient(model, &x, &free, cfg, exec),
        }
    });
    let mut restart_losses = Vec::with_capacity(runs.len());
    let mut best: Option<RunResult> = None;
    let mut first_err = None;
    for r in runs {
        match r {
            Ok(r) => {
                restart_losses.push(r.loss);
                if best.as_ref().is_none_or(|b| r.loss < b.loss) {
                    best = Some(r);
                }
            }
            Err(e) => {
                restart_losses.push(f64::INFINITY);
                first_err.get_or_insert(e);
            }
        }
    }
    let best = match best {
        Some(b) if b.loss.is_finite() => b,
        _ => return Err(first_err.unwrap_or(Error::Divergence { step: 0 })),
    };
    Ok(FitReport {
        initial_loss,
        loss: best.loss,
        terms: model.breakdown(&best.params, exec)?,
        iterations: best.iterations,
        converged: best.converged,
        params: best.params,
        restart_losses,
        history: best.history,
        gradient_check: None,
    })
}

/// Compare dual-number directional derivatives of the loss with a fourth-order
/// central difference along `n_directions` random unit directions restricted
/// to `mask`.
pub fn gradient_check<M: ResidualModel + ?Sized>(
    model: &M,
    params: &[f64],
    mask: Option<&[bool]>,
    n_directions: usize,
    tolerance: f64,
    seed: u64,
    exec: Execution,
) -> Result<GradientCheckReport> {
    check_params(model, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = model.row_count();
    let width = model.row_width();
    let mut worst: f64 = 0.0;
    for _ in 0..n_directions {
        let mut dir: Vec<f64> = (0..params.len())
            .map(|i| {
                if mask.is_none_or(|m| m[i]) {
                    StandardNormal.sample(&mut rng)
                } else {
                    0.0
                }
            })
            .collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        dir.iter_mut().for_each(|d| *d /= norm);
        let seeded: Vec<Dual<1>> = params
            .iter()
            .zip(&dir)
            .map(|(&p, &d)| Dual { re: p, eps: [d] })
            .collect();
        let ad = mean_square(&model.residuals(&seeded, exec)?, rows, width)?.eps[0];
        let h = 1e-4;
        let at = |s: f64| {
            let p: Vec<f64> = params.iter().zip(&dir).map(|(&p, &d)| p + s * d).collect();
            loss(model, &p, exec)
        };
        let fd = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
        let denom = ad.abs().max(fd.abs()).max(1e-12);
        worst = worst.max((ad - fd).abs() / denom);
    }
    Ok(GradientCheckReport {
        directions: n_directions,
        max_rel_error: worst,
        tolerance,
        passed: worst < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `Σ a_i (p_i − c_i)²` written as residuals.
    struct Quadratic {
        a: Vec<f64>,
        c: Vec<f64>,
    }

    impl ResidualModel for Quadratic {
        fn param_count(&self) -> usize {
            self.a.len()
        }
        fn row_count(&self) -> usize {
            1
        }
        fn row_width(&self) -> usize {
            self.a.len()
        }
        fn residuals<T: Real>(&self, p: &[T], _: Execution) -> Result<Vec<T>> {
            Ok(p.iter()
                .zip(&self.a)
                .zip(&self.c)
                .map(|((&x, &a), &c)| (x - c) * a.sqrt())
                .collect())
        }
    }

    fn quad() -> Quadratic {
        Quadratic {
            a: (1..=11).map(|i| i as f64).collect(),
            c: (0..11).map(|i| (i as f64).sin()).collect(),
        }
    }

    #[test]
    fn quadratic_gradient_check_is_exact() {
        let q = quad();
        let r = gradient_check(&q, &[0.3; 11], None, 10, 1e-10, 1, Execution::Sequential).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn jacobian_matches_closed_form_across_chunks() {
        let q = quad();
        let free: Vec<usize> = (0..11).collect();
        let (r, j) = jacobian(&q, &[0.0; 11], &free, Execution::Sequential).unwrap();
        for i in 0..11 {
            assert!((r[i] + q.c[i] * q.a[i].sqrt()).abs() < 1e-15);
            for k in 0..11 {
                let e = if i == k { q.a[i].sqrt() } else { 0.0 };
                assert_eq!(j[(i, k)], e);
            }
        }
    }

    #[test]
    fn zero_budget_returns_start() {
        let q = quad();
        let cfg = OptimizerConfig {
            max_iters: 0,
            restarts: 1,
            ..Default::default()
        };
        let rep = identify(&q, &[0.3; 11], None, &cfg, Execution::Sequential).unwrap();
        assert_eq!(rep.params, vec![0.3; 11]);
        assert_eq!(rep.loss, rep.initial_loss);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn every_optimizer_solves_the_quadratic() {
        let q = quad();
        for kind in [
            OptimizerKind::LevenbergMarquardt,
            OptimizerKind::GradientDescent,
            OptimizerKind::Adam,
        ] {
            let cfg = OptimizerConfig {
                kind,
                max_iters: 3000,
                step_size: if kind == OptimizerKind::Adam {
                    0.05
                } else {
                    0.02
                },
                step_decay: if kind == OptimizerKind::Adam {
                    0.998
                } else {
                    1.0
                },
                restarts: 2,
                ..Default::default()
            };
            let rep = identify(&q, &[0.0; 11], None, &cfg, Execution::Parallel).unwrap();
            assert!(rep.loss < 1e-8, "{kind:?}: {}", rep.loss);
            assert!(
                rep.history.windows(2).all(|w| w[1] <= w[0]),
                "{kind:?} best-so-far increased"
            );
        }
    }

    #[test]
    fn mask_keeps_fixed_entries() {
        let q = quad();
        let mut mask = vec![true; 11];
        mask[3] = false;
        let rep = identify(
            &q,
            &[0.5; 11],
            Some(&mask),
            &OptimizerConfig::default(),
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(rep.params[3], 0.5);
        assert!((rep.params[4] - q.c[4]).abs() < 1e-8);
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let q = quad();
        let cfg = OptimizerConfig {
            kind: OptimizerKind::GradientDescent,
            max_iters: 50,
            seed: 9,
            ..Default::default()
        };
        let a = identify(&q, &[0.0; 11], None, &cfg, Execution::Parallel).unwrap();
        let b = identify(&q, &[0.0; 11], None, &cfg, Execution::Sequential).unwrap();
        assert_eq!(serde_json_like(&a), serde_json_like(&b));
    }

    fn serde_json_like(r: &FitReport) -> Vec<u64> {
        r.params
            .iter()
            .chain(&r.history)
            .chain(&r.restart_losses)
            .map(|x| x.to_bits())
            .collect()
    }
}
