//! Certified-region search: a uniform-radius baseline found by binary search,
//! and per-feature volume maximization by the augmented Lagrangian method.
//!
//! The non-uniform problem minimizes `-sum log eps_j` subject to the margin
//! vector staying nonnegative. A nonnegative slack turns the inequality into
//! an equality whose augmented Lagrangian has a closed-form optimal slack
//! `y = max(0, v + lambda / rho)`. The inner minimization runs plain gradient
//! descent on `zeta` with `eps = zeta^2`, which keeps every radius positive
//! without projection; gradients are rescaled when their norm explodes. After
//! the dual loop a shrink pass multiplies the radii by `eta` until the hard
//! constraint holds, and the result is re-verified from scratch.

use serde::{Deserialize, Serialize};

use crate::analysis::{geo_mean_volume, neg_log_volume};
use crate::error::{Error, Result};
use crate::gradient::{margin_and_grad, margin_values};
use crate::linalg::{dot, norm2};
use crate::model::{Budget, Dataset, Network};
use crate::propagation::bounds_combined;

/// How the non-uniform optimizer picks its starting radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EpsInit {
    /// `factor` times the certified uniform radius, per feature. The uniform
    /// solution is also kept as a fallback candidate, so the final volume
    /// never drops below it.
    WarmStart { factor: f64 },
    /// A fixed uniform starting radius, no fallback.
    Fixed { value: f64 },
}

impl Default for EpsInit {
    fn default() -> Self {
        EpsInit::WarmStart { factor: 0.9 }
    }
}

/// Settings of the augmented-Lagrangian search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlConfig {
    /// Dual (outer) iterations.
    pub outer_iters: usize,
    /// Gradient steps per outer iteration.
    pub inner_steps: usize,
    /// Step size on `zeta`.
    pub inner_step_size: f64,
    /// Multiplier applied to the step size every `decay_every` outer iters.
    pub step_decay: f64,
    pub decay_every: usize,
    /// First penalty coefficient; grows by `rho_growth` per outer iteration,
    /// capped at `rho_max`.
    pub rho0: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Gradients are rescaled to this L2 norm when they exceed it.
    pub grad_norm_cap: f64,
    /// Shrink factor of the final feasibility loop.
    pub eta: f64,
    /// Required logit margin.
    pub delta: f64,
    pub eps_init: EpsInit,
    /// Search range and tolerance of the uniform baseline.
    pub gamma_hi: f64,
    pub gamma_tol: f64,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            outer_iters: 20,
            inner_steps: 50,
            inner_step_size: 0.01,
            step_decay: 0.5,
            decay_every: 5,
            rho0: 1.0,
            rho_growth: 2.0,
            rho_max: 1e4,
            grad_norm_cap: 10.0,
            eta: 0.99,
            delta: 1e-3,
            eps_init: EpsInit::default(),
            gamma_hi: 10.0,
            gamma_tol: 1e-6,
        }
    }
}

impl AlConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.outer_iters >= 1
            && self.inner_steps >= 1
            && self.inner_step_size > 0.0
            && self.step_decay > 0.0
            && self.decay_every >= 1
            && self.rho0 > 0.0
            && self.rho_growth >= 1.0
            && self.rho_max >= self.rho0
            && self.grad_norm_cap > 0.0
            && self.eta > 0.0
            && self.eta < 1.0
            && self.delta > 0.0
            && self.gamma_hi > 0.0
            && self.gamma_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArg("augmented-Lagrangian config out of range".into()))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: AlConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Outcome of one non-uniform certification.
#[derive(Debug, Clone, PartialEq)]
pub struct CertResult {
    pub eps: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Margin at the returned radii, from an independent bound run.
    pub v: Vec<f64>,
    pub feasible: bool,
    pub geo_mean: f64,
    pub neg_log_volume: f64,
    pub iterations_used: usize,
}

fn min_margin(net: &Network, x: &[f64], eps: &[f64], class: usize, delta: f64) -> Result<f64> {
    let budget = Budget::new(x.to_vec(), eps.to_vec())?;
    let bounds = bounds_combined(net, &budget)?;
    let v = margin_values(&bounds, class, delta)?;
    Ok(v.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Largest certified uniform radius in `[0, gamma_hi]`, to tolerance `tol`.
///
/// The returned radius is itself certified. Errors when the point is not
/// classified as `class` with margin at least `delta`.
pub fn certify_uniform(
    net: &Network,
    x: &[f64],
    class: usize,
    delta: f64,
    gamma_hi: f64,
    tol: f64,
) -> Result<f64> {
    if gamma_hi <= 0.0 || tol <= 0.0 {
        return Err(Error::InvalidArg("gamma_hi and tol must be positive".into()));
    }
    if min_margin(net, x, &vec![0.0; x.len()], class, delta)? < 0.0 {
        return Err(Error::NotCertifiable(format!(
            "forward margin below delta={delta} at the anchor point"
        )));
    }
    let feasible = |g: f64| -> Result<bool> {
        Ok(min_margin(net, x, &vec![g; x.len()], class, delta)? >= 0.0)
    };
    if feasible(gamma_hi)? {
        return Ok(gamma_hi);
    }
    let mut lo = 0.0;
    let mut hi = gamma_hi;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Closed-form minimizer of the augmented term over the nonnegative slack.
pub fn optimal_slack(v: &[f64], lambda: &[f64], rho: f64) -> Vec<f64> {
    assert!(rho > 0.0, "rho must be positive");
    v.iter().zip(lambda).map(|(&vi, &li)| (vi + li / rho).max(0.0)).collect()
}

/// Objective value `-sum log eps + <lambda, v - y> + rho/2 |v - y|^2`.
pub fn lagrangian_value(
    eps: &[f64],
    v: &[f64],
    y: &[f64],
    lambda: &[f64],
    rho: f64,
) -> Result<f64> {
    let barrier = neg_log_volume(eps)?;
    let r = crate::linalg::vsub(v, y);
    Ok(barrier + dot(lambda, &r) + 0.5 * rho * dot(&r, &r))
}

/// Dual ascent step `lambda + rho (v - y)`.
fn dual_update(lambda: &[f64], v: &[f64], y: &[f64], rho: f64) -> Vec<f64> {
    lambda
        .iter()
        .zip(v.iter().zip(y))
        .map(|(&l, (&vi, &yi))| l + rho * (vi - yi))
        .collect()
}

/// Multiplies the radii by `eta` until the margin is nonnegative.
pub fn shrink_to_feasible(
    net: &Network,
    x: &[f64],
    class: usize,
    eps: &[f64],
    eta: f64,
    delta: f64,
) -> Result<Vec<f64>> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidArg("eta must lie in (0, 1)".into()));
    }
    let mut cur = eps.to_vec();
    loop {
        if min_margin(net, x, &cur, class, delta)? >= 0.0 {
            return Ok(cur);
        }
        if cur.iter().cloned().fold(0.0, f64::max) < 1e-12 {
            return Err(Error::NotCertifiable(
                "margin stays negative as the box collapses".into(),
            ));
        }
        for e in cur.iter_mut() {
            *e *= eta;
        }
    }
}

/// Per-feature radius maximization (largest certified box volume).
pub fn certify_nonuniform(
    net: &Network,
    x: &[f64],
    class: usize,
    cfg: &AlConfig,
) -> Result<CertResult> {
    cfg.validate()?;
    let n1 = x.len();
    if n1 != net.input_size() {
        return Err(Error::DimMismatch(format!(
            "input length {} != network input {}",
            n1,
            net.input_size()
        )));
    }

    let (eps0, fallback_gamma) = match cfg.eps_init {
        EpsInit::WarmStart { factor } => {
            if factor <= 0.0 {
                return Err(Error::InvalidArg("warm-start factor must be positive".into()));
            }
            let gamma = certify_uniform(net, x, class, cfg.delta, cfg.gamma_hi, cfg.gamma_tol)?;
            if gamma <= 0.0 {
                return Err(Error::NotCertifiable(
                    "no certifiable uniform radius above zero".into(),
                ));
            }
            (vec![factor * gamma; n1], Some(gamma))
        }
        EpsInit::Fixed { value } => {
            if value <= 0.0 {
                return Err(Error::InvalidArg("fixed starting radius must be positive".into()));
            }
            (vec![value; n1], None)
        }
    };

    let mut zeta: Vec<f64> = eps0.iter().map(|e| e.sqrt()).collect();
    let mut lambda = vec![0.0; net.output_size() - 1];
    let mut rho = cfg.rho0;

    for outer in 1..=cfg.outer_iters {
        if outer > 1 {
            rho = (rho * cfg.rho_growth).min(cfg.rho_max);
        }
        let lr = cfg.inner_step_size
            * cfg.step_decay.powi(((outer - 1) / cfg.decay_every) as i32);

        for step in 0..cfg.inner_steps {
            let eps: Vec<f64> = zeta.iter().map(|z| z * z).collect();
            let budget = Budget::new(x.to_vec(), eps.clone())?;
            let margin = margin_and_grad(net, &budget, class, cfg.delta)?;
            let y = optimal_slack(&margin.values, &lambda, rho);
            // with the slack at its optimum, the outer objective feels only
            // lambda + rho (v - y) through the margin
            let force: Vec<f64> = lambda
                .iter()
                .zip(margin.values.iter().zip(&y))
                .map(|(&l, (&vi, &yi))| l + rho * (vi - yi))
                .collect();
            let mut grad_zeta = vec![0.0; n1];
            for j in 0..n1 {
                let mut g = -1.0 / eps[j];
                for (row, f) in force.iter().enumerate() {
                    g += margin.grad.get(row, j) * f;
                }
                grad_zeta[j] = 2.0 * zeta[j] * g;
            }
            if grad_zeta.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at outer {outer}, inner {step}"
                )));
            }
            let norm = norm2(&grad_zeta);
            if norm > cfg.grad_norm_cap {
                let s = cfg.grad_norm_cap / norm;
                for g in grad_zeta.iter_mut() {
                    *g *= s;
                }
            }
            for j in 0..n1 {
                zeta[j] -= lr * grad_zeta[j];
                if zeta[j] * zeta[j] <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "radius collapsed to zero at outer {outer}, inner {step}"
                    )));
                }
            }
        }

        let eps: Vec<f64> = zeta.iter().map(|z| z * z).collect();
        let budget = Budget::new(x.to_vec(), eps)?;
        let bounds = bounds_combined(net, &budget)?;
        let v = margin_values(&bounds, class, cfg.delta)?;
        let y = optimal_slack(&v, &lambda, rho);
        lambda = dual_update(&lambda, &v, &y, rho);
    }

    let eps_al: Vec<f64> = zeta.iter().map(|z| z * z).collect();
    let mut best = shrink_to_feasible(net, x, class, &eps_al, cfg.eta, cfg.delta)?;
    if let Some(gamma) = fallback_gamma {
        if geo_mean_volume(&best)? < gamma {
            best = vec![gamma; n1];
        }
    }

    // independent re-verification of the hard constraint
    let bounds = bounds_combined(net, &Budget::new(x.to_vec(), best.clone())?)?;
    let v = margin_values(&bounds, class, cfg.delta)?;
    let feasible = v.iter().all(|&vi| vi >= 0.0);
    Ok(CertResult {
        geo_mean: geo_mean_volume(&best)?,
        neg_log_volume: neg_log_volume(&best)?,
        eps: best,
        lambda,
        v,
        feasible,
        iterations_used: cfg.outer_iters,
    })
}

/// Certification mode of the batch driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertMode {
    Uniform,
    NonUniform,
}

/// One row of a certification report.
#[derive(Debug, Clone, PartialEq)]
pub struct PointReport {
    pub index: usize,
    pub label: usize,
    pub feasible: bool,
    pub gamma: f64,
    pub geo_mean: f64,
    pub ratio: f64,
    pub eps: Vec<f64>,
}

/// Certifies every dataset row, fanning out over `workers` (0 = default
/// pool). Rows come back in input order; points that cannot be certified get
/// `feasible = false` and zero radii.
pub fn certify_dataset(
    net: &Network,
    ds: &Dataset,
    mode: CertMode,
    cfg: &AlConfig,
    workers: usize,
) -> Vec<PointReport> {
    let dim = ds.feature_len();
    crate::exec::map_indices(ds.len(), workers, |i| {
        let p = &ds.points[i];
        let infeasible = PointReport {
            index: i,
            label: p.label,
            feasible: false,
            gamma: 0.0,
            geo_mean: 0.0,
            ratio: 0.0,
            eps: vec![0.0; dim],
        };
        match mode {
            CertMode::Uniform => {
                match certify_uniform(net, &p.features, p.label, cfg.delta, cfg.gamma_hi, cfg.gamma_tol)
                {
                    Ok(gamma) if gamma > 0.0 => PointReport {
                        index: i,
                        label: p.label,
                        feasible: true,
                        gamma,
                        geo_mean: gamma,
                        ratio: 1.0,
                        eps: vec![gamma; dim],
                    },
                    _ => infeasible,
                }
            }
            CertMode::NonUniform => {
                let gamma = certify_uniform(
                    net,
                    &p.features,
                    p.label,
                    cfg.delta,
                    cfg.gamma_hi,
                    cfg.gamma_tol,
                )
                .unwrap_or(0.0);
                match certify_nonuniform(net, &p.features, p.label, cfg) {
                    Ok(res) if res.feasible => PointReport {
                        index: i,
                        label: p.label,
                        feasible: true,
                        gamma,
                        geo_mean: res.geo_mean,
                        ratio: if gamma > 0.0 { res.geo_mean / gamma } else { 0.0 },
                        eps: res.eps,
                    },
                    _ => infeasible,
                }
            }
        }
    })
}
