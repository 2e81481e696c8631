//! The cure-time likelihood.
//!
//! The total hazard is h_T(t|x) = h_O(t) + h_D(t|x1) I(t <= tau(x2)) with
//! tau(x2) = exp(beta' x2): the disease adds excess hazard only up to the
//! cure time. Each status level contributes its own term:
//!
//! * 0, 1 (censored / other cause): log U_D(z; tau|x), where U_D follows
//!   S_D up to tau and stays flat at S_D(tau) afterwards;
//! * 2 (disease death): log f_D(z|x1), valid only when z <= tau(x2) —
//!   every disease death is a hard linear constraint log z <= beta' x2;
//! * 3 (death, cause unresolved): log h_T(z|x) + log U_D(z; tau|x).
//!
//! Terms free of (alpha, beta) are dropped, except the background hazard
//! inside the status-3 hazard sum (and its cured-branch constant, kept so
//! reported log-likelihoods are comparable across beta).
//!
//! For the beta step the indicators are replaced by the sigmoid
//! R(u; sigma) = 1/(1 + exp(-u/sigma)), making the objective
//! differentiable; disease deaths then enter only through the constraints.
//! Everything is computed in log space; the smoothed U_D is assembled as a
//! log-sum-exp so no subtraction of near-equal survivals ever occurs.

use serde::{Deserialize, Serialize};

use crate::data::{CensoringStatus, Dataset, Observation};
use crate::excess::ExcessModel;
use crate::lifetable::{background_hazard, LifeTable, SubjectBackground};

/// Cap on exp(beta' x2); beyond this the cure time is effectively infinite
/// and all plateau terms vanish smoothly.
const TAU_CAP: f64 = 1e12;

/// Slack for the disease-death feasibility test log z <= beta'x2. The test
/// runs in log space: a beta sitting exactly on the constraint boundary
/// must classify its own disease death as feasible despite exp/ln
/// round-off.
const CONSTRAINT_LOG_SLACK: f64 = 1e-9;

fn disease_feasible(ln_z: f64, tau: f64) -> bool {
    ln_z <= tau.ln() + CONSTRAINT_LOG_SLACK
}

/// Full parameter state of a cure time model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtmParams {
    pub model: ExcessModel,
    /// Cure-time coefficients; tau(x) = exp(beta' x2).
    pub beta: Vec<f64>,
    /// Ridge weight on beta (the objective subtracts (n/2) kappa beta'beta).
    pub kappa: f64,
    /// Sigmoid bandwidth for the smoothed beta objective.
    pub sigma_n: f64,
    /// Columns of x entering the excess distribution (x1).
    pub x1_idx: Vec<usize>,
    /// Columns of x entering the cure time (x2).
    pub x2_idx: Vec<usize>,
}

impl CtmParams {
    /// Both covariate subsets default to the full design.
    pub fn new(model: ExcessModel, beta: Vec<f64>, kappa: f64, sigma_n: f64, p: usize) -> Self {
        assert!(kappa >= 0.0, "kappa must be >= 0");
        assert!(sigma_n > 0.0, "sigma_n must be > 0");
        let idx: Vec<usize> = (0..p).collect();
        assert_eq!(model.p(), p);
        assert_eq!(beta.len(), p);
        Self {
            model,
            beta,
            kappa,
            sigma_n,
            x1_idx: idx.clone(),
            x2_idx: idx,
        }
    }

    pub fn with_masks(mut self, x1_idx: Vec<usize>, x2_idx: Vec<usize>) -> Self {
        assert_eq!(self.model.p(), x1_idx.len());
        assert_eq!(self.beta.len(), x2_idx.len());
        self.x1_idx = x1_idx;
        self.x2_idx = x2_idx;
        self
    }

    pub fn gather1(&self, x: &[f64]) -> Vec<f64> {
        self.x1_idx.iter().map(|&j| x[j]).collect()
    }

    pub fn gather2(&self, x: &[f64]) -> Vec<f64> {
        self.x2_idx.iter().map(|&j| x[j]).collect()
    }

    /// tau(x) = exp(beta' x2), capped to keep arithmetic finite.
    pub fn tau(&self, x: &[f64]) -> f64 {
        let lp: f64 = self.x2_idx.iter().zip(&self.beta).map(|(&j, b)| b * x[j]).sum();
        lp.exp().min(TAU_CAP)
    }

    /// Cure rate pi(x) = S_D(tau(x)|x1).
    pub fn cure_rate(&self, x: &[f64]) -> f64 {
        self.model.survival(self.tau(x), &self.gather1(x))
    }
}

pub fn sigmoid(w: f64) -> f64 {
    if w >= 0.0 {
        1.0 / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

fn softplus(w: f64) -> f64 {
    if w > 0.0 {
        w + (-w).exp().ln_1p()
    } else {
        w.exp().ln_1p()
    }
}

/// The indicator smoother R(u; sigma) = 1/(1 + exp(-u/sigma)).
pub fn sigmoid_r(u: f64, sigma: f64) -> f64 {
    sigmoid(u / sigma)
}

fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// U_D(t; tau|x): follows S_D to tau, constant S_D(tau) afterwards.
pub fn u_d(params: &CtmParams, t: f64, x: &[f64]) -> f64 {
    log_u_d(params, t, x).exp()
}

pub fn log_u_d(params: &CtmParams, t: f64, x: &[f64]) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let tau = params.tau(x);
    let x1 = params.gather1(x);
    if t <= tau {
        params.model.log_sfh(t, &x1).log_s
    } else {
        params.model.log_sfh(tau, &x1).log_s
    }
}

/// One observation's contribution to the objective. Returns -inf (not an
/// error) when a disease death violates its constraint z <= tau(x); only
/// the grid search ever evaluates that branch.
pub fn loglik_contribution(params: &CtmParams, obs: &Observation, lt: &LifeTable) -> f64 {
    let tau = params.tau(&obs.x);
    let x1 = params.gather1(&obs.x);
    match obs.delta {
        CensoringStatus::Censored | CensoringStatus::OtherCause => {
            let t = if obs.z <= tau { obs.z } else { tau };
            params.model.log_sfh(t, &x1).log_s
        }
        CensoringStatus::Disease => {
            if disease_feasible(obs.z.ln(), tau) {
                params.model.log_sfh(obs.z, &x1).log_f
            } else {
                f64::NEG_INFINITY
            }
        }
        CensoringStatus::AnyDeath => {
            let h_o = background_hazard(lt, &SubjectBackground::from(obs), obs.z);
            if obs.z <= tau {
                let logs = params.model.log_sfh(obs.z, &x1);
                (h_o + logs.log_h.exp()).ln() + logs.log_s
            } else {
                h_o.ln() + params.model.log_sfh(tau, &x1).log_s
            }
        }
    }
}

/// Penalized objective: sum of contributions minus (n/2) kappa beta'beta.
pub fn objective(params: &CtmParams, d: &Dataset, lt: &LifeTable) -> f64 {
    let fd = FitData::new(d, lt, &params.x1_idx, &params.x2_idx);
    let taus = fd.taus(&params.beta);
    alpha_objective(&fd, &params.model, &taus) - penalty(params, fd.n)
}

fn penalty(params: &CtmParams, n: usize) -> f64 {
    0.5 * n as f64 * params.kappa * params.beta.iter().map(|b| b * b).sum::<f64>()
}

/// Smoothed, penalized beta objective: indicators replaced by the sigmoid
/// in both the hazard sum and U_D; disease deaths contribute nothing.
pub fn smoothed_beta_objective(params: &CtmParams, d: &Dataset, lt: &LifeTable) -> f64 {
    let fd = FitData::new(d, lt, &params.x1_idx, &params.x2_idx);
    let cache = BetaCache::new(&fd, &params.model);
    beta_objective(&fd, &cache, &params.model, &params.beta, params.kappa, params.sigma_n)
}

/// Analytic gradient of [`smoothed_beta_objective`] in beta (includes the
/// -n kappa beta penalty term).
pub fn grad_beta_smoothed(params: &CtmParams, d: &Dataset, lt: &LifeTable) -> Vec<f64> {
    let fd = FitData::new(d, lt, &params.x1_idx, &params.x2_idx);
    let cache = BetaCache::new(&fd, &params.model);
    beta_objective_grad(
        &fd,
        &cache,
        &params.model,
        &params.beta,
        params.kappa,
        params.sigma_n,
    )
    .1
}

/// Analytic gradient of l_beta(alpha) in the stacked (alpha1, alpha2).
pub fn grad_alpha_given_beta(params: &CtmParams, d: &Dataset, lt: &LifeTable) -> Vec<f64> {
    let fd = FitData::new(d, lt, &params.x1_idx, &params.x2_idx);
    let taus = fd.taus(&params.beta);
    alpha_objective_grad(&fd, &params.model, &taus).1
}

/// Net-survival factor of the classical cure baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CureBaseline {
    /// pi + (1 - pi) S_u(t), S_u the uncured survival.
    Mixture,
    /// pi^{F0(t)}, F0 the single-cell event cdf.
    NonMixture,
}

pub fn baseline_cure_survival<F: Fn(f64) -> f64>(
    kind: CureBaseline,
    pi: f64,
    su_or_f0: F,
    t: f64,
) -> f64 {
    assert!(pi > 0.0 && pi < 1.0, "pi must be in (0,1)");
    match kind {
        CureBaseline::Mixture => pi + (1.0 - pi) * su_or_f0(t),
        CureBaseline::NonMixture => (su_or_f0(t) * pi.ln()).exp(),
    }
}

// ---------------------------------------------------------------------------
// internal evaluation engine shared with the optimizer

/// Per-observation caches that never change during a fit.
pub(crate) struct FitData {
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub z: Vec<f64>,
    pub ln_z: Vec<f64>,
    pub delta: Vec<CensoringStatus>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub h_o_z: Vec<f64>,
}

impl FitData {
    pub fn new(d: &Dataset, lt: &LifeTable, x1_idx: &[usize], x2_idx: &[usize]) -> Self {
        let n = d.len();
        let p1 = x1_idx.len();
        let p2 = x2_idx.len();
        let mut z = Vec::with_capacity(n);
        let mut ln_z = Vec::with_capacity(n);
        let mut delta = Vec::with_capacity(n);
        let mut x1 = Vec::with_capacity(n * p1);
        let mut x2 = Vec::with_capacity(n * p2);
        let mut h_o_z = Vec::with_capacity(n);
        for obs in d.observations() {
            z.push(obs.z);
            ln_z.push(obs.z.ln());
            delta.push(obs.delta);
            for &j in x1_idx {
                x1.push(obs.x[j]);
            }
            for &j in x2_idx {
                x2.push(obs.x[j]);
            }
            h_o_z.push(background_hazard(lt, &SubjectBackground::from(obs), obs.z));
        }
        Self {
            n,
            p1,
            p2,
            z,
            ln_z,
            delta,
            x1,
            x2,
            h_o_z,
        }
    }

    pub fn x1_row(&self, i: usize) -> &[f64] {
        &self.x1[i * self.p1..(i + 1) * self.p1]
    }

    pub fn x2_row(&self, i: usize) -> &[f64] {
        &self.x2[i * self.p2..(i + 1) * self.p2]
    }

    pub fn taus(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lp: f64 = self.x2_row(i).iter().zip(beta).map(|(x, b)| x * b).sum();
                lp.exp().min(TAU_CAP)
            })
            .collect()
    }
}

/// l_beta(alpha): the exact objective at fixed cure times (no penalty).
pub(crate) fn alpha_objective(fd: &FitData, model: &ExcessModel, taus: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..fd.n {
        let tau = taus[i];
        let z = fd.z[i];
        let x1 = fd.x1_row(i);
        let term = match fd.delta[i] {
            CensoringStatus::Censored | CensoringStatus::OtherCause => {
                model.log_sfh(if z <= tau { z } else { tau }, x1).log_s
            }
            CensoringStatus::Disease => {
                if disease_feasible(fd.ln_z[i], tau) {
                    model.log_sfh(z, x1).log_f
                } else {
                    return f64::NEG_INFINITY;
                }
            }
            CensoringStatus::AnyDeath => {
                if z <= tau {
                    let logs = model.log_sfh(z, x1);
                    (fd.h_o_z[i] + logs.log_h.exp()).ln() + logs.log_s
                } else {
                    fd.h_o_z[i].ln() + model.log_sfh(tau, x1).log_s
                }
            }
        };
        if term == f64::NEG_INFINITY || term.is_nan() {
            return f64::NEG_INFINITY;
        }
        acc += term;
    }
    acc
}

fn axpy(acc: &mut [f64], offset: usize, scale: f64, x: &[f64]) {
    for (a, xi) in acc[offset..offset + x.len()].iter_mut().zip(x) {
        *a += scale * xi;
    }
}

/// Value and gradient of l_beta(alpha); taus must be feasible for every
/// disease death.
pub(crate) fn alpha_objective_grad(
    fd: &FitData,
    model: &ExcessModel,
    taus: &[f64],
) -> (f64, Vec<f64>) {
    let p1 = fd.p1;
    let mut value = 0.0;
    let mut grad = vec![0.0; 2 * p1];
    for i in 0..fd.n {
        let tau = taus[i];
        let z = fd.z[i];
        let x1 = fd.x1_row(i);
        match fd.delta[i] {
            CensoringStatus::Censored | CensoringStatus::OtherCause => {
                let t = if z <= tau { z } else { tau };
                let (logs, g) = model.log_sfh_grad(t, x1);
                value += logs.log_s;
                axpy(&mut grad, 0, g.dlog_s[0], x1);
                axpy(&mut grad, p1, g.dlog_s[1], x1);
            }
            CensoringStatus::Disease => {
                debug_assert!(
                    disease_feasible(fd.ln_z[i], tau),
                    "infeasible disease death in gradient path"
                );
                let (logs, g) = model.log_sfh_grad(z, x1);
                value += logs.log_f;
                axpy(&mut grad, 0, g.dlog_f[0], x1);
                axpy(&mut grad, p1, g.dlog_f[1], x1);
            }
            CensoringStatus::AnyDeath => {
                if z <= tau {
                    let (logs, g) = model.log_sfh_grad(z, x1);
                    let h_d = logs.log_h.exp();
                    let h_t = fd.h_o_z[i] + h_d;
                    value += h_t.ln() + logs.log_s;
                    let w = h_d / h_t;
                    axpy(&mut grad, 0, g.dlog_s[0] + w * g.dlog_h[0], x1);
                    axpy(&mut grad, p1, g.dlog_s[1] + w * g.dlog_h[1], x1);
                } else {
                    let (logs, g) = model.log_sfh_grad(tau, x1);
                    value += fd.h_o_z[i].ln() + logs.log_s;
                    axpy(&mut grad, 0, g.dlog_s[0], x1);
                    axpy(&mut grad, p1, g.dlog_s[1], x1);
                }
            }
        }
    }
    (value, grad)
}

/// Quantities at the observed times that stay fixed while beta moves.
pub(crate) struct BetaCache {
    pub log_s_z: Vec<f64>,
    pub h_d_z: Vec<f64>,
}

impl BetaCache {
    pub fn new(fd: &FitData, model: &ExcessModel) -> Self {
        let mut log_s_z = Vec::with_capacity(fd.n);
        let mut h_d_z = Vec::with_capacity(fd.n);
        for i in 0..fd.n {
            let logs = model.log_sfh(fd.z[i], fd.x1_row(i));
            log_s_z.push(logs.log_s);
            h_d_z.push(logs.log_h.exp());
        }
        Self { log_s_z, h_d_z }
    }
}

/// Smoothed penalized objective in beta at fixed alpha.
pub(crate) fn beta_objective(
    fd: &FitData,
    cache: &BetaCache,
    model: &ExcessModel,
    beta: &[f64],
    kappa: f64,
    sigma: f64,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..fd.n {
        if fd.delta[i] == CensoringStatus::Disease {
            continue;
        }
        let lp: f64 = fd.x2_row(i).iter().zip(beta).map(|(x, b)| x * b).sum();
        let tau = lp.exp().min(TAU_CAP);
        let v = (tau - fd.z[i]) / sigma;
        let ln_r = -softplus(-v);
        let ln_1mr = -softplus(v);
        let log_s_tau = model.log_sfh(tau, fd.x1_row(i)).log_s;
        let delta_log = log_s_tau - cache.log_s_z[i];
        let log_u = cache.log_s_z[i] + logsumexp2(ln_r, ln_1mr + delta_log);
        if log_u.is_nan() {
            return f64::NEG_INFINITY;
        }
        acc += log_u;
        if fd.delta[i] == CensoringStatus::AnyDeath {
            let r = sigmoid(v);
            let h_s = fd.h_o_z[i] + cache.h_d_z[i] * r;
            if !(h_s > 0.0) {
                return f64::NEG_INFINITY;
            }
            acc += h_s.ln();
        }
    }
    let pen = 0.5 * fd.n as f64 * kappa * beta.iter().map(|b| b * b).sum::<f64>();
    acc - pen
}

/// Value and analytic gradient of the smoothed penalized beta objective.
pub(crate) fn beta_objective_grad(
    fd: &FitData,
    cache: &BetaCache,
    model: &ExcessModel,
    beta: &[f64],
    kappa: f64,
    sigma: f64,
) -> (f64, Vec<f64>) {
    let p2 = fd.p2;
    let mut value = 0.0;
    let mut grad = vec![0.0; p2];
    for i in 0..fd.n {
        if fd.delta[i] == CensoringStatus::Disease {
            continue;
        }
        let x2 = fd.x2_row(i);
        let lp: f64 = x2.iter().zip(beta).map(|(x, b)| x * b).sum();
        let tau = lp.exp().min(TAU_CAP);
        let v = (tau - fd.z[i]) / sigma;
        let r = sigmoid(v);
        let ln_r = -softplus(-v);
        let ln_1mr = -softplus(v);
        let logs_tau = model.log_sfh(tau, fd.x1_row(i));
        let delta_log = logs_tau.log_s - cache.log_s_z[i];
        let lse = logsumexp2(ln_r, ln_1mr + delta_log);
        value += cache.log_s_z[i] + lse;

        // softmax weights of the two branches of U
        let w_b = if ln_1mr + delta_log == f64::NEG_INFINITY {
            0.0
        } else {
            (ln_1mr + delta_log - lse).exp()
        };
        let w_a = 1.0 - w_b;
        // d logU/d beta = tau * [ (w_a(1-R) - w_b R)/sigma - w_b h_D(tau) ] x2
        let mut coef = (w_a * (1.0 - r) - w_b * r) / sigma;
        if w_b > 0.0 {
            let h_d_tau = logs_tau.log_h.exp();
            if h_d_tau.is_finite() {
                coef -= w_b * h_d_tau;
            }
        }
        axpy(&mut grad, 0, tau * coef, x2);

        if fd.delta[i] == CensoringStatus::AnyDeath {
            let h_s = fd.h_o_z[i] + cache.h_d_z[i] * r;
            value += h_s.ln();
            let coef3 = cache.h_d_z[i] * r * (1.0 - r) / sigma * tau / h_s;
            axpy(&mut grad, 0, coef3, x2);
        }
    }
    let pen = 0.5 * fd.n as f64 * kappa * beta.iter().map(|b| b * b).sum::<f64>();
    for (g, b) in grad.iter_mut().zip(beta) {
        *g -= fd.n as f64 * kappa * b;
    }
    (value - pen, grad)
}
