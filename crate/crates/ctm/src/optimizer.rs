//! Alternating constrained maximum likelihood.
//!
//! One outer cycle is (1) unconstrained gradient ascent in the excess
//! distribution coefficients alpha at fixed beta, then (2) projected
//! gradient ascent in the cure-time coefficients beta on the smoothed
//! penalized objective at fixed alpha, subject to the per-observation
//! linear constraints log z_i <= beta' x2_i from disease deaths. Cycles
//! repeat until the exact penalized objective and the parameters both
//! settle. A one-dimensional grid search over the cure time is provided
//! for the intercept-only case.
//!
//! Both half-steps use Armijo backtracking, so each half-step's own
//! objective is nondecreasing across accepted iterates.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CensoringStatus, Dataset};
use crate::excess::{ExcessModel, Family, LocationLink};
use crate::lifetable::LifeTable;
use crate::likelihood::{
    alpha_objective, alpha_objective_grad, beta_objective, beta_objective_grad, BetaCache,
    CtmParams, FitData,
};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("dataset has no uncensored observations")]
    NoEvents,
    #[error("cure-time design has no intercept column; cannot restore feasibility")]
    NoIntercept,
    #[error(
        "all grid points are infeasible: a disease death at z = {max_z2} exceeds tau_max = {tau_max}; enlarge the grid"
    )]
    GridInfeasible { max_z2: f64, tau_max: f64 },
    #[error("grid search requires an intercept-only cure-time design")]
    GridNeedsIntercept,
    #[error("{0}")]
    Invalid(String),
}

/// Grid for the intercept-only cure-time search. Bounds default to
/// min(z)*1.01 and max(z)*1.2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    pub points: usize,
    pub refine: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            tau_min: None,
            tau_max: None,
            points: 400,
            refine: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Relative tolerance on the penalized objective across outer cycles.
    pub tol_obj: f64,
    /// Sup-norm tolerance on parameter change.
    pub tol_param: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub init_step: f64,
    /// Feasibility tolerance for accepted beta iterates.
    pub constraint_slack: f64,
    /// Ridge weight; `None` means 1/n.
    pub kappa: Option<f64>,
    /// Sigmoid bandwidth; `None` means n^(-1/2).
    pub sigma_n: Option<f64>,
    /// Covariate columns for the excess distribution; `None` means all.
    pub x1_idx: Option<Vec<usize>>,
    /// Covariate columns for the cure time; `None` means all.
    pub x2_idx: Option<Vec<usize>>,
    pub mu_link: LocationLink,
    pub grid: GridSpec,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 200,
            max_inner_iters: 500,
            tol_obj: 1e-9,
            tol_param: 1e-7,
            armijo_c: 1e-4,
            backtrack: 0.5,
            init_step: 1.0,
            constraint_slack: 1e-9,
            kappa: None,
            sigma_n: None,
            x1_idx: None,
            x2_idx: None,
            mu_link: LocationLink::Identity,
            grid: GridSpec::default(),
        }
    }
}

/// Linear constraints log(z_i) <= beta' x2_i collected from disease deaths.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    /// One row of x2 per disease death.
    pub rows: Vec<Vec<f64>>,
    /// log z of the matching observation.
    pub bounds: Vec<f64>,
}

impl ConstraintSet {
    pub(crate) fn from_fit_data(fd: &FitData) -> Self {
        let mut rows = Vec::new();
        let mut bounds = Vec::new();
        for i in 0..fd.n {
            if fd.delta[i] == CensoringStatus::Disease {
                rows.push(fd.x2_row(i).to_vec());
                bounds.push(fd.ln_z[i]);
            }
        }
        Self { rows, bounds }
    }

    pub fn from_dataset(d: &Dataset, x2_idx: &[usize]) -> Self {
        let mut rows = Vec::new();
        let mut bounds = Vec::new();
        for obs in d.observations() {
            if obs.delta == CensoringStatus::Disease {
                rows.push(x2_idx.iter().map(|&j| obs.x[j]).collect());
                bounds.push(obs.z.ln());
            }
        }
        Self { rows, bounds }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Smallest slack beta' x2_i - log z_i (infinity when unconstrained).
    pub fn min_slack(&self, beta: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.bounds)
            .map(|(a, b)| dot(a, beta) - b)
            .fold(f64::INFINITY, f64::min)
    }

    /// Scale-aware activity test: |beta'x - log z| <= 1e-8 (1 + |log z|).
    pub fn active_indices(&self, beta: &[f64]) -> Vec<usize> {
        self.rows
            .iter()
            .zip(&self.bounds)
            .enumerate()
            .filter(|(_, (a, b))| (dot(a, beta) - **b).abs() <= 1e-8 * (1.0 + b.abs()))
            .map(|(i, _)| i)
            .collect()
    }

    /// Largest step along `dir` keeping every constraint satisfied.
    pub fn max_step(&self, beta: &[f64], dir: &[f64]) -> f64 {
        let mut s = f64::INFINITY;
        for (a, b) in self.rows.iter().zip(&self.bounds) {
            let ad = dot(a, dir);
            if ad < -1e-14 {
                let slack = dot(a, beta) - b;
                s = s.min((slack / -ad).max(0.0));
            }
        }
        s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Result of projecting a gradient onto the active-constraint nullspace.
#[derive(Debug, Clone)]
pub struct Projection {
    pub direction: Vec<f64>,
    /// Multipliers of the retained active rows (g ~ sum lambda_i a_i).
    pub multipliers: Vec<f64>,
    /// Active rows released by the working-set rule.
    pub dropped: Vec<usize>,
}

/// Project `g` onto the nullspace of the active rows. When the projection
/// vanishes, the multiplier representation g = A' lambda is inspected: a
/// positive multiplier means the ascent can re-enter the interior of that
/// constraint, so the row with the largest positive multiplier is released
/// and the projection recomputed (the standard working-set rule). A
/// near-zero direction with no positive multiplier certifies a KKT point.
/// Dependent rows are discarded up front by Gram-Schmidt.
pub fn project_direction(g: &[f64], active: &[Vec<f64>]) -> Projection {
    let p = g.len();
    if active.is_empty() {
        return Projection {
            direction: g.to_vec(),
            multipliers: Vec::new(),
            dropped: Vec::new(),
        };
    }
    let mut keep = independent_rows(active);
    let mut dropped = Vec::new();
    loop {
        if keep.is_empty() {
            return Projection {
                direction: g.to_vec(),
                multipliers: Vec::new(),
                dropped,
            };
        }
        let a = DMatrix::from_fn(keep.len(), p, |r, c| active[keep[r]][c]);
        let gv = DVector::from_column_slice(g);
        let gram = &a * a.transpose();
        let ag = &a * &gv;
        let lambda = match gram.clone().cholesky() {
            Some(chol) => chol.solve(&ag),
            None => gram
                .svd(true, true)
                .solve(&ag, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(keep.len())),
        };
        let dir = &gv - a.transpose() * &lambda;
        let dir_vec: Vec<f64> = dir.iter().copied().collect();
        let g_scale = 1.0 + sup_norm(g);
        if sup_norm(&dir_vec) > 1e-10 * g_scale {
            return Projection {
                direction: dir_vec,
                multipliers: lambda.iter().copied().collect(),
                dropped,
            };
        }
        // direction vanished: release the most interior-pointing row
        let mut best: Option<(usize, f64)> = None;
        for (pos, &l) in lambda.iter().enumerate() {
            if l > 1e-12 * g_scale && best.map_or(true, |(_, bl)| l > bl) {
                best = Some((pos, l));
            }
        }
        match best {
            Some((pos, _)) => {
                dropped.push(keep.remove(pos));
            }
            None => {
                return Projection {
                    direction: dir_vec,
                    multipliers: lambda.iter().copied().collect(),
                    dropped,
                }
            }
        }
    }
}

/// Indices of a maximal linearly independent subset of rows.
fn independent_rows(rows: &[Vec<f64>]) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let norm = dot(row, row).sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut residual = row.clone();
        for b in &basis {
            let c = dot(&residual, b);
            for (r, bv) in residual.iter_mut().zip(b) {
                *r -= c * bv;
            }
        }
        let rnorm = dot(&residual, &residual).sqrt();
        if rnorm > 1e-10 * norm {
            for r in residual.iter_mut() {
                *r /= rnorm;
            }
            basis.push(residual);
            keep.push(i);
        }
    }
    keep
}

struct LineSearchResult {
    point: Vec<f64>,
    value: f64,
}

/// Armijo backtracking along `dir` from `x` with f(x) = `fx`. `slope` is
/// the directional derivative g'dir; the initial trial step is clipped to
/// `max_step`.
fn armijo<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    fx: f64,
    dir: &[f64],
    slope: f64,
    max_step: f64,
    cfg: &OptimizerConfig,
) -> Option<LineSearchResult> {
    if slope <= 0.0 {
        return None;
    }
    let mut s = cfg.init_step.min(max_step);
    while s > 1e-18 {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + s * di).collect();
        let ft = f(&trial);
        if ft.is_finite() && ft >= fx + cfg.armijo_c * s * slope {
            return Some(LineSearchResult {
                point: trial,
                value: ft,
            });
        }
        s *= cfg.backtrack;
    }
    None
}

/// Outcome of one half-step solve.
#[derive(Debug, Clone)]
pub struct HalfStep {
    pub params: CtmParams,
    pub objective: f64,
    pub accepted_steps: usize,
    pub converged: bool,
    /// Objective after each accepted step (nondecreasing).
    pub trace: Vec<f64>,
}

struct InnerSolve {
    point: Vec<f64>,
    value: f64,
    accepted: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Unconstrained ascent used for the alpha half-step.
fn ascend<FG, F>(start: Vec<f64>, fg: FG, f: F, cfg: &OptimizerConfig) -> InnerSolve
where
    FG: Fn(&[f64]) -> (f64, Vec<f64>),
    F: Fn(&[f64]) -> f64,
{
    let mut x = start;
    let (mut fx, mut g) = fg(&x);
    let mut trace = vec![fx];
    let mut accepted = 0;
    let mut converged = false;
    for _ in 0..cfg.max_inner_iters {
        let slope = dot(&g, &g);
        match armijo(&f, &x, fx, &g, slope, f64::INFINITY, cfg) {
            Some(ls) => {
                let df = ls.value - fx;
                let dx = ls
                    .point
                    .iter()
                    .zip(&x)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                x = ls.point;
                fx = ls.value;
                accepted += 1;
                trace.push(fx);
                if df <= cfg.tol_obj * (1.0 + fx.abs()) && dx <= cfg.tol_param {
                    converged = true;
                    break;
                }
                g = fg(&x).1;
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    InnerSolve {
        point: x,
        value: fx,
        accepted,
        converged,
        trace,
    }
}

fn solve_alpha(
    fd: &FitData,
    start: &ExcessModel,
    taus: &[f64],
    cfg: &OptimizerConfig,
) -> (ExcessModel, InnerSolve) {
    let family = start.family;
    let link = start.mu_link;
    let fg = |stacked: &[f64]| {
        let model = ExcessModel::from_stacked(family, stacked, link);
        alpha_objective_grad(fd, &model, taus)
    };
    let f = |stacked: &[f64]| {
        let model = ExcessModel::from_stacked(family, stacked, link);
        alpha_objective(fd, &model, taus)
    };
    let solve = ascend(start.stacked(), fg, f, cfg);
    (
        ExcessModel::from_stacked(family, &solve.point, link),
        solve,
    )
}

fn solve_beta(
    fd: &FitData,
    model: &ExcessModel,
    start: &[f64],
    kappa: f64,
    sigma: f64,
    cons: &ConstraintSet,
    cfg: &OptimizerConfig,
) -> Result<InnerSolve, FitError> {
    let cache = BetaCache::new(fd, model);
    let mut beta = start.to_vec();

    // pre-phase: restore feasibility by lifting the intercept
    let slack = cons.min_slack(&beta);
    if slack < 0.0 {
        let icol = intercept_column(fd)?;
        beta[icol] += -slack + 0.01;
    }

    let f = |b: &[f64]| beta_objective(fd, &cache, model, b, kappa, sigma);
    let mut fx = f(&beta);
    let mut trace = vec![fx];
    let mut accepted = 0;
    let mut converged = false;
    for _ in 0..cfg.max_inner_iters {
        let (_, g) = beta_objective_grad(fd, &cache, model, &beta, kappa, sigma);
        let active_idx = cons.active_indices(&beta);
        let active_rows: Vec<Vec<f64>> = active_idx.iter().map(|&i| cons.rows[i].clone()).collect();
        let proj = project_direction(&g, &active_rows);
        let dir = proj.direction;
        if sup_norm(&dir) <= 1e-9 * (1.0 + sup_norm(&g)) {
            converged = true;
            break;
        }
        let slope = dot(&g, &dir);
        let max_step = cons.max_step(&beta, &dir);
        match armijo(&f, &beta, fx, &dir, slope, max_step, cfg) {
            Some(ls) => {
                let df = ls.value - fx;
                let dx = ls
                    .point
                    .iter()
                    .zip(&beta)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                beta = ls.point;
                fx = ls.value;
                accepted += 1;
                trace.push(fx);
                if df <= cfg.tol_obj * (1.0 + fx.abs()) && dx <= cfg.tol_param {
                    converged = true;
                    break;
                }
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    debug_assert!(
        cons.min_slack(&beta) >= -cfg.constraint_slack,
        "beta iterate left the feasible region"
    );
    Ok(InnerSolve {
        point: beta,
        value: fx,
        accepted,
        converged,
        trace,
    })
}

/// Censored Weibull MLE on raw times, used for the bootstrap censoring
/// model. Returns (shape, scale). The log parameters are boxed to
/// [-20, 6] x [-30, 30] so degenerate samples (all events at one time)
/// settle at a near-point-mass instead of diverging.
pub(crate) fn weibull_censored_mle(
    times: &[f64],
    event: &[bool],
    cfg: &OptimizerConfig,
) -> (f64, f64) {
    let boxed = |eta: &[f64]| -> bool {
        (-20.0..=6.0).contains(&eta[0]) && (-30.0..=30.0).contains(&eta[1])
    };
    let obj = |eta: &[f64]| -> f64 {
        if !boxed(eta) {
            return f64::NEG_INFINITY;
        }
        let model = ExcessModel::new(Family::Weibull, vec![eta[0]], vec![eta[1]]);
        let mut acc = 0.0;
        for (&t, &e) in times.iter().zip(event) {
            let logs = model.log_sfh(t, &[1.0]);
            let term = if e { logs.log_f } else { logs.log_s };
            if !term.is_finite() {
                return f64::NEG_INFINITY;
            }
            acc += term;
        }
        acc
    };
    let fg = |eta: &[f64]| -> (f64, Vec<f64>) {
        if !boxed(eta) {
            return (f64::NEG_INFINITY, vec![0.0, 0.0]);
        }
        let model = ExcessModel::new(Family::Weibull, vec![eta[0]], vec![eta[1]]);
        let mut acc = 0.0;
        let mut grad = vec![0.0, 0.0];
        for (&t, &e) in times.iter().zip(event) {
            let (logs, g) = model.log_sfh_grad(t, &[1.0]);
            if e {
                acc += logs.log_f;
                grad[0] += g.dlog_f[0];
                grad[1] += g.dlog_f[1];
            } else {
                acc += logs.log_s;
                grad[0] += g.dlog_s[0];
                grad[1] += g.dlog_s[1];
            }
        }
        (acc, grad)
    };
    let mean_ln: f64 = times.iter().map(|t| t.ln()).sum::<f64>() / times.len() as f64;
    let solve = ascend(vec![0.0, mean_ln], fg, obj, cfg);
    (solve.point[0].exp(), solve.point[1].exp())
}

fn intercept_column(fd: &FitData) -> Result<usize, FitError> {
    // the x2 column that is 1 for every observation
    'col: for j in 0..fd.p2 {
        for i in 0..fd.n {
            if fd.x2_row(i)[j] != 1.0 {
                continue 'col;
            }
        }
        return Ok(j);
    }
    Err(FitError::NoIntercept)
}

/// Gradient ascent in alpha at fixed beta.
pub fn fit_alpha(
    params: &CtmParams,
    d: &Dataset,
    lt: &LifeTable,
    cfg: &OptimizerConfig,
) -> HalfStep {
    let fd = FitData::new(d, lt, &params.x1_idx, &params.x2_idx);
    let taus = fd.taus(&params.beta);
    let (model, solve) = solve_alpha(&fd, &params.model, &taus, cfg);
    let mut out = params.clone();
    out.model = model;
    HalfStep {
        params: out,
        objective: solve.value,
        accepted_steps: solve.accepted,
        converged: solve.converged,
        trace: solve.trace,
    }
}

/// Projected gradient ascent in beta at fixed alpha, on the smoothed
/// penalized objective.
pub fn fit_beta(
    params: &CtmParams,
    d: &Dataset,
    lt: &LifeTable,
    cfg: &OptimizerConfig,
) -> Result<HalfStep, FitError> {
    let fd = FitData::new(d, lt, &params.x1_idx, &params.x2_idx);
    let cons = ConstraintSet::from_fit_data(&fd);
    let solve = solve_beta(
        &fd,
        &params.model,
        &params.beta,
        params.kappa,
        params.sigma_n,
        &cons,
        cfg,
    )?;
    let mut out = params.clone();
    out.beta = solve.point;
    Ok(HalfStep {
        params: out,
        objective: solve.value,
        accepted_steps: solve.accepted,
        converged: solve.converged,
        trace: solve.trace,
    })
}

/// Cure time and cure rate of one covariate pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumEstimate {
    /// Full covariate vector of the pattern.
    pub x: Vec<f64>,
    pub count: usize,
    pub tau: f64,
    pub pi: f64,
    /// Cure time within one year of the last observed time.
    pub near_followup_limit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CtmFit {
    pub params: CtmParams,
    pub covariate_names: Vec<String>,
    /// Unpenalized objective at the optimum.
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub strata: Vec<StratumEstimate>,
    /// Observation-weighted mean cure time and cure rate.
    pub tau_mean: f64,
    pub pi_mean: f64,
    pub iterations: usize,
    pub converged: bool,
    pub active_constraints: usize,
    /// Worst violation of log z <= beta'x2 over disease deaths (negative
    /// slack); nonpositive values mean feasible.
    pub max_constraint_violation: f64,
    /// Mean cure time within one year of the last observed time (the
    /// estimate is then a lower bound, not a stable cure time).
    pub reliability_flag: bool,
    /// (alpha-half objective, beta-half smoothed objective) per outer cycle.
    pub trace: Vec<(f64, f64)>,
}

fn resolve_masks(cfg: &OptimizerConfig, p: usize) -> (Vec<usize>, Vec<usize>) {
    let all: Vec<usize> = (0..p).collect();
    (
        cfg.x1_idx.clone().unwrap_or_else(|| all.clone()),
        cfg.x2_idx.clone().unwrap_or(all),
    )
}

/// Starting alpha: fit the family ignoring cure, treating every uncensored
/// record as a disease event.
fn initial_alpha(
    fd: &FitData,
    family: Family,
    mu_link: LocationLink,
    cfg: &OptimizerConfig,
) -> ExcessModel {
    let mut ignore = FitData {
        n: fd.n,
        p1: fd.p1,
        p2: fd.p2,
        z: fd.z.clone(),
        ln_z: fd.ln_z.clone(),
        delta: fd
            .delta
            .iter()
            .map(|&s| {
                if s.is_uncensored() {
                    CensoringStatus::Disease
                } else {
                    CensoringStatus::Censored
                }
            })
            .collect(),
        x1: fd.x1.clone(),
        x2: fd.x2.clone(),
        h_o_z: fd.h_o_z.clone(),
    };
    // disease deaths need z <= tau; make every cure time effectively infinite
    let taus = vec![f64::MAX; fd.n];
    ignore.h_o_z = fd.h_o_z.clone();

    let mean_ln_z = fd.ln_z.iter().sum::<f64>() / fd.n as f64;
    let sd_ln_z = (fd
        .ln_z
        .iter()
        .map(|l| (l - mean_ln_z).powi(2))
        .sum::<f64>()
        / fd.n as f64)
        .sqrt()
        .max(0.1);
    let mut alpha1 = vec![0.0; fd.p1];
    let mut alpha2 = vec![0.0; fd.p1];
    match family {
        Family::LogNormal => {
            alpha1[0] = mean_ln_z;
            alpha2[0] = sd_ln_z.ln();
        }
        Family::Weibull | Family::LogLogistic => {
            alpha2[0] = mean_ln_z + 0.3;
        }
    }
    let mut start = ExcessModel::new(family, alpha1, alpha2);
    start.mu_link = mu_link;
    let (model, _) = solve_alpha(&ignore, &start, &taus, cfg);
    model
}

fn initial_beta(fd: &FitData) -> Result<Vec<f64>, FitError> {
    let icol = intercept_column(fd)?;
    let mut z2_max = f64::NEG_INFINITY;
    for i in 0..fd.n {
        if fd.delta[i] == CensoringStatus::Disease {
            z2_max = z2_max.max(fd.z[i]);
        }
    }
    let anchor = if z2_max.is_finite() {
        z2_max
    } else {
        // no disease deaths: anchor at the 95th percentile of all times
        let mut zs = fd.z.clone();
        zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        zs[((zs.len() - 1) as f64 * 0.95).round() as usize]
    };
    let mut beta = vec![0.0; fd.p2];
    beta[icol] = anchor.ln() + 0.01;
    Ok(beta)
}

/// Full alternating fit. `init` provides warm starts (bootstrap refits);
/// its beta is lifted back to feasibility if needed.
pub fn fit(
    d: &Dataset,
    lt: &LifeTable,
    family: Family,
    cfg: &OptimizerConfig,
    init: Option<&CtmParams>,
) -> Result<CtmFit, FitError> {
    if !d.observations().iter().any(|o| o.delta.is_uncensored()) {
        return Err(FitError::NoEvents);
    }
    let n = d.len();
    let (x1_idx, x2_idx) = resolve_masks(cfg, d.p());
    let kappa = cfg.kappa.unwrap_or(1.0 / n as f64);
    let sigma_n = cfg.sigma_n.unwrap_or(1.0 / (n as f64).sqrt());
    let fd = FitData::new(d, lt, &x1_idx, &x2_idx);
    let cons = ConstraintSet::from_fit_data(&fd);

    let (mut model, mut beta) = match init {
        Some(p) => (p.model.clone(), p.beta.clone()),
        None => (
            initial_alpha(&fd, family, cfg.mu_link, cfg),
            initial_beta(&fd)?,
        ),
    };
    if beta.len() != fd.p2 || model.p() != fd.p1 {
        return Err(FitError::Invalid(
            "init dimensions do not match the covariate masks".into(),
        ));
    }

    let penalty = |b: &[f64]| 0.5 * n as f64 * kappa * b.iter().map(|v| v * v).sum::<f64>();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut pen_obj = f64::NEG_INFINITY;
    // Continuation in the sigmoid bandwidth: the beta surface is only
    // piecewise concave near the target sigma_n and the projected ascent
    // can wedge at a poor constraint vertex. Early cycles run with a wide
    // bandwidth (nearly concave surface) that halves per cycle down to
    // sigma_n; convergence only counts once the target bandwidth is
    // reached.
    let sigma_start = sigma_n.max(0.5);
    let fresh_beta = initial_beta(&fd)?;
    for outer in 1..=cfg.max_outer_iters {
        iterations = outer;
        let sigma_now = (sigma_start * 0.5f64.powi(outer as i32 - 1)).max(sigma_n);
        let annealed = sigma_now > sigma_n;
        let taus = fd.taus(&beta);
        let (new_model, alpha_solve) = solve_alpha(&fd, &model, &taus, cfg);
        let mut beta_solve = solve_beta(&fd, &new_model, &beta, kappa, sigma_now, &cons, cfg)?;
        if beta != fresh_beta {
            // restart from the data-scaled default too; keep the better
            let alt = solve_beta(&fd, &new_model, &fresh_beta, kappa, sigma_now, &cons, cfg)?;
            if alt.value > beta_solve.value {
                beta_solve = alt;
            }
        }
        let d_alpha = new_model
            .stacked()
            .iter()
            .zip(model.stacked().iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let d_beta = beta_solve
            .point
            .iter()
            .zip(&beta)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        model = new_model;
        beta = beta_solve.point.clone();
        trace.push((alpha_solve.value, beta_solve.value));

        let new_pen = alpha_objective(&fd, &model, &fd.taus(&beta)) - penalty(&beta);
        let df = (new_pen - pen_obj).abs();
        pen_obj = new_pen;
        if !annealed
            && df <= cfg.tol_obj * (1.0 + new_pen.abs())
            && d_alpha.max(d_beta) <= cfg.tol_param
        {
            converged = true;
            break;
        }
    }

    let params = CtmParams {
        model,
        beta,
        kappa,
        sigma_n,
        x1_idx,
        x2_idx,
    };
    Ok(assemble_fit(params, d, &fd, &cons, trace, iterations, converged))
}

fn assemble_fit(
    params: CtmParams,
    d: &Dataset,
    fd: &FitData,
    cons: &ConstraintSet,
    trace: Vec<(f64, f64)>,
    iterations: usize,
    converged: bool,
) -> CtmFit {
    let taus = fd.taus(&params.beta);
    let loglik = alpha_objective(fd, &params.model, &taus);
    let penalty =
        0.5 * fd.n as f64 * params.kappa * params.beta.iter().map(|b| b * b).sum::<f64>();
    let max_z = d.max_time();

    let mut strata: Vec<StratumEstimate> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut tau_sum = 0.0;
    let mut pi_sum = 0.0;
    for (i, obs) in d.observations().iter().enumerate() {
        let tau = taus[i];
        let pi = params.model.survival(tau, fd.x1_row(i));
        tau_sum += tau;
        pi_sum += pi;
        let key: Vec<u64> = obs.x.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&s) => strata[s].count += 1,
            None => {
                index.insert(key, strata.len());
                strata.push(StratumEstimate {
                    x: obs.x.clone(),
                    count: 1,
                    tau,
                    pi,
                    near_followup_limit: tau >= max_z - 1.0,
                });
            }
        }
    }
    let tau_mean = tau_sum / fd.n as f64;
    let pi_mean = pi_sum / fd.n as f64;
    let min_slack = cons.min_slack(&params.beta);
    CtmFit {
        covariate_names: d.covariate_names().to_vec(),
        loglik,
        penalized_loglik: loglik - penalty,
        tau_mean,
        pi_mean,
        iterations,
        converged,
        active_constraints: cons.active_indices(&params.beta).len(),
        max_constraint_violation: if min_slack.is_finite() {
            (-min_slack).max(0.0)
        } else {
            0.0
        },
        reliability_flag: tau_mean >= max_z - 1.0,
        strata,
        trace,
        params,
    }
}

/// Profile of the intercept-only grid search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSearch {
    pub tau_hat: f64,
    pub alpha: ExcessModel,
    /// (tau, profile log-likelihood); -inf marks infeasible points.
    pub profile: Vec<(f64, f64)>,
    pub refined: Vec<(f64, f64)>,
    /// Spacing of the refined grid.
    pub refined_step: f64,
}

/// One-dimensional profile search over a constant cure time (Remark-style:
/// beta is the intercept only). Ties break to the smallest tau. The alpha
/// profile is warm-started across grid points.
pub fn grid_search_tau(
    d: &Dataset,
    lt: &LifeTable,
    family: Family,
    cfg: &OptimizerConfig,
) -> Result<GridSearch, FitError> {
    if !d.observations().iter().any(|o| o.delta.is_uncensored()) {
        return Err(FitError::NoEvents);
    }
    let (x1_idx, x2_idx) = resolve_masks(cfg, d.p());
    if x2_idx.len() != 1 {
        return Err(FitError::GridNeedsIntercept);
    }
    let fd = FitData::new(d, lt, &x1_idx, &x2_idx);
    if fd.x2.iter().any(|&v| v != 1.0) {
        return Err(FitError::GridNeedsIntercept);
    }

    let z_min = fd.z.iter().cloned().fold(f64::INFINITY, f64::min);
    let z_max = fd.z.iter().cloned().fold(0.0f64, f64::max);
    let tau_min = cfg.grid.tau_min.unwrap_or(z_min * 1.01).max(1e-12);
    let tau_max = cfg.grid.tau_max.unwrap_or(z_max * 1.2);
    let points = cfg.grid.points.max(2);
    let step = (tau_max - tau_min) / (points - 1) as f64;

    let mut max_z2: f64 = f64::NEG_INFINITY;
    for i in 0..fd.n {
        if fd.delta[i] == CensoringStatus::Disease {
            max_z2 = max_z2.max(fd.z[i]);
        }
    }
    if max_z2.is_finite() && max_z2 > tau_max {
        return Err(FitError::GridInfeasible { max_z2, tau_max });
    }

    let mut alpha = initial_alpha(&fd, family, cfg.mu_link, cfg);
    let mut profile = Vec::with_capacity(points);
    let mut best: Option<(f64, f64, ExcessModel)> = None;
    let evaluate = |tau: f64, alpha: &mut ExcessModel, out: &mut Vec<(f64, f64)>| {
        if max_z2.is_finite() && tau < max_z2 {
            out.push((tau, f64::NEG_INFINITY));
            return None;
        }
        let taus = vec![tau; fd.n];
        let (model, solve) = solve_alpha(&fd, alpha, &taus, cfg);
        *alpha = model.clone();
        out.push((tau, solve.value));
        Some((solve.value, model))
    };

    for k in 0..points {
        let tau = tau_min + k as f64 * step;
        if let Some((value, model)) = evaluate(tau, &mut alpha, &mut profile) {
            if best.as_ref().map_or(true, |(bv, _, _)| value > *bv) {
                best = Some((value, tau, model));
            }
        }
    }
    let (_, coarse_tau, _) = best.clone().ok_or(FitError::GridInfeasible {
        max_z2,
        tau_max,
    })?;

    // one refinement pass around the coarse argmax at 10x resolution
    let refine = cfg.grid.refine.max(2);
    let fine_step = step / refine as f64;
    let lo = (coarse_tau - step).max(tau_min);
    let hi = (coarse_tau + step).min(tau_max);
    let mut refined = Vec::new();
    let mut t = lo;
    let mut fine_best: Option<(f64, f64, ExcessModel)> = None;
    while t <= hi + 1e-12 * step {
        if let Some((value, model)) = evaluate(t, &mut alpha, &mut refined) {
            if fine_best.as_ref().map_or(true, |(bv, _, _)| value > *bv) {
                fine_best = Some((value, t, model));
            }
        }
        t += fine_step;
    }
    let (_, tau_hat, alpha_hat) = fine_best.unwrap();
    Ok(GridSearch {
        tau_hat,
        alpha: alpha_hat,
        profile,
        refined,
        refined_step: fine_step,
    })
}

/// Assemble a full fit object from a grid-search result, so the grid and
/// gradient paths emit the same artifact.
pub fn grid_fit(
    d: &Dataset,
    lt: &LifeTable,
    gs: &GridSearch,
    cfg: &OptimizerConfig,
) -> Result<CtmFit, FitError> {
    let n = d.len();
    let (x1_idx, x2_idx) = resolve_masks(cfg, d.p());
    if x2_idx.len() != 1 {
        return Err(FitError::GridNeedsIntercept);
    }
    let fd = FitData::new(d, lt, &x1_idx, &x2_idx);
    let cons = ConstraintSet::from_fit_data(&fd);
    let params = CtmParams {
        model: gs.alpha.clone(),
        beta: vec![gs.tau_hat.ln()],
        kappa: cfg.kappa.unwrap_or(1.0 / n as f64),
        sigma_n: cfg.sigma_n.unwrap_or(1.0 / (n as f64).sqrt()),
        x1_idx,
        x2_idx,
    };
    Ok(assemble_fit(params, d, &fd, &cons, Vec::new(), 1, true))
}
