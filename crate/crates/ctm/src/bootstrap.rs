//! Parametric bootstrap for standard errors and two-sided p-values.
//!
//! Each replicate regenerates the full data mechanism from the fitted
//! model: censoring times from a Weibull fitted to the censoring
//! indicator, background times by life-table inversion conditional on each
//! subject's demographics, disease times from the fitted excess
//! distribution, the observed time via the cure-time representation
//! T = min(O,D) I(D <= tau) + O I(D > tau), and the status via the
//! original data's empirical share of unresolved causes. The model is then
//! refit on every replicate (warm-started at the original estimate).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::{status_mix, CensoringStatus, Dataset, Observation};
use crate::lifetable::{sample_background_time, LifeTable, SubjectBackground};
use crate::optimizer::{fit, weibull_censored_mle, CtmFit, FitError, OptimizerConfig};
use crate::seed;

const STREAM_SUBJECT: u64 = 0x42_00;
const STREAM_REPLICATE: u64 = 0x42_01;

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("bootstrap needs at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("{0}")]
    Fit(#[from] FitError),
}

/// Weibull censoring-time model, fitted with status 0 as the event.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CensoringModel {
    pub shape: f64,
    pub scale: f64,
    /// No censored records: replicates use C = +infinity.
    pub degenerate: bool,
}

impl CensoringModel {
    pub fn sample(&self, u: f64) -> f64 {
        if self.degenerate {
            return f64::INFINITY;
        }
        self.scale * (-u.ln()).powf(1.0 / self.shape)
    }

    pub fn median(&self) -> f64 {
        self.scale * std::f64::consts::LN_2.powf(1.0 / self.shape)
    }
}

/// Fit the censoring distribution: records with status 0 are events, every
/// death is censored for this model.
pub fn fit_censoring_model(d: &Dataset) -> CensoringModel {
    let any_censored = d
        .observations()
        .iter()
        .any(|o| o.delta == CensoringStatus::Censored);
    if !any_censored {
        return CensoringModel {
            shape: f64::NAN,
            scale: f64::NAN,
            degenerate: true,
        };
    }
    let times: Vec<f64> = d.observations().iter().map(|o| o.z).collect();
    let event: Vec<bool> = d
        .observations()
        .iter()
        .map(|o| o.delta == CensoringStatus::Censored)
        .collect();
    let (shape, scale) = weibull_censored_mle(&times, &event, &OptimizerConfig::default());
    CensoringModel {
        shape,
        scale,
        degenerate: false,
    }
}

/// One parametric replicate of the dataset under the fitted model.
pub fn generate_replicate(
    fit: &CtmFit,
    cens: &CensoringModel,
    d: &Dataset,
    lt: &LifeTable,
    seed_value: u64,
) -> Dataset {
    let mix = status_mix(d).expect("replicate generation needs a non-empty dataset");
    let uncensored_mass = mix.q_o + mix.q_d + mix.q_t;
    let p_unresolved = if uncensored_mass > 0.0 {
        mix.q_t / uncensored_mass
    } else {
        0.0
    };
    let params = &fit.params;
    let observations: Vec<Observation> = d
        .observations()
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let mut rng = seed::rng(seed_value, STREAM_SUBJECT, i as u64);
            let u_c: f64 = rng.gen_range(1e-12..1.0);
            let u_o: f64 = rng.gen_range(1e-12..1.0);
            let u_d: f64 = rng.gen_range(1e-12..1.0);
            let c = cens.sample(u_c);
            let o = sample_background_time(lt, &SubjectBackground::from(obs), u_o);
            let x1 = params.gather1(&obs.x);
            let dtime = params.model.sample(u_d, &x1);
            let tau = params.tau(&obs.x);
            let (t, t_is_disease) = if dtime <= tau {
                if dtime <= o {
                    (dtime, true)
                } else {
                    (o, false)
                }
            } else {
                (o, false)
            };
            let (z, delta) = if c < t {
                (c, CensoringStatus::Censored)
            } else {
                let unresolved = p_unresolved > 0.0 && rng.gen_range(0.0..1.0) < p_unresolved;
                if unresolved {
                    (t, CensoringStatus::AnyDeath)
                } else if t_is_disease {
                    (t, CensoringStatus::Disease)
                } else {
                    (t, CensoringStatus::OtherCause)
                }
            };
            Observation {
                z: z.max(1e-12),
                delta,
                x: obs.x.clone(),
                diag_year: obs.diag_year,
                age_at_diag: obs.age_at_diag,
                sex: obs.sex,
            }
        })
        .collect();
    Dataset::new(observations, d.covariate_names().to_vec()).expect("replicate is valid")
}

/// Per-parameter bootstrap inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub param_names: Vec<String>,
    /// Point estimates from the original fit (alpha1, alpha2, beta stacked).
    pub estimates: Vec<f64>,
    /// Converged replicate estimates, one row per replicate in replicate
    /// order.
    pub replicates: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    /// Normal-approximation two-sided p-values; `None` when SE is zero.
    pub p_normal: Vec<Option<f64>>,
    /// Sign-based percentile p-values over the replicate draws.
    pub p_percentile: Vec<Option<f64>>,
    pub b_requested: usize,
    pub failed_replicates: usize,
    /// More than 20% of replicates failed to converge.
    pub unreliable: bool,
    pub censoring: CensoringModel,
}

pub fn parameter_names(fit: &CtmFit) -> Vec<String> {
    let names = &fit.covariate_names;
    let mut out = Vec::new();
    for &j in &fit.params.x1_idx {
        out.push(format!("alpha1:{}", names[j]));
    }
    for &j in &fit.params.x1_idx {
        out.push(format!("alpha2:{}", names[j]));
    }
    for &j in &fit.params.x2_idx {
        out.push(format!("beta:{}", names[j]));
    }
    out
}

fn stacked_params(fit: &CtmFit) -> Vec<f64> {
    let mut v = fit.params.model.stacked();
    v.extend_from_slice(&fit.params.beta);
    v
}

/// Run B parametric replicates and refit each. Deterministic for a given
/// seed at any thread count: replicate b always uses sub-seed (seed, b)
/// and aggregation is in replicate order.
pub fn bootstrap(
    fitted: &CtmFit,
    d: &Dataset,
    lt: &LifeTable,
    b: usize,
    seed_value: u64,
    cfg: &OptimizerConfig,
    threads: usize,
) -> Result<BootstrapResult, BootstrapError> {
    if b < 2 {
        return Err(BootstrapError::TooFewReplicates(b));
    }
    let cens = fit_censoring_model(d);
    let family = fitted.params.model.family;

    let run = |bi: usize| -> Option<Vec<f64>> {
        let rep_seed = seed::derive(seed_value, STREAM_REPLICATE, bi as u64);
        let rep = generate_replicate(fitted, &cens, d, lt, rep_seed);
        match fit(&rep, lt, family, cfg, Some(&fitted.params)) {
            Ok(refit) if refit.converged => Some(stacked_params(&refit)),
            _ => None,
        }
    };
    let results: Vec<Option<Vec<f64>>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        pool.install(|| (0..b).into_par_iter().map(run).collect())
    } else {
        (0..b).map(run).collect()
    };

    let replicates: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let failed = b - replicates.len();
    let estimates = stacked_params(fitted);
    let k = estimates.len();

    let mut se = vec![0.0; k];
    let mut p_normal = vec![None; k];
    let mut p_percentile = vec![None; k];
    let m = replicates.len();
    if m >= 2 {
        let normal = Normal::new(0.0, 1.0).unwrap();
        for j in 0..k {
            let mean = replicates.iter().map(|r| r[j]).sum::<f64>() / m as f64;
            let var = replicates
                .iter()
                .map(|r| (r[j] - mean).powi(2))
                .sum::<f64>()
                / (m - 1) as f64;
            se[j] = var.sqrt();
            if se[j] > 0.0 {
                p_normal[j] = Some(2.0 * normal.cdf(-(estimates[j].abs() / se[j])));
                let le = replicates.iter().filter(|r| r[j] <= 0.0).count();
                let ge = replicates.iter().filter(|r| r[j] >= 0.0).count();
                p_percentile[j] =
                    Some((2.0 * le.min(ge) as f64 / m as f64).min(1.0));
            }
        }
    }
    Ok(BootstrapResult {
        param_names: parameter_names(fitted),
        estimates,
        replicates,
        se,
        p_normal,
        p_percentile,
        b_requested: b,
        failed_replicates: failed,
        unreliable: (failed as f64) > 0.2 * b as f64,
        censoring: cens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sex;
    use crate::excess::{ExcessModel, Family};
    use crate::likelihood::CtmParams;
    use crate::lifetable::LifeTable;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(z: f64, delta: CensoringStatus) -> Observation {
        Observation {
            z,
            delta,
            x: vec![1.0],
            diag_year: 2000,
            age_at_diag: 60,
            sex: Sex::Female,
        }
    }

    #[test]
    fn censoring_model_point_mass_limit() {
        // all records censored at the same time: fitted median within 1%
        let z_star = 4.2;
        let d = Dataset::new(
            (0..60).map(|_| obs(z_star, CensoringStatus::Censored)).collect(),
            vec!["(intercept)".into()],
        )
        .unwrap();
        let cens = fit_censoring_model(&d);
        assert!(!cens.degenerate);
        assert!(
            (cens.median() - z_star).abs() / z_star < 0.01,
            "median {} vs {z_star}",
            cens.median()
        );
        assert!(cens.shape > 50.0);
    }

    #[test]
    fn censoring_model_recovers_exponential_rate() {
        // censoring times exponential(rate 0.25), deaths exponential(1.0)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let records: Vec<Observation> = (0..2000)
            .map(|_| {
                use rand::Rng;
                let c = -(rng.gen_range(1e-12..1.0f64)).ln() / 0.25;
                let t = -(rng.gen_range(1e-12..1.0f64)).ln();
                if c < t {
                    obs(c, CensoringStatus::Censored)
                } else {
                    obs(t, CensoringStatus::Disease)
                }
            })
            .collect();
        let d = Dataset::new(records, vec!["(intercept)".into()]).unwrap();
        let cens = fit_censoring_model(&d);
        let rate = 1.0 / cens.scale;
        // ~400 censoring events: the MLE itself has ~5% standard error
        assert!((rate - 0.25).abs() / 0.25 < 0.12, "rate {rate}");
        assert!((cens.shape - 1.0).abs() < 0.1, "shape {}", cens.shape);
    }

    #[test]
    fn degenerate_without_censored_records() {
        let d = Dataset::new(
            (0..20)
                .map(|i| obs(1.0 + i as f64 * 0.1, CensoringStatus::Disease))
                .collect(),
            vec!["(intercept)".into()],
        )
        .unwrap();
        let cens = fit_censoring_model(&d);
        assert!(cens.degenerate);
        assert_eq!(cens.sample(0.5), f64::INFINITY);
    }

    fn toy_fit(_d: &Dataset, tau: f64) -> CtmFit {
        // hand-assembled fit for generation tests: exponential excess,
        // intercept-only cure time
        let model = ExcessModel::new(Family::Weibull, vec![0.0], vec![0.0]);
        let params = CtmParams::new(model, vec![tau.ln()], 0.0, 0.05, 1);
        CtmFit {
            params,
            covariate_names: vec!["(intercept)".into()],
            loglik: 0.0,
            penalized_loglik: 0.0,
            strata: Vec::new(),
            tau_mean: tau,
            pi_mean: (-tau).exp(),
            iterations: 1,
            converged: true,
            active_constraints: 0,
            max_constraint_violation: 0.0,
            reliability_flag: false,
            trace: Vec::new(),
        }
    }

    #[test]
    fn replicates_respect_cure_representation() {
        let lt = LifeTable::constant(0.02, 1990, 2015);
        let d = Dataset::new(
            (0..400)
                .map(|i| {
                    obs(
                        0.2 + (i % 50) as f64 * 0.1,
                        match i % 4 {
                            0 => CensoringStatus::Censored,
                            1 => CensoringStatus::OtherCause,
                            2 => CensoringStatus::Disease,
                            _ => CensoringStatus::AnyDeath,
                        },
                    )
                })
                .collect(),
            vec!["(intercept)".into()],
        )
        .unwrap();
        let fit = toy_fit(&d, 1.5);
        let cens = fit_censoring_model(&d);
        let rep = generate_replicate(&fit, &cens, &d, &lt, 99);
        // no replicate disease death beyond the fitted cure time
        for o in rep.observations() {
            if o.delta == CensoringStatus::Disease {
                assert!(o.z <= 1.5 + 1e-12, "disease death at {} beyond tau", o.z);
            }
        }
        // determinism
        let rep2 = generate_replicate(&fit, &cens, &d, &lt, 99);
        assert_eq!(rep, rep2);
    }

    #[test]
    fn no_unresolved_status_when_original_has_none() {
        let lt = LifeTable::constant(0.02, 1990, 2015);
        let d = Dataset::new(
            (0..300)
                .map(|i| {
                    obs(
                        0.2 + (i % 40) as f64 * 0.1,
                        if i % 5 == 0 {
                            CensoringStatus::Censored
                        } else if i % 2 == 0 {
                            CensoringStatus::Disease
                        } else {
                            CensoringStatus::OtherCause
                        },
                    )
                })
                .collect(),
            vec!["(intercept)".into()],
        )
        .unwrap();
        let fit = toy_fit(&d, 2.0);
        let cens = fit_censoring_model(&d);
        let rep = generate_replicate(&fit, &cens, &d, &lt, 5);
        assert!(rep
            .observations()
            .iter()
            .all(|o| o.delta != CensoringStatus::AnyDeath));
    }

    #[test]
    fn rejects_single_replicate() {
        let lt = LifeTable::constant(0.02, 1990, 2015);
        let d = Dataset::new(
            vec![obs(1.0, CensoringStatus::Disease)],
            vec!["(intercept)".into()],
        )
        .unwrap();
        let fit = toy_fit(&d, 2.0);
        assert!(matches!(
            bootstrap(&fit, &d, &lt, 1, 3, &OptimizerConfig::default(), 1),
            Err(BootstrapError::TooFewReplicates(1))
        ));
    }

    #[test]
    fn bootstrap_se_of_toy_mean_scale() {
        // classical sanity check: SE of an exponential-rate estimate from
        // parametric replicates tracks 1/sqrt(n) behaviour within 15%
        let n = 400;
        let lt = LifeTable::constant(1e-9, 1990, 2015);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = Dataset::new(
            (0..n)
                .map(|_| {
                    use rand::Rng;
                    obs(
                        -(rng.gen_range(1e-12..1.0f64)).ln(),
                        CensoringStatus::Disease,
                    )
                })
                .collect(),
            vec!["(intercept)".into()],
        )
        .unwrap();
        let cfg = OptimizerConfig {
            kappa: Some(0.0),
            ..OptimizerConfig::default()
        };
        let fitted = fit(&d, &lt, Family::Weibull, &cfg, None).unwrap();
        let result = bootstrap(&fitted, &d, &lt, 200, 11, &cfg, 1).unwrap();
        // alpha2 intercept is ln(scale); SE of ln(mean) of n exponentials
        // is ~ 1/sqrt(n)
        let se_ln_scale = result.se[1];
        let expected = 1.0 / (n as f64).sqrt();
        assert!(
            (se_ln_scale - expected).abs() / expected < 0.15,
            "se {se_ln_scale} vs {expected}"
        );
        assert!(!result.unreliable);
        // determinism across thread counts
        let again = bootstrap(&fitted, &d, &lt, 200, 11, &cfg, 2).unwrap();
        assert_eq!(
            serde_json::to_string(&result.replicates).unwrap(),
            serde_json::to_string(&again.replicates).unwrap()
        );
    }
}
