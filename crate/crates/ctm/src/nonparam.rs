//! Nonparametric estimators and cure diagnostics: Kaplan-Meier, relative
//! survival, conditional survival pairs, and the conditional-relative-
//! survival comparator cure times (CRS95 / CRS99).

use thiserror::Error;

use crate::data::{CensoringStatus, Dataset};
use crate::lifetable::{
    background_survival, cohort_expected_survival, LifeTable, SubjectBackground,
};

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("empty dataset")]
    Empty,
    #[error("no subjects at risk at t = {0}")]
    NoRiskSet(f64),
    #[error("survival is zero at the conditioning time {0}")]
    ZeroAtCondition(f64),
}

/// Right-continuous step function with value 1 before the first jump.
#[derive(Debug, Clone)]
pub struct StepCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub at_risk: Vec<usize>,
    /// Greenwood pointwise standard error at each jump.
    pub se: Vec<f64>,
}

impl StepCurve {
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&jt| jt <= t) {
            0 => 1.0,
            k => self.values[k - 1],
        }
    }

    pub fn se_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&jt| jt <= t) {
            0 => 0.0,
            k => self.se[k - 1],
        }
    }
}

/// Product-limit estimator. `event_rule` selects which status levels count
/// as events; everything else leaves the risk set silently.
pub fn kaplan_meier(d: &Dataset, event_rule: &[CensoringStatus]) -> Result<StepCurve, CurveError> {
    if d.is_empty() {
        return Err(CurveError::Empty);
    }
    let mut records: Vec<(f64, bool)> = d
        .observations()
        .iter()
        .map(|o| (o.z, event_rule.contains(&o.delta)))
        .collect();
    records.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let n = records.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut at_risk = Vec::new();
    let mut se = Vec::new();
    let mut surv = 1.0;
    let mut greenwood = 0.0;
    let mut i = 0;
    while i < n {
        let t = records[i].0;
        let mut deaths = 0usize;
        let mut j = i;
        while j < n && records[j].0 == t {
            if records[j].1 {
                deaths += 1;
            }
            j += 1;
        }
        if deaths > 0 {
            let risk = n - i;
            surv *= 1.0 - deaths as f64 / risk as f64;
            if risk > deaths {
                greenwood += deaths as f64 / (risk as f64 * (risk - deaths) as f64);
            }
            times.push(t);
            values.push(surv);
            at_risk.push(risk);
            se.push(if risk > deaths {
                surv * greenwood.sqrt()
            } else {
                0.0
            });
        }
        i = j;
    }
    Ok(StepCurve {
        times,
        values,
        at_risk,
        se,
    })
}

/// All-cause death (status 1, 2, or 3), the default event rule.
pub fn all_death_rule() -> [CensoringStatus; 3] {
    [
        CensoringStatus::OtherCause,
        CensoringStatus::Disease,
        CensoringStatus::AnyDeath,
    ]
}

/// RS(t) = KM all-cause survival over cohort expected survival, evaluated
/// on a grid. Not clipped at 1.
pub fn relative_survival(
    d: &Dataset,
    lt: &LifeTable,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>, CurveError> {
    let km = kaplan_meier(d, &all_death_rule())?;
    let subjects: Vec<SubjectBackground> =
        d.observations().iter().map(SubjectBackground::from).collect();
    let expected =
        cohort_expected_survival(lt, &subjects, grid).map_err(|_| CurveError::Empty)?;
    Ok(grid
        .iter()
        .zip(expected)
        .map(|(&t, e)| (t, km.eval(t) / e))
        .collect())
}

/// The conditional pair (S_T(t|k), S_O(t|k)) on a grid. The expected curve
/// conditions on the subjects still at risk at k (risk-set matched).
#[derive(Debug, Clone)]
pub struct ConditionalPair {
    pub k: f64,
    pub grid: Vec<f64>,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    /// Greenwood SE of the conditional observed curve.
    pub observed_se: Vec<f64>,
    pub n_at_risk: usize,
}

pub fn conditional_curves(
    d: &Dataset,
    lt: &LifeTable,
    k: f64,
    grid: &[f64],
) -> Result<ConditionalPair, CurveError> {
    let km = kaplan_meier(d, &all_death_rule())?;
    let base = km.eval(k);
    if base <= 0.0 {
        return Err(CurveError::ZeroAtCondition(k));
    }
    let survivors: Vec<SubjectBackground> = d
        .observations()
        .iter()
        .filter(|o| o.z > k)
        .map(SubjectBackground::from)
        .collect();
    if survivors.is_empty() {
        return Err(CurveError::NoRiskSet(k));
    }
    let grid: Vec<f64> = grid.iter().copied().filter(|&t| t >= k).collect();
    let expected_raw = cohort_expected_survival(lt, &survivors, &grid).unwrap();
    let expected_at_k = survivors
        .iter()
        .map(|s| background_survival(lt, s, k))
        .sum::<f64>()
        / survivors.len() as f64;

    // Greenwood variance accumulated only over (k, t]
    let base_var_term = {
        let idx = km.times.partition_point(|&jt| jt <= k);
        if idx == 0 {
            0.0
        } else {
            let s = km.values[idx - 1];
            let se = km.se[idx - 1];
            if s > 0.0 {
                (se / s).powi(2)
            } else {
                0.0
            }
        }
    };

    let mut observed = Vec::with_capacity(grid.len());
    let mut observed_se = Vec::with_capacity(grid.len());
    for &t in &grid {
        let cond = km.eval(t) / base;
        observed.push(cond);
        let var_term = {
            let idx = km.times.partition_point(|&jt| jt <= t);
            if idx == 0 {
                0.0
            } else {
                let s = km.values[idx - 1];
                let se = km.se[idx - 1];
                if s > 0.0 {
                    (se / s).powi(2)
                } else {
                    0.0
                }
            }
        };
        observed_se.push(cond * (var_term - base_var_term).max(0.0).sqrt());
    }
    let expected = expected_raw.iter().map(|e| e / expected_at_k).collect();
    Ok(ConditionalPair {
        k,
        grid,
        observed,
        expected,
        observed_se,
        n_at_risk: survivors.len(),
    })
}

/// Scan for the smallest grid index k with rs[j]/rs[k] > threshold for all
/// j >= k, via a suffix minimum. Returns `None` when no point qualifies.
pub fn crs_scan(rs: &[f64], threshold: f64) -> Option<usize> {
    if rs.is_empty() {
        return None;
    }
    let mut suffix_min = vec![0.0; rs.len()];
    let mut m = f64::INFINITY;
    for (i, &v) in rs.iter().enumerate().rev() {
        m = m.min(v);
        suffix_min[i] = m;
    }
    (0..rs.len()).find(|&k| suffix_min[k] > threshold * rs[k])
}

/// Comparator cure time: smallest grid time after which the conditional
/// relative survival stays strictly above the threshold.
pub fn crs_cure_time(
    d: &Dataset,
    lt: &LifeTable,
    threshold: f64,
    grid: &[f64],
) -> Result<Option<f64>, CurveError> {
    let rs = relative_survival(d, lt, grid)?;
    let values: Vec<f64> = rs.iter().map(|(_, v)| *v).collect();
    Ok(crs_scan(&values, threshold).map(|k| grid[k]))
}

/// One conditional-survival probe in a cure check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ProbeResult {
    pub c: f64,
    /// sup over grid t > c of |observed - expected|.
    pub sup_gap: f64,
    /// Monte Carlo band at the sup-gap location: 2 x Greenwood SE.
    pub band: f64,
    pub supported: bool,
    pub n_at_risk: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CureCheckReport {
    pub probes: Vec<ProbeResult>,
    /// No statistical cure: the gap at the largest probe exceeds its band.
    pub no_statistical_cure: bool,
    /// Cure time within one year of the longest follow-up.
    pub reliability_flag: Option<bool>,
}

/// Graphical cure check made numeric: at each probe time c, compare the
/// conditional observed and expected curves over t > c; the band is twice
/// the pointwise Greenwood SE.
pub fn cure_check_report(
    d: &Dataset,
    lt: &LifeTable,
    probe_times: &[f64],
    tau_hat: Option<f64>,
    grid: &[f64],
) -> Result<CureCheckReport, CurveError> {
    let max_z = d.max_time();
    let mut cs: Vec<f64> = probe_times.to_vec();
    if let Some(tau) = tau_hat {
        if tau < max_z {
            cs.push(tau);
        }
    }
    cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cs.dedup();

    let mut probes = Vec::new();
    for &c in &cs {
        if c >= max_z {
            continue;
        }
        let pair = match conditional_curves(d, lt, c, grid) {
            Ok(p) => p,
            Err(CurveError::NoRiskSet(_)) | Err(CurveError::ZeroAtCondition(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut sup_gap = 0.0;
        let mut band = 0.0;
        let mut supported = true;
        for ((&t, (&obs, &exp)), &se) in pair
            .grid
            .iter()
            .zip(pair.observed.iter().zip(pair.expected.iter()))
            .zip(pair.observed_se.iter())
        {
            if t <= c {
                continue;
            }
            let gap = (obs - exp).abs();
            if gap > sup_gap {
                sup_gap = gap;
                band = 2.0 * se;
            }
            if gap > 2.0 * se + 1e-12 {
                supported = false;
            }
        }
        probes.push(ProbeResult {
            c,
            sup_gap,
            band,
            supported,
            n_at_risk: pair.n_at_risk,
        });
    }
    let no_statistical_cure = probes.last().map_or(true, |p| !p.supported);
    let reliability_flag = tau_hat.map(|tau| tau >= max_z - 1.0);
    Ok(CureCheckReport {
        probes,
        no_statistical_cure,
        reliability_flag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Observation, Sex};
    use crate::lifetable::LifeTable;
    use rand::Rng;
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

    fn data(records: &[(f64, CensoringStatus)]) -> Dataset {
        Dataset::new(
            records.iter().map(|&(z, s)| obs(z, s)).collect(),
            vec!["(intercept)".into()],
        )
        .unwrap()
    }

    #[test]
    fn km_hand_product_limit() {
        let d = data(&[
            (1.0, CensoringStatus::Disease),
            (2.0, CensoringStatus::Disease),
            (3.0, CensoringStatus::Disease),
        ]);
        let km = kaplan_meier(&d, &all_death_rule()).unwrap();
        assert_eq!(km.times, vec![1.0, 2.0, 3.0]);
        let expect = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (v, e) in km.values.iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(km.eval(0.5), 1.0);
    }

    #[test]
    fn km_with_censoring_drops_risk_set() {
        let d = data(&[
            (1.0, CensoringStatus::OtherCause),
            (2.0, CensoringStatus::Censored),
            (3.0, CensoringStatus::Disease),
        ]);
        let km = kaplan_meier(&d, &all_death_rule()).unwrap();
        assert_eq!(km.times, vec![1.0, 3.0]);
        assert!((km.eval(1.5) - 2.0 / 3.0).abs() < 1e-12);
        assert!(km.eval(3.5).abs() < 1e-12);
    }

    #[test]
    fn km_all_censored_is_flat() {
        let d = data(&[
            (1.0, CensoringStatus::Censored),
            (2.0, CensoringStatus::Censored),
        ]);
        let km = kaplan_meier(&d, &all_death_rule()).unwrap();
        assert!(km.times.is_empty());
        assert_eq!(km.eval(10.0), 1.0);
    }

    #[test]
    fn km_matches_empirical_survivor_without_censoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let times: Vec<f64> = (0..60).map(|_| rng.gen_range(0.1..8.0)).collect();
        let d = data(
            &times
                .iter()
                .map(|&t| (t, CensoringStatus::Disease))
                .collect::<Vec<_>>(),
        );
        let km = kaplan_meier(&d, &all_death_rule()).unwrap();
        for t in [0.5, 1.5, 4.0, 7.9] {
            let empirical =
                times.iter().filter(|&&z| z > t).count() as f64 / times.len() as f64;
            assert!((km.eval(t) - empirical).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_survival_null_excess_near_one() {
        // event times drawn from the background distribution itself
        let lt = LifeTable::constant(0.05, 1990, 2017);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<(f64, CensoringStatus)> = (0..4000)
            .map(|_| {
                let u: f64 = rng.gen_range(1e-9..1.0);
                (-u.ln() / 0.05, CensoringStatus::OtherCause)
            })
            .collect();
        let d = data(&records);
        let grid: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let rs = relative_survival(&d, &lt, &grid).unwrap();
        for &(t, v) in rs.iter().take(20) {
            // within ~3 MC standard errors of 1 at moderate t
            assert!((v - 1.0).abs() < 0.12, "t={t} rs={v}");
        }
    }

    #[test]
    fn conditional_at_zero_is_unconditional() {
        let lt = LifeTable::constant(0.01, 1990, 2017);
        let d = data(&[
            (1.0, CensoringStatus::Disease),
            (2.0, CensoringStatus::Censored),
            (3.0, CensoringStatus::OtherCause),
        ]);
        let grid = [0.0, 0.5, 1.5, 2.5];
        let pair = conditional_curves(&d, &lt, 0.0, &grid).unwrap();
        let km = kaplan_meier(&d, &all_death_rule()).unwrap();
        for (t, v) in pair.grid.iter().zip(&pair.observed) {
            assert!((v - km.eval(*t)).abs() < 1e-12);
        }
        // both curves equal 1 at t = k
        assert_eq!(pair.observed[0], 1.0);
        assert!((pair.expected[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crs_scan_examples() {
        // identically 1: first index qualifies
        assert_eq!(crs_scan(&[1.0, 1.0, 1.0], 0.95), Some(0));
        // strictly declining to zero: never qualifies (the final zero makes
        // even the last point fail its own ratio)
        let declining: Vec<f64> = (0..=50).map(|i| 1.0 - i as f64 / 50.0).collect();
        assert_eq!(crs_scan(&declining, 0.95), None);
        // step 1.0 -> 0.9 at t = 2 then flat
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let stepped: Vec<f64> = grid
            .iter()
            .map(|&t| if t < 2.0 { 1.0 } else { 0.9 })
            .collect();
        let k = crs_scan(&stepped, 0.95).unwrap();
        assert!(grid[k] >= 2.0);
        assert_eq!(grid[k], 2.0);
    }

    /// Exhaustive double-loop oracle for the CRS rule.
    fn crs_oracle(rs: &[f64], threshold: f64) -> Option<usize> {
        (0..rs.len()).find(|&k| (k..rs.len()).all(|j| rs[j] / rs[k] > threshold))
    }

    #[test]
    fn crs_scan_matches_oracle_on_random_curves() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let n = rng.gen_range(1..60);
            let mut v = 1.0f64;
            let rs: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        // plateau
                    } else {
                        v *= rng.gen_range(0.85..1.02);
                    }
                    v.max(0.0)
                })
                .collect();
            for threshold in [0.95, 0.99] {
                assert_eq!(crs_scan(&rs, threshold), crs_oracle(&rs, threshold));
            }
        }
    }

    #[test]
    fn cure_check_flags_reliability() {
        let lt = LifeTable::constant(0.05, 1990, 2017);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let records: Vec<(f64, CensoringStatus)> = (0..500)
            .map(|_| {
                let u: f64 = rng.gen_range(1e-9..1.0);
                ((-u.ln() / 0.05).min(20.0), CensoringStatus::OtherCause)
            })
            .collect();
        let d = data(&records);
        let grid: Vec<f64> = (0..80).map(|i| i as f64 * 0.25).collect();
        let max_z = d.max_time();
        let report =
            cure_check_report(&d, &lt, &[1.0, 3.0, 5.0], Some(max_z - 0.5), &grid).unwrap();
        assert_eq!(report.reliability_flag, Some(true));
        // null-excess cohort should support cure at the probes
        assert!(!report.no_statistical_cure);
    }
}
