//! Observation records, covariate design, and dataset validation.
//!
//! The canonical on-disk form is a CSV with columns
//! `z, delta, diag_year, age, sex, <covariates...>`. The intercept column
//! is implicit in files and materialised as `x[0] = 1` on load. Categorical
//! (non-numeric) covariate columns are expanded to reference-coded
//! indicators at ingestion, reference level being the lexicographically
//! smallest.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("empty dataset")]
    Empty,
    #[error("{0}")]
    Invalid(String),
}

/// Four-level censoring status: 0 censored, 1 other-cause death,
/// 2 disease death, 3 death of unresolved cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CensoringStatus {
    Censored,
    OtherCause,
    Disease,
    AnyDeath,
}

impl CensoringStatus {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(Self::Censored),
            1 => Some(Self::OtherCause),
            2 => Some(Self::Disease),
            3 => Some(Self::AnyDeath),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Censored => 0,
            Self::OtherCause => 1,
            Self::Disease => 2,
            Self::AnyDeath => 3,
        }
    }

    pub fn is_uncensored(self) -> bool {
        !matches!(self, Self::Censored)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" | "0" => Some(Self::Female),
            "m" | "male" | "1" => Some(Self::Male),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Female => "F",
            Self::Male => "M",
        }
    }
}

/// One subject's follow-up record.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Last observed time in years.
    pub z: f64,
    pub delta: CensoringStatus,
    /// Covariate vector; `x[0]` is the intercept 1.
    pub x: Vec<f64>,
    pub diag_year: i32,
    pub age_at_diag: u32,
    pub sex: Sex,
}

/// Immutable collection of observations sharing one covariate design.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    p: usize,
    covariate_names: Vec<String>,
}

/// Empirical frequencies of the four status levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatusMix {
    pub q_c: f64,
    pub q_o: f64,
    pub q_d: f64,
    pub q_t: f64,
}

/// Which uncensored records a [`degrade_status`] pass may recode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradeScope {
    DiseaseOnly,
    AllUncensored,
}

/// Recoding rule: a fraction of in-scope records become status 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeRule {
    pub fraction_to_anydeath: f64,
    pub scope: DegradeScope,
}

impl Dataset {
    pub fn new(
        observations: Vec<Observation>,
        covariate_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if observations.is_empty() {
            return Err(DataError::Empty);
        }
        let p = observations[0].x.len();
        if p == 0 {
            return Err(DataError::Invalid("covariate dimension is zero".into()));
        }
        if covariate_names.len() != p {
            return Err(DataError::Invalid(format!(
                "{} covariate names for dimension {p}",
                covariate_names.len()
            )));
        }
        for (i, obs) in observations.iter().enumerate() {
            validate_observation(obs, p).map_err(|msg| DataError::Row { row: i + 1, msg })?;
        }
        Ok(Self {
            observations,
            p,
            covariate_names,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Covariate dimension including the intercept.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn max_time(&self) -> f64 {
        self.observations.iter().map(|o| o.z).fold(0.0, f64::max)
    }

    /// Index of a covariate column by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }
}

fn validate_observation(obs: &Observation, p: usize) -> Result<(), String> {
    if !(obs.z > 0.0 && obs.z.is_finite()) {
        return Err(format!("non-positive time {}", obs.z));
    }
    if obs.x.len() != p {
        return Err(format!("covariate length {} != {p}", obs.x.len()));
    }
    if obs.x[0] != 1.0 {
        return Err(format!("intercept x[0] = {} is not 1", obs.x[0]));
    }
    if obs.x.iter().any(|v| !v.is_finite()) {
        return Err("non-finite covariate".into());
    }
    if obs.age_at_diag > 100 {
        return Err(format!("age {} outside [0, 100]", obs.age_at_diag));
    }
    Ok(())
}

/// Column mapping for [`load_dataset`]. Defaults to the canonical header
/// names; every column not claimed by a role is a covariate.
#[derive(Debug, Clone)]
pub struct Schema {
    pub z: String,
    pub delta: String,
    pub diag_year: String,
    pub age: String,
    pub sex: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            z: "z".into(),
            delta: "delta".into(),
            diag_year: "diag_year".into(),
            age: "age".into(),
            sex: "sex".into(),
        }
    }
}

pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset, DataError> {
    let raw = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_dataset_str(&raw, schema)
}

pub fn load_dataset_str(raw: &str, schema: &Schema) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let find = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let z_col = find(&schema.z)?;
    let delta_col = find(&schema.delta)?;
    let year_col = find(&schema.diag_year)?;
    let age_col = find(&schema.age)?;
    let sex_col = find(&schema.sex)?;
    let reserved = [z_col, delta_col, year_col, age_col, sex_col];
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|c| !reserved.contains(c))
        .collect();

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(record.iter().map(|f| f.to_string()).collect());
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    // Split covariate columns into numeric and categorical by whether every
    // value parses as f64; categoricals expand to reference-coded indicators.
    enum Col {
        Numeric(usize),
        Categorical(usize, Vec<String>),
    }
    let mut plan: Vec<Col> = Vec::new();
    for &c in &cov_cols {
        let numeric = rows.iter().all(|r| r[c].parse::<f64>().is_ok());
        if numeric {
            plan.push(Col::Numeric(c));
        } else {
            let levels: BTreeSet<String> = rows.iter().map(|r| r[c].clone()).collect();
            plan.push(Col::Categorical(c, levels.into_iter().collect()));
        }
    }

    let mut covariate_names = vec!["(intercept)".to_string()];
    for col in &plan {
        match col {
            Col::Numeric(c) => covariate_names.push(headers[*c].clone()),
            Col::Categorical(c, levels) => {
                for level in &levels[1..] {
                    covariate_names.push(format!("{}={}", headers[*c], level));
                }
            }
        }
    }

    let mut observations = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let rownum = i + 1;
        let fail = |msg: String| DataError::Row { row: rownum, msg };
        let z: f64 = row[z_col]
            .parse()
            .map_err(|_| fail(format!("unparseable time `{}`", row[z_col])))?;
        if !(z > 0.0 && z.is_finite()) {
            return Err(fail(format!("non-positive time {z}")));
        }
        let code: i64 = row[delta_col]
            .parse()
            .map_err(|_| fail(format!("unparseable status `{}`", row[delta_col])))?;
        let delta = CensoringStatus::from_code(code)
            .ok_or_else(|| fail(format!("invalid status {code}")))?;
        let diag_year: i32 = row[year_col]
            .parse()
            .map_err(|_| fail(format!("unparseable diagnosis year `{}`", row[year_col])))?;
        let age_f: f64 = row[age_col]
            .parse()
            .map_err(|_| fail(format!("unparseable age `{}`", row[age_col])))?;
        if !(0.0..=100.0).contains(&age_f) {
            return Err(fail(format!("age {age_f} outside [0, 100]")));
        }
        let sex = Sex::parse(&row[sex_col])
            .ok_or_else(|| fail(format!("unparseable sex `{}`", row[sex_col])))?;

        let mut x = vec![1.0];
        for col in &plan {
            match col {
                Col::Numeric(c) => x.push(row[*c].parse::<f64>().unwrap()),
                Col::Categorical(c, levels) => {
                    for level in &levels[1..] {
                        x.push(if &row[*c] == level { 1.0 } else { 0.0 });
                    }
                }
            }
        }

        observations.push(Observation {
            z,
            delta,
            x,
            diag_year,
            age_at_diag: age_f as u32,
            sex,
        });
    }

    Dataset::new(observations, covariate_names)
}

/// Serialize to the canonical CSV. Floats use the shortest round-trip
/// decimal form, so load → save → load is bit-identical.
pub fn dataset_to_csv(d: &Dataset) -> String {
    let mut out = String::new();
    out.push_str("z,delta,diag_year,age,sex");
    for name in &d.covariate_names()[1..] {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for obs in d.observations() {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            obs.z,
            obs.delta.code(),
            obs.diag_year,
            obs.age_at_diag,
            obs.sex.label()
        );
        for v in &obs.x[1..] {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, dataset_to_csv(d)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Empirical status proportions (q_C, q_O, q_D, q_T).
pub fn status_mix(d: &Dataset) -> Result<StatusMix, DataError> {
    if d.is_empty() {
        return Err(DataError::Empty);
    }
    let n = d.len() as f64;
    let mut counts = [0usize; 4];
    for obs in d.observations() {
        counts[obs.delta.code() as usize] += 1;
    }
    Ok(StatusMix {
        q_c: counts[0] as f64 / n,
        q_o: counts[1] as f64 / n,
        q_d: counts[2] as f64 / n,
        q_t: counts[3] as f64 / n,
    })
}

/// Recode `floor(fraction * #in-scope)` uncensored records to status 3,
/// selected uniformly under the given seed. Censored records never change.
pub fn degrade_status(d: &Dataset, rule: &DegradeRule, seed: u64) -> Result<Dataset, DataError> {
    if !(0.0..=1.0).contains(&rule.fraction_to_anydeath) {
        return Err(DataError::Invalid(format!(
            "fraction {} outside [0, 1]",
            rule.fraction_to_anydeath
        )));
    }
    let in_scope = |s: CensoringStatus| match rule.scope {
        DegradeScope::DiseaseOnly => s == CensoringStatus::Disease,
        DegradeScope::AllUncensored => matches!(
            s,
            CensoringStatus::OtherCause | CensoringStatus::Disease
        ),
    };
    let mut eligible: Vec<usize> = d
        .observations()
        .iter()
        .enumerate()
        .filter(|(_, o)| in_scope(o.delta))
        .map(|(i, _)| i)
        .collect();
    let k = (rule.fraction_to_anydeath * eligible.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    let chosen: BTreeSet<usize> = eligible.into_iter().take(k).collect();

    let mut observations = d.observations().to_vec();
    for i in chosen {
        observations[i].delta = CensoringStatus::AnyDeath;
    }
    Dataset::new(observations, d.covariate_names().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(deltas: &[u8]) -> Dataset {
        let observations = deltas
            .iter()
            .enumerate()
            .map(|(i, &code)| Observation {
                z: 1.0 + i as f64,
                delta: CensoringStatus::from_code(code as i64).unwrap(),
                x: vec![1.0, i as f64 * 0.1],
                diag_year: 2000,
                age_at_diag: 60,
                sex: if i % 2 == 0 { Sex::Female } else { Sex::Male },
            })
            .collect();
        Dataset::new(observations, vec!["(intercept)".into(), "x1".into()]).unwrap()
    }

    #[test]
    fn loads_valid_rows() {
        let csv = "z,delta,diag_year,age,sex,x1\n1.5,2,2001,55,F,0.3\n2.0,1,2002,60,M,-0.1\n0.7,0,2003,70,F,1.0\n";
        let d = load_dataset_str(csv, &Schema::default()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.p(), 2);
        assert_eq!(d.observations()[0].x, vec![1.0, 0.3]);
        assert_eq!(d.observations()[1].sex, Sex::Male);
    }

    #[test]
    fn rejects_non_positive_time() {
        let csv = "z,delta,diag_year,age,sex,x1\n1.5,2,2001,55,F,0.3\n-1,1,2002,60,M,0.0\n";
        let err = load_dataset_str(csv, &Schema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("non-positive time"), "{msg}");
    }

    #[test]
    fn rejects_invalid_status() {
        let csv = "z,delta,diag_year,age,sex,x1\n1.5,4,2001,55,F,0.3\n";
        let err = load_dataset_str(csv, &Schema::default()).unwrap_err();
        assert!(err.to_string().contains("invalid status"));
    }

    #[test]
    fn categorical_expansion_reference_codes() {
        let csv = "z,delta,diag_year,age,sex,stage\n1,2,2000,50,F,I\n2,1,2000,50,F,II\n3,0,2000,50,M,III\n";
        let d = load_dataset_str(csv, &Schema::default()).unwrap();
        assert_eq!(
            d.covariate_names(),
            &["(intercept)", "stage=II", "stage=III"]
        );
        assert_eq!(d.observations()[0].x, vec![1.0, 0.0, 0.0]);
        assert_eq!(d.observations()[1].x, vec![1.0, 1.0, 0.0]);
        assert_eq!(d.observations()[2].x, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn status_mix_uniform() {
        let mix = status_mix(&toy(&[0, 1, 2, 3])).unwrap();
        assert_eq!(
            (mix.q_c, mix.q_o, mix.q_d, mix.q_t),
            (0.25, 0.25, 0.25, 0.25)
        );
    }

    #[test]
    fn status_mix_degenerate() {
        let mix = status_mix(&toy(&[3, 3, 3])).unwrap();
        assert_eq!((mix.q_c, mix.q_o, mix.q_d, mix.q_t), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn degrade_fraction_zero_is_identity() {
        let d = toy(&[0, 1, 2, 3, 2, 1]);
        let rule = DegradeRule {
            fraction_to_anydeath: 0.0,
            scope: DegradeScope::AllUncensored,
        };
        assert_eq!(degrade_status(&d, &rule, 7).unwrap(), d);
    }

    #[test]
    fn degrade_fraction_one_recodes_all_uncensored() {
        let d = toy(&[0, 1, 2, 2, 1, 0]);
        let rule = DegradeRule {
            fraction_to_anydeath: 1.0,
            scope: DegradeScope::AllUncensored,
        };
        let out = degrade_status(&d, &rule, 7).unwrap();
        for (orig, new) in d.observations().iter().zip(out.observations()) {
            if orig.delta.is_uncensored() {
                assert_eq!(new.delta, CensoringStatus::AnyDeath);
            } else {
                assert_eq!(new.delta, CensoringStatus::Censored);
            }
        }
        // idempotent at fraction 1
        let twice = degrade_status(&out, &rule, 13).unwrap();
        assert_eq!(twice, out);
    }

    #[test]
    fn degrade_half_disease_only_exact_count() {
        let deltas: Vec<u8> = (0..20).map(|i| if i % 2 == 0 { 2 } else { 1 }).collect();
        let d = toy(&deltas);
        let rule = DegradeRule {
            fraction_to_anydeath: 0.5,
            scope: DegradeScope::DiseaseOnly,
        };
        let out = degrade_status(&d, &rule, 42).unwrap();
        let recoded = d
            .observations()
            .iter()
            .zip(out.observations())
            .filter(|(a, b)| a.delta != b.delta)
            .count();
        assert_eq!(recoded, 5); // floor(0.5 * 10)
        // reproducible under the same seed
        assert_eq!(out, degrade_status(&d, &rule, 42).unwrap());
    }

    proptest! {
        #[test]
        fn mix_sums_to_one(codes in proptest::collection::vec(0u8..4, 1..200)) {
            let mix = status_mix(&toy(&codes)).unwrap();
            let total = mix.q_c + mix.q_o + mix.q_d + mix.q_t;
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn csv_round_trips(codes in proptest::collection::vec(0u8..4, 1..50)) {
            let d = toy(&codes);
            let text = dataset_to_csv(&d);
            let back = load_dataset_str(&text, &Schema::default()).unwrap();
            prop_assert_eq!(dataset_to_csv(&back), text);
        }
    }
}
