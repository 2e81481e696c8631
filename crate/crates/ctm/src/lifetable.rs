//! Background (expected) mortality from national vital statistics.
//!
//! The table stores an annual hazard rate per (calendar year, integer age,
//! sex) cell. Hazards are piecewise constant along follow-up time: as t
//! advances from diagnosis, attained age and calendar year advance in
//! lockstep, so the cumulative hazard is piecewise linear and survival,
//! conditional survival, and inverse sampling are all closed form.
//!
//! Out-of-range lookups clamp to the nearest covered year and to age 100;
//! beyond age 100 the age-100 hazard persists.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::data::{Observation, Sex};

#[derive(Debug, Error)]
pub enum LifeTableError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("missing cell year={year} age={age} sex={sex}")]
    MissingCell { year: i32, age: u32, sex: &'static str },
    #[error("{0}")]
    Invalid(String),
}

pub const MAX_AGE: u32 = 100;

/// Annual hazard surface over (year, age, sex).
#[derive(Debug, Clone)]
pub struct LifeTable {
    year_min: i32,
    year_max: i32,
    /// `hazard[((year_idx * 101) + age) * 2 + sex]`
    hazard: Vec<f64>,
}

/// Demographics needed for a background-mortality lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubjectBackground {
    pub diag_year: i32,
    pub age_at_diag: u32,
    pub sex: Sex,
}

impl From<&Observation> for SubjectBackground {
    fn from(obs: &Observation) -> Self {
        Self {
            diag_year: obs.diag_year,
            age_at_diag: obs.age_at_diag,
            sex: obs.sex,
        }
    }
}

fn sex_index(sex: Sex) -> usize {
    match sex {
        Sex::Female => 0,
        Sex::Male => 1,
    }
}

impl LifeTable {
    /// Build from explicit cells. Every (age, sex) cell must be present for
    /// every year in the contiguous range.
    pub fn from_cells(cells: &[(i32, u32, Sex, f64)]) -> Result<Self, LifeTableError> {
        if cells.is_empty() {
            return Err(LifeTableError::Invalid("no cells".into()));
        }
        let year_min = cells.iter().map(|c| c.0).min().unwrap();
        let year_max = cells.iter().map(|c| c.0).max().unwrap();
        let n_years = (year_max - year_min + 1) as usize;
        let mut hazard = vec![f64::NAN; n_years * (MAX_AGE as usize + 1) * 2];
        for &(year, age, sex, rate) in cells {
            if age > MAX_AGE {
                return Err(LifeTableError::Invalid(format!("age {age} > {MAX_AGE}")));
            }
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(LifeTableError::Invalid(format!(
                    "hazard {rate} at year={year} age={age}"
                )));
            }
            let yi = (year - year_min) as usize;
            hazard[(yi * (MAX_AGE as usize + 1) + age as usize) * 2 + sex_index(sex)] = rate;
        }
        for yi in 0..n_years {
            for age in 0..=MAX_AGE as usize {
                for (si, name) in [(0usize, "F"), (1usize, "M")] {
                    if hazard[(yi * (MAX_AGE as usize + 1) + age) * 2 + si].is_nan() {
                        return Err(LifeTableError::MissingCell {
                            year: year_min + yi as i32,
                            age: age as u32,
                            sex: name,
                        });
                    }
                }
            }
        }
        Ok(Self {
            year_min,
            year_max,
            hazard,
        })
    }

    /// Constant-hazard table over the given years, for tests and examples.
    pub fn constant(rate: f64, year_min: i32, year_max: i32) -> Self {
        let mut cells = Vec::new();
        for year in year_min..=year_max {
            for age in 0..=MAX_AGE {
                cells.push((year, age, Sex::Female, rate));
                cells.push((year, age, Sex::Male, rate));
            }
        }
        Self::from_cells(&cells).unwrap()
    }

    /// Bundled synthetic table: smooth Gompertz–Makeham rates with a mild
    /// sex differential and a slow secular improvement, covering 1985-2017.
    /// Ships with the crate so analyses and tests need no external vital
    /// statistics.
    pub fn synthetic() -> Self {
        let mut cells = Vec::new();
        for year in 1985..=2017 {
            let improvement = (-0.004 * (year - 1985) as f64).exp();
            for age in 0..=MAX_AGE {
                for sex in [Sex::Female, Sex::Male] {
                    let (a, b) = match sex {
                        Sex::Female => (1.6e-5, 0.105),
                        Sex::Male => (3.0e-5, 0.101),
                    };
                    let makeham = 4.0e-4;
                    let rate = (makeham + a * (b * age as f64).exp()) * improvement;
                    cells.push((year, age, sex, rate.min(0.7)));
                }
            }
        }
        Self::from_cells(&cells).unwrap()
    }

    pub fn year_range(&self) -> (i32, i32) {
        (self.year_min, self.year_max)
    }

    /// Hazard of the cell containing attained (year, age); clamped outside
    /// the covered range.
    pub fn cell_hazard(&self, year: i64, age: i64, sex: Sex) -> f64 {
        let year = year.clamp(self.year_min as i64, self.year_max as i64);
        let age = age.clamp(0, MAX_AGE as i64) as usize;
        let yi = (year - self.year_min as i64) as usize;
        self.hazard[(yi * (MAX_AGE as usize + 1) + age) * 2 + sex_index(sex)]
    }

    /// Both the year and age lookups are clamped from this offset on, so
    /// the hazard is constant for all later follow-up time.
    fn saturated(&self, subj: &SubjectBackground, k: i64) -> bool {
        subj.age_at_diag as i64 + k >= MAX_AGE as i64
            && subj.diag_year as i64 + k >= self.year_max as i64
    }
}

/// Hazard at follow-up time `t` (right-continuous step function).
pub fn background_hazard(lt: &LifeTable, subj: &SubjectBackground, t: f64) -> f64 {
    let k = t.max(0.0).floor() as i64; // saturating cast
    lt.cell_hazard(
        subj.diag_year as i64 + k,
        subj.age_at_diag as i64 + k,
        subj.sex,
    )
}

fn cumulative_hazard(lt: &LifeTable, subj: &SubjectBackground, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    let mut k: i64 = 0;
    loop {
        let rate = lt.cell_hazard(
            subj.diag_year as i64 + k,
            subj.age_at_diag as i64 + k,
            subj.sex,
        );
        let remaining = t - k as f64;
        if remaining <= 1.0 || lt.saturated(subj, k) {
            return h + remaining * rate;
        }
        h += rate;
        k += 1;
    }
}

/// S_O(t) = exp(-∫ h_O), with the hazard piecewise constant per year cell.
pub fn background_survival(lt: &LifeTable, subj: &SubjectBackground, t: f64) -> f64 {
    (-cumulative_hazard(lt, subj, t)).exp()
}

/// Conditional background survival S_O(t)/S_O(k) for t >= k.
pub fn conditional_background_survival(
    lt: &LifeTable,
    subj: &SubjectBackground,
    t: f64,
    k: f64,
) -> f64 {
    (cumulative_hazard(lt, subj, k) - cumulative_hazard(lt, subj, t)).exp()
}

/// Generalized-inverse sampling: smallest t with S_O(t) <= u, analytic
/// within each constant-hazard segment. If the persisted ceiling hazard is
/// zero the draw is capped at attained age 120.
pub fn sample_background_time(lt: &LifeTable, subj: &SubjectBackground, u: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0, "u must be in (0,1), got {u}");
    let target = -u.ln();
    let mut h = 0.0;
    let mut k: i64 = 0;
    loop {
        let rate = lt.cell_hazard(
            subj.diag_year as i64 + k,
            subj.age_at_diag as i64 + k,
            subj.sex,
        );
        if lt.saturated(subj, k) {
            // hazard persists from here for all later time
            if rate <= 0.0 {
                return (120 - subj.age_at_diag as i64).max(k) as f64;
            }
            return k as f64 + (target - h) / rate;
        }
        if h + rate >= target {
            if rate <= 0.0 {
                k += 1;
                continue;
            }
            return k as f64 + (target - h) / rate;
        }
        h += rate;
        k += 1;
    }
}

/// Cohort expected survival: unweighted mean of individual S_O over the
/// grid (Ederer II style, no risk-set reweighting).
pub fn cohort_expected_survival(
    lt: &LifeTable,
    subjects: &[SubjectBackground],
    grid: &[f64],
) -> Result<Vec<f64>, LifeTableError> {
    if subjects.is_empty() {
        return Err(LifeTableError::Invalid("empty cohort".into()));
    }
    Ok(grid
        .iter()
        .map(|&t| {
            subjects
                .iter()
                .map(|s| background_survival(lt, s, t))
                .sum::<f64>()
                / subjects.len() as f64
        })
        .collect())
}

/// Loader for the life-table CSV `year, age, sex, hazard`. With
/// `probabilities = true` the column holds annual death probabilities qx
/// and is converted to rates via -ln(1 - qx).
pub fn load_lifetable(path: &Path, probabilities: bool) -> Result<LifeTable, LifeTableError> {
    let raw = std::fs::read_to_string(path).map_err(|source| LifeTableError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_lifetable_str(&raw, probabilities)
}

pub fn load_lifetable_str(raw: &str, probabilities: bool) -> Result<LifeTable, LifeTableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let col = |name: &str| -> Result<usize, LifeTableError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LifeTableError::Invalid(format!("missing column `{name}`")))
    };
    let (yc, ac, sc, hc) = (col("year")?, col("age")?, col("sex")?, col("hazard")?);
    let mut cells = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let rownum = i + 1;
        let fail = |msg: String| LifeTableError::Row { row: rownum, msg };
        let year: i32 = record[yc]
            .parse()
            .map_err(|_| fail(format!("bad year `{}`", &record[yc])))?;
        let age: u32 = record[ac]
            .parse()
            .map_err(|_| fail(format!("bad age `{}`", &record[ac])))?;
        let sex = Sex::parse(&record[sc])
            .ok_or_else(|| fail(format!("bad sex `{}`", &record[sc])))?;
        let value: f64 = record[hc]
            .parse()
            .map_err(|_| fail(format!("bad hazard `{}`", &record[hc])))?;
        let rate = if probabilities {
            if !(0.0..1.0).contains(&value) {
                return Err(fail(format!("probability {value} outside [0, 1)")));
            }
            -(1.0 - value).ln()
        } else {
            value
        };
        cells.push((year, age, sex, rate));
    }
    LifeTable::from_cells(&cells)
}

pub fn lifetable_to_csv(lt: &LifeTable) -> String {
    let mut out = String::from("year,age,sex,hazard\n");
    for year in lt.year_min..=lt.year_max {
        for age in 0..=MAX_AGE {
            for sex in [Sex::Female, Sex::Male] {
                let rate = lt.cell_hazard(year as i64, age as i64, sex);
                let _ = writeln!(out, "{year},{age},{},{rate}", sex.label());
            }
        }
    }
    out
}

pub fn save_lifetable(lt: &LifeTable, path: &Path) -> Result<(), LifeTableError> {
    std::fs::write(path, lifetable_to_csv(lt)).map_err(|source| LifeTableError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn subj() -> SubjectBackground {
        SubjectBackground {
            diag_year: 2000,
            age_at_diag: 60,
            sex: Sex::Female,
        }
    }

    #[test]
    fn survival_at_zero_is_one() {
        let lt = LifeTable::constant(0.01, 1995, 2005);
        assert_eq!(background_survival(&lt, &subj(), 0.0), 1.0);
    }

    #[test]
    fn constant_hazard_closed_form() {
        let lt = LifeTable::constant(0.01, 1995, 2005);
        let s = background_survival(&lt, &subj(), 10.0);
        assert!((s - (-0.1f64).exp()).abs() < 1e-12);
        let cond = conditional_background_survival(&lt, &subj(), 5.0, 3.0);
        assert!((cond - (-0.02f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn hazard_lookup_steps_with_age() {
        let mut cells = Vec::new();
        for year in 1999..=2005 {
            for age in 0..=MAX_AGE {
                for sex in [Sex::Female, Sex::Male] {
                    let rate = if age == 61 { 0.02 } else { 0.01 };
                    cells.push((year, age, sex, rate));
                }
            }
        }
        let lt = LifeTable::from_cells(&cells).unwrap();
        assert_eq!(background_hazard(&lt, &subj(), 1.5), 0.02);
        assert_eq!(background_hazard(&lt, &subj(), 0.99), 0.01);
        // boundary belongs to the right cell
        assert_eq!(background_hazard(&lt, &subj(), 1.0), 0.02);
        assert_eq!(background_hazard(&lt, &subj(), 2.0), 0.01);
    }

    #[test]
    fn inverse_sampling_closed_form() {
        let lt = LifeTable::constant(0.01, 1995, 2005);
        let t = sample_background_time(&lt, &subj(), (-0.1f64).exp());
        assert!((t - 10.0).abs() < 1e-10);
        // u close to 1 gives t close to 0
        let t0 = sample_background_time(&lt, &subj(), 1.0 - 1e-12);
        assert!(t0 < 1e-9);
    }

    #[test]
    fn inverse_round_trip_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cells = Vec::new();
        for year in 1998..=2004 {
            for age in 0..=MAX_AGE {
                for sex in [Sex::Female, Sex::Male] {
                    cells.push((year, age, sex, rng.gen_range(0.001..0.3)));
                }
            }
        }
        let lt = LifeTable::from_cells(&cells).unwrap();
        let s = SubjectBackground {
            diag_year: 2000,
            age_at_diag: 40,
            sex: Sex::Male,
        };
        for _ in 0..200 {
            let u: f64 = rng.gen_range(1e-6..1.0 - 1e-6);
            let t = sample_background_time(&lt, &s, u);
            let back = background_survival(&lt, &s, t);
            assert!((back - u).abs() < 1e-10, "u={u} t={t} back={back}");
        }
    }

    #[test]
    fn survival_nonincreasing_log_piecewise_linear() {
        let lt = LifeTable::synthetic();
        let s = subj();
        let mut prev = 1.0;
        for i in 0..100 {
            let t = i as f64 * 0.37;
            let v = background_survival(&lt, &s, t);
            assert!(v <= prev + 1e-15);
            assert!(v > 0.0 && v <= 1.0);
            prev = v;
        }
        // exp(+∫h) reconstructs 1
        for t in [0.4, 3.7, 25.0] {
            let rebuilt = background_survival(&lt, &s, t) * cumulative_hazard(&lt, &s, t).exp();
            assert!((rebuilt - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cohort_expectation_averages_members() {
        let lt = LifeTable::constant(0.01, 1995, 2010);
        let members = vec![subj(), subj(), subj()];
        let grid = [0.0, 1.0, 5.0];
        let curve = cohort_expected_survival(&lt, &members, &grid).unwrap();
        for (t, v) in grid.iter().zip(&curve) {
            assert!((v - (-0.01 * t).exp()).abs() < 1e-12);
        }
        assert!(cohort_expected_survival(&lt, &[], &grid).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let lt = LifeTable::synthetic();
        let text = lifetable_to_csv(&lt);
        let back = load_lifetable_str(&text, false).unwrap();
        assert_eq!(lifetable_to_csv(&back), text);
    }

    #[test]
    fn probability_conversion() {
        let text = {
            let mut s = String::from("year,age,sex,hazard\n");
            for age in 0..=MAX_AGE {
                for sex in ["F", "M"] {
                    s.push_str(&format!("2000,{age},{sex},0.0099501662508\n"));
                }
            }
            s
        };
        let lt = load_lifetable_str(&text, true).unwrap();
        let rate = lt.cell_hazard(2000, 50, Sex::Female);
        assert!((rate - 0.01).abs() < 1e-10);
    }
}
