//! Command-line surface: fit, simulate, bootstrap, diagnose, crs, and
//! make-lifetable, each emitting a reproducibility manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ctm::bootstrap::{bootstrap, BootstrapResult};
use ctm::config::apply_config_file;
use ctm::data::{load_dataset, save_dataset, Dataset, Schema};
use ctm::excess::Family;
use ctm::lifetable::{load_lifetable, save_lifetable, LifeTable};
use ctm::manifest::RunManifest;
use ctm::nonparam::{conditional_curves, crs_cure_time, cure_check_report, CureCheckReport};
use ctm::optimizer::{fit, grid_fit, grid_search_tau, CtmFit, OptimizerConfig};
use ctm::report::{curve_csv, curves_svg, summary_csv, summary_table, Series};
use ctm::simgen::{generate_one, preset, run_study, SimDesign, StudyConfig, PRESET_NAMES};

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_FLAGGED: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ctm",
    version,
    about = "Cure time and cure rate estimation against a background life table"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the cure time model to a dataset.
    Fit(FitArgs),
    /// Run a simulation study preset or design file.
    Simulate(SimulateArgs),
    /// Parametric bootstrap of a previous fit.
    Bootstrap(BootstrapArgs),
    /// Conditional-survival cure diagnostics.
    Diagnose(DiagnoseArgs),
    /// Conditional-relative-survival comparator cure times.
    Crs(CrsArgs),
    /// Write the bundled synthetic life table as CSV.
    MakeLifetable(MakeLifetableArgs),
}

#[derive(Args)]
struct CommonIo {
    /// Dataset CSV (columns z, delta, diag_year, age, sex, covariates...).
    #[arg(long)]
    data: PathBuf,
    /// Life-table CSV (columns year, age, sex, hazard).
    #[arg(long)]
    lifetable: PathBuf,
    /// Life-table column holds annual death probabilities, not rates.
    #[arg(long)]
    lifetable_probabilities: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    io: CommonIo,
    /// weibull | lognormal | loglogistic
    #[arg(long)]
    family: Option<String>,
    /// Fit all three families and keep the largest log-likelihood.
    #[arg(long)]
    select_by_loglik: bool,
    /// Intercept-only grid search instead of gradient estimation.
    #[arg(long)]
    grid: bool,
    /// Covariate names entering the excess distribution (intercept implied).
    #[arg(long, value_delimiter = ',')]
    x1: Option<Vec<String>>,
    /// Covariate names entering the cure time (intercept implied).
    #[arg(long, value_delimiter = ',')]
    x2: Option<Vec<String>>,
    /// Ridge weight on beta; default 1/n.
    #[arg(long)]
    kappa: Option<f64>,
    /// Sigmoid bandwidth; default n^(-1/2).
    #[arg(long)]
    sigma_n: Option<f64>,
    /// key=value optimizer configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Conditioning times for the cure check.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 3.0, 5.0, 7.0, 10.0])]
    probes: Vec<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Named preset (s1-1 .. s3-4).
    #[arg(long, conflicts_with = "design")]
    preset: Option<String>,
    /// key=value design file.
    #[arg(long)]
    design: Option<PathBuf>,
    /// Life-table CSV; the bundled synthetic table when omitted.
    #[arg(long)]
    lifetable: Option<PathBuf>,
    #[arg(long)]
    lifetable_probabilities: bool,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Family used for fitting (defaults to the generating family).
    #[arg(long)]
    fit_family: Option<String>,
    /// Attach mean bootstrap SEs with this many draws per replicate.
    #[arg(long)]
    bootstrap_b: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Also write every generated replicate dataset.
    #[arg(long)]
    write_datasets: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    io: CommonIo,
    /// Fit JSON produced by `ctm fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long, default_value_t = 500)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Bootstrap a non-converged fit anyway.
    #[arg(long)]
    force: bool,
    /// Also write the replicate parameter matrix as CSV.
    #[arg(long)]
    write_replicates: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    io: CommonIo,
    /// Conditioning times.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 3.0, 5.0, 7.0, 10.0])]
    probes: Vec<f64>,
    /// Fit JSON; adds the fitted cure time as a probe.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Covariate columns defining strata.
    #[arg(long, value_delimiter = ',')]
    by: Option<Vec<String>>,
    #[arg(long, default_value_t = 200)]
    grid_points: usize,
}

#[derive(Args)]
struct CrsArgs {
    #[command(flatten)]
    io: CommonIo,
    /// Extra threshold beside the standard 0.95 and 0.99.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    by: Option<Vec<String>>,
    #[arg(long, default_value_t = 200)]
    grid_points: usize,
}

#[derive(Args)]
struct MakeLifetableArgs {
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bootstrap(args) => cmd_bootstrap(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Crs(args) => cmd_crs(args),
        Command::MakeLifetable(args) => cmd_make_lifetable(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if err.downcast_ref::<std::io::Error>().is_some() {
                EXIT_INTERNAL
            } else {
                EXIT_INPUT
            })
        }
    }
}

fn load_inputs(io: &CommonIo) -> Result<(Dataset, LifeTable)> {
    let d = load_dataset(&io.data, &Schema::default())
        .with_context(|| format!("loading dataset {}", io.data.display()))?;
    let lt = load_lifetable(&io.lifetable, io.lifetable_probabilities)
        .with_context(|| format!("loading life table {}", io.lifetable.display()))?;
    Ok((d, lt))
}

fn resolve_family(name: &str) -> Result<Family> {
    Family::parse(name).ok_or_else(|| anyhow!("unknown family `{name}`"))
}

fn resolve_mask(d: &Dataset, names: &Option<Vec<String>>) -> Result<Option<Vec<usize>>> {
    let Some(names) = names else { return Ok(None) };
    let mut idx = vec![0usize];
    for name in names {
        let j = d
            .column(name)
            .ok_or_else(|| anyhow!("unknown covariate `{name}`"))?;
        if j != 0 && !idx.contains(&j) {
            idx.push(j);
        }
    }
    Ok(Some(idx))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn start_manifest(command: &str, seed: Option<u64>, inputs: &[&Path]) -> Result<RunManifest> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut manifest = RunManifest::new(command, &args, seed);
    for input in inputs {
        manifest
            .record_input(input)
            .with_context(|| format!("digesting {}", input.display()))?;
    }
    Ok(manifest)
}

fn diagnostic_grid(d: &Dataset, points: usize) -> Vec<f64> {
    let max_z = d.max_time();
    (0..=points)
        .map(|i| max_z * i as f64 / points as f64)
        .collect()
}

fn write_cure_check_outputs(
    out: &Path,
    label: &str,
    d: &Dataset,
    lt: &LifeTable,
    report: &CureCheckReport,
    grid: &[f64],
) -> Result<()> {
    for probe in &report.probes {
        let pair = match conditional_curves(d, lt, probe.c, grid) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let obs_points: Vec<(f64, f64, f64)> = pair
            .grid
            .iter()
            .zip(pair.observed.iter().zip(pair.observed_se.iter()))
            .map(|(&t, (&v, &se))| (t, v, se))
            .collect();
        let exp_points: Vec<(f64, f64, f64)> = pair
            .grid
            .iter()
            .zip(pair.expected.iter())
            .map(|(&t, &v)| (t, v, 0.0))
            .collect();
        let stem = format!("{label}cond_k{}", fmt_probe(probe.c));
        std::fs::write(out.join(format!("{stem}_observed.csv")), curve_csv(&obs_points))?;
        std::fs::write(out.join(format!("{stem}_expected.csv")), curve_csv(&exp_points))?;
        let obs_xy: Vec<(f64, f64)> = obs_points.iter().map(|p| (p.0, p.1)).collect();
        let exp_xy: Vec<(f64, f64)> = exp_points.iter().map(|p| (p.0, p.1)).collect();
        let svg = curves_svg(
            &format!("conditional survival at k = {:.2}", probe.c),
            &[
                Series {
                    label: "observed S_T(t|k)",
                    points: &obs_xy,
                    color: "steelblue",
                    dashed: false,
                },
                Series {
                    label: "expected S_O(t|k)",
                    points: &exp_xy,
                    color: "firebrick",
                    dashed: true,
                },
            ],
        );
        std::fs::write(out.join(format!("{stem}.svg")), svg)?;
    }
    Ok(())
}

fn fmt_probe(c: f64) -> String {
    format!("{c:.2}").replace('.', "_")
}

#[derive(serde::Serialize)]
struct FitOutput {
    fit: CtmFit,
    family: String,
    selected_by_loglik: bool,
    /// Unpenalized log-likelihood per candidate family when selection ran.
    candidate_logliks: BTreeMap<String, f64>,
    grid_profile: Option<ctm::optimizer::GridSearch>,
    cure_check: CureCheckReport,
}

fn cmd_fit(args: FitArgs) -> Result<u8> {
    let (d, lt) = load_inputs(&args.io)?;
    std::fs::create_dir_all(&args.io.out)?;

    let mut cfg = OptimizerConfig::default();
    if let Some(path) = &args.config {
        apply_config_file(&mut cfg, path)?;
    }
    if args.kappa.is_some() {
        cfg.kappa = args.kappa;
    }
    if args.sigma_n.is_some() {
        cfg.sigma_n = args.sigma_n;
    }
    cfg.x1_idx = resolve_mask(&d, &args.x1)?;
    cfg.x2_idx = resolve_mask(&d, &args.x2)?;

    let mut manifest = start_manifest(
        "fit",
        Some(args.seed),
        &[args.io.data.as_path(), args.io.lifetable.as_path()],
    )?;
    manifest.set_config(&cfg);

    let mut candidate_logliks = BTreeMap::new();
    let mut grid_profile = None;

    let (fitted, family) = if args.grid {
        let family = resolve_family(args.family.as_deref().unwrap_or("weibull"))?;
        let mut grid_cfg = cfg.clone();
        if grid_cfg.x2_idx.is_none() {
            grid_cfg.x2_idx = Some(vec![0]);
        }
        let gs = grid_search_tau(&d, &lt, family, &grid_cfg)?;
        let fitted = grid_fit(&d, &lt, &gs, &grid_cfg)?;
        grid_profile = Some(gs);
        (fitted, family)
    } else if args.select_by_loglik {
        let mut best: Option<(CtmFit, Family)> = None;
        for family in [Family::Weibull, Family::LogNormal, Family::LogLogistic] {
            let candidate = fit(&d, &lt, family, &cfg, None)?;
            candidate_logliks.insert(family.name().to_string(), candidate.loglik);
            if best
                .as_ref()
                .map_or(true, |(b, _)| candidate.loglik > b.loglik)
            {
                best = Some((candidate, family));
            }
        }
        best.ok_or_else(|| anyhow!("no family could be fitted"))?
    } else {
        let family = resolve_family(
            args.family
                .as_deref()
                .ok_or_else(|| anyhow!("--family or --select-by-loglik is required"))?,
        )?;
        (fit(&d, &lt, family, &cfg, None)?, family)
    };

    let grid = diagnostic_grid(&d, 200);
    let cure_check = cure_check_report(&d, &lt, &args.probes, Some(fitted.tau_mean), &grid)?;
    write_cure_check_outputs(&args.io.out, "", &d, &lt, &cure_check, &grid)?;

    let converged = fitted.converged;
    let output = FitOutput {
        family: family.name().into(),
        selected_by_loglik: args.select_by_loglik,
        candidate_logliks,
        grid_profile,
        cure_check,
        fit: fitted,
    };
    write_json(&args.io.out.join("fit.json"), &output)?;
    manifest.write(&args.io.out.join("manifest.json"))?;
    if !converged {
        eprintln!("warning: fit did not converge; results written with flag");
        return Ok(EXIT_FLAGGED);
    }
    Ok(EXIT_OK)
}

fn parse_design_file(path: &Path) -> Result<SimDesign> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading design {}", path.display()))?;
    let mut kv = BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (k, v) = trimmed
            .split_once('=')
            .ok_or_else(|| anyhow!("design line {}: expected key=value", i + 1))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String> {
        kv.get(k).ok_or_else(|| anyhow!("design is missing `{k}`"))
    };
    let vector = |k: &str| -> Result<Vec<f64>> {
        get(k)?
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| anyhow!("bad number in `{k}`"))
            })
            .collect()
    };
    let number = |k: &str, default: f64| -> Result<f64> {
        match kv.get(k) {
            Some(v) => v.parse().map_err(|_| anyhow!("bad number for `{k}`")),
            None => Ok(default),
        }
    };
    let censoring = match (kv.get("cens_shape"), kv.get("cens_scale")) {
        (Some(shape), Some(scale)) => Some(ctm::simgen::WeibullCensoring {
            shape: shape.parse().map_err(|_| anyhow!("bad cens_shape"))?,
            scale: scale.parse().map_err(|_| anyhow!("bad cens_scale"))?,
        }),
        (None, None) => None,
        _ => bail!("cens_shape and cens_scale must be given together"),
    };
    let degrade = match kv.get("degrade_fraction") {
        Some(fraction) => {
            let scope = match kv.get("degrade_scope").map(String::as_str) {
                Some("disease_only") | None => ctm::simgen::DegradeScopeSpec::DiseaseOnly,
                Some("all_uncensored") => ctm::simgen::DegradeScopeSpec::AllUncensored,
                Some(other) => bail!("unknown degrade_scope `{other}`"),
            };
            Some((
                fraction
                    .parse::<f64>()
                    .map_err(|_| anyhow!("bad degrade_fraction"))?,
                scope,
            ))
        }
        None => None,
    };
    Ok(SimDesign {
        name: kv
            .get("name")
            .cloned()
            .unwrap_or_else(|| "custom".to_string()),
        n: number("n", 500.0)? as usize,
        reps: number("reps", 200.0)? as usize,
        family: resolve_family(kv.get("family").map(String::as_str).unwrap_or("weibull"))?,
        alpha1: vector("alpha1")?,
        alpha2: vector("alpha2")?,
        beta: vector("beta")?,
        censoring,
        cov_offdiag: number("cov_offdiag", 0.5)?,
        mislabel_swap: number("mislabel_swap", 0.0)?,
        degrade,
        age_range: (
            number("age_min", 40.0)? as u32,
            number("age_max", 80.0)? as u32,
        ),
        diag_year: number("diag_year", 2000.0)? as i32,
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8> {
    let mut design = match (&args.preset, &args.design) {
        (Some(name), None) => preset(name)
            .map_err(|_| anyhow!("unknown preset `{name}`; known: {}", PRESET_NAMES.join(", ")))?,
        (None, Some(path)) => parse_design_file(path)?,
        _ => bail!("exactly one of --preset or --design is required"),
    };
    if let Some(reps) = args.reps {
        design.reps = reps;
    }
    if let Some(n) = args.n {
        design.n = n;
    }
    let lt = match &args.lifetable {
        Some(path) => load_lifetable(path, args.lifetable_probabilities)?,
        None => LifeTable::synthetic(),
    };
    std::fs::create_dir_all(&args.out)?;

    let mut optimizer = OptimizerConfig::default();
    if let Some(path) = &args.config {
        apply_config_file(&mut optimizer, path)?;
    }
    let study = StudyConfig {
        fit_family: match &args.fit_family {
            Some(name) => Some(resolve_family(name)?),
            None => None,
        },
        optimizer,
        bootstrap_b: args.bootstrap_b,
        seed: args.seed,
        threads: args.threads,
    };

    let mut inputs: Vec<&Path> = Vec::new();
    if let Some(path) = &args.lifetable {
        inputs.push(path);
    }
    if let Some(path) = &args.design {
        inputs.push(path);
    }
    let mut manifest = start_manifest("simulate", Some(args.seed), &inputs)?;
    manifest.set_config(&design);

    if args.write_datasets {
        let dir = args.out.join("datasets");
        std::fs::create_dir_all(&dir)?;
        for rep in 0..design.reps {
            let (dataset, _) = generate_one(&design, &lt, args.seed, rep as u64);
            save_dataset(&dataset, &dir.join(format!("rep_{rep:04}.csv")))?;
        }
    }

    let summary = run_study(&design, &lt, &study)?;
    std::fs::write(args.out.join("summary.csv"), summary_csv(&summary))?;
    let table = summary_table(&summary);
    std::fs::write(args.out.join("summary.txt"), &table)?;
    print!("{table}");
    if design.reps < 2 {
        eprintln!("warning: SD/SMSE unavailable with a single replicate");
    }
    manifest.write(&args.out.join("manifest.json"))?;
    if summary.failed > 0 {
        eprintln!(
            "warning: {} of {} replicate fits failed and were excluded",
            summary.failed, summary.reps_requested
        );
        return Ok(EXIT_FLAGGED);
    }
    Ok(EXIT_OK)
}

fn cmd_bootstrap(args: BootstrapArgs) -> Result<u8> {
    if args.b < 2 {
        bail!("--b must be at least 2");
    }
    let (d, lt) = load_inputs(&args.io)?;
    let raw = std::fs::read_to_string(&args.fit)
        .with_context(|| format!("reading fit {}", args.fit.display()))?;
    let fit_output: serde_json::Value = serde_json::from_str(&raw)?;
    let fitted: CtmFit = serde_json::from_value(
        fit_output
            .get("fit")
            .cloned()
            .unwrap_or_else(|| fit_output.clone()),
    )
    .context("fit JSON does not contain a model fit")?;
    if !fitted.converged && !args.force {
        bail!("fit is flagged non-converged; pass --force to bootstrap it anyway");
    }
    std::fs::create_dir_all(&args.io.out)?;

    let mut cfg = OptimizerConfig::default();
    if let Some(path) = &args.config {
        apply_config_file(&mut cfg, path)?;
    }
    cfg.kappa = Some(fitted.params.kappa);
    cfg.sigma_n = Some(fitted.params.sigma_n);
    cfg.x1_idx = Some(fitted.params.x1_idx.clone());
    cfg.x2_idx = Some(fitted.params.x2_idx.clone());

    let mut manifest = start_manifest(
        "bootstrap",
        Some(args.seed),
        &[
            args.io.data.as_path(),
            args.io.lifetable.as_path(),
            args.fit.as_path(),
        ],
    )?;
    manifest.set_config(&cfg);

    let result: BootstrapResult =
        bootstrap(&fitted, &d, &lt, args.b, args.seed, &cfg, args.threads)?;
    if args.write_replicates {
        let mut csv = result.param_names.join(",") + "\n";
        for row in &result.replicates {
            csv.push_str(
                &row.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            csv.push('\n');
        }
        std::fs::write(args.io.out.join("replicates.csv"), csv)?;
    }
    write_json(&args.io.out.join("bootstrap.json"), &result)?;
    manifest.write(&args.io.out.join("manifest.json"))?;
    if result.unreliable {
        eprintln!(
            "warning: {} of {} replicates failed to converge; result flagged unreliable",
            result.failed_replicates, result.b_requested
        );
        return Ok(EXIT_FLAGGED);
    }
    Ok(EXIT_OK)
}

/// Split into strata by the distinct values of the given covariate columns.
fn split_strata(d: &Dataset, by: &[String]) -> Result<Vec<(String, Dataset)>> {
    let mut cols = Vec::new();
    for name in by {
        cols.push(
            d.column(name)
                .ok_or_else(|| anyhow!("unknown covariate `{name}`"))?,
        );
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, obs) in d.observations().iter().enumerate() {
        let label = by
            .iter()
            .zip(&cols)
            .map(|(name, &c)| format!("{name}={}", obs.x[c]))
            .collect::<Vec<_>>()
            .join(",");
        if !groups.contains_key(&label) {
            order.push(label.clone());
        }
        groups.entry(label).or_default().push(i);
    }
    order
        .into_iter()
        .map(|label| {
            let rows = &groups[&label];
            let observations = rows.iter().map(|&i| d.observations()[i].clone()).collect();
            Ok((
                label,
                Dataset::new(observations, d.covariate_names().to_vec())?,
            ))
        })
        .collect()
}

fn strata_or_whole(d: &Dataset, by: &Option<Vec<String>>) -> Result<Vec<(String, Dataset)>> {
    match by {
        Some(cols) => split_strata(d, cols),
        None => Ok(vec![("all".to_string(), d.clone())]),
    }
}

#[derive(serde::Serialize)]
struct StratumDiagnosis {
    stratum: String,
    n: usize,
    report: CureCheckReport,
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<u8> {
    let (d, lt) = load_inputs(&args.io)?;
    std::fs::create_dir_all(&args.io.out)?;
    let tau_hat = match &args.fit {
        Some(path) => {
            let raw = std::fs::read_to_string(path)?;
            let value: serde_json::Value = serde_json::from_str(&raw)?;
            let fitted: CtmFit =
                serde_json::from_value(value.get("fit").cloned().unwrap_or(value))?;
            Some(fitted.tau_mean)
        }
        None => None,
    };
    let mut inputs = vec![args.io.data.as_path(), args.io.lifetable.as_path()];
    if let Some(path) = &args.fit {
        inputs.push(path.as_path());
    }
    let manifest = start_manifest("diagnose", None, &inputs)?;

    let mut results = Vec::new();
    for (label, stratum) in strata_or_whole(&d, &args.by)? {
        let grid = diagnostic_grid(&stratum, args.grid_points);
        let report = match cure_check_report(&stratum, &lt, &args.probes, tau_hat, &grid) {
            Ok(r) => r,
            Err(err) => {
                eprintln!("warning: stratum {label} skipped: {err}");
                continue;
            }
        };
        let prefix = if label == "all" {
            String::new()
        } else {
            format!("{}_", label.replace(['=', ','], "_"))
        };
        write_cure_check_outputs(&args.io.out, &prefix, &stratum, &lt, &report, &grid)?;
        if report.no_statistical_cure {
            eprintln!("stratum {label}: no statistical cure at the largest probe");
        }
        results.push(StratumDiagnosis {
            stratum: label,
            n: stratum.len(),
            report,
        });
    }
    write_json(&args.io.out.join("diagnose.json"), &results)?;
    manifest.write(&args.io.out.join("manifest.json"))?;
    Ok(EXIT_OK)
}

#[derive(serde::Serialize)]
struct StratumCrs {
    stratum: String,
    n: usize,
    crs95: Option<f64>,
    crs99: Option<f64>,
    extra_threshold: Option<f64>,
    extra: Option<f64>,
}

fn cmd_crs(args: CrsArgs) -> Result<u8> {
    let (d, lt) = load_inputs(&args.io)?;
    std::fs::create_dir_all(&args.io.out)?;
    let manifest = start_manifest(
        "crs",
        None,
        &[args.io.data.as_path(), args.io.lifetable.as_path()],
    )?;
    let mut rows = Vec::new();
    for (label, stratum) in strata_or_whole(&d, &args.by)? {
        let grid = diagnostic_grid(&stratum, args.grid_points);
        let crs95 = crs_cure_time(&stratum, &lt, 0.95, &grid)?;
        let crs99 = crs_cure_time(&stratum, &lt, 0.99, &grid)?;
        let extra = match args.threshold {
            Some(t) => crs_cure_time(&stratum, &lt, t, &grid)?,
            None => None,
        };
        println!(
            "{label}: CRS95 = {}, CRS99 = {}",
            crs95.map_or("none".into(), |t| format!("{t:.3}")),
            crs99.map_or("none".into(), |t| format!("{t:.3}")),
        );
        rows.push(StratumCrs {
            stratum: label,
            n: stratum.len(),
            crs95,
            crs99,
            extra_threshold: args.threshold,
            extra,
        });
    }
    write_json(&args.io.out.join("crs.json"), &rows)?;
    manifest.write(&args.io.out.join("manifest.json"))?;
    Ok(EXIT_OK)
}

fn cmd_make_lifetable(args: MakeLifetableArgs) -> Result<u8> {
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_lifetable(&LifeTable::synthetic(), &args.out)?;
    println!("wrote synthetic life table to {}", args.out.display());
    Ok(EXIT_OK)
}
