//! Scratch harness for tuning preset censoring scales and checking fit
//! quality against the study targets. Run with --release.

use std::time::Instant;

use ctm::data::status_mix;
use ctm::excess::Family;
use ctm::lifetable::LifeTable;
use ctm::optimizer::{fit, OptimizerConfig};
use ctm::simgen::{generate_one, preset, run_study, StudyConfig};

fn main() {
    let lt = LifeTable::synthetic();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("mix");

    match mode {
        "mix" => {
            for name in ctm::simgen::PRESET_NAMES {
                let design = preset(name).unwrap();
                let mut acc = [0.0f64; 4];
                let reps = 30;
                for r in 0..reps {
                    let (d, _) = generate_one(&design, &lt, 42, r);
                    let m = status_mix(&d).unwrap();
                    acc[0] += m.q_c;
                    acc[1] += m.q_o;
                    acc[2] += m.q_d;
                    acc[3] += m.q_t;
                }
                println!(
                    "{name}: q_C={:.3} q_O={:.3} q_D={:.3} q_T={:.3}",
                    acc[0] / reps as f64,
                    acc[1] / reps as f64,
                    acc[2] / reps as f64,
                    acc[3] / reps as f64
                );
            }
        }
        "fit" => {
            let name = args.get(1).map(String::as_str).unwrap_or("s1-1");
            let design = preset(name).unwrap();
            let (d, _) = generate_one(&design, &lt, 7, 0);
            let t0 = Instant::now();
            let fitted = fit(&d, &lt, design.family, &OptimizerConfig::default(), None).unwrap();
            println!(
                "one fit: {:.2}s, converged={}, iters={}",
                t0.elapsed().as_secs_f64(),
                fitted.converged,
                fitted.iterations
            );
            println!("alpha1 = {:?}", fitted.params.model.alpha1);
            println!("alpha2 = {:?}", fitted.params.model.alpha2);
            println!("beta   = {:?}", fitted.params.beta);
            println!("truth  = {:?}{:?}{:?}", design.alpha1, design.alpha2, design.beta);
        }
        "study" => {
            let name = args.get(1).map(String::as_str).unwrap_or("s1-1");
            let reps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
            let fit_family = args.get(3).and_then(|s| Family::parse(s));
            let mut design = preset(name).unwrap();
            design.reps = reps;
            let mut optimizer = OptimizerConfig::default();
            if let Ok(v) = std::env::var("SIGMA_N") {
                optimizer.sigma_n = Some(v.parse().unwrap());
            }
            if let Ok(v) = std::env::var("KAPPA") {
                optimizer.kappa = Some(v.parse().unwrap());
            }
            if let Ok(v) = std::env::var("TOL_OBJ") {
                optimizer.tol_obj = v.parse().unwrap();
            }
            if let Ok(v) = std::env::var("MAX_INNER") {
                optimizer.max_inner_iters = v.parse().unwrap();
            }
            if let Ok(v) = std::env::var("MAX_OUTER") {
                optimizer.max_outer_iters = v.parse().unwrap();
            }
            let cfg = StudyConfig {
                fit_family,
                optimizer,
                threads: args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1),
                ..StudyConfig::default()
            };
            let t0 = Instant::now();
            let summary = run_study(&design, &lt, &cfg).unwrap();
            println!("{}", ctm::report::summary_table(&summary));
            println!(
                "elapsed {:.1}s for {} reps ({} failed)",
                t0.elapsed().as_secs_f64(),
                reps,
                summary.failed
            );
        }
        "probe" => {
            let name = args.get(1).map(String::as_str).unwrap_or("s1-1");
            let design = preset(name).unwrap();
            let mut optimizer = OptimizerConfig::default();
            if let Ok(v) = std::env::var("SIGMA_N") {
                optimizer.sigma_n = Some(v.parse().unwrap());
            }
            if let Ok(v) = std::env::var("KAPPA") {
                optimizer.kappa = Some(v.parse().unwrap());
            }
            for r in 0..8 {
                let (d, _) = generate_one(&design, &lt, 7, r);
                let fitted = fit(&d, &lt, design.family, &optimizer, None).unwrap();
                let cons = ctm::optimizer::ConstraintSet::from_dataset(
                    &d,
                    &fitted.params.x2_idx,
                );
                println!(
                    "rep {r}: beta = [{:+.4} {:+.4} {:+.4}] active={} slack={:+.2e} outer={} conv={}",
                    fitted.params.beta[0],
                    fitted.params.beta[1],
                    fitted.params.beta[2],
                    fitted.active_constraints,
                    cons.min_slack(&fitted.params.beta),
                    fitted.iterations,
                    fitted.converged,
                );
            }
        }
        "vertex" => {
            let name = args.get(1).map(String::as_str).unwrap_or("s1-1");
            let rep: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
            let design = preset(name).unwrap();
            let (d, _) = generate_one(&design, &lt, 7, rep);
            let cfg = OptimizerConfig::default();
            let cold = fit(&d, &lt, design.family, &cfg, None).unwrap();
            println!(
                "cold : beta = {:?} loglik = {:.6} pen = {:.6}",
                cold.params.beta, cold.loglik, cold.penalized_loglik
            );
            // warm start from the generator truth
            let truth_model = ctm::excess::ExcessModel::new(
                design.family,
                design.alpha1.clone(),
                design.alpha2.clone(),
            );
            let truth_params = ctm::likelihood::CtmParams::new(
                truth_model,
                design.beta.clone(),
                1.0 / d.len() as f64,
                1.0 / (d.len() as f64).sqrt(),
                3,
            );
            let warm = fit(&d, &lt, design.family, &cfg, Some(&truth_params)).unwrap();
            println!(
                "truth: beta = {:?} loglik = {:.6} pen = {:.6}",
                warm.params.beta, warm.loglik, warm.penalized_loglik
            );
        }
        other => eprintln!("unknown mode {other}"),
    }
}
