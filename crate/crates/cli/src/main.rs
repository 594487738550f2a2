mod config;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::Serialize;

use rscmjp::diagnostics::{build_report, ks_normality, property_checks, PropertyCheck, ReportKind};
use rscmjp::estimators::{fit, fit_from_data, m_estimator_study};
use rscmjp::information::{contraction_rate, psi_recursion_partial, InfoMatrices, PsiTrace, PSI_TOL};
use rscmjp::io;
use rscmjp::model::reference_model;
use rscmjp::simulator::{path_stats, simulate_sample};
use rscmjp::{FitConfig, Method, ModelParams, ParamLayout, PathStats, RawParams, SimConfig};

use config::{Cli, Command, RunConfig};

const DEFAULT_SEED: u64 = 1;
const DEFAULT_N_PATHS: usize = 1000;
const DEFAULT_HORIZON: f64 = 10.0;
const DEFAULT_REPLICATES: usize = 50;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::from(2)
        }
    }
}

fn error_chain(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = RunConfig::from_cli(cli)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let Some(command) = cfg.command else {
        bail!("no command given (pass one or set `command` in --config)");
    };
    match command {
        Command::Simulate => simulate(&cfg),
        Command::Estimate => estimate(&cfg),
        Command::InvertInfo => invert_info(&cfg),
        Command::Reproduce => reproduce(&cfg),
        Command::Kstest => kstest(&cfg),
    }
}

fn sim_config(cfg: &RunConfig) -> Result<SimConfig> {
    Ok(SimConfig::new(
        cfg.n_paths.unwrap_or(DEFAULT_N_PATHS),
        cfg.horizon.unwrap_or(DEFAULT_HORIZON),
        cfg.seed.unwrap_or(DEFAULT_SEED),
    )?)
}

fn fit_config(cfg: &RunConfig) -> Result<FitConfig> {
    let method: Method = match &cfg.method {
        Some(s) => s.parse()?,
        None => Method::Em,
    };
    let mut fc = FitConfig::new(method);
    if let Some(t) = cfg.tol {
        fc = fc.with_tol(t);
    }
    if let Some(m) = cfg.max_iter {
        fc = fc.with_max_iter(m);
    }
    Ok(fc)
}

fn read_model(path: &Path) -> Result<ModelParams> {
    io::read_params(path).with_context(|| format!("reading model {}", path.display()))
}

fn read_stats(path: &Path) -> Result<Vec<PathStats>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    io::read_stats_csv(file).with_context(|| format!("reading statistics {}", path.display()))
}

fn simulate(cfg: &RunConfig) -> Result<ExitCode> {
    let theta = read_model(cfg.require(&cfg.model, "--model")?)?;
    let sim = sim_config(cfg)?;
    let paths = simulate_sample(&theta, &sim)?;
    let stats: Vec<PathStats> = paths
        .iter()
        .map(|p| path_stats(p, theta.n_states()))
        .collect::<rscmjp::Result<_>>()?;
    let out = cfg.out_dir()?;
    io::write_paths_jsonl(&paths, io::create(out.join("paths.jsonl"))?)?;
    io::write_stats_csv(&stats, io::create(out.join("stats.csv"))?)?;
    println!("simulated {} paths (horizon {}, seed {})", paths.len(), sim.horizon, sim.seed);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FitSummary {
    method: Method,
    converged: bool,
    iterations: usize,
    loglik: f64,
    n_paths: usize,
    params: RawParams,
}

fn estimate(cfg: &RunConfig) -> Result<ExitCode> {
    let sample = read_stats(cfg.require(&cfg.stats, "--stats")?)?;
    let fc = fit_config(cfg)?;
    let result = match (&cfg.model, cfg.regimes) {
        (Some(m), _) => fit(&sample, &read_model(m)?, &fc)?,
        (None, Some(nm)) => fit_from_data(&sample, nm, &fc)?,
        (None, None) => bail!("estimate needs --model (start point) or --regimes"),
    };
    let out = cfg.out_dir()?;
    let summary = FitSummary {
        method: result.method,
        converged: result.converged,
        iterations: result.iterations,
        loglik: *result.loglik_trace.last().expect("trace has a starting point"),
        n_paths: sample.len(),
        params: result.theta_hat.to_raw(),
    };
    let mut w = io::create(out.join("fit.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    io::write_params(&result.theta_hat, io::create(out.join("theta_hat.json"))?)?;
    io::write_trace_csv(&result, io::create(out.join("trace.csv"))?)?;
    println!(
        "{}: {} after {} iterations, log-likelihood {:.10}",
        result.method,
        if result.converged { "converged" } else { "not converged" },
        result.iterations,
        summary.loglik
    );
    Ok(ExitCode::SUCCESS)
}

fn write_psi_trace(trace: &PsiTrace, path: &Path) -> Result<()> {
    let mut w = io::create(path)?;
    writeln!(w, "iter,max_increment,min_increment_eigenvalue")?;
    for (i, (inc, ev)) in trace.increments.iter().zip(&trace.increment_min_eigenvalues).enumerate() {
        writeln!(w, "{},{},{}", i + 1, io::fmt_f64(*inc), io::fmt_f64(*ev))?;
    }
    w.flush()?;
    Ok(())
}

fn invert_info(cfg: &RunConfig) -> Result<ExitCode> {
    let sample = read_stats(cfg.require(&cfg.stats, "--stats")?)?;
    let theta = read_model(cfg.require(&cfg.model, "--model")?)?;
    let info = InfoMatrices::compute(&sample, &theta)?;
    let jx_inv = info.jx_inverse()?;
    let rate = contraction_rate(&jx_inv, &info.jy)?;
    let iters = cfg.psi_iters.unwrap_or(rscmjp::information::PSI_MAX_ITER);
    let trace = psi_recursion_partial(&jx_inv, &info.jy, PSI_TOL, iters)?;
    let labels = ParamLayout::for_model(&theta).labels();
    let out = cfg.out_dir()?;
    for (name, m) in [
        ("jx.csv", &info.jx),
        ("jy.csv", &info.jy),
        ("jx_inverse.csv", &jx_inv),
        ("psi.csv", trace.limit()),
        ("sandwich.csv", &info.sandwich()?),
    ] {
        io::write_matrix_csv(&labels, m, io::create(out.join(name))?)?;
    }
    write_psi_trace(&trace, &out.join("psi_trace.csv"))?;
    println!(
        "Psi recursion: {} iterations, {}, contraction rate {rate:.6}, spectral radius estimate {:.6}",
        trace.iterations(),
        if trace.converged { "converged" } else { "not converged" },
        trace.spectral_radius_estimate
    );
    Ok(if trace.converged { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Serialize)]
struct PropertiesFile<'a> {
    all_required_passed: bool,
    replicates: usize,
    n_paths: usize,
    horizon: f64,
    seed: u64,
    method: Method,
    checks: &'a [PropertyCheck],
}

fn reproduce(cfg: &RunConfig) -> Result<ExitCode> {
    let truth = match &cfg.model {
        Some(m) => read_model(m)?,
        None => reference_model(),
    };
    let sim = sim_config(cfg)?;
    let fc = fit_config(cfg)?;
    let k = cfg.replicates.unwrap_or(DEFAULT_REPLICATES);
    let iters = cfg.psi_iters.unwrap_or(rscmjp::information::PSI_MAX_ITER);
    let (samples, result) = m_estimator_study(&truth, k, &sim, &fc)?;
    let psi_mle = psi_recursion_partial(&result.mle_jx_bar_inverse, &result.mle_jy_bar, PSI_TOL, iters)?;
    let psi_me = psi_recursion_partial(&result.jx_bar_inverse, &result.jy_bar, PSI_TOL, iters)?;
    let mle = build_report(&truth, &result, &psi_mle, ReportKind::Mle)?;
    let me = build_report(&truth, &result, &psi_me, ReportKind::MEstimator)?;
    let checks = property_checks(&samples, &result, [&psi_mle, &psi_me], [&mle, &me])?;

    let out = cfg.out_dir()?;
    mle.write_csv(io::create(out.join("mle_report.csv"))?)?;
    me.write_csv(io::create(out.join("m_estimator_report.csv"))?)?;
    std::fs::write(out.join("mle_report.txt"), mle.to_text())?;
    std::fs::write(out.join("m_estimator_report.txt"), me.to_text())?;
    let ok = checks.iter().filter(|c| c.required).all(|c| c.passed);
    let props = PropertiesFile {
        all_required_passed: ok,
        replicates: k,
        n_paths: sim.n_paths,
        horizon: sim.horizon,
        seed: sim.seed,
        method: fc.method,
        checks: &checks,
    };
    let mut w = io::create(out.join("properties.json"))?;
    serde_json::to_writer_pretty(&mut w, &props)?;
    writeln!(w)?;
    w.flush()?;

    print!("{}\n{}", mle.to_text(), me.to_text());
    for c in &checks {
        let status = match (c.passed, c.required) {
            (true, _) => "ok",
            (false, true) => "FAILED",
            (false, false) => "no (recorded)",
        };
        println!("[{status}] {}: {}", c.name, c.detail);
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("not a number: '{s}'")))
        .collect()
}

fn kstest(cfg: &RunConfig) -> Result<ExitCode> {
    let path = cfg.require(&cfg.input, "--input")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let values = parse_values(&text)?;
    let (d, p) = ks_normality(&values)?;
    println!("n = {}, D = {d:.6}, p = {p:.6}", values.len());
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_split_on_commas_and_whitespace() {
        assert_eq!(parse_values("1, 2\n3\t-4.5\n").unwrap(), vec![1.0, 2.0, 3.0, -4.5]);
        assert!(parse_values("1 x").is_err());
    }
}
