use std::io::Write;
use std::path::Path;

use pmqkd_core::concentration::EpsilonBudget;
use pmqkd_core::pmqkd::{
    certify, finite_rate, monte_carlo_validate, optimize_parameters, ChannelModel, Counts, McConfig, PmQkdError,
    PmQkdModel, PmQkdParams, RateReport, SearchSpec, MIN_TRIALS,
};
use pmqkd_core::sdp::{default_margin, solve_dual_with_margin, CertificateFile, DualCertificate};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CustomInstance, ProtocolChoice, RunConfig};
use crate::{Cli, CliError, Command};

fn compute(e: impl std::fmt::Display) -> CliError {
    CliError::Compute(e.to_string())
}

/// Config problems found while computing (bad parameters, stale certificates) keep exit code 2.
fn classify(e: PmQkdError) -> CliError {
    match e {
        PmQkdError::Invalid(m) => CliError::Config(m),
        other => compute(other),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| compute(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(compute)
        }
    }
}

fn to_json<S: Serialize>(v: &S) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn run(cli: &Cli) -> Result<u8, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
    }
    match cli.command {
        Command::Certify => cmd_certify(cli, &cfg),
        Command::FiniteRate => cmd_finite_rate(cli, &cfg),
        Command::Sweep => cmd_sweep(cli, &cfg),
        Command::Optimize => cmd_optimize(cli, &cfg),
        Command::Validate => cmd_validate(cli, &cfg),
    }
}

fn certificate_file(cfg: &RunConfig) -> Result<CertificateFile<f64>, CliError> {
    match cfg.protocol {
        ProtocolChoice::Pmqkd => {
            let model = PmQkdModel::new(&cfg.params()?, &cfg.channel).map_err(classify)?;
            let cert = certify(&model).map_err(classify)?;
            Ok(CertificateFile::new(&model.problem, &cert))
        }
        ProtocolChoice::CustomInstanceFile => {
            let problem = CustomInstance::load(&cfg.instance_path()?)?.problem()?;
            let margin = default_margin(&problem).map_err(compute)?;
            let cert = solve_dual_with_margin(&problem, margin).map_err(compute)?;
            if !cert.verification.accepted {
                return Err(compute(format!(
                    "verification rejected the certificate: λ_max = {:e}, radius = {:e}",
                    cert.verification.max_eig, cert.verification.radius
                )));
            }
            Ok(CertificateFile::new(&problem, &cert))
        }
    }
}

fn cmd_certify(cli: &Cli, cfg: &RunConfig) -> Result<u8, CliError> {
    let file = certificate_file(cfg)?;
    let text = file.to_json().map_err(compute)? + "\n";
    write_output(cli.certificate.as_deref().or(cli.out.as_deref()), &text)?;
    Ok(0)
}

fn load_certificate(path: &Path) -> Result<CertificateFile<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    CertificateFile::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Certificate for `model`: the stored one when its operator hash matches, otherwise a fresh
/// solve if auto-certification is enabled.
fn certificate_for(
    model: &PmQkdModel<f64>,
    stored: Option<&CertificateFile<f64>>,
    auto: bool,
) -> Result<DualCertificate<f64>, CliError> {
    match stored {
        Some(f) if f.matches(&model.problem) => Ok(f.certificate()),
        Some(_) => Err(CliError::Config(
            "certificate is stale: its operator hash does not match the operators rebuilt from the config".into(),
        )),
        None if auto => certify(model).map_err(classify),
        None => Err(CliError::Config("no --certificate given and auto_certify is disabled".into())),
    }
}

fn cmd_finite_rate(cli: &Cli, cfg: &RunConfig) -> Result<u8, CliError> {
    cfg.require_pmqkd("finite-rate")?;
    let stored = cli.certificate.as_deref().map(load_certificate).transpose()?;
    let model = PmQkdModel::new(&cfg.params()?, &cfg.channel).map_err(classify)?;
    let cert = certificate_for(&model, stored.as_ref(), cfg.auto_certify)?;
    let counts = cfg.observed.clone().map_or(Counts::Nominal, Counts::Observed);
    let report = finite_rate(&model, &cfg.channel, &cert, &counts).map_err(classify)?;
    write_output(cli.out.as_deref(), &to_json(&report))?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    distance_km: f64,
    eta_tot: f64,
    rate_finite: f64,
    rate_asymptotic: f64,
    rate_plob: f64,
    mu_x: f64,
    mu_y: f64,
    n_sig_nom: f64,
}

fn row_from(d: f64, channel: &ChannelModel<f64>, params: &PmQkdParams<f64>, r: &RateReport<f64>) -> SweepRow {
    SweepRow {
        distance_km: d,
        eta_tot: channel.eta_tot(),
        rate_finite: r.finite.rate_per_pulse.max(0.0),
        rate_asymptotic: r.asymptotic_rate.max(0.0),
        rate_plob: r.plob,
        mu_x: params.mu_x,
        mu_y: params.mu_y,
        n_sig_nom: r.nominal.n_sig_nom,
    }
}

fn sweep_row(
    d: f64,
    cfg: &RunConfig,
    params: &PmQkdParams<f64>,
    search: &SearchSpec<f64>,
    optimize: bool,
    stored: Option<&CertificateFile<f64>>,
) -> Result<SweepRow, CliError> {
    let channel = ChannelModel { distance_km: d, ..cfg.channel.clone() };
    channel.validate().map_err(classify)?;
    let result = if optimize {
        optimize_parameters(params, &channel, search).map(|o| row_from(d, &channel, &o.params, &o.report))
    } else {
        let model = PmQkdModel::new(params, &channel).map_err(classify)?;
        let cert = certificate_for(&model, stored, cfg.auto_certify)?;
        finite_rate(&model, &channel, &cert, &Counts::Nominal).map(|r| row_from(d, &channel, params, &r))
    };
    match result {
        Ok(row) => Ok(row),
        Err(PmQkdError::Invalid(m)) => Err(CliError::Config(m)),
        Err(e) => {
            // no certifiable key at this distance
            eprintln!("warning: {d} km: {e}; reporting zero rate");
            Ok(SweepRow {
                distance_km: d,
                eta_tot: channel.eta_tot(),
                rate_finite: 0.0,
                rate_asymptotic: 0.0,
                rate_plob: pmqkd_core::pmqkd::plob_bound(&channel),
                mu_x: params.mu_x,
                mu_y: params.mu_y,
                n_sig_nom: pmqkd_core::pmqkd::simulate_channel_nominal(params, &channel).n_sig_nom,
            })
        }
    }
}

fn cmd_sweep(cli: &Cli, cfg: &RunConfig) -> Result<u8, CliError> {
    cfg.require_pmqkd("sweep")?;
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("sweep section missing".into()))?;
    let params = cfg.params()?;
    let search = cfg.search.clone().unwrap_or_default();
    let stored = cli.certificate.as_deref().map(load_certificate).transpose()?;
    let optimize = sweep.optimize && stored.is_none();
    let distances = sweep.distances();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(compute)?;
    let rows: Vec<Result<SweepRow, CliError>> = pool.install(|| {
        distances.par_iter().map(|&d| sweep_row(d, cfg, &params, &search, optimize, stored.as_ref())).collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(compute)?;
    }
    let bytes = w.into_inner().map_err(compute)?;
    write_output(cli.out.as_deref(), &String::from_utf8(bytes).expect("csv output is utf-8"))?;
    Ok(0)
}

fn cmd_optimize(cli: &Cli, cfg: &RunConfig) -> Result<u8, CliError> {
    cfg.require_pmqkd("optimize")?;
    let search = cfg.search.clone().unwrap_or_default();
    let best = optimize_parameters(&cfg.params()?, &cfg.channel, &search).map_err(classify)?;
    write_output(cli.out.as_deref(), &to_json(&best))?;
    Ok(0)
}

fn cmd_validate(cli: &Cli, cfg: &RunConfig) -> Result<u8, CliError> {
    cfg.require_pmqkd("validate")?;
    let v = cfg.validation.as_ref().ok_or_else(|| CliError::Config("validation section missing".into()))?;
    if v.trials < MIN_TRIALS {
        return Err(CliError::Config(format!(
            "refused: {} trials is statistically meaningless (need at least {MIN_TRIALS})",
            v.trials
        )));
    }
    let params = PmQkdParams {
        budget: EpsilonBudget::uniform(v.epsilon, cfg.budget.s_pa, cfg.budget.s_prime),
        ..cfg.params()?
    };
    let mc = McConfig { trials: v.trials, seed: cli.seed.unwrap_or(cfg.seed), source: v.source };
    let report = monte_carlo_validate(&params, &cfg.channel, &mc).map_err(classify)?;
    write_output(cli.out.as_deref(), &to_json(&report))?;
    Ok(if report.pass { 0 } else { 1 })
}
