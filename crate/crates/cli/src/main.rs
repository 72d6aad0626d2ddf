//! `illdeath`: simulate, fit, AUC curves, scenario studies and diagnostics
//! for the illness-death model with interval-censored onset.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or fit error.

mod parse;

use parse::{Grid, Scenarios};

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use illdeath::auc::auc_riskset_curve;
use illdeath::fit::{
    fit_cox_td, fit_pwc_ic, fit_weibull_ic, nelson_aalen_transitions, FitOptions, PwcSpec, STUDY_CUTPOINTS,
};
use illdeath::io::{self as fio, FittedModel, VisitScheme};
use illdeath::simulate::scenario;
use illdeath::{
    auc_model_based, generate_dataset, run_scenario, scenario_table, study_report, AucDefinition, Estimator,
    ObservedRecord, StudyOptions, Target, WeibullParams,
};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "illdeath", version, about = "Illness-death models with interval-censored disease onset")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario data set (long-format records plus true paths).
    Simulate(SimulateArgs),
    /// Fit a Cox, piecewise-constant or Weibull model to a record file.
    Fit(FitArgs),
    /// Evaluate an AUC curve from a fit file or the true model.
    Auc(AucArgs),
    /// Run replicated scenario studies and write the performance report.
    Study(StudyArgs),
    /// Log-log Nelson-Aalen table per transition for judging Weibull fit.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario name, A to R.
    #[arg(long)]
    scenario: String,
    /// Random seed (required).
    #[arg(long)]
    seed: u64,
    /// Override the number of subjects.
    #[arg(long)]
    subjects: Option<usize>,
    /// Override the visit interval in months.
    #[arg(long)]
    visit_interval: Option<f64>,
    /// Record file; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// True-path file; defaults to `<output stem>.paths.csv` next to the output.
    #[arg(long)]
    paths: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Cox,
    Pwc,
    Weibull,
}

#[derive(Args)]
struct InputArgs {
    /// Long-format record file (`-` for standard input).
    input: PathBuf,
    /// Input holds one row per subject with diagnosis_time, survival_time and
    /// death_indicator; visits are synthesised from the 3/6/12-month scheme.
    #[arg(long)]
    diagnosis_only: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Piecewise-constant cutpoints in months, shared by all transitions.
    #[arg(long)]
    cutpoints: Option<Grid>,
    /// Piecewise-constant: 1->2 hazard proportional to 0->2, with the
    /// disease effect starting at the first positive visit.
    #[arg(long)]
    proportional: bool,
    /// Skip standard errors.
    #[arg(long)]
    no_se: bool,
    /// Fit file; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AucArgs {
    /// Fit file written by `fit`.
    #[arg(long, conflicts_with = "truth", required_unless_present = "truth")]
    fit: Option<PathBuf>,
    /// Use the true Weibull model (parameters below).
    #[arg(long)]
    truth: bool,
    #[arg(long, default_value_t = WeibullParams::STUDY.k)]
    k: f64,
    #[arg(long, default_value_t = WeibullParams::STUDY.alpha01)]
    alpha01: f64,
    #[arg(long, default_value_t = WeibullParams::STUDY.alpha02)]
    alpha02: f64,
    #[arg(long, default_value_t = WeibullParams::STUDY.alpha12)]
    alpha12: f64,
    /// `id` (incident/dynamic) or `cd` (cumulative/dynamic).
    #[arg(long, value_parser = |s: &str| s.parse::<AucDefinition>().map_err(|e| e.to_string()))]
    definition: AucDefinition,
    /// Times in months: `12,36,60` or `12..60:12`.
    #[arg(long)]
    grid: Grid,
    /// C/D prediction window in months.
    #[arg(long)]
    window: Option<f64>,
    /// For Cox fits: risk-set I/D estimator instead of transition probabilities.
    #[arg(long)]
    riskset: bool,
    /// Curve file; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// Scenarios: `A`, `A,C` or `A..F`.
    #[arg(long)]
    scenarios: Scenarios,
    /// Comma-separated estimators.
    #[arg(long, value_delimiter = ',', default_value = "cox-prob,cox-riskset,pwc,weibull",
          value_parser = |s: &str| s.parse::<Estimator>().map_err(|e| e.to_string()))]
    estimators: Vec<Estimator>,
    /// Target kinds: any of id, cd, hr.
    #[arg(long, value_delimiter = ',', default_value = "id,cd,hr")]
    targets: Vec<TargetKind>,
    #[arg(long, default_value = "12,36,60")]
    id_grid: Grid,
    #[arg(long, default_value = "12,36,60")]
    cd_grid: Grid,
    /// C/D window in months.
    #[arg(long, default_value_t = 60.0)]
    window: f64,
    #[arg(long, default_value_t = illdeath::study::DEFAULT_REPLICATIONS)]
    reps: usize,
    /// Base seed (required); replication r uses seed + r.
    #[arg(long)]
    seed: u64,
    /// Override the number of subjects per data set.
    #[arg(long)]
    subjects: Option<usize>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
    /// Report file; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum TargetKind {
    Id,
    Cd,
    Hr,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Diagnostic table file; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(illdeath::Error),
}

impl From<illdeath::Error> for Failure {
    fn from(e: illdeath::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fio::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn input(path: &Path) -> CliResult<Box<dyn Read>> {
    Ok(if path == Path::new("-") { Box::new(io::stdin().lock()) } else { Box::new(BufReader::new(fio::open(path)?)) })
}

fn read_input(args: &InputArgs) -> CliResult<Vec<ObservedRecord>> {
    let reader = input(&args.input)?;
    if !args.diagnosis_only {
        return Ok(fio::read_records(reader)?);
    }
    let rows = fio::read_diagnosis_data(reader)?;
    let (records, flagged) = fio::records_from_diagnoses(&rows, &VisitScheme::three_six_twelve())?;
    if !flagged.is_empty() {
        warn!("{} subjects: reconstructed last negative screen replaced by a later scheduled visit", flagged.len());
    }
    Ok(records)
}

fn simulate(a: SimulateArgs) -> CliResult {
    let Some(mut cfg) = scenario(&a.scenario) else {
        let names: Vec<String> = scenario_table().into_iter().map(|s| s.name).collect();
        return usage(format!("unknown scenario '{}'; valid names: {}", a.scenario, names.join(", ")));
    };
    cfg.seed = a.seed;
    if let Some(n) = a.subjects {
        cfg.n_subjects = n;
    }
    if let Some(tau) = a.visit_interval {
        cfg.visit_interval = tau;
    }
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    let data = generate_dataset(&cfg)?;
    let mut out = output(a.output.as_deref())?;
    fio::write_records(&data.records, &mut out)?;
    out.flush()?;
    let paths = a.paths.or_else(|| a.output.as_deref().map(fio::paths_sibling));
    if let Some(p) = paths {
        let ids: Vec<String> = data.records.iter().map(|r| r.id.clone()).collect();
        fio::write_paths(&ids, &data.paths, BufWriter::new(fio::create(&p)?))?;
        info!("true paths written to {}", p.display());
    }
    info!("scenario {}: {} subjects, seed {}", cfg.name, data.len(), cfg.seed);
    Ok(())
}

fn fit(a: FitArgs) -> CliResult {
    if a.cutpoints.is_some() && !matches!(a.model, ModelKind::Pwc) {
        return usage("--cutpoints applies to --model pwc only");
    }
    if a.proportional && !matches!(a.model, ModelKind::Pwc) {
        return usage("--proportional applies to --model pwc only");
    }
    let records = read_input(&a.input)?;
    let opts = FitOptions { standard_errors: !a.no_se, ..FitOptions::default() };
    let fitted = match a.model {
        ModelKind::Cox => {
            let f = fit_cox_td(&records)?;
            info!("cox: beta {} (se {}), hazard ratio {}", f.beta, f.se_beta, f.hazard_ratio());
            FittedModel::Cox(f)
        }
        ModelKind::Pwc => {
            let cuts = a.cutpoints.map_or_else(|| STUDY_CUTPOINTS.to_vec(), |g| g.0);
            let spec = PwcSpec { diagnosis_lag: a.proportional, ..PwcSpec::common(&cuts, a.proportional) };
            FittedModel::Mle(fit_pwc_ic(&records, &spec, &opts)?)
        }
        ModelKind::Weibull => FittedModel::Mle(fit_weibull_ic(&records, None, &opts)?),
    };
    if let FittedModel::Mle(f) = &fitted {
        info!("loglik {} after {} iterations, converged: {}", f.loglik, f.iterations, f.converged);
        for w in &f.warnings {
            warn!("{w}");
        }
    }
    let mut out = output(a.output.as_deref())?;
    fio::write_fit(&fitted, &mut out)?;
    out.flush()?;
    Ok(())
}

fn auc(a: AucArgs) -> CliResult {
    match (a.definition, a.window) {
        (AucDefinition::CumulativeDynamic, None) => return usage("--definition cd needs --window"),
        (AucDefinition::IncidentDynamic, Some(_)) => return usage("--window applies to --definition cd only"),
        _ => {}
    }
    if a.grid.0.is_empty() {
        return usage("--grid is empty");
    }
    let curve = if a.truth {
        if a.riskset {
            return usage("--riskset needs a Cox fit file");
        }
        let params = WeibullParams { k: a.k, alpha01: a.alpha01, alpha02: a.alpha02, alpha12: a.alpha12 };
        let model = match params.model() {
            Ok(m) => m,
            Err(e) => return usage(e.to_string()),
        };
        auc_model_based(&model, a.definition, &a.grid.0, a.window, Estimator::Truth)?
    } else {
        let path = a.fit.as_deref().expect("clap requires --fit without --truth");
        let fitted = fio::read_fit(input(path)?)?;
        match (&fitted, a.riskset) {
            (FittedModel::Cox(f), true) => {
                if a.definition != AucDefinition::IncidentDynamic {
                    return usage("--riskset supports --definition id only");
                }
                auc_riskset_curve(f, &a.grid.0)?
            }
            (_, true) => return usage("--riskset needs a Cox fit file"),
            (_, false) => auc_model_based(&fitted, a.definition, &a.grid.0, a.window, fitted.estimator())?,
        }
    };
    for (t, why) in &curve.skipped {
        warn!("t={t} skipped: {why}");
    }
    let mut out = output(a.output.as_deref())?;
    fio::write_curve(&curve, &mut out)?;
    out.flush()?;
    Ok(())
}

fn study(a: StudyArgs) -> CliResult {
    if a.scenarios.0.is_empty() {
        return usage("--scenarios is required");
    }
    if a.estimators.contains(&Estimator::Truth) {
        return usage("'truth' is not an estimator");
    }
    let mut configs = Vec::new();
    for name in &a.scenarios.0 {
        let Some(mut cfg) = scenario(name) else {
            return usage(format!("unknown scenario '{name}'; valid names: A to R"));
        };
        if let Some(n) = a.subjects {
            cfg.n_subjects = n;
        }
        configs.push(cfg);
    }
    let mut targets = Vec::new();
    if a.targets.contains(&TargetKind::Id) {
        targets.extend(Target::id_grid(&a.id_grid.0));
    }
    if a.targets.contains(&TargetKind::Cd) {
        targets.extend(Target::cd_grid(&a.cd_grid.0, a.window));
    }
    if a.targets.contains(&TargetKind::Hr) {
        targets.push(Target::HazardRatio);
    }
    if let Some(n) = a.threads {
        if n == 0 {
            return usage("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let opts = StudyOptions::new(&a.estimators, &targets, a.reps, a.seed);
    let mut results = Vec::new();
    for cfg in &configs {
        let start = Instant::now();
        info!("scenario {}: {} replications of {} subjects", cfg.name, a.reps, cfg.n_subjects);
        let r = run_scenario(cfg, &opts).map_err(|e| match e {
            illdeath::Error::Argument(m) => Failure::Usage(m),
            other => Failure::Data(other),
        })?;
        eprintln!("scenario {}: {:.1} s", cfg.name, start.elapsed().as_secs_f64());
        results.extend(r);
    }
    let mut out = output(a.output.as_deref())?;
    fio::write_report(&study_report(&results), &mut out)?;
    out.flush()?;
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> CliResult {
    let records = read_input(&a.input)?;
    let [h01, h02, h12] = nelson_aalen_transitions(&records)?;
    let panels = fio::weibull_diagnostic(&[("0->1", &h01), ("0->2", &h02), ("1->2", &h12)]);
    for p in &panels {
        match (&p.line, &p.note) {
            (Some(l), _) => {
                info!("{}: slope {:.4}, intercept {:.4}, R^2 {:.4}", p.transition, l.slope, l.intercept, l.r_squared)
            }
            (None, Some(note)) => warn!("{}: {note}", p.transition),
            (None, None) => {}
        }
    }
    let mut out = output(a.output.as_deref())?;
    fio::write_diagnostic(&panels, &mut out)?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Auc(a) => auc(a),
        Command::Study(a) => study(a),
        Command::Diagnose(a) => diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
