//! Monte-Carlo simulation study: replicate, fit, evaluate AUC targets and
//! summarise bias, empirical SE and RMSE against the true model.

use std::fmt;

use rayon::prelude::*;

use crate::auc::{auc_cd, auc_id, auc_id_riskset, Estimator};
use crate::error::{Error, Result};
use crate::fit::{fit_cox_td, fit_pwc_ic, fit_weibull_ic, CoxTdFit, FitOptions, MleFit, PwcSpec};
use crate::simulate::{generate_dataset, ScenarioConfig};
use crate::transprob::TransitionModel;

/// Default number of replications.
pub const DEFAULT_REPLICATIONS: usize = 200;

/// A quantity estimated in each replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Incident/dynamic AUC at `t`.
    IncidentDynamic { t: f64 },
    /// Cumulative/dynamic AUC with marker at `s` and horizon `s + window`.
    CumulativeDynamic { s: f64, window: f64 },
    /// exp(beta), the death hazard ratio with versus without disease.
    HazardRatio,
}

impl Target {
    pub fn id_grid(times: &[f64]) -> Vec<Target> {
        times.iter().map(|&t| Target::IncidentDynamic { t }).collect()
    }

    pub fn cd_grid(times: &[f64], window: f64) -> Vec<Target> {
        times.iter().map(|&s| Target::CumulativeDynamic { s, window }).collect()
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Target::IncidentDynamic { .. } => "ID",
            Target::CumulativeDynamic { .. } => "CD",
            Target::HazardRatio => "HR",
        }
    }

    /// Evaluation time (marker time for C/D); none for the hazard ratio.
    pub fn time(&self) -> Option<f64> {
        match *self {
            Target::IncidentDynamic { t } => Some(t),
            Target::CumulativeDynamic { s, .. } => Some(s),
            Target::HazardRatio => None,
        }
    }

    pub fn window(&self) -> Option<f64> {
        match *self {
            Target::CumulativeDynamic { window, .. } => Some(window),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Target::IncidentDynamic { .. } => 0,
            Target::CumulativeDynamic { .. } => 1,
            Target::HazardRatio => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Target::IncidentDynamic { t } => t.is_finite() && t > 0.0,
            Target::CumulativeDynamic { s, window } => s.is_finite() && s > 0.0 && window.is_finite() && window > 0.0,
            Target::HazardRatio => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid target {self}")))
        }
    }

    /// Whether `estimator` produces this target. The riskset estimator is
    /// incident/dynamic only; a Weibull fit with free shapes has no single
    /// hazard ratio.
    pub fn applies_to(&self, estimator: Estimator) -> bool {
        match (self, estimator) {
            (_, Estimator::Truth) => false,
            (Target::CumulativeDynamic { .. }, Estimator::CoxRiskset) => false,
            (Target::HazardRatio, Estimator::Weibull) => false,
            _ => true,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Target::IncidentDynamic { t } => write!(f, "I/D at t={t}"),
            Target::CumulativeDynamic { s, window } => write!(f, "C/D at ({s},{})", s + window),
            Target::HazardRatio => f.write_str("hazard ratio"),
        }
    }
}

/// Bias, empirical SE (n-1 denominator) and RMSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Performance {
    pub bias: f64,
    pub emp_se: f64,
    pub rmse: f64,
}

pub fn performance(estimates: &[f64], truth: f64) -> Result<Performance> {
    let n = estimates.len();
    if n < 2 {
        return Err(Error::Argument(format!("insufficient replications ({n}, need at least 2)")));
    }
    let nf = n as f64;
    let mean = estimates.iter().sum::<f64>() / nf;
    let var = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let mse = estimates.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / nf;
    Ok(Performance { bias: mean - truth, emp_se: var.sqrt(), rmse: mse.sqrt() })
}

/// Summary for one (scenario, estimator, target).
#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub scenario: String,
    pub estimator: Estimator,
    pub target: Target,
    /// Values from valid replications, in replication order.
    pub estimates: Vec<f64>,
    pub truth: f64,
    /// Absent when fewer than two replications were valid.
    pub performance: Option<Performance>,
    pub n_valid: usize,
    pub n_replications: usize,
}

impl StudyResult {
    pub fn mean(&self) -> Option<f64> {
        (!self.estimates.is_empty()).then(|| self.estimates.iter().sum::<f64>() / self.estimates.len() as f64)
    }

    /// Monte-Carlo standard error of the bias.
    pub fn bias_mcse(&self) -> Option<f64> {
        self.performance.map(|p| p.emp_se / (self.n_valid as f64).sqrt())
    }
}

/// True value of a target under the generating model.
pub fn target_truth(config: &ScenarioConfig, target: &Target) -> Result<f64> {
    let model = config.weibull.model()?;
    match *target {
        Target::IncidentDynamic { t } => auc_id(&model, t),
        Target::CumulativeDynamic { s, window } => auc_cd(&model, s, s + window),
        Target::HazardRatio => Ok(config.weibull.hazard_ratio()),
    }
}

struct Fits {
    cox: Option<Result<CoxTdFit>>,
    pwc: Option<Result<MleFit>>,
    weibull: Option<Result<MleFit>>,
}

fn model_target(model: &dyn TransitionModel, hr: Option<f64>, target: &Target) -> Option<f64> {
    let v = match *target {
        Target::IncidentDynamic { t } => auc_id(model, t).ok(),
        Target::CumulativeDynamic { s, window } => match model.support_end() {
            Some(end) if s + window > end => None,
            _ => auc_cd(model, s, s + window).ok(),
        },
        Target::HazardRatio => hr,
    };
    v.filter(|x| x.is_finite())
}

fn estimate(fits: &Fits, estimator: Estimator, target: &Target) -> Option<f64> {
    match estimator {
        Estimator::CoxProb => {
            let fit = fits.cox.as_ref()?.as_ref().ok()?;
            model_target(fit, Some(fit.hazard_ratio()), target)
        }
        Estimator::CoxRiskset => {
            let fit = fits.cox.as_ref()?.as_ref().ok()?;
            match *target {
                Target::IncidentDynamic { t } => auc_id_riskset(fit, t).ok(),
                Target::HazardRatio => Some(fit.hazard_ratio()),
                Target::CumulativeDynamic { .. } => None,
            }
        }
        Estimator::Pwc | Estimator::Weibull => {
            let fit = if estimator == Estimator::Pwc { &fits.pwc } else { &fits.weibull };
            let fit = fit.as_ref()?.as_ref().ok().filter(|f| f.converged)?;
            model_target(fit, fit.hazard_ratio(), target)
        }
        Estimator::Truth => None,
    }
}

/// Study settings beyond the scenario.
#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub estimators: Vec<Estimator>,
    pub targets: Vec<Target>,
    pub n_replications: usize,
    pub base_seed: u64,
    pub pwc: PwcSpec,
}

impl StudyOptions {
    pub fn new(estimators: &[Estimator], targets: &[Target], n_replications: usize, base_seed: u64) -> Self {
        Self {
            estimators: estimators.to_vec(),
            targets: targets.to_vec(),
            n_replications,
            base_seed,
            pwc: PwcSpec::study(),
        }
    }
}

/// Runs one scenario. Replication `r` uses seed `base_seed + r`; replications
/// run in parallel and are reduced in index order, so results do not depend
/// on the thread count. An estimator's replication is valid when its fit
/// converged and every target it produces is finite.
pub fn run_scenario(config: &ScenarioConfig, opts: &StudyOptions) -> Result<Vec<StudyResult>> {
    config.validate()?;
    if opts.estimators.contains(&Estimator::Truth) {
        return Err(Error::Argument("'truth' is not an estimator to study".into()));
    }
    if opts.n_replications == 0 {
        return Err(Error::Argument("need at least one replication".into()));
    }
    for t in &opts.targets {
        t.validate()?;
    }
    let truths: Vec<f64> = opts.targets.iter().map(|t| target_truth(config, t)).collect::<Result<_>>()?;
    let uses = |e: &[Estimator]| opts.estimators.iter().any(|x| e.contains(x));
    let fit_opts = FitOptions { standard_errors: false, ..Default::default() };

    // per replication, per estimator: all its target values, or None if invalid
    let per_rep: Vec<Vec<Option<Vec<f64>>>> = (0..opts.n_replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<Vec<f64>>>> {
            let cfg = config.with_seed(opts.base_seed.wrapping_add(r as u64));
            let data = generate_dataset(&cfg)?;
            let fits = Fits {
                cox: uses(&[Estimator::CoxProb, Estimator::CoxRiskset]).then(|| fit_cox_td(&data.records)),
                pwc: uses(&[Estimator::Pwc]).then(|| fit_pwc_ic(&data.records, &opts.pwc, &fit_opts)),
                weibull: uses(&[Estimator::Weibull]).then(|| fit_weibull_ic(&data.records, None, &fit_opts)),
            };
            for (name, failed) in [
                ("cox", fits.cox.as_ref().and_then(|f| f.as_ref().err())),
                ("pwc", fits.pwc.as_ref().and_then(|f| f.as_ref().err())),
                ("weibull", fits.weibull.as_ref().and_then(|f| f.as_ref().err())),
            ] {
                if let Some(e) = failed {
                    log::warn!("{} replication {r}: {name} fit failed: {e}", config.name);
                }
            }
            let values = opts
                .estimators
                .iter()
                .map(|&e| {
                    opts.targets
                        .iter()
                        .filter(|t| t.applies_to(e))
                        .map(|t| estimate(&fits, e, t))
                        .collect::<Option<Vec<f64>>>()
                })
                .collect();
            log::debug!("{} replication {r} done", config.name);
            Ok(values)
        })
        .collect::<Result<_>>()?;

    let mut results = Vec::new();
    for (ei, &estimator) in opts.estimators.iter().enumerate() {
        let applicable: Vec<usize> =
            (0..opts.targets.len()).filter(|&j| opts.targets[j].applies_to(estimator)).collect();
        let invalid = per_rep.iter().filter(|rep| rep[ei].is_none()).count();
        if invalid > 0 {
            log::info!("{} {estimator}: {invalid} of {} replications invalid", config.name, opts.n_replications);
        }
        for (k, &j) in applicable.iter().enumerate() {
            let estimates: Vec<f64> = per_rep.iter().filter_map(|rep| rep[ei].as_ref().map(|v| v[k])).collect();
            let performance = performance(&estimates, truths[j]).ok();
            results.push(StudyResult {
                scenario: config.name.clone(),
                estimator,
                target: opts.targets[j],
                n_valid: estimates.len(),
                estimates,
                truth: truths[j],
                performance,
                n_replications: opts.n_replications,
            });
        }
    }
    Ok(results)
}

/// One row of the study report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub target: String,
    pub time: Option<f64>,
    pub window: Option<f64>,
    pub estimator: String,
    pub truth: f64,
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    pub emp_se: Option<f64>,
    pub rmse: Option<f64>,
    pub n_valid: usize,
    pub n_replications: usize,
}

/// Report columns; `emp_se` uses the n-1 denominator.
pub const REPORT_HEADER: [&str; 12] = [
    "scenario",
    "target",
    "time",
    "window",
    "estimator",
    "truth",
    "mean",
    "bias",
    "emp_se",
    "rmse",
    "n_valid",
    "n_replications",
];

/// Rows grouped by target kind (I/D, C/D, hazard ratio), then scenario,
/// estimator and time.
pub fn study_report(results: &[StudyResult]) -> Vec<ReportRow> {
    let mut sorted: Vec<&StudyResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        (a.target.rank(), &a.scenario, a.estimator)
            .cmp(&(b.target.rank(), &b.scenario, b.estimator))
            .then(a.target.time().unwrap_or(0.0).total_cmp(&b.target.time().unwrap_or(0.0)))
    });
    sorted
        .into_iter()
        .map(|r| ReportRow {
            scenario: r.scenario.clone(),
            target: r.target.kind().to_string(),
            time: r.target.time(),
            window: r.target.window(),
            estimator: r.estimator.to_string(),
            truth: r.truth,
            mean: r.mean(),
            bias: r.performance.map(|p| p.bias),
            emp_se: r.performance.map(|p| p.emp_se),
            rmse: r.performance.map(|p| p.rmse),
            n_valid: r.n_valid,
            n_replications: r.n_replications,
        })
        .collect()
}
