//! Time-dependent AUC of the binary disease marker for death.
//!
//! Both definitions reduce to `0.5 + 0.5 (p - pi1)`, with `p` the probability
//! that a case carries the marker and `pi1` the probability that a control does.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fit::CoxTdFit;
use crate::record::SubjectPath;
use crate::transprob::TransitionModel;

const TINY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AucDefinition {
    /// Cases die at `t`, controls survive past `t`.
    IncidentDynamic,
    /// Cases die in `(s, s + window]`, controls survive past `s + window`;
    /// the marker is read at `s`.
    CumulativeDynamic,
}

impl AucDefinition {
    pub fn as_str(self) -> &'static str {
        match self {
            AucDefinition::IncidentDynamic => "ID",
            AucDefinition::CumulativeDynamic => "CD",
        }
    }
}

impl fmt::Display for AucDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AucDefinition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['/', '-', '_'], "").as_str() {
            "ID" | "INCIDENTDYNAMIC" => Ok(AucDefinition::IncidentDynamic),
            "CD" | "CUMULATIVEDYNAMIC" => Ok(AucDefinition::CumulativeDynamic),
            _ => Err(Error::Argument(format!("unknown AUC definition '{s}' (use ID or CD)"))),
        }
    }
}

/// Where an AUC curve came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    CoxProb,
    CoxRiskset,
    Pwc,
    Weibull,
    Truth,
}

impl Estimator {
    pub const ALL: [Estimator; 5] =
        [Estimator::CoxProb, Estimator::CoxRiskset, Estimator::Pwc, Estimator::Weibull, Estimator::Truth];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::CoxProb => "cox-prob",
            Estimator::CoxRiskset => "cox-riskset",
            Estimator::Pwc => "pwc",
            Estimator::Weibull => "weibull",
            Estimator::Truth => "truth",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown estimator '{s}'")))
    }
}

/// AUC values on a time grid. For C/D curves `time` is the marker time `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AucCurve {
    pub definition: AucDefinition,
    pub window: Option<f64>,
    pub points: Vec<(f64, f64)>,
    pub estimator: Estimator,
    /// Grid points left out, with the reason.
    pub skipped: Vec<(f64, String)>,
}

impl AucCurve {
    pub fn value_at(&self, time: f64) -> Option<f64> {
        self.points.iter().find(|p| p.0 == time).map(|p| p.1)
    }
}

fn check_time(t: f64, name: &str) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("{name} must be positive and finite, got {t}")))
    }
}

/// `pi1(t) = P01(0,t-) / (P00(0,t-) + P01(0,t-))`.
pub fn prevalence_id(model: &dyn TransitionModel, t: f64) -> Result<f64> {
    check_time(t, "t")?;
    let p = model.transition_matrix_left(0.0, t)?.p;
    let alive = p[0][0] + p[0][1];
    if alive < TINY {
        return Err(Error::Domain(format!("no survivors at t={t}")));
    }
    Ok(p[0][1] / alive)
}

/// `p(t) = P01(0,t-) g(t) / (P00(0,t-) + P01(0,t-) g(t))` with
/// `g = l12 / l02`, so `g = 1` reproduces the prevalence bit for bit.
pub fn case_prob_id(model: &dyn TransitionModel, t: f64) -> Result<f64> {
    check_time(t, "t")?;
    let p = model.transition_matrix_left(0.0, t)?.p;
    let (l02, l12) = model.death_intensities(t)?;
    if l02 == 0.0 && l12 == 0.0 {
        return Err(Error::Domain(format!("no deaths possible at t={t}")));
    }
    if l02 == 0.0 {
        if p[0][1] < TINY {
            return Err(Error::Domain(format!("no survivors at t={t}")));
        }
        return Ok(1.0);
    }
    let gamma = l12 / l02;
    let diseased = p[0][1] * gamma;
    let total = p[0][0] + diseased;
    if total < TINY * (1.0 + gamma) {
        return Err(Error::Domain(format!("no survivors at t={t}")));
    }
    Ok(diseased / total)
}

/// Incident/dynamic AUC at `t`.
pub fn auc_id(model: &dyn TransitionModel, t: f64) -> Result<f64> {
    let p = case_prob_id(model, t)?;
    let pi1 = prevalence_id(model, t)?;
    Ok(clamp_unit(0.5 + 0.5 * (p - pi1)))
}

struct CdTerms {
    prevalence: f64,
    case_prob: Option<f64>,
}

// P(0,t) is composed as P(0,s) P(s,t) so the two probabilities stay consistent.
fn cd_terms(model: &dyn TransitionModel, s: f64, t: f64) -> Result<CdTerms> {
    check_time(s, "s")?;
    if !(t >= s && t.is_finite()) {
        return Err(Error::Argument(format!("need s <= t, got s={s}, t={t}")));
    }
    let a = model.transition_matrix(0.0, s)?.p;
    let b = model.transition_matrix(s, t)?.p;
    let p00_t = a[0][0] * b[0][0];
    let p01_t = a[0][0] * b[0][1] + a[0][1] * b[1][1];
    let alive = p00_t + p01_t;
    if alive < TINY {
        return Err(Error::Domain(format!("no survivors at t={t}")));
    }
    let prevalence = a[0][1] * b[1][1] / alive;
    let diseased = a[0][1] * b[1][2];
    let deaths = a[0][0] * b[0][2] + diseased;
    let case_prob = (deaths >= TINY).then(|| diseased / deaths);
    Ok(CdTerms { prevalence, case_prob })
}

/// `pi1(s,t) = P01(0,s) P11(s,t) / (P00(0,t) + P01(0,t))`.
pub fn prevalence_cd(model: &dyn TransitionModel, s: f64, t: f64) -> Result<f64> {
    Ok(cd_terms(model, s, t)?.prevalence)
}

/// `p(s,t) = P01(0,s) P12(s,t) / (P00(0,s) P02(s,t) + P01(0,s) P12(s,t))`.
pub fn case_prob_cd(model: &dyn TransitionModel, s: f64, t: f64) -> Result<f64> {
    cd_terms(model, s, t)?.case_prob.ok_or_else(|| Error::Domain(format!("no deaths in window ({s}, {t}]")))
}

/// Cumulative/dynamic AUC for marker time `s` and horizon `t`.
pub fn auc_cd(model: &dyn TransitionModel, s: f64, t: f64) -> Result<f64> {
    let terms = cd_terms(model, s, t)?;
    let p = terms.case_prob.ok_or_else(|| Error::Domain(format!("no deaths in window ({s}, {t}]")))?;
    Ok(clamp_unit(0.5 + 0.5 * (p - terms.prevalence)))
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Riskset AUC for risk-set counts and log hazard ratio `beta`.
pub fn riskset_auc(n0: usize, n1: usize, beta: f64) -> Result<f64> {
    if n0 + n1 == 0 {
        return Err(Error::Domain("empty risk set".into()));
    }
    let (n0, n1) = (n0 as f64, n1 as f64);
    let w = beta.exp();
    let p = n1 * w / (n0 + n1 * w);
    let pi1 = n1 / (n0 + n1);
    Ok(clamp_unit(0.5 + 0.5 * (p - pi1)))
}

/// Empirical incident/dynamic AUC from the Cox risk set at the last death
/// time not after `t`.
pub fn auc_id_riskset(fit: &CoxTdFit, t: f64) -> Result<f64> {
    let r = fit.risk_set_at(t).ok_or_else(|| Error::Domain(format!("no death at or before t={t}; empty risk set")))?;
    riskset_auc(r.n0, r.n1, fit.beta)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Argument("empty time grid".into()));
    }
    for &t in grid {
        check_time(t, "grid time")?;
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("grid times must be strictly increasing".into()));
    }
    Ok(())
}

fn check_window(definition: AucDefinition, window: Option<f64>) -> Result<Option<f64>> {
    match (definition, window) {
        (AucDefinition::IncidentDynamic, _) => Ok(None),
        (AucDefinition::CumulativeDynamic, Some(w)) if w.is_finite() && w > 0.0 => Ok(Some(w)),
        (AucDefinition::CumulativeDynamic, w) => {
            Err(Error::Argument(format!("cumulative/dynamic AUC needs a positive window, got {w:?}")))
        }
    }
}

/// AUC curve from a fitted or true model. Points where a probability is
/// degenerate, or whose C/D window runs past the model's support, are
/// skipped and listed.
pub fn auc_model_based(
    model: &dyn TransitionModel,
    definition: AucDefinition,
    grid: &[f64],
    window: Option<f64>,
    estimator: Estimator,
) -> Result<AucCurve> {
    check_grid(grid)?;
    let window = check_window(definition, window)?;
    let mut curve = AucCurve { definition, window, points: Vec::new(), estimator, skipped: Vec::new() };
    for &s in grid {
        let value = match window {
            None => auc_id(model, s),
            Some(w) => match model.support_end() {
                Some(end) if s + w > end => {
                    curve.skipped.push((s, format!("window end {} beyond last supported time {end}", s + w)));
                    continue;
                }
                _ => auc_cd(model, s, s + w),
            },
        };
        match value {
            Ok(v) => curve.points.push((s, v)),
            Err(Error::Domain(msg)) => {
                log::debug!("AUC at {s} skipped: {msg}");
                curve.skipped.push((s, msg));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(curve)
}

/// Riskset incident/dynamic curve for a Cox fit.
pub fn auc_riskset_curve(fit: &CoxTdFit, grid: &[f64]) -> Result<AucCurve> {
    check_grid(grid)?;
    let mut curve = AucCurve {
        definition: AucDefinition::IncidentDynamic,
        window: None,
        points: Vec::new(),
        estimator: Estimator::CoxRiskset,
        skipped: Vec::new(),
    };
    for &t in grid {
        match auc_id_riskset(fit, t) {
            Ok(v) => curve.points.push((t, v)),
            Err(Error::Domain(msg)) => curve.skipped.push((t, msg)),
            Err(e) => return Err(e),
        }
    }
    Ok(curve)
}

/// Monte-Carlo AUC with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McAuc {
    pub estimate: f64,
    pub stderr: f64,
    pub cases: usize,
    pub controls: usize,
}

// Concordance of binary markers over all case/control pairs, ties counted 1/2.
fn binary_concordance(case_marked: usize, cases: usize, control_marked: usize, controls: usize) -> Result<McAuc> {
    if cases == 0 || controls == 0 {
        return Err(Error::Domain(format!("{cases} cases and {controls} controls")));
    }
    let (c1, c0) = (case_marked as f64, (cases - case_marked) as f64);
    let (k1, k0) = (control_marked as f64, (controls - control_marked) as f64);
    let pairs = (cases as f64) * (controls as f64);
    let estimate = (c1 * k0 + 0.5 * (c1 * k1 + c0 * k0)) / pairs;
    let p = c1 / cases as f64;
    let q = k1 / controls as f64;
    let var = 0.25 * (p * (1.0 - p) / cases as f64 + q * (1.0 - q) / controls as f64);
    Ok(McAuc { estimate, stderr: var.sqrt(), cases, controls })
}

/// Case/control estimate of the incident/dynamic AUC from true paths. Cases
/// die in `[t - half_width, t + half_width)` and carry their status just
/// before death; controls are alive at `t` and carry their status at `t`.
pub fn mc_auc_id(paths: &[SubjectPath], t: f64, half_width: f64) -> Result<McAuc> {
    let (mut cases, mut case_marked, mut controls, mut control_marked) = (0, 0, 0, 0);
    for p in paths {
        if p.death_time >= t - half_width && p.death_time < t + half_width {
            cases += 1;
            case_marked += usize::from(p.diseased_before(p.death_time));
        }
        if p.death_time > t {
            controls += 1;
            control_marked += usize::from(p.illness_time.is_some_and(|ti| ti <= t));
        }
    }
    binary_concordance(case_marked, cases, control_marked, controls)
}

/// Case/control estimate of the cumulative/dynamic AUC: cases die in
/// `(s, t]`, controls survive past `t`, both carry their status at `s`.
pub fn mc_auc_cd(paths: &[SubjectPath], s: f64, t: f64) -> Result<McAuc> {
    let (mut cases, mut case_marked, mut controls, mut control_marked) = (0, 0, 0, 0);
    for p in paths {
        let marked = p.illness_time.is_some_and(|ti| ti <= s);
        if p.death_time > s && p.death_time <= t {
            cases += 1;
            case_marked += usize::from(marked);
        } else if p.death_time > t {
            controls += 1;
            control_marked += usize::from(marked);
        }
    }
    binary_concordance(case_marked, cases, control_marked, controls)
}
