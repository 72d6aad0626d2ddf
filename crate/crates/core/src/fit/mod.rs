//! Estimation of illness-death models from interval-censored records.

mod cox;
mod likelihood;
mod optim;
mod pwc;
mod weibull;

pub use cox::{fit_cox_td, nelson_aalen, nelson_aalen_transitions, transition_spells, CoxTdFit, RiskSetCounts};
pub(crate) use likelihood::check_records;
pub use likelihood::{ic_loglik, IcData, Pattern};
pub use optim::{
    central_gradient, central_hessian, minimize_bfgs, richardson_gradient, spd_inverse, OptimOptions, OptimResult,
};
pub use pwc::{fit_pwc_ic, PwcSpec, STUDY_CUTPOINTS};
pub use weibull::fit_weibull_ic;

use crate::error::{Error, Result};
use crate::hazards::{Hazard, PiecewiseConstantHazard};
use crate::record::ObservedRecord;
use crate::transprob::{IllnessDeathModel, TransitionMatrix, TransitionModel};

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Compute standard errors from the observed information.
    pub standard_errors: bool,
    /// Central second-difference step for the observed information.
    pub hessian_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { optim: OptimOptions::default(), standard_errors: true, hessian_step: 1e-4 }
    }
}

/// A fitted parameter on its natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub estimate: f64,
    pub stderr: Option<f64>,
}

/// Parametric hazard family being fitted, and its mapping from the
/// unconstrained optimisation vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// Six Weibull parameters, optimised as `(ln a01, ln k01, ln a02, ln k02, ln a12, ln k12)`.
    Weibull,
    /// Piecewise-constant rates (log scale). With `proportional`, the 1->2
    /// rates are the 0->2 rates times `exp(beta)` and `beta` is the last entry.
    Piecewise { cuts01: Vec<f64>, cuts02: Vec<f64>, cuts12: Vec<f64>, proportional: bool },
}

impl Family {
    pub fn dimension(&self) -> usize {
        match self {
            Family::Weibull => 6,
            Family::Piecewise { cuts01, cuts02, cuts12, proportional } => {
                let base = cuts01.len() + cuts02.len() + 2;
                if *proportional {
                    base + 1
                } else {
                    base + cuts12.len() + 1
                }
            }
        }
    }

    pub fn names(&self) -> Vec<String> {
        match self {
            Family::Weibull => ["alpha01", "k01", "alpha02", "k02", "alpha12", "k12"].map(String::from).to_vec(),
            Family::Piecewise { cuts01, cuts02, cuts12, proportional } => {
                let mut out = Vec::new();
                let mut push = |tr: &str, cuts: &[f64]| {
                    out.extend((0..=cuts.len()).map(|j| format!("rate{tr}[{j}]")));
                };
                push("01", cuts01);
                push("02", cuts02);
                if *proportional {
                    out.push("beta".into());
                } else {
                    push("12", cuts12);
                }
                out
            }
        }
    }

    /// True when entry `i` of the optimisation vector is a log-parameter.
    pub(crate) fn is_log(&self, i: usize) -> bool {
        match self {
            Family::Weibull => true,
            Family::Piecewise { proportional, .. } => !(*proportional && i + 1 == self.dimension()),
        }
    }

    /// Model for optimisation vector `theta`; `None` if it overflows.
    pub fn build(&self, theta: &[f64]) -> Option<IllnessDeathModel> {
        let exp = |v: f64| {
            let e = v.exp();
            (e.is_finite() && e > 0.0).then_some(e)
        };
        match self {
            Family::Weibull => {
                let w = |i: usize| Hazard::weibull(exp(theta[i])?, exp(theta[i + 1])?).ok();
                Some(IllnessDeathModel::new(w(0)?, w(2)?, w(4)?))
            }
            Family::Piecewise { cuts01, cuts02, cuts12, proportional } => {
                let mut pos = 0;
                let mut take = |cuts: &[f64]| -> Option<PiecewiseConstantHazard> {
                    let rates: Option<Vec<f64>> = theta[pos..pos + cuts.len() + 1].iter().map(|&v| exp(v)).collect();
                    pos += cuts.len() + 1;
                    PiecewiseConstantHazard::new(cuts.to_vec(), rates?).ok()
                };
                let h01 = take(cuts01)?;
                let h02 = take(cuts02)?;
                let h12 = if *proportional { h02.scaled(exp(*theta.last()?)?).ok()? } else { take(cuts12)? };
                Some(IllnessDeathModel::new(h01, h02, h12))
            }
        }
    }

    /// Optimisation vector of `model` under this family, if it belongs to it.
    pub fn theta_of(&self, model: &IllnessDeathModel) -> Option<Vec<f64>> {
        match (self, &model.h01, &model.h02, &model.h12) {
            (Family::Weibull, Hazard::Weibull(a), Hazard::Weibull(b), Hazard::Weibull(c)) => {
                Some([a.alpha, a.k, b.alpha, b.k, c.alpha, c.k].iter().map(|v| v.ln()).collect())
            }
            (
                Family::Piecewise { proportional, .. },
                Hazard::Piecewise(a),
                Hazard::Piecewise(b),
                Hazard::Piecewise(c),
            ) => {
                let mut theta: Vec<f64> = a.rates().iter().chain(b.rates()).map(|r| r.ln()).collect();
                if *proportional {
                    theta.push((c.rates()[0] / b.rates()[0]).ln());
                } else {
                    theta.extend(c.rates().iter().map(|r| r.ln()));
                }
                Some(theta)
            }
            _ => None,
        }
    }

    /// Family describing `model`'s own parametrisation.
    pub fn of_model(model: &IllnessDeathModel, proportional: bool) -> Option<Family> {
        match (&model.h01, &model.h02, &model.h12) {
            (Hazard::Weibull(_), Hazard::Weibull(_), Hazard::Weibull(_)) => Some(Family::Weibull),
            (Hazard::Piecewise(a), Hazard::Piecewise(b), Hazard::Piecewise(c)) => Some(Family::Piecewise {
                cuts01: a.cutpoints().to_vec(),
                cuts02: b.cutpoints().to_vec(),
                cuts12: c.cutpoints().to_vec(),
                proportional,
            }),
            _ => None,
        }
    }
}

/// Result of an interval-censored maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub family: Family,
    pub model: IllnessDeathModel,
    pub params: Vec<Parameter>,
    pub loglik: f64,
    pub initial_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
}

impl MleFit {
    /// `exp(beta)` for proportional piecewise fits.
    pub fn hazard_ratio(&self) -> Option<f64> {
        self.param("beta").map(|p| p.estimate.exp())
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }
}

impl TransitionModel for MleFit {
    fn transition_matrix(&self, s: f64, t: f64) -> Result<TransitionMatrix> {
        self.model.transition_matrix(s, t)
    }

    fn death_intensities(&self, t: f64) -> Result<(f64, f64)> {
        self.model.death_intensities(t)
    }
}

/// Maximises the likelihood over `family` from `theta0`.
pub(crate) fn maximise(
    family: Family,
    data: &IcData,
    theta0: Vec<f64>,
    opts: &FitOptions,
    warnings: Vec<String>,
) -> Result<MleFit> {
    let objective = |theta: &[f64]| match family.build(theta) {
        Some(m) => -data.loglik(&m),
        None => f64::INFINITY,
    };
    let initial = objective(&theta0);
    if !initial.is_finite() {
        let ids = family.build(&theta0).map(|m| data.impossible_subjects(&m)).unwrap_or_default();
        return Err(Error::Fit(format!(
            "log-likelihood is -inf at the starting values (subjects: {})",
            ids.join(", ")
        )));
    }
    let res = minimize_bfgs(objective, &theta0, opts.optim);
    if !res.converged {
        log::warn!(
            "optimiser stopped after {} iterations with gradient norm {:e}",
            res.iterations,
            res.gradient_norm()
        );
    }
    let model = family.build(&res.x).ok_or_else(|| Error::Fit("estimates overflow".into()))?;

    let se_theta = if opts.standard_errors {
        let hess = central_hessian(objective, &res.x, opts.hessian_step);
        spd_inverse(&hess).map(|cov| (0..cov.len()).map(|i| cov[i][i].sqrt()).collect::<Vec<f64>>())
    } else {
        None
    };
    if opts.standard_errors && se_theta.is_none() {
        log::warn!("observed information is singular; standard errors omitted");
    }
    let params = family
        .names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let log = family.is_log(i);
            let estimate = if log { res.x[i].exp() } else { res.x[i] };
            let stderr = se_theta.as_ref().map(|se| if log { estimate * se[i] } else { se[i] });
            Parameter { name, estimate, stderr }
        })
        .collect();
    Ok(MleFit {
        family,
        model,
        params,
        loglik: -res.value,
        initial_loglik: -initial,
        converged: res.converged,
        iterations: res.iterations,
        gradient_norm: res.gradient_norm(),
        warnings,
    })
}

/// Event counts and time at risk per transition under the diagnosis-time
/// convention (disease starts at the first positive visit).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Occurrence {
    /// Events per transition: 0->1, 0->2, 1->2.
    pub events: [f64; 3],
    /// Time at risk in state 0 and state 1.
    pub exposure: [f64; 2],
}

impl Occurrence {
    /// Totals over `[lo, hi)` for every subject.
    pub fn within(records: &[ObservedRecord], lo: f64, hi: f64) -> Occurrence {
        let overlap = |a: f64, b: f64| (b.min(hi) - a.max(lo)).max(0.0);
        let inside = |t: f64| t >= lo && t < hi;
        let mut o = Occurrence::default();
        for r in records {
            let t = r.survival_time;
            match r.first_positive {
                Some(rp) => {
                    o.exposure[0] += overlap(0.0, rp);
                    o.exposure[1] += overlap(rp, t);
                    o.events[0] += f64::from(u8::from(inside(rp)));
                    o.events[2] += f64::from(u8::from(r.died && inside(t)));
                }
                None => {
                    o.exposure[0] += overlap(0.0, t);
                    o.events[1] += f64::from(u8::from(r.died && inside(t)));
                }
            }
        }
        o
    }

    /// Exposure of transition `i` (0: 0->1, 1: 0->2, 2: 1->2).
    pub fn exposure_of(&self, i: usize) -> f64 {
        if i == 2 {
            self.exposure[1]
        } else {
            self.exposure[0]
        }
    }

    /// Occurrence/exposure rate with half an event added when none were seen.
    pub fn rate(&self, i: usize) -> f64 {
        self.events[i].max(0.5) / self.exposure_of(i)
    }
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Largest relative deviation over informative coordinates.
    pub max_rel_deviation: f64,
    /// Coordinates where both gradients vanish (flat likelihood).
    pub non_informative: Vec<usize>,
    pub gradient: Vec<f64>,
    pub finite_difference: Vec<f64>,
}

/// Compares `grad(x)` with central differences of `f` at step 1e-5.
pub fn gradient_check<F, G>(mut f: F, grad: G, x: &[f64]) -> GradientCheck
where
    F: FnMut(&[f64]) -> f64,
    G: FnOnce(&[f64]) -> Vec<f64>,
{
    let scale = f(x).abs().max(1.0);
    let g = grad(x);
    let fd = central_gradient(&mut f, x, 1e-5);
    let floor = 1e-9 * scale;
    let mut max_rel: f64 = 0.0;
    let mut flat = Vec::new();
    for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
        if a.abs() < floor && b.abs() < floor {
            flat.push(i);
            continue;
        }
        max_rel = max_rel.max((a - b).abs() / a.abs().max(b.abs()));
    }
    GradientCheck { max_rel_deviation: max_rel, non_informative: flat, gradient: g, finite_difference: fd }
}

/// Checks the likelihood gradient at `model`'s parameters: a fourth-order
/// difference gradient (step 1e-3) against central differences (step 1e-5).
/// Disagreement indicates a likelihood that is not smooth in its parameters.
pub fn loglik_gradient_check(model: &IllnessDeathModel, records: &[ObservedRecord]) -> Result<GradientCheck> {
    let family = Family::of_model(model, false)
        .ok_or_else(|| Error::Argument("gradient check needs a Weibull or piecewise model".into()))?;
    let theta = family.theta_of(model).expect("family built from model");
    let data = IcData::new(records)?;
    let f = |th: &[f64]| family.build(th).map_or(f64::NEG_INFINITY, |m| data.loglik(&m));
    Ok(gradient_check(f, |x| richardson_gradient(f, x, 1e-3), &theta))
}
