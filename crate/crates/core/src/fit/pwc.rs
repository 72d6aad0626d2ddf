use super::{maximise, Family, FitOptions, IcData, MleFit, Occurrence};
use crate::error::{Error, Result};
use crate::record::ObservedRecord;

/// Change points used for every transition in the simulation study (months).
pub const STUDY_CUTPOINTS: [f64; 4] = [6.0, 30.0, 60.0, 90.0];

/// Cutpoints per transition. With `proportional`, the 1->2 hazard reuses the
/// 0->2 cutpoints and `cuts12` is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct PwcSpec {
    pub cuts01: Vec<f64>,
    pub cuts02: Vec<f64>,
    pub cuts12: Vec<f64>,
    pub proportional: bool,
    /// See [`IcData::with_diagnosis_lag`].
    pub diagnosis_lag: bool,
}

impl PwcSpec {
    /// Same cutpoints for all three transitions.
    pub fn common(cuts: &[f64], proportional: bool) -> Self {
        Self { cuts01: cuts.to_vec(), cuts02: cuts.to_vec(), cuts12: cuts.to_vec(), proportional, diagnosis_lag: false }
    }

    /// Study setting: common cutpoints, proportional death hazards, and the
    /// disease effect on death starting at diagnosis.
    pub fn study() -> Self {
        Self { diagnosis_lag: true, ..Self::common(&STUDY_CUTPOINTS, true) }
    }
}

const LABELS: [&str; 3] = ["0->1", "0->2", "1->2"];

/// Removes cutpoints bounding segments without time at risk, merging each
/// such segment into its right neighbour (or left, for the last one).
fn drop_empty_segments(records: &[ObservedRecord], transition: usize, cuts: &mut Vec<f64>, warnings: &mut Vec<String>) {
    loop {
        let n = cuts.len();
        let empty = (0..=n).find(|&j| {
            let lo = if j == 0 { 0.0 } else { cuts[j - 1] };
            let hi = if j == n { f64::INFINITY } else { cuts[j] };
            Occurrence::within(records, lo, hi).exposure_of(transition) == 0.0
        });
        let Some(j) = empty else { return };
        if n == 0 {
            return;
        }
        let removed = if j < n { cuts.remove(j) } else { cuts.remove(j - 1) };
        let msg = format!("{} segment {} has no time at risk; cutpoint {removed} dropped", LABELS[transition], j);
        log::warn!("{msg}");
        warnings.push(msg);
    }
}

fn segment_log_rates(records: &[ObservedRecord], transition: usize, cuts: &[f64]) -> Vec<f64> {
    let n = cuts.len();
    (0..=n)
        .map(|j| {
            let lo = if j == 0 { 0.0 } else { cuts[j - 1] };
            let hi = if j == n { f64::INFINITY } else { cuts[j] };
            Occurrence::within(records, lo, hi).rate(transition).ln()
        })
        .collect()
}

/// Interval-censored piecewise-constant illness-death fit, started from
/// per-segment occurrence/exposure rates.
pub fn fit_pwc_ic(records: &[ObservedRecord], spec: &PwcSpec, opts: &FitOptions) -> Result<MleFit> {
    let data = IcData::new(records)?;
    let data = if spec.diagnosis_lag { data.with_diagnosis_lag() } else { data };
    let total = Occurrence::within(records, 0.0, f64::INFINITY);
    if total.events[0] == 0.0 {
        return Err(Error::Fit("no observed illness; piecewise rates unidentified".into()));
    }
    if total.events[1] + total.events[2] == 0.0 {
        return Err(Error::Fit("no deaths; piecewise rates unidentified".into()));
    }
    for cuts in [&spec.cuts01, &spec.cuts02, &spec.cuts12] {
        if cuts.iter().any(|c| !(c.is_finite() && *c > 0.0)) || cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("cutpoints must be positive and strictly ascending".into()));
        }
    }

    let mut warnings = Vec::new();
    let mut cuts01 = spec.cuts01.clone();
    let mut cuts02 = spec.cuts02.clone();
    drop_empty_segments(records, 0, &mut cuts01, &mut warnings);
    drop_empty_segments(records, 1, &mut cuts02, &mut warnings);
    let mut cuts12 = if spec.proportional { cuts02.clone() } else { spec.cuts12.clone() };
    if !spec.proportional {
        drop_empty_segments(records, 2, &mut cuts12, &mut warnings);
    }

    let mut theta0 = segment_log_rates(records, 0, &cuts01);
    theta0.extend(segment_log_rates(records, 1, &cuts02));
    if spec.proportional {
        theta0.push((total.rate(2) / total.rate(1)).ln());
    } else {
        theta0.extend(segment_log_rates(records, 2, &cuts12));
    }
    let family = Family::Piecewise { cuts01, cuts02, cuts12, proportional: spec.proportional };
    maximise(family, &data, theta0, opts, warnings)
}
