//! Interval-censored illness-death log-likelihood.
//!
//! A subject enters the likelihood only through `(L, R, T, died)`:
//!
//! | pattern | contribution |
//! |---|---|
//! | never diagnosed, censored | `P00(0,L) [P00(L,T) + P01(L,T)]` |
//! | never diagnosed, died | `P00(0,L) [P00(L,T) l02(T) + P01(L,T) l12(T)]` |
//! | diagnosed in (L,R], censored | `P00(0,L) P01(L,R) P11(R,T)` |
//! | diagnosed in (L,R], died | `P00(0,L) P01(L,R) P11(R,T) l12(T)` |
//!
//! When a never-diagnosed subject's last negative visit coincides with `T`,
//! `P01(L,T)` is zero and only the disease-free term remains.
//!
//! For Weibull models every term is written through one running integral
//! `G(x) = int_0^x exp(A12(u) - A0(u)) l01(u) du`, with `A0 = A01 + A02`:
//! `P00(0,L) P01(L,R) = exp(-A12(R)) [G(R) - G(L)]`. `G` is accumulated once
//! per evaluation over the sorted distinct times of the data set.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::hazards::{Hazard, WeibullHazard};
use crate::quadrature::GaussLegendre;
use crate::record::{validate_record, ObservedRecord};
use crate::transprob::{p01_fixed, pwc_block, IllnessDeathModel};

/// Which of the four likelihood contributions a record falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    CensoredDiseaseFree,
    DiedDiseaseFree,
    CensoredDiagnosed,
    DiedDiagnosed,
}

impl Pattern {
    pub fn of(record: &ObservedRecord) -> Pattern {
        match (record.first_positive.is_some(), record.died) {
            (false, false) => Pattern::CensoredDiseaseFree,
            (false, true) => Pattern::DiedDiseaseFree,
            (true, false) => Pattern::CensoredDiagnosed,
            (true, true) => Pattern::DiedDiagnosed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Subject {
    l: f64,
    t: f64,
    died: bool,
    // index into `IcData::intervals` for diagnosed subjects
    interval: Option<usize>,
    // indices of L, R and T into `TimeGrid::points`
    li: usize,
    ri: Option<usize>,
    ti: usize,
}

/// Sorted distinct times of the data (starting at 0) and the fixed
/// quadrature panels between consecutive ones.
#[derive(Debug, Clone)]
struct TimeGrid {
    points: Vec<f64>,
    panels: Vec<(f64, f64)>,
    // panels of gap `i` (from points[i-1] to points[i]) are
    // `panels[gap_end[i-1]..gap_end[i]]`; gap 1 starts at 0 and is graded
    gap_end: Vec<usize>,
}

// Panels stay shorter than this and than half their left end.
const MAX_PANEL: f64 = 2.0;

impl TimeGrid {
    fn new(mut points: Vec<f64>) -> Self {
        points.push(0.0);
        points.sort_by(f64::total_cmp);
        points.dedup();
        let mut panels = Vec::new();
        let mut gap_end = vec![0, 0];
        for w in points.windows(2).skip(1) {
            let (mut a, b) = (w[0], w[1]);
            while a < b {
                let hi = (a + MAX_PANEL.min(0.5 * a)).min(b);
                let hi = if b - hi < 1e-3 * (b - a) { b } else { hi };
                panels.push((a, hi));
                a = hi;
            }
            gap_end.push(panels.len());
        }
        gap_end.truncate(points.len());
        Self { points, panels, gap_end }
    }

    fn index(&self, t: f64) -> usize {
        self.points.partition_point(|&p| p < t)
    }
}

/// Records reduced to what the likelihood needs, with diagnosis intervals
/// `(L, R]` deduplicated so `P01(L, R)` is computed once per interval.
#[derive(Debug, Clone)]
pub struct IcData {
    ids: Vec<String>,
    subjects: Vec<Subject>,
    intervals: Vec<(f64, f64)>,
    grid: TimeGrid,
    diagnosis_lag: bool,
    panel_rule: GaussLegendre,
    per_subject_rule: GaussLegendre,
    interval_rule: GaussLegendre,
}

impl IcData {
    /// Validates every record; fails on the first batch of violations.
    pub fn new(records: &[ObservedRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Fit("no data".into()));
        }
        check_records(records)?;
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut intervals = Vec::new();
        let mut subjects = Vec::with_capacity(records.len());
        for r in records {
            let l = r.last_negative.expect("validated records have a negative baseline visit");
            let interval = r.first_positive.map(|rp| {
                *index.entry((l.to_bits(), rp.to_bits())).or_insert_with(|| {
                    intervals.push((l, rp));
                    intervals.len() - 1
                })
            });
            subjects.push(Subject { l, t: r.survival_time, died: r.died, interval, li: 0, ri: None, ti: 0 });
        }
        let mut times: Vec<f64> = subjects.iter().flat_map(|s| [s.l, s.t]).collect();
        times.extend(intervals.iter().map(|iv| iv.1));
        let grid = TimeGrid::new(times);
        for s in &mut subjects {
            s.li = grid.index(s.l);
            s.ti = grid.index(s.t);
            s.ri = s.interval.map(|i| grid.index(intervals[i].1));
        }
        Ok(Self {
            ids: records.iter().map(|r| r.id.clone()).collect(),
            subjects,
            intervals,
            grid,
            diagnosis_lag: false,
            panel_rule: GaussLegendre::new(5),
            per_subject_rule: GaussLegendre::new(10),
            interval_rule: GaussLegendre::new(20),
        })
    }

    /// Death hazard from state 1 taken as `l02` until the first positive
    /// visit and as `l12` after it, so disease acts on death only once
    /// diagnosed.
    pub fn with_diagnosis_lag(mut self) -> Self {
        self.diagnosis_lag = true;
        self
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Number of distinct diagnosis intervals.
    pub fn interval_count(&self) -> usize {
        self.intervals.len()
    }

    /// Log-likelihood; `-inf` when some subject has zero probability.
    pub fn loglik(&self, model: &IllnessDeathModel) -> f64 {
        if self.diagnosis_lag {
            return compensated_sum(self.lagged_contributions(model).into_iter());
        }
        if let Some(w) = self.weibull_terms(model) {
            return compensated_sum(self.subjects.iter().map(|s| w.contribution(s)));
        }
        let cache = self.interval_p01(model);
        compensated_sum(self.subjects.iter().map(|s| self.contribution(model, s, &cache)))
    }

    /// Per-subject log contributions, in record order.
    pub fn contributions(&self, model: &IllnessDeathModel) -> Vec<f64> {
        if self.diagnosis_lag {
            return self.lagged_contributions(model);
        }
        if let Some(w) = self.weibull_terms(model) {
            return self.subjects.iter().map(|s| w.contribution(s)).collect();
        }
        self.direct_contributions(model)
    }

    /// Per-subject quadrature, without the shared running integral.
    fn direct_contributions(&self, model: &IllnessDeathModel) -> Vec<f64> {
        let cache = self.interval_p01(model);
        self.subjects.iter().map(|s| self.contribution(model, s, &cache)).collect()
    }

    /// Ids of subjects whose contribution is zero (log `-inf`) or not finite.
    pub fn impossible_subjects(&self, model: &IllnessDeathModel) -> Vec<String> {
        self.contributions(model)
            .iter()
            .zip(&self.ids)
            .filter(|(c, _)| !c.is_finite())
            .map(|(_, id)| id.clone())
            .collect()
    }

    fn weibull_terms(&self, model: &IllnessDeathModel) -> Option<WeibullTerms<'_>> {
        let (Hazard::Weibull(h01), Hazard::Weibull(h02), Hazard::Weibull(h12)) = (&model.h01, &model.h02, &model.h12)
        else {
            return None;
        };
        let w = [*h01, *h02, *h12];
        let pts = &self.grid.points;
        let mut cum = Vec::with_capacity(pts.len());
        for &p in pts {
            cum.push(if p > 0.0 { powers(&w, p.ln()) } else { [0.0; 3] });
        }
        // exp(A12 - A0) l01 at u, in terms of ln u
        let integrand = |lnu: f64| {
            let c = powers(&w, lnu);
            (c[2] - c[0] - c[1]).exp() * w[0].k * c[0] * (-lnu).exp()
        };
        let mut increments = vec![0.0; pts.len()];
        if pts.len() > 1 {
            // first gap in v = u^k01, graded towards 0
            let inv_k = 1.0 / w[0].k;
            let substituted = |v: f64| {
                if v <= 0.0 {
                    return w[0].alpha;
                }
                let c = powers(&w, v.ln() * inv_k);
                w[0].alpha * (c[2] - c[0] - c[1]).exp()
            };
            let mut upper = pts[1].powf(w[0].k);
            let mut g = 0.0;
            for _ in 0..GRADED_PANELS {
                let lower = upper / 8.0;
                g += self.per_subject_rule.integrate(substituted, lower, upper);
                upper = lower;
            }
            g += self.per_subject_rule.integrate(substituted, 0.0, upper);
            increments[1] = g;
        }
        for i in 2..pts.len() {
            increments[i] = self.grid.panels[self.grid.gap_end[i - 1]..self.grid.gap_end[i]]
                .iter()
                .map(|&(a, b)| self.panel_rule.integrate(|u| integrand(u.ln()), a, b))
                .sum();
        }
        Some(WeibullTerms { w, cum, increments, points: pts })
    }

    fn lagged_contributions(&self, model: &IllnessDeathModel) -> Vec<f64> {
        let lag = IllnessDeathModel::new(model.h01.clone(), model.h02.clone(), model.h02.clone());
        let cache = self.interval_p01(&lag);
        self.subjects
            .iter()
            .map(|s| {
                let log_p00_0l = -model.exit_cumulative(s.l);
                match s.interval {
                    Some(i) => {
                        let r = self.intervals[i].1;
                        let mut v =
                            log_p00_0l + cache[i].ln() - (model.h12.cumulative_at(s.t) - model.h12.cumulative_at(r));
                        if s.died {
                            v += model.h12.rate_at(s.t).ln();
                        }
                        v
                    }
                    // death hazard l02 in both states of (L, T]
                    None => {
                        let mut v = log_p00_0l - (model.h02.cumulative_at(s.t) - model.h02.cumulative_at(s.l));
                        if s.died {
                            v += model.h02.rate_at(s.t).ln();
                        }
                        v
                    }
                }
            })
            .collect()
    }

    fn interval_p01(&self, model: &IllnessDeathModel) -> Vec<f64> {
        self.intervals.iter().map(|&(l, r)| p01_between(model, l, r, &self.interval_rule)).collect()
    }

    #[inline]
    fn contribution(&self, model: &IllnessDeathModel, s: &Subject, cache: &[f64]) -> f64 {
        let log_p00_0l = -model.exit_cumulative(s.l);
        match s.interval {
            Some(i) => {
                let r = self.intervals[i].1;
                let log_p11 = -(model.h12.cumulative_at(s.t) - model.h12.cumulative_at(r));
                let mut v = log_p00_0l + cache[i].ln() + log_p11;
                if s.died {
                    v += model.h12.rate_at(s.t).ln();
                }
                v
            }
            None => {
                let p00 = (-(model.exit_cumulative(s.t) + log_p00_0l)).exp();
                let p01 = p01_between(model, s.l, s.t, &self.per_subject_rule);
                let inner =
                    if s.died { p00 * model.h02.rate_at(s.t) + p01 * model.h12.rate_at(s.t) } else { p00 + p01 };
                log_p00_0l + inner.ln()
            }
        }
    }
}

const GRADED_PANELS: usize = 5;

/// Cumulative hazards `alpha u^k` of the three transitions.
#[inline]
fn powers(w: &[WeibullHazard; 3], lnu: f64) -> [f64; 3] {
    [w[0].alpha * (w[0].k * lnu).exp(), w[1].alpha * (w[1].k * lnu).exp(), w[2].alpha * (w[2].k * lnu).exp()]
}

struct WeibullTerms<'a> {
    w: [WeibullHazard; 3],
    cum: Vec<[f64; 3]>,
    // integral of the G integrand over each gap between grid points
    increments: Vec<f64>,
    points: &'a [f64],
}

impl WeibullTerms<'_> {
    fn g_between(&self, from: usize, to: usize) -> f64 {
        self.increments[from + 1..=to].iter().sum()
    }

    #[inline]
    fn contribution(&self, s: &Subject) -> f64 {
        let ct = self.cum[s.ti];
        let t = self.points[s.ti];
        match s.ri {
            Some(ri) => {
                let mut v = self.g_between(s.li, ri).ln() - ct[2];
                if s.died {
                    v += (self.w[2].k * ct[2] / t).ln();
                }
                v
            }
            None => {
                let g = if s.ti > s.li { self.g_between(s.li, s.ti) } else { 0.0 };
                let (a, b) = if s.died { (self.w[1].k * ct[1] / t, self.w[2].k * ct[2] / t) } else { (1.0, 1.0) };
                ((-ct[0] - ct[1]).exp() * a + (-ct[2]).exp() * g * b).ln()
            }
        }
    }
}

/// Neumaier summation. Plain summation of a few thousand contributions leaves
/// roundoff that central differences amplify above the gradient tolerance.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0;
    for v in values {
        if !v.is_finite() {
            return v;
        }
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Fails with every violated invariant, grouped by subject id.
pub(crate) fn check_records(records: &[ObservedRecord]) -> Result<()> {
    let bad: Vec<String> = records
        .iter()
        .filter_map(|r| {
            let v = validate_record(r);
            (!v.is_empty()).then(|| {
                let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                format!("{}: {}", r.id, msgs.join("; "))
            })
        })
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(bad.join("\n")))
    }
}

/// `P01(s, t)` for the likelihood: closed form for piecewise-constant models,
/// fixed-panel quadrature otherwise.
fn p01_between(model: &IllnessDeathModel, s: f64, t: f64, rule: &GaussLegendre) -> f64 {
    match (&model.h01, &model.h02, &model.h12) {
        (Hazard::Piecewise(a), Hazard::Piecewise(b), Hazard::Piecewise(c)) => pwc_block(a, b, c, s, t).p01,
        _ => p01_fixed(model, s, t, rule),
    }
}

/// Log-likelihood of `model` for `records`. Zero-probability subjects make
/// the value `-inf`; they are logged at debug level.
pub fn ic_loglik(model: &IllnessDeathModel, records: &[ObservedRecord]) -> Result<f64> {
    if model.hazards().iter().any(|h| h.is_step()) {
        return Err(Error::Argument("likelihood needs hazards with pointwise rates".into()));
    }
    let data = IcData::new(records)?;
    let v = data.loglik(model);
    if !v.is_finite() {
        log::debug!("zero-probability subjects: {:?}", data.impossible_subjects(model));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transprob;
    use approx::assert_relative_eq;

    fn constant() -> IllnessDeathModel {
        IllnessDeathModel::constant(0.2, 0.3, 1.0).unwrap()
    }

    #[test]
    fn censored_at_last_visit() {
        let r = ObservedRecord::new("a", vec![0.0, 1.0, 2.0], vec![false; 3], 2.0, false);
        let v = ic_loglik(&constant(), &[r]).unwrap();
        assert_relative_eq!(v, -0.5 * 2.0, max_relative = 1e-14);
    }

    #[test]
    fn died_disease_free_matches_closed_form() {
        let r = ObservedRecord::new("b", vec![0.0], vec![false], 1.0, true);
        let v = ic_loglik(&constant(), &[r]).unwrap();
        let p01 = 0.2 * ((-0.5f64).exp() - (-1.0f64).exp()) / 0.5;
        let expected = ((-0.5f64).exp() * 0.3 + p01 * 1.0).ln();
        assert_relative_eq!(v, expected, max_relative = 1e-12);
        assert_relative_eq!(v.exp(), 0.2775, epsilon = 1e-4);
    }

    #[test]
    fn diagnosed_patterns() {
        let m = IllnessDeathModel::weibull_common_shape(0.5, 0.05, 0.05, 0.56).unwrap();
        let cens = ObservedRecord::new("c", vec![0.0, 3.0, 6.0], vec![false, false, true], 7.5, false);
        let died = ObservedRecord { died: true, id: "d".into(), ..cens.clone() };
        let expected_c = transprob::p00(&m, 0.0, 3.0).unwrap()
            * transprob::p01(&m, 3.0, 6.0).unwrap()
            * transprob::p11(&m, 6.0, 7.5).unwrap();
        let vc = ic_loglik(&m, &[cens]).unwrap();
        assert!((vc - expected_c.ln()).abs() < 1e-9);
        let vd = ic_loglik(&m, &[died]).unwrap();
        let l12 = m.h12.hazard_at(7.5).unwrap();
        assert!((vd - (expected_c * l12).ln()).abs() < 1e-9);
    }

    #[test]
    fn impossible_diagnosis_gives_minus_infinity() {
        let m = IllnessDeathModel::constant(0.0, 0.3, 1.0).unwrap();
        let r = ObservedRecord::new("x", vec![0.0, 3.0], vec![false, true], 4.0, false);
        let ok = ObservedRecord::new("y", vec![0.0, 3.0], vec![false, false], 4.0, false);
        assert_eq!(ic_loglik(&m, &[ok.clone(), r.clone()]).unwrap(), f64::NEG_INFINITY);
        let data = IcData::new(&[ok, r]).unwrap();
        assert_eq!(data.impossible_subjects(&m), vec!["x".to_string()]);
    }

    #[test]
    fn depends_only_on_interval_summary() {
        let m = constant();
        let a = ObservedRecord::new("a", vec![0.0, 1.0, 2.0, 3.0], vec![false, false, true, true], 3.5, true);
        let b = ObservedRecord::new("b", vec![0.0, 1.0, 2.0], vec![false, false, true], 3.5, true);
        let c = ObservedRecord::new("c", vec![0.0, 1.0, 2.0], vec![false, false, false], 2.5, false);
        let d = IcData::new(&[a, b, c.clone()]).unwrap();
        let v = d.contributions(&m);
        assert_eq!(v[0], v[1]);
        assert_eq!(d.interval_count(), 1);
        let fwd = ic_loglik(&m, &[c.clone(), c.clone()]).unwrap();
        assert_relative_eq!(fwd, 2.0 * ic_loglik(&m, &[c]).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn running_integral_matches_per_subject_quadrature() {
        let cfg = crate::simulate::scenario("C").unwrap().with_seed(11);
        let records = crate::simulate::generate_dataset(&cfg).unwrap().records;
        let data = IcData::new(&records).unwrap();
        for (k, a12) in [(0.5, 0.56), (1.3, 0.02), (0.3, 2.0)] {
            let m = IllnessDeathModel::new(
                Hazard::weibull(0.05, k).unwrap(),
                Hazard::weibull(0.03, 0.8 * k).unwrap(),
                Hazard::weibull(a12, k).unwrap(),
            );
            let fast = data.contributions(&m);
            let direct = data.direct_contributions(&m);
            for (f, d) in fast.iter().zip(&direct) {
                assert!((f - d).abs() < 1e-9 * d.abs().max(1.0), "k={k}: {f} vs {d}");
            }
        }
    }

    #[test]
    fn diagnosis_lag_closed_forms() {
        // with l12 = l02 before diagnosis, P01(L,R) = exp(-l02 d) (1 - exp(-l01 d))
        let m = constant();
        let diag = ObservedRecord::new("a", vec![0.0, 1.0, 2.0], vec![false, false, true], 3.0, false);
        let undiag = ObservedRecord::new("b", vec![0.0, 1.0], vec![false, false], 2.0, true);
        let data = IcData::new(&[diag, undiag]).unwrap().with_diagnosis_lag();
        let v = data.contributions(&m);
        let expected_a = -0.5 - 0.3 + (1.0 - (-0.2f64).exp()).ln() - 1.0;
        assert_relative_eq!(v[0], expected_a, max_relative = 1e-12);
        let expected_b = -0.5 - 0.3 + 0.3f64.ln();
        assert_relative_eq!(v[1], expected_b, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(IcData::new(&[]), Err(Error::Fit(m)) if m == "no data"));
        let r = ObservedRecord::new("z", vec![0.0, 1.0, 2.0], vec![false, true, false], 3.0, false);
        assert!(matches!(IcData::new(&[r]), Err(Error::Validation(m)) if m.contains("z")));
    }
}
