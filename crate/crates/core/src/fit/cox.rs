use super::likelihood::check_records;
use crate::error::{Error, Result};
use crate::hazards::StepCumulativeHazard;
use crate::record::ObservedRecord;
use crate::transprob::{product_integral, TransitionMatrix, TransitionModel};

/// Risk-set composition at one death time. The marker is 1 from the first
/// positive visit onwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSetCounts {
    pub time: f64,
    /// At risk with marker 0 / marker 1.
    pub n0: usize,
    pub n1: usize,
    /// Deaths with marker 0 / marker 1.
    pub d0: usize,
    pub d1: usize,
}

impl RiskSetCounts {
    fn deaths(&self) -> f64 {
        (self.d0 + self.d1) as f64
    }
}

/// Cox model for death with the disease marker as a time-dependent covariate,
/// plus Nelson-Aalen for diagnosis, read as an illness-death model.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxTdFit {
    pub beta: f64,
    pub se_beta: f64,
    pub loglik: f64,
    pub iterations: usize,
    /// Breslow cumulative baseline hazard (marker 0).
    pub baseline02: StepCumulativeHazard,
    /// Nelson-Aalen for diagnosis, taking first positive visits as exact.
    pub cumhaz01: StepCumulativeHazard,
    /// `exp(beta)` times the baseline.
    pub cumhaz12: StepCumulativeHazard,
    pub risk_sets: Vec<RiskSetCounts>,
}

impl CoxTdFit {
    pub fn hazard_ratio(&self) -> f64 {
        self.beta.exp()
    }

    /// Risk set at the last death time not after `t`.
    pub fn risk_set_at(&self, t: f64) -> Option<&RiskSetCounts> {
        let n = self.risk_sets.partition_point(|r| r.time <= t);
        n.checked_sub(1).map(|i| &self.risk_sets[i])
    }
}

fn breslow_terms(risk_sets: &[RiskSetCounts], beta: f64) -> (f64, f64, f64) {
    let w = beta.exp();
    let (mut ll, mut score, mut info) = (0.0, 0.0, 0.0);
    for r in risk_sets {
        let (n0, n1, d) = (r.n0 as f64, r.n1 as f64, r.deaths());
        let denom = n0 + n1 * w;
        ll += r.d1 as f64 * beta - d * denom.ln();
        score += r.d1 as f64 - d * n1 * w / denom;
        info += d * n0 * n1 * w / (denom * denom);
    }
    (ll, score, info)
}

fn death_risk_sets(records: &[ObservedRecord]) -> Vec<RiskSetCounts> {
    let mut times: Vec<f64> = records.iter().filter(|r| r.died).map(|r| r.survival_time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .into_iter()
        .map(|u| {
            let mut c = RiskSetCounts { time: u, n0: 0, n1: 0, d0: 0, d1: 0 };
            for r in records.iter().filter(|r| r.survival_time >= u) {
                let marked = r.marker_at(u) == 1;
                let dies = r.died && r.survival_time == u;
                match (marked, dies) {
                    (true, true) => {
                        c.n1 += 1;
                        c.d1 += 1;
                    }
                    (true, false) => c.n1 += 1,
                    (false, true) => {
                        c.n0 += 1;
                        c.d0 += 1;
                    }
                    (false, false) => c.n0 += 1,
                }
            }
            c
        })
        .collect()
}

/// Nelson-Aalen estimator from at-risk spells `(entry, exit, event)`: a
/// spell is at risk on `(entry, exit]` and has its event, if any, at `exit`.
pub fn nelson_aalen(spells: &[(f64, f64, bool)]) -> Result<StepCumulativeHazard> {
    let mut entries: Vec<f64> = spells.iter().map(|s| s.0).collect();
    let mut exits: Vec<f64> = spells.iter().map(|s| s.1).collect();
    let mut events: Vec<f64> = spells.iter().filter(|s| s.2).map(|s| s.1).collect();
    entries.sort_by(f64::total_cmp);
    exits.sort_by(f64::total_cmp);
    events.sort_by(f64::total_cmp);
    let mut times = Vec::new();
    let mut increments = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let u = events[i];
        let d = events[i..].iter().take_while(|&&e| e == u).count();
        let at_risk = entries.partition_point(|&e| e < u) - exits.partition_point(|&e| e < u);
        times.push(u);
        increments.push(d as f64 / at_risk as f64);
        i += d;
    }
    StepCumulativeHazard::new(times, increments)
}

/// At-risk spells per transition (0->1, 0->2, 1->2), taking the first
/// positive visit as the illness time.
pub fn transition_spells(records: &[ObservedRecord]) -> [Vec<(f64, f64, bool)>; 3] {
    let mut out: [Vec<(f64, f64, bool)>; 3] = Default::default();
    for r in records {
        let t = r.survival_time;
        match r.first_positive {
            Some(rp) => {
                out[0].push((0.0, rp, true));
                out[1].push((0.0, rp, false));
                out[2].push((rp, t, r.died));
            }
            None => {
                out[0].push((0.0, t, false));
                out[1].push((0.0, t, r.died));
            }
        }
    }
    out
}

/// Nelson-Aalen cumulative hazards of the three transitions.
pub fn nelson_aalen_transitions(records: &[ObservedRecord]) -> Result<[StepCumulativeHazard; 3]> {
    let [a, b, c] = transition_spells(records);
    Ok([nelson_aalen(&a)?, nelson_aalen(&b)?, nelson_aalen(&c)?])
}

/// Fits the Cox model by Newton's method on the Breslow partial likelihood.
pub fn fit_cox_td(records: &[ObservedRecord]) -> Result<CoxTdFit> {
    if records.is_empty() {
        return Err(Error::Fit("no data".into()));
    }
    check_records(records)?;
    let risk_sets = death_risk_sets(records);
    if risk_sets.is_empty() {
        return Err(Error::Fit("no deaths".into()));
    }
    if risk_sets.iter().all(|r| r.n0 == 0 || r.n1 == 0) {
        return Err(Error::Fit("marker constant in every risk set".into()));
    }

    let mut beta = 0.0;
    let (mut ll, mut score, mut info) = breslow_terms(&risk_sets, beta);
    let mut iterations = 0;
    // a monotone partial likelihood keeps the Newton step near 1 while beta drifts off
    while (score / info).abs() > 1e-10 {
        if iterations == 100 || beta.abs() > 50.0 {
            return Err(Error::Fit(format!("Cox partial likelihood did not converge (score {score:e}, beta {beta})")));
        }
        iterations += 1;
        let mut step = score / info;
        loop {
            let next = breslow_terms(&risk_sets, beta + step);
            // near the root the change in ll is below its roundoff
            if next.0 >= ll - 1e-12 * (1.0 + ll.abs()) || step.abs() < 1e-14 {
                beta += step;
                (ll, score, info) = next;
                break;
            }
            step *= 0.5;
        }
    }

    if beta.abs() > 30.0 {
        return Err(Error::Fit(format!("partial likelihood has no finite maximum (beta drifted to {beta})")));
    }
    let w = beta.exp();
    let (times, increments): (Vec<f64>, Vec<f64>) =
        risk_sets.iter().map(|r| (r.time, r.deaths() / (r.n0 as f64 + r.n1 as f64 * w))).unzip();
    let baseline02 = StepCumulativeHazard::new(times, increments)?;
    let cumhaz12 = baseline02.scaled(w)?;
    Ok(CoxTdFit {
        beta,
        se_beta: 1.0 / info.sqrt(),
        loglik: ll,
        iterations,
        baseline02,
        cumhaz01: nelson_aalen(&transition_spells(records)[0])?,
        cumhaz12,
        risk_sets,
    })
}

impl TransitionModel for CoxTdFit {
    fn transition_matrix(&self, s: f64, t: f64) -> Result<TransitionMatrix> {
        Ok(product_integral(&self.cumhaz01, &self.baseline02, &self.cumhaz12, s, t, true)?.matrix)
    }

    /// Excludes the jumps at `t`.
    fn transition_matrix_left(&self, s: f64, t: f64) -> Result<TransitionMatrix> {
        Ok(product_integral(&self.cumhaz01, &self.baseline02, &self.cumhaz12, s, t, false)?.matrix)
    }

    /// The baseline has no pointwise rate; returns `(1, exp(beta))`, which
    /// carries the only information the AUC identities use, the ratio.
    fn death_intensities(&self, _t: f64) -> Result<(f64, f64)> {
        Ok((1.0, self.hazard_ratio()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{generate_dataset, scenario};

    fn rec(id: &str, visits: &[f64], first_pos: Option<usize>, t: f64, died: bool) -> ObservedRecord {
        let marker = (0..visits.len()).map(|i| first_pos.is_some_and(|f| i >= f)).collect();
        ObservedRecord::new(id, visits.to_vec(), marker, t, died)
    }

    #[test]
    fn hand_computed_root() {
        // deaths at 3 (unmarked, risk set 2 unmarked + 1 marked) and 4
        // (marked, risk set 1 + 1): score -x/(2+x) + 1/(1+x) = 0 gives x = sqrt 2
        let records = [
            rec("a", &[0.0, 1.0], Some(1), 4.0, true),
            rec("b", &[0.0, 1.0], None, 3.0, true),
            rec("c", &[0.0, 1.0, 2.0], None, 5.0, false),
        ];
        let fit = fit_cox_td(&records).unwrap();
        assert!((fit.beta - 0.5 * 2f64.ln()).abs() < 1e-8, "{}", fit.beta);
        assert_eq!(fit.risk_sets.len(), 2);
        assert_eq!((fit.risk_sets[0].n0, fit.risk_sets[0].n1), (2, 1));
        let x = 2f64.sqrt();
        let inc = [1.0 / (2.0 + x), 1.0 / (1.0 + x)];
        assert!((fit.baseline02.increments()[0] - inc[0]).abs() < 1e-12);
        assert!((fit.cumhaz12.increments()[1] - x * inc[1]).abs() < 1e-12);
        // diagnosis at 1 with all three at risk
        assert_eq!(fit.cumhaz01.jump_times(), &[1.0]);
        assert!((fit.cumhaz01.increments()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        let undiagnosed = [rec("a", &[0.0, 3.0], None, 4.0, true), rec("b", &[0.0, 3.0], None, 6.0, false)];
        let err = fit_cox_td(&undiagnosed).unwrap_err();
        assert!(err.to_string().contains("marker constant in every risk set"), "{err}");
        let alive = [rec("a", &[0.0, 3.0], Some(1), 4.0, false)];
        assert!(fit_cox_td(&alive).unwrap_err().to_string().contains("no deaths"));
        // all marked subjects die first: no finite maximum
        let separated = [rec("a", &[0.0, 1.0], Some(1), 4.0, true), rec("b", &[0.0, 1.0, 2.0], None, 5.0, false)];
        assert!(fit_cox_td(&separated).is_err());
        assert!(fit_cox_td(&[]).is_err());
    }

    #[test]
    fn underestimates_hazard_ratio_on_simulated_data() {
        let cfg = scenario("G").unwrap().with_seed(17);
        let data = generate_dataset(&cfg).unwrap();
        let fit = fit_cox_td(&data.records).unwrap();
        let hr = fit.hazard_ratio();
        assert!((9.5..=12.5).contains(&hr), "{hr}");
    }

    #[test]
    fn nelson_aalen_counts() {
        // at 2: 3 at risk, 1 event; at 4: 1 at risk (one left at 3), 1 event
        let na = nelson_aalen(&[(0.0, 2.0, true), (0.0, 3.0, false), (1.0, 4.0, true)]).unwrap();
        assert_eq!(na.jump_times(), &[2.0, 4.0]);
        assert!((na.increments()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(na.increments()[1], 1.0);
        assert!(nelson_aalen(&[]).unwrap().is_empty());
    }

    #[test]
    fn left_limit_excludes_jumps_at_t() {
        let records = [
            rec("a", &[0.0, 1.0], Some(1), 4.0, true),
            rec("b", &[0.0, 1.0], None, 3.0, true),
            rec("c", &[0.0, 1.0, 2.0], None, 5.0, false),
        ];
        let fit = fit_cox_td(&records).unwrap();
        let left = fit.transition_matrix_left(0.0, 1.0).unwrap();
        assert_eq!(left.p[0][1], 0.0);
        let right = fit.transition_matrix(0.0, 1.0).unwrap();
        assert!((right.p[0][1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(fit.risk_set_at(3.5).unwrap().time, 3.0);
        assert!(fit.risk_set_at(2.0).is_none());
    }
}
