//! Simulation of illness-death trajectories with Weibull transition hazards
//! (common shape) and disease status observed only at scheduled visits.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::record::{ObservedRecord, SubjectPath};
use crate::transprob::IllnessDeathModel;

/// Weibull rates with a shared shape `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullParams {
    pub k: f64,
    pub alpha01: f64,
    pub alpha02: f64,
    pub alpha12: f64,
}

impl WeibullParams {
    /// Values used throughout the simulation study.
    pub const STUDY: WeibullParams = WeibullParams { k: 0.5, alpha01: 0.05, alpha02: 0.05, alpha12: 0.56 };

    pub fn model(&self) -> Result<IllnessDeathModel> {
        IllnessDeathModel::weibull_common_shape(self.k, self.alpha01, self.alpha02, self.alpha12)
    }

    /// Hazard ratio of death with versus without disease, constant under a common shape.
    pub fn hazard_ratio(&self) -> f64 {
        self.alpha12 / self.alpha02
    }

    /// Inverse-transform draw of the first exit time from state 0.
    pub fn first_exit_time(&self, u1: f64) -> f64 {
        (-u1.ln() / (self.alpha01 + self.alpha02)).powf(1.0 / self.k)
    }

    /// Inverse-transform draw of the death time given illness at `illness_time`.
    pub fn death_after_illness(&self, illness_time: f64, u2: f64) -> f64 {
        (illness_time.powf(self.k) - u2.ln() / self.alpha12).powf(1.0 / self.k)
    }

    pub fn illness_probability(&self) -> f64 {
        self.alpha01 / (self.alpha01 + self.alpha02)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Censoring {
    /// Follow-up ends at `y` for everyone.
    Administrative { y: f64 },
    /// Censoring time drawn from Uniform(a, y).
    UniformRandom { a: f64, y: f64 },
}

impl Censoring {
    pub fn end(&self) -> f64 {
        match *self {
            Censoring::Administrative { y } | Censoring::UniformRandom { y, .. } => y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_subjects: usize,
    pub censoring: Censoring,
    /// Months between scheduled visits (tau).
    pub visit_interval: f64,
    /// Total follow-up length y; the visit grid runs 0, tau, 2 tau, ... <= y.
    pub followup_length: f64,
    pub weibull: WeibullParams,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        let (tau, y) = (self.visit_interval, self.followup_length);
        if !(tau > 0.0 && tau <= y && y.is_finite()) {
            return bad(format!("need 0 < visit interval <= follow-up, got {tau} and {y}"));
        }
        match self.censoring {
            Censoring::Administrative { y } if !(y > 0.0 && y.is_finite()) => {
                return bad(format!("administrative censoring time {y} must be positive"));
            }
            Censoring::UniformRandom { a, y } if !(0.0 <= a && a < y && y.is_finite()) => {
                return bad(format!("uniform censoring needs 0 <= a < y, got a={a}, y={y}"));
            }
            _ => {}
        }
        let w = self.weibull;
        if [w.k, w.alpha01, w.alpha02, w.alpha12].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("Weibull parameters must be positive".into());
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Scheduled visit times 0, tau, 2 tau, ... up to the follow-up length.
    pub fn visit_grid(&self) -> Vec<f64> {
        let n = (self.followup_length / self.visit_interval + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * self.visit_interval).collect()
    }
}

/// Censors a true path and maps it onto the visit grid.
pub fn observe(id: impl Into<String>, path: &SubjectPath, censor_time: f64, grid: &[f64]) -> ObservedRecord {
    let died = path.death_time <= censor_time;
    let survival_time = path.death_time.min(censor_time);
    let visits: Vec<f64> = grid.iter().copied().filter(|&v| v <= survival_time).collect();
    let marker = match path.illness_time {
        Some(t1) if t1 <= survival_time => visits.iter().map(|&v| v >= t1).collect(),
        _ => vec![false; visits.len()],
    };
    ObservedRecord::new(id, visits, marker, survival_time, died)
}

/// True trajectory from three uniforms (`u_exit` picks the exit route).
pub fn path_from_uniforms(params: &WeibullParams, u1: f64, u_exit: f64, u2: f64) -> SubjectPath {
    let t1 = params.first_exit_time(u1);
    if u_exit < params.illness_probability() {
        SubjectPath { illness_time: Some(t1), death_time: params.death_after_illness(t1, u2), exit_direct: false }
    } else {
        SubjectPath { illness_time: None, death_time: t1, exit_direct: true }
    }
}

/// Draws a true path from `rng`.
pub fn draw_path<R: Rng + ?Sized>(params: &WeibullParams, rng: &mut R) -> SubjectPath {
    let u1: f64 = rng.sample(Open01);
    let u_exit: f64 = rng.gen();
    let t1 = params.first_exit_time(u1);
    if u_exit < params.illness_probability() {
        let u2: f64 = rng.sample(Open01);
        SubjectPath { illness_time: Some(t1), death_time: params.death_after_illness(t1, u2), exit_direct: false }
    } else {
        SubjectPath { illness_time: None, death_time: t1, exit_direct: true }
    }
}

/// One subject: true path, censoring and visit-grid observation.
pub fn draw_subject<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    id: impl Into<String>,
    rng: &mut R,
) -> (SubjectPath, ObservedRecord) {
    let path = draw_path(&config.weibull, rng);
    let censor_time = match config.censoring {
        Censoring::Administrative { y } => y,
        Censoring::UniformRandom { a, y } => rng.gen_range(a..y),
    };
    let record = observe(id, &path, censor_time, &config.visit_grid());
    (path, record)
}

/// Independent random stream for subject `index` of the dataset seeded by `seed`.
pub fn subject_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub paths: Vec<SubjectPath>,
    pub records: Vec<ObservedRecord>,
}

impl SimulatedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Simulates `n_subjects` independent subjects. Output depends only on the
/// configuration (including its seed), not on thread scheduling.
pub fn generate_dataset(config: &ScenarioConfig) -> Result<SimulatedDataset> {
    config.validate()?;
    let (paths, records) = (0..config.n_subjects as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = subject_rng(config.seed, i);
            draw_subject(config, (i + 1).to_string(), &mut rng)
        })
        .unzip();
    Ok(SimulatedDataset { paths, records })
}

/// True paths only, for Monte-Carlo oracles.
pub fn simulate_paths(params: &WeibullParams, n: usize, seed: u64) -> Vec<SubjectPath> {
    const CHUNK: usize = 1 << 14;
    (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = subject_rng(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(move |_| draw_path(params, &mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// The 18 scenarios A-R: sample size, censoring scheme and visit interval.
pub fn scenario_table() -> Vec<ScenarioConfig> {
    let mut out = Vec::with_capacity(18);
    let names = "ABCDEFGHIJKLMNOPQR".chars();
    let mut names = names.map(|c| c.to_string());
    for n in [1000, 2000, 400] {
        for censoring in [Censoring::UniformRandom { a: 60.0, y: 120.0 }, Censoring::Administrative { y: 120.0 }] {
            for tau in [3.0, 6.0, 12.0] {
                out.push(ScenarioConfig {
                    name: names.next().expect("18 names"),
                    n_subjects: n,
                    censoring,
                    visit_interval: tau,
                    followup_length: 120.0,
                    weibull: WeibullParams::STUDY,
                    seed: 0,
                });
            }
        }
    }
    out
}

pub fn scenario(name: &str) -> Option<ScenarioConfig> {
    scenario_table().into_iter().find(|s| s.name.eq_ignore_ascii_case(name))
}
