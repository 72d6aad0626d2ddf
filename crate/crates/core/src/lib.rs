//! Illness-death models for interval-censored disease onset.

pub mod auc;
pub mod error;
pub mod fit;
pub mod hazards;
pub mod io;
pub mod quadrature;
pub mod record;
pub mod simulate;
pub mod study;
pub mod transprob;

pub use auc::{auc_cd, auc_id, auc_model_based, AucCurve, AucDefinition, Estimator};
pub use error::{Error, Result};
pub use hazards::{Hazard, PiecewiseConstantHazard, StepCumulativeHazard, WeibullHazard};
pub use record::{marker_at, validate_record, ObservedRecord, State, SubjectPath, Violation};
pub use simulate::{generate_dataset, scenario_table, Censoring, ScenarioConfig, SimulatedDataset, WeibullParams};
pub use study::{performance, run_scenario, study_report, Performance, StudyOptions, StudyResult, Target};
pub use transprob::{IllnessDeathModel, TransitionMatrix, TransitionModel};
