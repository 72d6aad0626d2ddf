//! States, true subject trajectories and interval-censored observations.
//!
//! All times are in months. A subject starts disease-free at time 0; disease is
//! irreversible and death is absorbing.

use std::fmt;

/// State of the illness-death process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum State {
    DiseaseFree = 0,
    Diseased = 1,
    Dead = 2,
}

impl State {
    pub const ALL: [State; 3] = [State::DiseaseFree, State::Diseased, State::Dead];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_absorbing(self) -> bool {
        self == State::Dead
    }
}

/// The true, continuous-time trajectory of one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectPath {
    /// Time of the 0 -> 1 transition, absent when the subject died disease-free.
    pub illness_time: Option<f64>,
    pub death_time: f64,
    /// True when the first exit from state 0 was directly to death.
    pub exit_direct: bool,
}

impl SubjectPath {
    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> State {
        if t >= self.death_time {
            State::Dead
        } else if self.illness_time.is_some_and(|ti| t >= ti) {
            State::Diseased
        } else {
            State::DiseaseFree
        }
    }

    /// Disease status just before `t`, the marker value a subject dying at `t` carries.
    pub fn diseased_before(&self, t: f64) -> bool {
        self.illness_time.is_some_and(|ti| ti < t)
    }

    pub fn is_consistent(&self) -> bool {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.death_time) {
            return false;
        }
        match (self.exit_direct, self.illness_time) {
            (true, None) => true,
            (false, Some(ti)) => positive(ti) && ti < self.death_time,
            _ => false,
        }
    }
}

/// Interval-censored observation of one subject: disease status at scheduled
/// visits plus an exactly observed (possibly right-censored) exit time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedRecord {
    pub id: String,
    /// Attended visit times, ascending, starting at 0.
    pub visit_times: Vec<f64>,
    /// Observed disease status at each visit.
    pub marker: Vec<bool>,
    /// Death or censoring time, T*.
    pub survival_time: f64,
    /// True when `survival_time` is a death.
    pub died: bool,
    /// Last visit with a negative screen before the first positive one (L).
    pub last_negative: Option<f64>,
    /// First visit with a positive screen (R).
    pub first_positive: Option<f64>,
}

impl ObservedRecord {
    /// Builds a record and derives `last_negative` / `first_positive` from the
    /// marker sequence. No invariants are checked here; see [`validate_record`].
    pub fn new(
        id: impl Into<String>,
        visit_times: Vec<f64>,
        marker: Vec<bool>,
        survival_time: f64,
        died: bool,
    ) -> Self {
        let first_pos_idx = marker.iter().position(|&m| m);
        let first_positive = first_pos_idx.and_then(|i| visit_times.get(i).copied());
        let last_negative = match first_pos_idx {
            Some(0) => None,
            Some(i) => visit_times.get(i - 1).copied(),
            None => visit_times.last().copied(),
        };
        Self { id: id.into(), visit_times, marker, survival_time, died, last_negative, first_positive }
    }

    pub fn death_indicator(&self) -> u8 {
        u8::from(self.died)
    }

    pub fn is_diagnosed(&self) -> bool {
        self.first_positive.is_some()
    }

    /// Observed disease marker at `t` under the diagnosis-time convention:
    /// 1 from the first positive visit onwards.
    pub fn marker_at(&self, t: f64) -> u8 {
        u8::from(self.first_positive.is_some_and(|r| r <= t))
    }
}

/// Marker value of `record` at time `t`; see [`ObservedRecord::marker_at`].
pub fn marker_at(record: &ObservedRecord, t: f64) -> u8 {
    record.marker_at(t)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoVisits,
    FirstVisitNotAtOrigin(f64),
    VisitsNotAscending { index: usize },
    MarkerLengthMismatch { visits: usize, markers: usize },
    PositiveAtBaseline,
    MarkerNotMonotone { index: usize },
    VisitAfterExit { visit: f64, exit: f64 },
    InvalidSurvivalTime(f64),
    FirstPositiveMismatch,
    LastNegativeMismatch,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoVisits => write!(f, "no visits recorded"),
            Violation::FirstVisitNotAtOrigin(t) => write!(f, "first visit at {t}, expected 0"),
            Violation::VisitsNotAscending { index } => {
                write!(f, "visit times not strictly ascending at position {index}")
            }
            Violation::MarkerLengthMismatch { visits, markers } => {
                write!(f, "{visits} visits but {markers} marker values")
            }
            Violation::PositiveAtBaseline => write!(f, "positive marker at baseline visit"),
            Violation::MarkerNotMonotone { index } => {
                write!(f, "marker not monotone (returns to 0 at position {index})")
            }
            Violation::VisitAfterExit { visit, exit } => {
                write!(f, "visit after exit (visit {visit} > survival time {exit})")
            }
            Violation::InvalidSurvivalTime(t) => write!(f, "survival time {t} not positive and finite"),
            Violation::FirstPositiveMismatch => {
                write!(f, "first_positive inconsistent with marker sequence")
            }
            Violation::LastNegativeMismatch => {
                write!(f, "last_negative inconsistent with marker sequence")
            }
        }
    }
}

/// Lists every violated record invariant. Never fails.
pub fn validate_record(record: &ObservedRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    let visits = &record.visit_times;

    if !(record.survival_time.is_finite() && record.survival_time > 0.0) {
        out.push(Violation::InvalidSurvivalTime(record.survival_time));
    }
    if visits.is_empty() {
        out.push(Violation::NoVisits);
    } else if visits[0] != 0.0 {
        out.push(Violation::FirstVisitNotAtOrigin(visits[0]));
    }
    if let Some(i) = visits.windows(2).position(|w| !(w[0] < w[1])) {
        out.push(Violation::VisitsNotAscending { index: i + 1 });
    }
    if visits.len() != record.marker.len() {
        out.push(Violation::MarkerLengthMismatch { visits: visits.len(), markers: record.marker.len() });
    }
    if record.marker.first() == Some(&true) {
        out.push(Violation::PositiveAtBaseline);
    }
    if let Some(i) = record.marker.windows(2).position(|w| w[0] && !w[1]) {
        out.push(Violation::MarkerNotMonotone { index: i + 1 });
    }
    if let Some(&v) = visits.iter().find(|&&v| v > record.survival_time) {
        out.push(Violation::VisitAfterExit { visit: v, exit: record.survival_time });
    }

    let derived = ObservedRecord::new("", visits.clone(), record.marker.clone(), record.survival_time, record.died);
    if derived.first_positive != record.first_positive {
        out.push(Violation::FirstPositiveMismatch);
    }
    if derived.last_negative != record.last_negative {
        out.push(Violation::LastNegativeMismatch);
    }
    out
}
