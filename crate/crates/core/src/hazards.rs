//! Transition hazard families: Weibull, piecewise-constant and nonparametric
//! step (cumulative) hazards.

use crate::error::{Error, Result};

/// Weibull hazard `alpha * k * t^(k-1)`, cumulative hazard `alpha * t^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullHazard {
    pub alpha: f64,
    pub k: f64,
}

impl WeibullHazard {
    pub fn new(alpha: f64, k: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && k > 0.0 && k.is_finite()) {
            return Err(Error::Argument(format!(
                "Weibull parameters must be positive and finite (alpha={alpha}, k={k})"
            )));
        }
        Ok(Self { alpha, k })
    }

    #[inline]
    pub(crate) fn cumulative_unchecked(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            self.alpha * t.powf(self.k)
        }
    }

    #[inline]
    pub(crate) fn rate_unchecked(&self, t: f64) -> f64 {
        self.alpha * self.k * t.powf(self.k - 1.0)
    }
}

/// Hazard that is constant on `[c_{j-1}, c_j)`, with `c_0 = 0` and the last
/// segment open to the right.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantHazard {
    cutpoints: Vec<f64>,
    rates: Vec<f64>,
    // cumulative hazard at each cutpoint
    cum_at_cut: Vec<f64>,
}

impl PiecewiseConstantHazard {
    pub fn new(cutpoints: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != cutpoints.len() + 1 {
            return Err(Error::Argument(format!(
                "{} cutpoints need {} rates, got {}",
                cutpoints.len(),
                cutpoints.len() + 1,
                rates.len()
            )));
        }
        if cutpoints.iter().any(|c| !(c.is_finite() && *c > 0.0)) || cutpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("cutpoints must be positive, finite and strictly ascending".into()));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Argument("rates must be nonnegative and finite".into()));
        }
        let mut cum_at_cut = Vec::with_capacity(cutpoints.len());
        let mut acc = 0.0;
        let mut prev = 0.0;
        for (c, r) in cutpoints.iter().zip(&rates) {
            acc += r * (c - prev);
            cum_at_cut.push(acc);
            prev = *c;
        }
        Ok(Self { cutpoints, rates, cum_at_cut })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![rate])
    }

    pub fn cutpoints(&self) -> &[f64] {
        &self.cutpoints
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Index of the segment containing `t` (left-closed segments).
    #[inline]
    pub fn segment(&self, t: f64) -> usize {
        self.cutpoints.partition_point(|&c| c <= t)
    }

    #[inline]
    pub(crate) fn rate_unchecked(&self, t: f64) -> f64 {
        self.rates[self.segment(t)]
    }

    #[inline]
    pub(crate) fn cumulative_unchecked(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let j = self.segment(t);
        let (base, start) = if j == 0 { (0.0, 0.0) } else { (self.cum_at_cut[j - 1], self.cutpoints[j - 1]) };
        base + self.rates[j] * (t - start)
    }

    /// Returns a copy with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.cutpoints.clone(), self.rates.iter().map(|r| r * factor).collect())
    }
}

/// Right-continuous step cumulative hazard (Nelson-Aalen / Breslow style).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepCumulativeHazard {
    jump_times: Vec<f64>,
    increments: Vec<f64>,
    cumulative: Vec<f64>,
}

impl StepCumulativeHazard {
    pub fn new(jump_times: Vec<f64>, increments: Vec<f64>) -> Result<Self> {
        if jump_times.len() != increments.len() {
            return Err(Error::Argument("jump_times and increments differ in length".into()));
        }
        if jump_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("jump times must be strictly ascending".into()));
        }
        if increments.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Argument("increments must be nonnegative".into()));
        }
        let cumulative = increments
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect();
        Ok(Self { jump_times, increments, cumulative })
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.jump_times.clone(), self.increments.iter().map(|d| d * factor).collect())
    }

    #[inline]
    pub(crate) fn cumulative_unchecked(&self, t: f64) -> f64 {
        let n = self.jump_times.partition_point(|&u| u <= t);
        if n == 0 {
            0.0
        } else {
            self.cumulative[n - 1]
        }
    }

    /// Jumps `(time, increment)` with `s < time <= t`, or `s < time < t` when
    /// `include_end` is false.
    pub fn jumps_in(&self, s: f64, t: f64, include_end: bool) -> impl Iterator<Item = (f64, f64)> + '_ {
        let lo = self.jump_times.partition_point(|&u| u <= s);
        let hi = if include_end {
            self.jump_times.partition_point(|&u| u <= t)
        } else {
            self.jump_times.partition_point(|&u| u < t)
        };
        let hi = hi.max(lo);
        self.jump_times[lo..hi].iter().copied().zip(self.increments[lo..hi].iter().copied())
    }
}

/// A transition hazard of any supported family.
#[derive(Debug, Clone, PartialEq)]
pub enum Hazard {
    Weibull(WeibullHazard),
    Piecewise(PiecewiseConstantHazard),
    Step(StepCumulativeHazard),
}

impl From<WeibullHazard> for Hazard {
    fn from(h: WeibullHazard) -> Self {
        Hazard::Weibull(h)
    }
}

impl From<PiecewiseConstantHazard> for Hazard {
    fn from(h: PiecewiseConstantHazard) -> Self {
        Hazard::Piecewise(h)
    }
}

impl From<StepCumulativeHazard> for Hazard {
    fn from(h: StepCumulativeHazard) -> Self {
        Hazard::Step(h)
    }
}

impl Hazard {
    pub fn weibull(alpha: f64, k: f64) -> Result<Self> {
        WeibullHazard::new(alpha, k).map(Hazard::Weibull)
    }

    pub fn constant(rate: f64) -> Result<Self> {
        PiecewiseConstantHazard::constant(rate).map(Hazard::Piecewise)
    }

    pub fn piecewise(cutpoints: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        PiecewiseConstantHazard::new(cutpoints, rates).map(Hazard::Piecewise)
    }

    /// Instantaneous rate at `t`.
    pub fn hazard_at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Argument(format!("time must be nonnegative and finite, got {t}")));
        }
        match self {
            Hazard::Weibull(w) => {
                if t == 0.0 {
                    if w.k < 1.0 {
                        return Err(Error::Domain("hazard singular at origin".into()));
                    }
                    return Ok(if w.k == 1.0 { w.alpha } else { 0.0 });
                }
                Ok(w.rate_unchecked(t))
            }
            Hazard::Piecewise(p) => Ok(p.rate_unchecked(t)),
            Hazard::Step(_) => Err(Error::Domain("step cumulative hazards have no pointwise rate".into())),
        }
    }

    /// Cumulative hazard accumulated over `(s, t]`.
    pub fn cumulative_hazard(&self, s: f64, t: f64) -> Result<f64> {
        if !(s >= 0.0) || !t.is_finite() {
            return Err(Error::Argument(format!("need 0 <= s <= t, got s={s}, t={t}")));
        }
        if s > t {
            return Err(Error::Argument(format!("interval start {s} exceeds end {t}")));
        }
        if s == t {
            return Ok(0.0);
        }
        Ok((self.cumulative_at(t) - self.cumulative_at(s)).max(0.0))
    }

    /// Cumulative hazard from 0 to `t`, no argument checks.
    #[inline]
    pub(crate) fn cumulative_at(&self, t: f64) -> f64 {
        match self {
            Hazard::Weibull(w) => w.cumulative_unchecked(t),
            Hazard::Piecewise(p) => p.cumulative_unchecked(t),
            Hazard::Step(s) => s.cumulative_unchecked(t),
        }
    }

    /// Rate at `t > 0`, no argument checks; zero for step hazards.
    #[inline]
    pub(crate) fn rate_at(&self, t: f64) -> f64 {
        match self {
            Hazard::Weibull(w) => w.rate_unchecked(t),
            Hazard::Piecewise(p) => p.rate_unchecked(t),
            Hazard::Step(_) => 0.0,
        }
    }

    /// Times where the hazard is not smooth.
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            Hazard::Piecewise(p) => p.cutpoints(),
            Hazard::Step(s) => s.jump_times(),
            Hazard::Weibull(_) => &[],
        }
    }

    pub fn is_step(&self) -> bool {
        matches!(self, Hazard::Step(_))
    }

    /// True when the rate is identically zero.
    pub fn is_zero(&self) -> bool {
        match self {
            Hazard::Weibull(_) => false,
            Hazard::Piecewise(p) => p.rates().iter().all(|&r| r == 0.0),
            Hazard::Step(s) => s.increments().iter().all(|&d| d == 0.0),
        }
    }
}
