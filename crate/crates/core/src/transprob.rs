//! Transition probabilities `P_hl(s, t)` of the Markov illness-death process.
//!
//! Three backends:
//! - smooth hazards: closed forms for `P00`, `P11` and adaptive quadrature for
//!   the convolution giving `P01`;
//! - piecewise-constant hazards: products of closed-form 3x3 matrix exponentials;
//! - step (nonparametric) cumulative hazards: the Aalen-Johansen product-integral.

use std::fmt;

use crate::error::{Error, Result};
use crate::hazards::{Hazard, StepCumulativeHazard};
use crate::quadrature::{integrate_adaptive, AdaptiveOptions, GaussLegendre};
use crate::record::State;

/// Absolute tolerance for the `P01` convolution integral.
pub const P01_ABS_TOL: f64 = 1e-8;

/// Three transition hazards 0->1, 0->2 and 1->2.
#[derive(Debug, Clone, PartialEq)]
pub struct IllnessDeathModel {
    pub h01: Hazard,
    pub h02: Hazard,
    pub h12: Hazard,
}

impl IllnessDeathModel {
    pub fn new(h01: impl Into<Hazard>, h02: impl Into<Hazard>, h12: impl Into<Hazard>) -> Self {
        Self { h01: h01.into(), h02: h02.into(), h12: h12.into() }
    }

    /// Weibull hazards with a shared shape, the data-generating model of the
    /// simulation study.
    pub fn weibull_common_shape(k: f64, alpha01: f64, alpha02: f64, alpha12: f64) -> Result<Self> {
        Ok(Self::new(Hazard::weibull(alpha01, k)?, Hazard::weibull(alpha02, k)?, Hazard::weibull(alpha12, k)?))
    }

    pub fn constant(l01: f64, l02: f64, l12: f64) -> Result<Self> {
        Ok(Self::new(Hazard::constant(l01)?, Hazard::constant(l02)?, Hazard::constant(l12)?))
    }

    pub fn hazards(&self) -> [&Hazard; 3] {
        [&self.h01, &self.h02, &self.h12]
    }

    pub fn is_piecewise(&self) -> bool {
        self.hazards().iter().all(|h| matches!(h, Hazard::Piecewise(_)))
    }

    fn has_step(&self) -> bool {
        self.hazards().iter().any(|h| h.is_step())
    }

    #[inline]
    pub(crate) fn exit_cumulative(&self, t: f64) -> f64 {
        self.h01.cumulative_at(t) + self.h02.cumulative_at(t)
    }

    /// Sorted, deduplicated breakpoints of all three hazards strictly inside (s, t).
    fn breaks(&self, s: f64, t: f64) -> Vec<f64> {
        let mut b = vec![s];
        let mut inner: Vec<f64> =
            self.hazards().iter().flat_map(|h| h.breakpoints().iter().copied()).filter(|&c| c > s && c < t).collect();
        inner.sort_by(f64::total_cmp);
        inner.dedup();
        b.extend(inner);
        b.push(t);
        b
    }
}

/// 3x3 matrix of transition probabilities over `(s, t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    pub s: f64,
    pub t: f64,
    pub p: [[f64; 3]; 3],
}

impl TransitionMatrix {
    pub fn identity(s: f64, t: f64) -> Self {
        let mut p = [[0.0; 3]; 3];
        for (i, row) in p.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { s, t, p }
    }

    /// Assembles the matrix from `P00`, `P01`, `P11`; the death column is the
    /// complement of each row.
    pub fn from_survival(s: f64, t: f64, p00: f64, p01: f64, p11: f64) -> Self {
        let p02 = (1.0 - p00 - p01).max(0.0);
        let p12 = (1.0 - p11).max(0.0);
        Self { s, t, p: [[p00, p01, p02], [0.0, p11, p12], [0.0, 0.0, 1.0]] }
    }

    pub fn get(&self, from: State, to: State) -> f64 {
        self.p[from.index()][to.index()]
    }

    pub fn row_sums(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.p[i].iter().sum())
    }

    /// Matrix product `self(s, u) * other(u, t)`.
    pub fn then(&self, other: &TransitionMatrix) -> TransitionMatrix {
        let mut p = [[0.0; 3]; 3];
        for (i, row) in p.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.p[i][k] * other.p[k][j]).sum();
            }
        }
        TransitionMatrix { s: self.s, t: other.t, p }
    }

    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((self.p[i][j] - other.p[i][j]).abs());
            }
        }
        m
    }
}

impl fmt::Display for TransitionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "P({}, {}):", self.s, self.t)?;
        for row in &self.p {
            writeln!(f, "  [{:.6}, {:.6}, {:.6}]", row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

fn check_interval(s: f64, t: f64) -> Result<()> {
    if !(s >= 0.0 && s.is_finite() && t.is_finite()) {
        return Err(Error::Argument(format!("need finite 0 <= s <= t, got s={s}, t={t}")));
    }
    if s > t {
        return Err(Error::Argument(format!("interval start {s} exceeds end {t}")));
    }
    Ok(())
}

fn reject_step(model: &IllnessDeathModel) -> Result<()> {
    if model.has_step() {
        return Err(Error::Domain("step cumulative hazards need the product-integral (aalen_johansen)".into()));
    }
    Ok(())
}

/// Probability of staying disease-free and alive over (s, t].
pub fn p00(model: &IllnessDeathModel, s: f64, t: f64) -> Result<f64> {
    check_interval(s, t)?;
    reject_step(model)?;
    if s == t {
        return Ok(1.0);
    }
    Ok((-(model.exit_cumulative(t) - model.exit_cumulative(s))).exp())
}

/// Probability of surviving in the diseased state over (s, t].
pub fn p11(model: &IllnessDeathModel, s: f64, t: f64) -> Result<f64> {
    check_interval(s, t)?;
    reject_step(model)?;
    if s == t {
        return Ok(1.0);
    }
    Ok((-(model.h12.cumulative_at(t) - model.h12.cumulative_at(s))).exp())
}

/// Integrand of the `P01(s, t)` convolution in the original time scale.
#[inline]
fn convolution_integrand(model: &IllnessDeathModel, exit_s: f64, cum12_t: f64, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let log_surv = -(model.exit_cumulative(u) - exit_s) - (cum12_t - model.h12.cumulative_at(u));
    log_surv.exp() * model.h01.rate_at(u)
}

/// First panel `[0, b]` for a Weibull 0->1 hazard, rewritten in `w = u^k`:
/// `lambda01(u) du = alpha01 dw`, which removes the `u^(k-1)` singularity.
#[inline]
fn substituted_integrand(model: &IllnessDeathModel, alpha: f64, inv_k: f64, cum12_t: f64, w: f64) -> f64 {
    let u = if w <= 0.0 { 0.0 } else { w.powf(inv_k) };
    let log_surv = -model.exit_cumulative(u) - (cum12_t - model.h12.cumulative_at(u));
    alpha * log_surv.exp()
}

/// Probability of being diseased at `t` given disease-free at `s`:
/// `int_s^t P00(s,u) lambda01(u) P11(u,t) du`, by adaptive quadrature to
/// absolute tolerance [`P01_ABS_TOL`].
pub fn p01(model: &IllnessDeathModel, s: f64, t: f64) -> Result<f64> {
    p01_with_tolerance(model, s, t, P01_ABS_TOL)
}

pub fn p01_with_tolerance(model: &IllnessDeathModel, s: f64, t: f64, abs_tol: f64) -> Result<f64> {
    check_interval(s, t)?;
    reject_step(model)?;
    if s == t || model.h01.is_zero() {
        return Ok(0.0);
    }
    let exit_s = model.exit_cumulative(s);
    let cum12_t = model.h12.cumulative_at(t);
    let mut breaks = model.breaks(s, t);
    let mut total = 0.0;
    let mut budget = abs_tol;

    if let (true, Hazard::Weibull(w)) = (s == 0.0, &model.h01) {
        let b = breaks[1];
        let inv_k = 1.0 / w.k;
        let first = integrate_adaptive(
            |x| substituted_integrand(model, w.alpha, inv_k, cum12_t, x),
            &[0.0, b.powf(w.k)],
            AdaptiveOptions { abs_tol: 0.5 * abs_tol, rel_tol: 0.0, max_panels: 1000 },
        )?;
        total += first.value;
        budget -= first.error.min(0.5 * abs_tol);
        breaks.remove(0);
    }
    if breaks.len() >= 2 {
        let rest = integrate_adaptive(
            |u| convolution_integrand(model, exit_s, cum12_t, u),
            &breaks,
            AdaptiveOptions { abs_tol: budget, rel_tol: 0.0, max_panels: 1000 },
        )?;
        total += rest.value;
    }
    Ok(total.max(0.0))
}

/// Longest panel used by [`p01_fixed`], in months.
const FIXED_PANEL: f64 = 12.0;
const GRADED_PANELS: usize = 5;

/// `P01(s, t)` with a fixed composite Gauss-Legendre rule whose panels depend
/// only on `(s, t)` and the hazard breakpoints. The value is a smooth function
/// of the hazard parameters, which finite-difference gradients of the
/// likelihood require.
pub(crate) fn p01_fixed(model: &IllnessDeathModel, s: f64, t: f64, rule: &GaussLegendre) -> f64 {
    if t <= s {
        return 0.0;
    }
    let exit_s = model.exit_cumulative(s);
    let cum12_t = model.h12.cumulative_at(t);
    let breaks = model.breaks(s, t);
    let mut total = 0.0;
    for (i, w) in breaks.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let pieces = ((b - a) / FIXED_PANEL).ceil().max(1.0) as usize;
        let width = (b - a) / pieces as f64;
        for j in 0..pieces {
            let lo = a + width * j as f64;
            let hi = if j + 1 == pieces { b } else { lo + width };
            match (&model.h01, i == 0 && j == 0 && s == 0.0) {
                (Hazard::Weibull(wb), true) => {
                    // The other hazards are powers of w with non-integer
                    // exponents; geometric grading towards 0 keeps the rule accurate.
                    let inv_k = 1.0 / wb.k;
                    let top = hi.powf(wb.k);
                    let mut upper = top;
                    for _ in 0..GRADED_PANELS {
                        let lower = upper / 8.0;
                        total +=
                            rule.integrate(|x| substituted_integrand(model, wb.alpha, inv_k, cum12_t, x), lower, upper);
                        upper = lower;
                    }
                    total += rule.integrate(|x| substituted_integrand(model, wb.alpha, inv_k, cum12_t, x), 0.0, upper);
                }
                _ => {
                    total += rule.integrate(|u| convolution_integrand(model, exit_s, cum12_t, u), lo, hi);
                }
            }
        }
    }
    total.max(0.0)
}

/// All transition probabilities over (s, t] by the quadrature backend.
pub fn transition_matrix(model: &IllnessDeathModel, s: f64, t: f64) -> Result<TransitionMatrix> {
    check_interval(s, t)?;
    if s == t {
        return Ok(TransitionMatrix::identity(s, t));
    }
    let a = p00(model, s, t)?;
    let b = p01(model, s, t)?;
    let c = p11(model, s, t)?;
    Ok(TransitionMatrix::from_survival(s, t, a, b, c))
}

/// `x -> expm1(x) / x`, continuous at 0.
#[inline]
fn exprel(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + 0.5 * x
    } else {
        x.exp_m1() / x
    }
}

/// Closed-form `exp(Q d)` for the constant-rate generator with off-diagonal
/// rates `l01`, `l02`, `l12`. Returns `(P00, P01, P11)`.
#[inline]
pub(crate) fn constant_rate_block(l01: f64, l02: f64, l12: f64, d: f64) -> (f64, f64, f64) {
    let exit = l01 + l02;
    let p00 = (-exit * d).exp();
    let p11 = (-l12 * d).exp();
    let gap = l12 - exit;
    let scale = exit.max(l12).max(l01);
    let p01 = if l01 == 0.0 {
        0.0
    } else if gap.abs() < 1e-10 * scale {
        // equal eigenvalues
        l01 * d * p11
    } else if gap >= 0.0 {
        l01 * d * p00 * exprel(-gap * d)
    } else {
        l01 * d * p11 * exprel(gap * d)
    };
    (p00, p01, p11)
}

/// Upper-triangular transition block without the death column, composed as
/// `(P00, P01, P11)` triples.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub p00: f64,
    pub p01: f64,
    pub p11: f64,
}

impl Block {
    pub const IDENTITY: Block = Block { p00: 1.0, p01: 0.0, p11: 1.0 };

    #[inline]
    pub fn then(self, next: Block) -> Block {
        Block { p00: self.p00 * next.p00, p01: self.p00 * next.p01 + self.p01 * next.p11, p11: self.p11 * next.p11 }
    }
}

/// Product of per-segment exponentials for piecewise-constant hazards over (s, t].
pub(crate) fn pwc_block(
    h01: &crate::hazards::PiecewiseConstantHazard,
    h02: &crate::hazards::PiecewiseConstantHazard,
    h12: &crate::hazards::PiecewiseConstantHazard,
    s: f64,
    t: f64,
) -> Block {
    let mut acc = Block::IDENTITY;
    let mut a = s;
    while a < t {
        let next_cut = [h01.cutpoints(), h02.cutpoints(), h12.cutpoints()]
            .iter()
            .filter_map(|cuts| cuts.iter().copied().find(|&c| c > a))
            .fold(f64::INFINITY, f64::min);
        let b = next_cut.min(t);
        let (p00, p01, p11) =
            constant_rate_block(h01.rate_unchecked(a), h02.rate_unchecked(a), h12.rate_unchecked(a), b - a);
        acc = acc.then(Block { p00, p01, p11 });
        a = b;
    }
    acc
}

/// Transition matrix for an all-piecewise-constant model as a product of
/// closed-form matrix exponentials over constant-rate segments.
pub fn pwc_transition_matrix(model: &IllnessDeathModel, s: f64, t: f64) -> Result<TransitionMatrix> {
    check_interval(s, t)?;
    let (Hazard::Piecewise(h01), Hazard::Piecewise(h02), Hazard::Piecewise(h12)) = (&model.h01, &model.h02, &model.h12)
    else {
        return Err(Error::Argument("matrix-exponential backend needs piecewise-constant hazards".into()));
    };
    if s == t {
        return Ok(TransitionMatrix::identity(s, t));
    }
    let b = pwc_block(h01, h02, h12, s, t);
    Ok(TransitionMatrix::from_survival(s, t, b.p00, b.p01, b.p11))
}

/// Result of a product-integral, with the times where an increment had to be
/// truncated to keep rows stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductIntegral {
    pub matrix: TransitionMatrix,
    pub truncated_at: Vec<f64>,
}

/// Aalen-Johansen product-integral `prod (I + dA(u))` over jumps in (s, t].
pub fn aalen_johansen(
    h01: &StepCumulativeHazard,
    h02: &StepCumulativeHazard,
    h12: &StepCumulativeHazard,
    s: f64,
    t: f64,
) -> Result<ProductIntegral> {
    product_integral(h01, h02, h12, s, t, true)
}

/// As [`aalen_johansen`]; with `include_end == false` the jumps at `t` are
/// excluded, giving the left limit `P(s, t-)`.
pub fn product_integral(
    h01: &StepCumulativeHazard,
    h02: &StepCumulativeHazard,
    h12: &StepCumulativeHazard,
    s: f64,
    t: f64,
    include_end: bool,
) -> Result<ProductIntegral> {
    if !(s.is_finite() && t.is_finite()) || s > t {
        return Err(Error::Argument(format!("need s <= t, got s={s}, t={t}")));
    }
    let mut jumps: Vec<(f64, usize, f64)> = Vec::new();
    for (idx, h) in [h01, h02, h12].into_iter().enumerate() {
        jumps.extend(h.jumps_in(s, t, include_end).map(|(u, d)| (u, idx, d)));
    }
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut p = TransitionMatrix::identity(s, t).p;
    let mut truncated_at = Vec::new();
    let mut i = 0;
    while i < jumps.len() {
        let u = jumps[i].0;
        let mut d = [0.0; 3];
        while i < jumps.len() && jumps[i].0 == u {
            d[jumps[i].1] += jumps[i].2;
            i += 1;
        }
        let out0 = d[0] + d[1];
        let mut stay0 = 1.0 - out0;
        if out0 > 1.0 {
            d[0] /= out0;
            d[1] /= out0;
            stay0 = 0.0;
            truncated_at.push(u);
            log::warn!("hazard increments leaving state 0 sum to {out0} at t={u}; truncated");
        }
        if d[2] > 1.0 {
            d[2] = 1.0;
            truncated_at.push(u);
            log::warn!("hazard increment leaving state 1 exceeds 1 at t={u}; truncated");
        }
        for row in p.iter_mut() {
            let (r0, r1) = (row[0], row[1]);
            row[0] = r0 * stay0;
            row[1] = r0 * d[0] + r1 * (1.0 - d[2]);
            row[2] += r0 * d[1] + r1 * d[2];
        }
    }
    Ok(ProductIntegral { matrix: TransitionMatrix { s, t, p }, truncated_at })
}

/// Anything that provides transition probabilities and the two death
/// intensities, i.e. what the AUC identities consume.
pub trait TransitionModel {
    /// `P(s, t)`, right-continuous in `t`.
    fn transition_matrix(&self, s: f64, t: f64) -> Result<TransitionMatrix>;

    /// `P(s, t-)`. Equal to [`TransitionModel::transition_matrix`] for
    /// continuous hazards.
    fn transition_matrix_left(&self, s: f64, t: f64) -> Result<TransitionMatrix> {
        self.transition_matrix(s, t)
    }

    /// `(lambda02(t), lambda12(t))`, possibly both scaled by one positive factor.
    fn death_intensities(&self, t: f64) -> Result<(f64, f64)>;

    /// Last time at which the model's hazards are defined, if bounded.
    fn support_end(&self) -> Option<f64> {
        None
    }
}

impl TransitionModel for IllnessDeathModel {
    fn transition_matrix(&self, s: f64, t: f64) -> Result<TransitionMatrix> {
        if self.is_piecewise() {
            pwc_transition_matrix(self, s, t)
        } else {
            transition_matrix(self, s, t)
        }
    }

    fn death_intensities(&self, t: f64) -> Result<(f64, f64)> {
        Ok((self.h02.hazard_at(t)?, self.h12.hazard_at(t)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn truth() -> IllnessDeathModel {
        IllnessDeathModel::weibull_common_shape(0.5, 0.05, 0.05, 0.56).unwrap()
    }

    fn constant() -> IllnessDeathModel {
        IllnessDeathModel::constant(0.2, 0.3, 1.0).unwrap()
    }

    // closed form for constant hazards with l12 != l01 + l02
    fn p01_constant(l01: f64, l02: f64, l12: f64, d: f64) -> f64 {
        l01 * ((-(l01 + l02) * d).exp() - (-l12 * d).exp()) / (l12 - l01 - l02)
    }

    #[test]
    fn survival_closed_forms() {
        let m = truth();
        assert_eq!(p00(&m, 3.0, 3.0).unwrap(), 1.0);
        assert_relative_eq!(p00(&m, 0.0, 4.0).unwrap(), (-0.2f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(p00(&constant(), 0.0, 1.0).unwrap(), (-0.5f64).exp(), max_relative = 1e-14);
        assert_eq!(p11(&m, 2.0, 2.0).unwrap(), 1.0);
        assert_relative_eq!(p11(&m, 1.0, 4.0).unwrap(), (-0.56f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(p11(&constant(), 0.0, 1.0).unwrap(), (-1.0f64).exp(), max_relative = 1e-14);
        assert!(p00(&m, 2.0, 1.0).is_err());
        assert!(p11(&m, 2.0, 1.0).is_err());
    }

    #[test]
    fn p01_constant_hazards_matches_closed_form() {
        let expected = p01_constant(0.2, 0.3, 1.0, 1.0);
        assert_relative_eq!(expected, 0.0955, epsilon = 5e-5);
        let got = p01(&constant(), 0.0, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        assert_eq!(p01(&constant(), 0.7, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn p01_weibull_common_shape_matches_substituted_closed_form() {
        // With a shared shape, w = u^k turns the model into constant hazards in w.
        let m = truth();
        for t in [0.5, 4.0, 12.0, 60.0, 120.0] {
            let w = f64::powf(t, 0.5);
            let expected = p01_constant(0.05, 0.05, 0.56, w);
            let got = p01(&m, 0.0, t).unwrap();
            assert!((got - expected).abs() < 1e-9, "t={t}: {got} vs {expected}");
        }
        let (s, t) = (9.0, 36.0);
        let expected = {
            let d = 6.0 - 3.0;
            p01_constant(0.05, 0.05, 0.56, d)
        };
        assert!((p01(&m, s, t).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn fixed_rule_agrees_with_adaptive() {
        let rule = GaussLegendre::new(20);
        let models = [
            truth(),
            IllnessDeathModel::new(
                Hazard::weibull(0.04, 0.7).unwrap(),
                Hazard::weibull(0.06, 0.4).unwrap(),
                Hazard::weibull(0.3, 0.6).unwrap(),
            ),
            IllnessDeathModel::new(
                Hazard::weibull(0.03, 1.3).unwrap(),
                Hazard::weibull(0.05, 0.9).unwrap(),
                Hazard::weibull(0.5, 0.5).unwrap(),
            ),
        ];
        for m in &models {
            for (s, t) in [(0.0, 3.0), (0.0, 12.0), (3.0, 6.0), (12.0, 23.7), (60.0, 71.2), (0.0, 30.0)] {
                let a = p01_with_tolerance(m, s, t, 1e-13).unwrap();
                let f = p01_fixed(m, s, t, &rule);
                assert!((a - f).abs() < 1e-10, "{m:?} ({s},{t}): {a} vs {f}");
            }
        }
    }

    #[test]
    fn matrix_assembly() {
        let m = constant();
        let id = transition_matrix(&m, 2.0, 2.0).unwrap();
        assert_eq!(id, TransitionMatrix::identity(2.0, 2.0));
        let p = transition_matrix(&m, 0.0, 1.0).unwrap();
        assert_relative_eq!(p.p[0][0], 0.6065, epsilon = 5e-5);
        assert_relative_eq!(p.p[0][1], 0.0955, epsilon = 5e-5);
        assert_relative_eq!(p.p[0][2], 0.2980, epsilon = 5e-5);
        for r in p.row_sums() {
            assert!((r - 1.0).abs() < 1e-9);
        }
        assert_eq!(p.p[1][0], 0.0);
        assert_eq!(p.p[2], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn matrix_exponential_matches_quadrature_for_one_segment() {
        let m = constant();
        assert_eq!(pwc_transition_matrix(&m, 1.0, 1.0).unwrap(), TransitionMatrix::identity(1.0, 1.0));
        let a = pwc_transition_matrix(&m, 0.0, 1.0).unwrap();
        let exact = p01_constant(0.2, 0.3, 1.0, 1.0);
        assert!((a.p[0][1] - exact).abs() < 1e-12);
        let b = transition_matrix(&m, 0.0, 1.0).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
        assert!(pwc_transition_matrix(&truth(), 0.0, 1.0).is_err());
    }

    #[test]
    fn equal_eigenvalue_branch_is_continuous() {
        let (l01, l02) = (0.2, 0.3);
        let exact = IllnessDeathModel::constant(l01, l02, l01 + l02).unwrap();
        let bumped = IllnessDeathModel::constant(l01, l02, (l01 + l02) * (1.0 + 1e-9)).unwrap();
        for d in [0.1, 1.0, 10.0] {
            let a = pwc_transition_matrix(&exact, 0.0, d).unwrap();
            let b = pwc_transition_matrix(&bumped, 0.0, d).unwrap();
            assert!(a.p.iter().flatten().all(|x| x.is_finite()));
            assert!(a.max_abs_diff(&b) < 1e-8, "d={d}");
            assert_relative_eq!(a.p[0][1], l01 * d * (-(l01 + l02) * d).exp(), max_relative = 1e-14);
        }
    }

    #[test]
    fn product_integral_cases() {
        let empty = StepCumulativeHazard::default();
        let pi = aalen_johansen(&empty, &empty, &empty, 0.0, 5.0).unwrap();
        assert_eq!(pi.matrix.p, TransitionMatrix::identity(0.0, 5.0).p);

        let d02 = StepCumulativeHazard::new(vec![2.0], vec![0.1]).unwrap();
        let pi = aalen_johansen(&empty, &d02, &empty, 0.0, 5.0).unwrap();
        assert_relative_eq!(pi.matrix.p[0][0], 0.9);
        assert_eq!(pi.matrix.p[0][1], 0.0);
        assert_relative_eq!(pi.matrix.p[0][2], 0.1);

        let d01 = StepCumulativeHazard::new(vec![1.0], vec![0.2]).unwrap();
        let d12 = StepCumulativeHazard::new(vec![3.0], vec![0.5]).unwrap();
        let pi = aalen_johansen(&d01, &empty, &d12, 0.0, 5.0).unwrap();
        assert_relative_eq!(pi.matrix.p[0][0], 0.8);
        assert_relative_eq!(pi.matrix.p[0][1], 0.1);
        assert_relative_eq!(pi.matrix.p[0][2], 0.1);
        assert!(pi.truncated_at.is_empty());

        // left limit at the 1->2 jump excludes it
        let left = product_integral(&d01, &empty, &d12, 0.0, 3.0, false).unwrap();
        assert_relative_eq!(left.matrix.p[0][1], 0.2);
    }

    #[test]
    fn oversized_increments_are_truncated() {
        let empty = StepCumulativeHazard::default();
        let d01 = StepCumulativeHazard::new(vec![1.0], vec![0.9]).unwrap();
        let d02 = StepCumulativeHazard::new(vec![1.0], vec![0.6]).unwrap();
        let pi = aalen_johansen(&d01, &d02, &empty, 0.0, 2.0).unwrap();
        assert_eq!(pi.truncated_at, vec![1.0]);
        assert_eq!(pi.matrix.p[0][0], 0.0);
        for r in pi.matrix.row_sums() {
            assert_relative_eq!(r, 1.0, epsilon = 1e-12);
        }
    }

    fn any_model() -> impl Strategy<Value = IllnessDeathModel> {
        let weib = (0.01f64..0.3, 0.4f64..1.5, 0.01f64..0.3, 0.4f64..1.5, 0.05f64..1.0, 0.4f64..1.5).prop_map(
            |(a1, k1, a2, k2, a3, k3)| {
                IllnessDeathModel::new(
                    Hazard::weibull(a1, k1).unwrap(),
                    Hazard::weibull(a2, k2).unwrap(),
                    Hazard::weibull(a3, k3).unwrap(),
                )
            },
        );
        prop_oneof![weib, pwc_model()]
    }

    fn pwc_model() -> impl Strategy<Value = IllnessDeathModel> {
        proptest::collection::vec(0.0f64..0.3, 9).prop_map(|r| {
            let h = |i: usize| Hazard::piecewise(vec![6.0, 30.0], r[i..i + 3].to_vec()).unwrap();
            IllnessDeathModel::new(h(0), h(3), h(6))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rows_are_stochastic(m in any_model(), s in 0.0f64..60.0, d in 0.0f64..60.0) {
            let p = transition_matrix(&m, s, s + d).unwrap();
            for r in p.row_sums() {
                prop_assert!((r - 1.0).abs() < 1e-9);
            }
            prop_assert!(p.p.iter().flatten().all(|&x| x >= 0.0));
        }

        #[test]
        fn chapman_kolmogorov(m in any_model(), mut pts in proptest::collection::vec(0.0f64..90.0, 3)) {
            pts.sort_by(f64::total_cmp);
            let (s, u, t) = (pts[0], pts[1], pts[2]);
            let direct = transition_matrix(&m, s, t).unwrap();
            let composed = transition_matrix(&m, s, u).unwrap().then(&transition_matrix(&m, u, t).unwrap());
            prop_assert!(direct.max_abs_diff(&composed) < 1e-6);
        }

        #[test]
        fn backends_agree_on_piecewise_models(m in pwc_model(), s in 0.0f64..50.0, d in 0.0f64..60.0) {
            let q = transition_matrix(&m, s, s + d).unwrap();
            let e = pwc_transition_matrix(&m, s, s + d).unwrap();
            prop_assert!(q.max_abs_diff(&e) < 1e-7);
        }
    }
}
