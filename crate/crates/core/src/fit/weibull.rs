use super::{maximise, Family, FitOptions, IcData, MleFit, Occurrence};
use crate::error::{Error, Result};
use crate::record::ObservedRecord;

/// Interval-censored Weibull illness-death fit. `init` holds natural-scale
/// starting values `(a01, k01, a02, k02, a12, k12)`; by default every shape
/// starts at 1 and every rate at its occurrence/exposure estimate.
pub fn fit_weibull_ic(records: &[ObservedRecord], init: Option<[f64; 6]>, opts: &FitOptions) -> Result<MleFit> {
    let data = IcData::new(records)?;
    let occ = Occurrence::within(records, 0.0, f64::INFINITY);
    if occ.events[0] == 0.0 {
        return Err(Error::Fit("no observed illness; Weibull parameters unidentified".into()));
    }
    if occ.events[1] + occ.events[2] == 0.0 {
        return Err(Error::Fit("no deaths; Weibull parameters unidentified".into()));
    }
    let theta0: Vec<f64> = match init {
        Some(v) => {
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Argument("initial Weibull parameters must be positive".into()));
            }
            v.iter().map(|x| x.ln()).collect()
        }
        None => (0..3).flat_map(|i| [occ.rate(i).ln(), 0.0]).collect(),
    };
    maximise(Family::Weibull, &data, theta0, opts, Vec::new())
}
