//! Option-value parsers: time grids and scenario lists.

#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Scenarios(pub Vec<String>);

impl std::str::FromStr for Grid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        grid(s).map(Grid)
    }
}

impl std::str::FromStr for Scenarios {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        scenarios(s).map(Scenarios)
    }
}

/// Comma-separated times, where each item is a number or `a..b:step`
/// (inclusive of `b` when it falls on the grid).
pub fn grid(s: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim) {
        if item.is_empty() {
            return Err(format!("empty item in grid '{s}'"));
        }
        match item.split_once("..") {
            None => out.push(number(item)?),
            Some((lo, rest)) => {
                let (hi, step) =
                    rest.split_once(':').ok_or_else(|| format!("range '{item}' needs a step, as in 12..60:12"))?;
                let (lo, hi, step) = (number(lo)?, number(hi)?, number(step)?);
                if step <= 0.0 || hi < lo {
                    return Err(format!("range '{item}' needs lo <= hi and a positive step"));
                }
                let n = ((hi - lo) / step + 1e-9).floor() as usize;
                out.extend((0..=n).map(|i| lo + i as f64 * step));
            }
        }
    }
    if out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("grid '{s}' must be strictly increasing"));
    }
    Ok(out)
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("'{s}' is not a number"))?;
    if !v.is_finite() {
        return Err(format!("'{s}' is not finite"));
    }
    Ok(v)
}

/// Scenario names such as `A`, `A,C,E` or `A..F`, upper-cased.
pub fn scenarios(s: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim) {
        match item.split_once("..") {
            None => out.push(letter(item)?.to_string()),
            Some((a, b)) => {
                let (a, b) = (letter(a)?, letter(b)?);
                if a > b {
                    return Err(format!("scenario range '{item}' is reversed"));
                }
                out.extend((a..=b).map(|c| c.to_string()));
            }
        }
    }
    Ok(out)
}

fn letter(s: &str) -> Result<char, String> {
    let mut chars = s.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Ok(c.to_ascii_uppercase()),
        _ => Err(format!("'{s}' is not a scenario name")),
    }
}
