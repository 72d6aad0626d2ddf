//! Comma-separated file formats: observed records (long format), true paths,
//! fits, AUC curves, study reports and the log-log Weibull diagnostic. Also
//! rebuilds screening histories for data that only carry diagnosis dates.
//!
//! Numbers are written in shortest round-trip form.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::auc::{AucCurve, AucDefinition, Estimator};
use crate::error::{Error, Result};
use crate::fit::{check_records, CoxTdFit, Family, MleFit, Parameter, RiskSetCounts};
use crate::hazards::StepCumulativeHazard;
use crate::record::{ObservedRecord, SubjectPath};
use crate::study::{ReportRow, REPORT_HEADER};
use crate::transprob::{TransitionMatrix, TransitionModel};

pub const RECORD_HEADER: [&str; 5] = ["id", "visit_time", "marker", "survival_time", "death_indicator"];
pub const PATH_HEADER: [&str; 4] = ["id", "illness_time", "death_time", "exit_direct"];
pub const CURVE_HEADER: [&str; 5] = ["definition", "estimator", "window", "time", "value"];
pub const FIT_HEADER: [&str; 5] = ["section", "name", "time", "value", "stderr"];
pub const DIAGNOSIS_HEADER: [&str; 4] = ["id", "diagnosis_time", "survival_time", "death_indicator"];
pub const DIAGNOSTIC_HEADER: [&str; 8] =
    ["transition", "row", "log_time", "log_cumhaz", "slope", "intercept", "r_squared", "note"];

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Reads a headed CSV, checking that `header` columns are present, and
/// yields each row as a map from column name to field plus its line.
struct Table {
    columns: HashMap<String, usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read<R: Read>(reader: R, header: &[&str]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let head = rdr.headers()?.clone();
        let columns: HashMap<String, usize> =
            head.iter().enumerate().map(|(i, h)| (h.to_ascii_lowercase(), i)).collect();
        let missing: Vec<&str> = header.iter().copied().filter(|h| !columns.contains_key(*h)).collect();
        if !missing.is_empty() {
            return Err(Error::Parse { line: 1, message: format!("missing columns: {}", missing.join(", ")) });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Self { columns, rows })
    }

    fn field<'a>(&self, row: &'a csv::StringRecord, name: &str) -> &'a str {
        row.get(self.columns[name]).unwrap_or("")
    }
}

fn parse_f64(s: &str, line: u64, column: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("{column}: '{s}' is not a number") })
}

fn parse_opt_f64(s: &str, line: u64, column: &str) -> Result<Option<f64>> {
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        Ok(None)
    } else {
        parse_f64(s, line, column).map(Some)
    }
}

fn parse_bool(s: &str, line: u64, column: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(Error::Parse { line, message: format!("{column}: '{s}' is not 0/1") }),
    }
}

fn parse_usize(s: &str, line: u64, column: &str) -> Result<usize> {
    s.parse::<usize>().map_err(|_| Error::Parse { line, message: format!("{column}: '{s}' is not a count") })
}

/// Reads long-format records (one row per visit), grouped by id in order of
/// first appearance and sorted by visit time, then validated.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<ObservedRecord>> {
    let table = Table::read(reader, &RECORD_HEADER)?;
    struct Acc {
        visits: Vec<(f64, bool)>,
        exit: (f64, bool),
        line: u64,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Acc> = HashMap::new();
    for (line, row) in &table.rows {
        let line = *line;
        let id = table.field(row, "id").to_string();
        if id.is_empty() {
            return Err(Error::Parse { line, message: "empty id".into() });
        }
        let visit = parse_f64(table.field(row, "visit_time"), line, "visit_time")?;
        let marker = parse_bool(table.field(row, "marker"), line, "marker")?;
        let exit = (
            parse_f64(table.field(row, "survival_time"), line, "survival_time")?,
            parse_bool(table.field(row, "death_indicator"), line, "death_indicator")?,
        );
        let acc = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Acc { visits: Vec::new(), exit, line }
        });
        if acc.exit != exit {
            return Err(Error::Parse {
                line,
                message: format!("subject {id}: survival time or death indicator differs from line {}", acc.line),
            });
        }
        acc.visits.push((visit, marker));
    }
    let records: Vec<ObservedRecord> = order
        .into_iter()
        .map(|id| {
            let mut acc = groups.remove(&id).expect("grouped id");
            acc.visits.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (visits, marker) = acc.visits.into_iter().unzip();
            ObservedRecord::new(id, visits, marker, acc.exit.0, acc.exit.1)
        })
        .collect();
    check_records(&records)?;
    Ok(records)
}

pub fn write_records<W: Write>(records: &[ObservedRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        for (t, m) in r.visit_times.iter().zip(&r.marker) {
            w.write_record([
                r.id.as_str(),
                &num(*t),
                if *m { "1" } else { "0" },
                &num(r.survival_time),
                if r.died { "1" } else { "0" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `data.csv` -> `data.paths.csv`.
pub fn paths_sibling(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.paths.csv"))
}

pub fn write_paths<W: Write>(ids: &[String], paths: &[SubjectPath], writer: W) -> Result<()> {
    if ids.len() != paths.len() {
        return Err(Error::Argument("ids and paths differ in length".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PATH_HEADER)?;
    for (id, p) in ids.iter().zip(paths) {
        w.write_record([
            id.as_str(),
            &opt_num(p.illness_time),
            &num(p.death_time),
            if p.exit_direct { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_paths<R: Read>(reader: R) -> Result<Vec<(String, SubjectPath)>> {
    let table = Table::read(reader, &PATH_HEADER)?;
    table
        .rows
        .iter()
        .map(|(line, row)| {
            let path = SubjectPath {
                illness_time: parse_opt_f64(table.field(row, "illness_time"), *line, "illness_time")?,
                death_time: parse_f64(table.field(row, "death_time"), *line, "death_time")?,
                exit_direct: parse_bool(table.field(row, "exit_direct"), *line, "exit_direct")?,
            };
            if !path.is_consistent() {
                return Err(Error::Parse { line: *line, message: "inconsistent path".into() });
            }
            Ok((table.field(row, "id").to_string(), path))
        })
        .collect()
}

pub fn write_curve<W: Write>(curve: &AucCurve, writer: W) -> Result<()> {
    write_curves(std::slice::from_ref(curve), writer)
}

/// One row per point; skipped grid points are not written.
pub fn write_curves<W: Write>(curves: &[AucCurve], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CURVE_HEADER)?;
    for c in curves {
        for &(t, v) in &c.points {
            w.write_record([c.definition.as_str(), c.estimator.as_str(), &opt_num(c.window), &num(t), &num(v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Curves keyed by (definition, estimator, window), in order of appearance.
pub fn read_curves<R: Read>(reader: R) -> Result<Vec<AucCurve>> {
    let table = Table::read(reader, &CURVE_HEADER)?;
    let mut curves: Vec<AucCurve> = Vec::new();
    for (line, row) in &table.rows {
        let line = *line;
        let definition: AucDefinition =
            table.field(row, "definition").parse().map_err(|e: Error| Error::Parse { line, message: e.to_string() })?;
        let estimator: Estimator =
            table.field(row, "estimator").parse().map_err(|e: Error| Error::Parse { line, message: e.to_string() })?;
        let window = parse_opt_f64(table.field(row, "window"), line, "window")?;
        let point =
            (parse_f64(table.field(row, "time"), line, "time")?, parse_f64(table.field(row, "value"), line, "value")?);
        match curves.iter_mut().find(|c| c.definition == definition && c.estimator == estimator && c.window == window) {
            Some(c) => c.points.push(point),
            None => curves.push(AucCurve { definition, window, points: vec![point], estimator, skipped: Vec::new() }),
        }
    }
    Ok(curves)
}

pub fn write_report<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.target.clone(),
            opt_num(r.time),
            opt_num(r.window),
            r.estimator.clone(),
            num(r.truth),
            opt_num(r.mean),
            opt_num(r.bias),
            opt_num(r.emp_se),
            opt_num(r.rmse),
            r.n_valid.to_string(),
            r.n_replications.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report<R: Read>(reader: R) -> Result<Vec<ReportRow>> {
    let table = Table::read(reader, &REPORT_HEADER)?;
    table
        .rows
        .iter()
        .map(|(line, row)| {
            let line = *line;
            let f = |c: &str| table.field(row, c);
            Ok(ReportRow {
                scenario: f("scenario").to_string(),
                target: f("target").to_string(),
                time: parse_opt_f64(f("time"), line, "time")?,
                window: parse_opt_f64(f("window"), line, "window")?,
                estimator: f("estimator").to_string(),
                truth: parse_f64(f("truth"), line, "truth")?,
                mean: parse_opt_f64(f("mean"), line, "mean")?,
                bias: parse_opt_f64(f("bias"), line, "bias")?,
                emp_se: parse_opt_f64(f("emp_se"), line, "emp_se")?,
                rmse: parse_opt_f64(f("rmse"), line, "rmse")?,
                n_valid: parse_usize(f("n_valid"), line, "n_valid")?,
                n_replications: parse_usize(f("n_replications"), line, "n_replications")?,
            })
        })
        .collect()
}

/// A fit as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Cox(CoxTdFit),
    Mle(MleFit),
}

impl FittedModel {
    pub fn estimator(&self) -> Estimator {
        match self {
            FittedModel::Cox(_) => Estimator::CoxProb,
            FittedModel::Mle(f) => match f.family {
                Family::Weibull => Estimator::Weibull,
                Family::Piecewise { .. } => Estimator::Pwc,
            },
        }
    }
}

impl TransitionModel for FittedModel {
    fn transition_matrix(&self, s: f64, t: f64) -> Result<TransitionMatrix> {
        match self {
            FittedModel::Cox(f) => f.transition_matrix(s, t),
            FittedModel::Mle(f) => f.transition_matrix(s, t),
        }
    }

    fn transition_matrix_left(&self, s: f64, t: f64) -> Result<TransitionMatrix> {
        match self {
            FittedModel::Cox(f) => f.transition_matrix_left(s, t),
            FittedModel::Mle(f) => f.transition_matrix_left(s, t),
        }
    }

    fn death_intensities(&self, t: f64) -> Result<(f64, f64)> {
        match self {
            FittedModel::Cox(f) => f.death_intensities(t),
            FittedModel::Mle(f) => f.death_intensities(t),
        }
    }

    fn support_end(&self) -> Option<f64> {
        match self {
            FittedModel::Cox(f) => f.support_end(),
            FittedModel::Mle(f) => f.support_end(),
        }
    }
}

struct FitWriter<W: Write>(csv::Writer<W>);

impl<W: Write> FitWriter<W> {
    fn row(&mut self, section: &str, name: &str, time: Option<f64>, value: &str, stderr: Option<f64>) -> Result<()> {
        self.0.write_record([section, name, &opt_num(time), value, &opt_num(stderr)])?;
        Ok(())
    }

    fn meta(&mut self, name: &str, value: &str) -> Result<()> {
        self.row("meta", name, None, value, None)
    }

    fn steps(&mut self, section: &str, h: &StepCumulativeHazard) -> Result<()> {
        for (t, d) in h.jump_times().iter().zip(h.increments()) {
            self.row(section, "", Some(*t), &num(*d), None)?;
        }
        Ok(())
    }
}

/// Parameters, fit statistics and everything needed to rebuild the model.
pub fn write_fit<W: Write>(fit: &FittedModel, writer: W) -> Result<()> {
    let mut w = FitWriter(csv::Writer::from_writer(writer));
    w.0.write_record(FIT_HEADER)?;
    match fit {
        FittedModel::Cox(f) => {
            w.meta("model", "cox")?;
            w.meta("loglik", &num(f.loglik))?;
            w.meta("iterations", &f.iterations.to_string())?;
            w.row("param", "beta", None, &num(f.beta), Some(f.se_beta))?;
            w.row("param", "hazard_ratio", None, &num(f.hazard_ratio()), Some(f.hazard_ratio() * f.se_beta))?;
            w.steps("cumhaz01", &f.cumhaz01)?;
            w.steps("baseline02", &f.baseline02)?;
            for r in &f.risk_sets {
                for (name, n) in [("n0", r.n0), ("n1", r.n1), ("d0", r.d0), ("d1", r.d1)] {
                    w.row("riskset", name, Some(r.time), &n.to_string(), None)?;
                }
            }
        }
        FittedModel::Mle(f) => {
            match &f.family {
                Family::Weibull => w.meta("model", "weibull")?,
                Family::Piecewise { cuts01, cuts02, cuts12, proportional } => {
                    w.meta("model", "pwc")?;
                    w.meta("proportional", &proportional.to_string())?;
                    for (section, cuts) in [("cut01", cuts01), ("cut02", cuts02), ("cut12", cuts12)] {
                        for c in cuts {
                            w.row(section, "", Some(*c), "", None)?;
                        }
                    }
                }
            }
            w.meta("loglik", &num(f.loglik))?;
            w.meta("initial_loglik", &num(f.initial_loglik))?;
            w.meta("converged", &f.converged.to_string())?;
            w.meta("iterations", &f.iterations.to_string())?;
            w.meta("gradient_norm", &num(f.gradient_norm))?;
            for p in &f.params {
                w.row("param", &p.name, None, &num(p.estimate), p.stderr)?;
            }
            if let Some(hr) = f.hazard_ratio() {
                let se = f.param("beta").and_then(|p| p.stderr).map(|s| hr * s);
                w.row("derived", "hazard_ratio", None, &num(hr), se)?;
            }
            for msg in &f.warnings {
                w.row("warning", "", None, msg, None)?;
            }
        }
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_fit<R: Read>(reader: R) -> Result<FittedModel> {
    let table = Table::read(reader, &FIT_HEADER)?;
    let mut meta: HashMap<String, (u64, String)> = HashMap::new();
    let mut params: Vec<Parameter> = Vec::new();
    let mut steps: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    let mut cuts: HashMap<String, Vec<f64>> = HashMap::new();
    let mut risk: Vec<RiskSetCounts> = Vec::new();
    let mut warnings = Vec::new();
    for (line, row) in &table.rows {
        let line = *line;
        let f = |c: &str| table.field(row, c);
        match f("section") {
            "meta" => {
                meta.insert(f("name").to_string(), (line, f("value").to_string()));
            }
            "param" => params.push(Parameter {
                name: f("name").to_string(),
                estimate: parse_f64(f("value"), line, "value")?,
                stderr: parse_opt_f64(f("stderr"), line, "stderr")?,
            }),
            "cumhaz01" | "baseline02" => {
                let e = steps.entry(f("section").to_string()).or_default();
                e.0.push(parse_f64(f("time"), line, "time")?);
                e.1.push(parse_f64(f("value"), line, "value")?);
            }
            "cut01" | "cut02" | "cut12" => {
                cuts.entry(f("section").to_string()).or_default().push(parse_f64(f("time"), line, "time")?)
            }
            "riskset" => {
                let time = parse_f64(f("time"), line, "time")?;
                let n = parse_usize(f("value"), line, "value")?;
                if risk.last().is_none_or(|r| r.time != time) {
                    risk.push(RiskSetCounts { time, n0: 0, n1: 0, d0: 0, d1: 0 });
                }
                let r = risk.last_mut().expect("pushed");
                match f("name") {
                    "n0" => r.n0 = n,
                    "n1" => r.n1 = n,
                    "d0" => r.d0 = n,
                    "d1" => r.d1 = n,
                    other => return Err(Error::Parse { line, message: format!("unknown risk-set field '{other}'") }),
                }
            }
            "derived" => {}
            "warning" => warnings.push(f("value").to_string()),
            other => return Err(Error::Parse { line, message: format!("unknown section '{other}'") }),
        }
    }
    let get = |name: &str| -> Result<(u64, &str)> {
        meta.get(name)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| Error::Parse { line: 1, message: format!("fit file lacks '{name}'") })
    };
    let get_f64 = |name: &str| -> Result<f64> {
        let (l, v) = get(name)?;
        parse_f64(v, l, name)
    };
    let get_usize = |name: &str| -> Result<usize> {
        let (l, v) = get(name)?;
        parse_usize(v, l, name)
    };
    let param = |name: &str| {
        params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("fit file lacks parameter '{name}'") })
    };
    let (_, model) = get("model")?;
    match model {
        "cox" => {
            let beta = param("beta")?;
            let step = |name: &str| {
                let (t, d) = steps.get(name).cloned().unwrap_or_default();
                StepCumulativeHazard::new(t, d)
            };
            let baseline02 = step("baseline02")?;
            let cumhaz12 = baseline02.scaled(beta.estimate.exp())?;
            Ok(FittedModel::Cox(CoxTdFit {
                beta: beta.estimate,
                se_beta: beta.stderr.unwrap_or(f64::NAN),
                loglik: get_f64("loglik")?,
                iterations: get_usize("iterations")?,
                baseline02,
                cumhaz01: step("cumhaz01")?,
                cumhaz12,
                risk_sets: risk,
            }))
        }
        "weibull" | "pwc" => {
            let family = if model == "weibull" {
                Family::Weibull
            } else {
                let (l, v) = get("proportional")?;
                let cut = |k: &str| cuts.get(k).cloned().unwrap_or_default();
                Family::Piecewise {
                    cuts01: cut("cut01"),
                    cuts02: cut("cut02"),
                    cuts12: cut("cut12"),
                    proportional: parse_bool(v, l, "proportional")?,
                }
            };
            let names = family.names();
            let ordered: Vec<Parameter> = names.iter().map(|n| param(n).cloned()).collect::<Result<_>>()?;
            let theta: Vec<f64> = ordered
                .iter()
                .enumerate()
                .map(|(i, p)| if family.is_log(i) { p.estimate.ln() } else { p.estimate })
                .collect();
            let model = family
                .build(&theta)
                .ok_or_else(|| Error::Parse { line: 1, message: "fit parameters do not define a model".into() })?;
            let (l, conv) = get("converged")?;
            Ok(FittedModel::Mle(MleFit {
                family,
                model,
                params: ordered,
                loglik: get_f64("loglik")?,
                initial_loglik: get_f64("initial_loglik")?,
                converged: parse_bool(conv, l, "converged")?,
                iterations: get_usize("iterations")?,
                gradient_norm: get_f64("gradient_norm")?,
                warnings,
            }))
        }
        other => Err(Error::Parse { line: 1, message: format!("unknown model '{other}'") }),
    }
}

/// Screening schedule as `(until, interval)` phases: visits every `interval`
/// months up to `until`, then the next phase.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitScheme {
    pub phases: Vec<(f64, f64)>,
}

impl VisitScheme {
    pub fn new(phases: Vec<(f64, f64)>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Argument("visit scheme needs at least one phase".into()));
        }
        if phases.iter().any(|&(u, i)| !(u > 0.0 && i > 0.0 && i.is_finite())) {
            return Err(Error::Argument("phase limits and intervals must be positive".into()));
        }
        if phases.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Argument("phase limits must be ascending".into()));
        }
        if phases.last().is_some_and(|p| p.0.is_finite()) {
            return Err(Error::Argument("last phase must run to infinity".into()));
        }
        Ok(Self { phases })
    }

    /// Every 3 months for three years, every 6 to five years, then yearly.
    pub fn three_six_twelve() -> Self {
        Self { phases: vec![(36.0, 3.0), (60.0, 6.0), (f64::INFINITY, 12.0)] }
    }

    /// Interval of the phase containing `t` (phases are closed on the right).
    pub fn interval_at(&self, t: f64) -> f64 {
        self.phases.iter().find(|p| t <= p.0).map_or(self.phases.last().expect("nonempty").1, |p| p.1)
    }

    /// Scheduled visits in `[0, end]`.
    pub fn grid_until(&self, end: f64) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut t = 0.0f64;
        loop {
            let interval = self.phases.iter().find(|p| t < p.0).expect("last phase unbounded").1;
            t += interval;
            if t > end + 1e-9 {
                return out;
            }
            out.push(t);
        }
    }
}

/// Last negative screen assumed one scheduled interval before diagnosis,
/// clamped at 0.
pub fn reconstruct_screening(diagnosis_time: f64, scheme: &VisitScheme) -> Result<f64> {
    if !(diagnosis_time.is_finite() && diagnosis_time > 0.0) {
        return Err(Error::Argument(format!("diagnosis time must be positive, got {diagnosis_time}")));
    }
    Ok((diagnosis_time - scheme.interval_at(diagnosis_time)).max(0.0))
}

/// One subject of a diagnosis-only data set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisRow {
    pub id: String,
    pub diagnosis_time: Option<f64>,
    pub survival_time: f64,
    pub died: bool,
}

pub fn read_diagnosis_data<R: Read>(reader: R) -> Result<Vec<DiagnosisRow>> {
    let table = Table::read(reader, &DIAGNOSIS_HEADER)?;
    table
        .rows
        .iter()
        .map(|(line, row)| {
            let line = *line;
            let f = |c: &str| table.field(row, c);
            Ok(DiagnosisRow {
                id: f("id").to_string(),
                diagnosis_time: parse_opt_f64(f("diagnosis_time"), line, "diagnosis_time")?,
                survival_time: parse_f64(f("survival_time"), line, "survival_time")?,
                died: parse_bool(f("death_indicator"), line, "death_indicator")?,
            })
        })
        .collect()
}

/// Records with visit histories synthesised from `scheme`. A diagnosed
/// subject's last negative visit is the later of the reconstructed screen and
/// the last scheduled visit before diagnosis; ids where the two differ are
/// returned alongside.
pub fn records_from_diagnoses(
    rows: &[DiagnosisRow],
    scheme: &VisitScheme,
) -> Result<(Vec<ObservedRecord>, Vec<String>)> {
    let mut flagged = Vec::new();
    let records: Vec<ObservedRecord> = rows
        .iter()
        .map(|row| {
            let t = row.survival_time;
            match row.diagnosis_time {
                None => {
                    let grid = scheme.grid_until(t);
                    let n = grid.len();
                    Ok(ObservedRecord::new(row.id.clone(), grid, vec![false; n], t, row.died))
                }
                Some(d) => {
                    let recon = reconstruct_screening(d, scheme)?;
                    let scheduled = scheme.grid_until(d).into_iter().filter(|&v| v < d).fold(0.0, f64::max);
                    let last_negative = recon.max(scheduled);
                    if recon != scheduled {
                        flagged.push(row.id.clone());
                    }
                    let mut visits: Vec<f64> =
                        scheme.grid_until(last_negative).into_iter().filter(|&v| v < last_negative).collect();
                    visits.push(last_negative);
                    let mut marker = vec![false; visits.len()];
                    if last_negative < d {
                        visits.push(d);
                        marker.push(true);
                    }
                    Ok(ObservedRecord::new(row.id.clone(), visits, marker, t, row.died))
                }
            }
        })
        .collect::<Result<_>>()?;
    check_records(&records)?;
    Ok((records, flagged))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Log cumulative hazard against log time for one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLogPanel {
    pub transition: String,
    pub points: Vec<(f64, f64)>,
    /// Least-squares line; absent with fewer than two distinct points.
    pub line: Option<LineFit>,
    pub note: Option<String>,
}

fn least_squares(points: &[(f64, f64)]) -> Option<LineFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LineFit { slope, intercept: my - slope * mx, r_squared })
}

/// Log-log points at each jump time and a least-squares line per
/// transition. Under a Weibull hazard the points lie on a line with slope `k`
/// and intercept `ln alpha`.
pub fn weibull_diagnostic(hazards: &[(&str, &StepCumulativeHazard)]) -> Vec<LogLogPanel> {
    hazards
        .iter()
        .map(|&(label, h)| {
            let mut cum = 0.0;
            let mut points = Vec::new();
            for (t, d) in h.jump_times().iter().zip(h.increments()) {
                cum += d;
                if cum > 0.0 && *t > 0.0 {
                    points.push((t.ln(), cum.ln()));
                }
            }
            let line = least_squares(&points);
            let note = if points.is_empty() {
                Some("no events; panel omitted".to_string())
            } else if line.is_none() {
                Some("fewer than two jump times; slope undefined".to_string())
            } else {
                None
            };
            LogLogPanel { transition: label.to_string(), points, line, note }
        })
        .collect()
}

pub fn write_diagnostic<W: Write>(panels: &[LogLogPanel], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DIAGNOSTIC_HEADER)?;
    for p in panels {
        for &(x, y) in &p.points {
            w.write_record([p.transition.as_str(), "point", &num(x), &num(y), "", "", "", ""])?;
        }
        if let Some(l) = p.line {
            w.write_record([
                p.transition.as_str(),
                "fit",
                "",
                "",
                &num(l.slope),
                &num(l.intercept),
                &num(l.r_squared),
                "",
            ])?;
        }
        if let Some(note) = &p.note {
            w.write_record([p.transition.as_str(), "note", "", "", "", "", "", note.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_cox_td, fit_pwc_ic, fit_weibull_ic, nelson_aalen, FitOptions, PwcSpec};
    use crate::simulate::{generate_dataset, scenario, simulate_paths, WeibullParams};
    use crate::study::{run_scenario, study_report, StudyOptions, Target};

    fn two_subjects() -> &'static str {
        "id,visit_time,marker,survival_time,death_indicator\n\
         a,0,0,10,1\n\
         a,6,1,10,1\n\
         a,3,0,10,1\n\
         b,0,0,4.5,0\n"
    }

    #[test]
    fn reads_long_format() {
        let recs = read_records(two_subjects().as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].visit_times, vec![0.0, 3.0, 6.0]);
        assert_eq!(recs[0].first_positive, Some(6.0));
        assert_eq!(recs[0].last_negative, Some(3.0));
        assert!(recs[0].died && !recs[1].died);
        assert!(read_records("id,visit_time,marker,survival_time,death_indicator\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_files() {
        let bad_marker = "id,visit_time,marker,survival_time,death_indicator\n\
                          z,0,0,9,0\nz,3,1,9,0\nz,6,0,9,0\n";
        let err = read_records(bad_marker.as_bytes()).unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains('z')), "{err}");
        let bad_number = "id,visit_time,marker,survival_time,death_indicator\na,0,0,1,0\na,x,0,1,0\n";
        assert!(matches!(read_records(bad_number.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let missing = "id,visit_time,marker\n";
        assert!(matches!(read_records(missing.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn records_and_paths_round_trip() {
        let cfg = scenario("R").unwrap().with_seed(5);
        let data = generate_dataset(&cfg).unwrap();
        let mut buf = Vec::new();
        write_records(&data.records, &mut buf).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), data.records);
        let ids: Vec<String> = data.records.iter().map(|r| r.id.clone()).collect();
        let mut buf = Vec::new();
        write_paths(&ids, &data.paths, &mut buf).unwrap();
        let back = read_paths(buf.as_slice()).unwrap();
        assert_eq!(back.iter().map(|p| p.1).collect::<Vec<_>>(), data.paths);
        assert_eq!(paths_sibling(Path::new("out/data.csv")), PathBuf::from("out/data.paths.csv"));
    }

    #[test]
    fn curves_round_trip() {
        let m = WeibullParams::STUDY.model().unwrap();
        let c = crate::auc::auc_model_based(
            &m,
            AucDefinition::CumulativeDynamic,
            &[12.0, 36.0, 60.0],
            Some(60.0),
            Estimator::Truth,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_curve(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        let back = read_curves(buf.as_slice()).unwrap();
        assert_eq!(back, vec![c.clone()]);
        let empty = AucCurve { points: vec![], ..c };
        let mut buf = Vec::new();
        write_curve(&empty, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn report_round_trips() {
        let mut cfg = scenario("C").unwrap();
        cfg.n_subjects = 200;
        let opts =
            StudyOptions::new(&[Estimator::CoxProb], &[Target::IncidentDynamic { t: 12.0 }, Target::HazardRatio], 3, 2);
        let rows = study_report(&run_scenario(&cfg, &opts).unwrap());
        let mut buf = Vec::new();
        write_report(&rows, &mut buf).unwrap();
        assert_eq!(read_report(buf.as_slice()).unwrap(), rows);
        let mut buf = Vec::new();
        write_report(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), REPORT_HEADER.join(","));
    }

    #[test]
    fn fits_round_trip() {
        let cfg = scenario("C").unwrap().with_seed(9);
        let data = generate_dataset(&cfg).unwrap();
        let opts = FitOptions::default();
        let fits = [
            FittedModel::Cox(fit_cox_td(&data.records).unwrap()),
            FittedModel::Mle(fit_pwc_ic(&data.records, &PwcSpec::study(), &opts).unwrap()),
            FittedModel::Mle(fit_weibull_ic(&data.records, None, &opts).unwrap()),
        ];
        for fit in fits {
            let mut buf = Vec::new();
            write_fit(&fit, &mut buf).unwrap();
            let back = read_fit(buf.as_slice()).unwrap();
            match (&fit, &back) {
                (FittedModel::Cox(a), FittedModel::Cox(b)) => assert_eq!(a, b),
                (FittedModel::Mle(a), FittedModel::Mle(b)) => {
                    assert_eq!(a.params, b.params);
                    assert_eq!(a.family, b.family);
                    let (x, y) = (crate::auc::auc_id(a, 24.0).unwrap(), crate::auc::auc_id(b, 24.0).unwrap());
                    assert!((x - y).abs() < 1e-12);
                }
                _ => panic!("model kind changed"),
            }
        }
    }

    #[test]
    fn screening_reconstruction() {
        let s = VisitScheme::three_six_twelve();
        assert_eq!(reconstruct_screening(24.0, &s).unwrap(), 21.0);
        assert_eq!(reconstruct_screening(48.0, &s).unwrap(), 42.0);
        assert_eq!(reconstruct_screening(72.0, &s).unwrap(), 60.0);
        assert_eq!(reconstruct_screening(36.0, &s).unwrap(), 33.0);
        assert_eq!(reconstruct_screening(2.0, &s).unwrap(), 0.0);
        assert!(reconstruct_screening(0.0, &s).is_err());
        for d in [0.5, 7.0, 36.5, 61.0, 200.0] {
            let l = reconstruct_screening(d, &s).unwrap();
            assert!(l < d && l >= 0.0);
        }
        assert_eq!(s.grid_until(50.0).last(), Some(&48.0));
        assert_eq!(s.grid_until(75.0)[12..], [36.0, 42.0, 48.0, 54.0, 60.0, 72.0]);
        assert!(VisitScheme::new(vec![(36.0, 3.0), (12.0, 6.0), (f64::INFINITY, 1.0)]).is_err());
    }

    #[test]
    fn diagnosis_only_records() {
        let rows = [
            DiagnosisRow { id: "on-grid".into(), diagnosis_time: Some(24.0), survival_time: 30.0, died: true },
            DiagnosisRow { id: "off-grid".into(), diagnosis_time: Some(25.0), survival_time: 40.0, died: false },
            DiagnosisRow { id: "never".into(), diagnosis_time: None, survival_time: 13.0, died: false },
        ];
        let (recs, flagged) = records_from_diagnoses(&rows, &VisitScheme::three_six_twelve()).unwrap();
        assert_eq!(recs[0].last_negative, Some(21.0));
        assert_eq!(recs[0].first_positive, Some(24.0));
        assert_eq!(recs[1].last_negative, Some(24.0));
        assert_eq!(flagged, vec!["off-grid".to_string()]);
        assert_eq!(recs[2].visit_times, vec![0.0, 3.0, 6.0, 9.0, 12.0]);
        let text = "id,diagnosis_time,survival_time,death_indicator\nx,,5,1\ny,3,8,0\n";
        let parsed = read_diagnosis_data(text.as_bytes()).unwrap();
        assert_eq!(parsed[0].diagnosis_time, None);
        assert_eq!(parsed[1].diagnosis_time, Some(3.0));
    }

    #[test]
    fn exact_weibull_is_a_straight_line() {
        let times: Vec<f64> = (1..=50).map(|i| i as f64 * 2.0).collect();
        let cum: Vec<f64> = times.iter().map(|t| 0.05 * t.sqrt()).collect();
        let inc: Vec<f64> = cum
            .iter()
            .scan(0.0, |prev, c| {
                let d = c - *prev;
                *prev = *c;
                Some(d)
            })
            .collect();
        let h = StepCumulativeHazard::new(times, inc).unwrap();
        let panel = &weibull_diagnostic(&[("0->2", &h)])[0];
        let l = panel.line.unwrap();
        assert!((l.slope - 0.5).abs() < 1e-9);
        assert!((l.intercept - 0.05f64.ln()).abs() < 1e-9);
        assert!((l.r_squared - 1.0).abs() < 1e-9);
        let single = StepCumulativeHazard::new(vec![3.0], vec![0.1]).unwrap();
        let p = &weibull_diagnostic(&[("x", &single)])[0];
        assert!(p.line.is_none() && p.note.is_some());
        let mut buf = Vec::new();
        write_diagnostic(&[panel.clone(), p.clone()], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 50 + 1 + 1 + 1);
    }

    #[test]
    fn nelson_aalen_on_exact_paths_has_weibull_slope() {
        let paths = simulate_paths(&WeibullParams::STUDY, 10_000, 12);
        let spells: Vec<(f64, f64, bool)> =
            paths.iter().map(|p| (0.0, p.illness_time.unwrap_or(p.death_time), p.exit_direct)).collect();
        let h = nelson_aalen(&spells).unwrap();
        let slope = weibull_diagnostic(&[("0->2", &h)])[0].line.unwrap().slope;
        assert!((0.45..=0.55).contains(&slope), "{slope}");
    }
}
