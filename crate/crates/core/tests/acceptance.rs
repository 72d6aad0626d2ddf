//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the replicated scenario studies, so expect several minutes in an
//! optimised build. Numeric arguments select criteria
//! (`cargo test --test acceptance -- 1 6`); other flags are ignored. Exits
//! nonzero when a criterion fails that is not listed in `KNOWN_RED`.

use std::time::Instant;

use illdeath::auc::{mc_auc_cd, mc_auc_id};
use illdeath::fit::loglik_gradient_check;
use illdeath::simulate::{scenario, simulate_paths};
use illdeath::transprob::{p01, pwc_transition_matrix, transition_matrix};
use illdeath::{
    auc_cd, auc_id, auc_model_based, generate_dataset, run_scenario, AucDefinition, Estimator, Hazard,
    IllnessDeathModel, StudyOptions, StudyResult, Target, WeibullParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail, with the reason printed next to the verdict.
const KNOWN_RED: [(u32, &str); 1] = [(5, "the piecewise-constant HR is not closer to 11.2 than Cox on this simulator")];

const TOL: f64 = 0.012;
const WINDOW: f64 = 60.0;
const GRID: [f64; 3] = [12.0, 36.0, 60.0];

struct Verdict {
    criterion: u32,
    title: &'static str,
    pass: bool,
    details: Vec<String>,
    seconds: f64,
}

fn check(details: &mut Vec<String>, ok: bool, line: String) -> bool {
    details.push(format!("{} {line}", if ok { "ok  " } else { "MISS" }));
    ok
}

fn find<'a>(results: &'a [StudyResult], estimator: Estimator, target: &Target) -> &'a StudyResult {
    results
        .iter()
        .find(|r| r.estimator == estimator && r.target == *target)
        .unwrap_or_else(|| panic!("no result for {} at {target}", estimator.as_str()))
}

/// Bias of one study cell against `want`, within `TOL`.
fn bias_near(details: &mut Vec<String>, results: &[StudyResult], e: Estimator, target: Target, want: f64) -> bool {
    let r = find(results, e, &target);
    let Some(p) = r.performance else {
        return check(details, false, format!("{} {target}: {} valid replications", e.as_str(), r.n_valid));
    };
    let ok = (p.bias - want).abs() <= TOL;
    check(
        details,
        ok,
        format!(
            "{} {target}: bias {:+.4} (mcse {:.4}, target {want:+.2} +/- {TOL}), {}/{} valid",
            e.as_str(),
            p.bias,
            r.bias_mcse().unwrap_or(f64::NAN),
            r.n_valid,
            r.n_replications
        ),
    )
}

fn criterion_1() -> (bool, Vec<String>) {
    let m = WeibullParams::STUDY.model().unwrap();
    let mut d = Vec::new();
    let mut ok = true;
    for (t, want) in GRID.iter().zip([0.71, 0.72, 0.72]) {
        let v = auc_id(&m, *t).unwrap();
        ok &= check(&mut d, (v - want).abs() <= 0.005, format!("I/D t={t}: {v:.5} (target {want})"));
    }
    for (s, want) in GRID.iter().zip([0.59, 0.62, 0.64]) {
        let v = auc_cd(&m, *s, s + WINDOW).unwrap();
        ok &= check(&mut d, (v - want).abs() <= 0.005, format!("C/D s={s}, window {WINDOW}: {v:.5} (target {want})"));
    }
    (ok, d)
}

fn targets() -> Vec<Target> {
    let mut t = Target::id_grid(&GRID);
    t.extend(Target::cd_grid(&GRID, WINDOW));
    t
}

fn criterion_2() -> (bool, Vec<String>) {
    let opts = StudyOptions::new(
        &[Estimator::Weibull, Estimator::CoxProb, Estimator::Pwc],
        &Target::id_grid(&GRID),
        200,
        10_000,
    );
    let results = run_scenario(&scenario("A").unwrap(), &opts).unwrap();
    let mut d = Vec::new();
    let mut ok = true;
    for t in GRID {
        ok &= bias_near(&mut d, &results, Estimator::Weibull, Target::IncidentDynamic { t }, 0.0);
    }
    ok &= bias_near(&mut d, &results, Estimator::CoxProb, Target::IncidentDynamic { t: 12.0 }, -0.04);
    ok &= bias_near(&mut d, &results, Estimator::Pwc, Target::IncidentDynamic { t: 12.0 }, -0.05);
    (ok, d)
}

fn criteria_3_and_4() -> ((bool, Vec<String>), (bool, Vec<String>)) {
    let opts = StudyOptions::new(&[Estimator::Weibull, Estimator::CoxProb, Estimator::Pwc], &targets(), 200, 20_000);
    let results = run_scenario(&scenario("C").unwrap(), &opts).unwrap();
    let mut d3 = Vec::new();
    let mut ok3 = bias_near(&mut d3, &results, Estimator::CoxProb, Target::IncidentDynamic { t: 12.0 }, -0.21);
    let se = find(&results, Estimator::CoxProb, &Target::IncidentDynamic { t: 12.0 }).performance.map(|p| p.emp_se);
    d3.push(format!("     cox-prob I/D at t=12 empirical SE {:.4}", se.unwrap_or(f64::NAN)));
    ok3 &= bias_near(&mut d3, &results, Estimator::Pwc, Target::CumulativeDynamic { s: 12.0, window: WINDOW }, -0.05);
    let mut d4 = Vec::new();
    let mut ok4 = true;
    for e in [Estimator::CoxProb, Estimator::Weibull] {
        for s in GRID {
            ok4 &= bias_near(&mut d4, &results, e, Target::CumulativeDynamic { s, window: WINDOW }, 0.0);
        }
    }
    ((ok3, d3), (ok4, d4))
}

fn criterion_5() -> (bool, Vec<String>) {
    let opts = StudyOptions::new(&[Estimator::CoxProb, Estimator::Pwc], &[Target::HazardRatio], 100, 1000);
    let results = run_scenario(&scenario("B").unwrap(), &opts).unwrap();
    let truth = WeibullParams::STUDY.hazard_ratio();
    let cox = find(&results, Estimator::CoxProb, &Target::HazardRatio);
    let pwc = find(&results, Estimator::Pwc, &Target::HazardRatio);
    let (mc, mp) = (cox.mean().unwrap_or(f64::NAN), pwc.mean().unwrap_or(f64::NAN));
    let mut d = Vec::new();
    let closer = check(
        &mut d,
        (mp - truth).abs() < (mc - truth).abs(),
        format!("mean HR: pwc {mp:.3} ({} valid), cox {mc:.3} ({} valid), truth {truth:.1}", pwc.n_valid, cox.n_valid),
    );
    let below = check(&mut d, mc < truth, format!("cox mean {mc:.3} below {truth:.1}"));
    (closer && below, d)
}

fn random_model(rng: &mut ChaCha8Rng) -> IllnessDeathModel {
    if rng.gen_bool(0.5) {
        let mut w = || Hazard::weibull(rng.gen_range(0.01..0.3), rng.gen_range(0.4..1.5)).unwrap();
        IllnessDeathModel::new(w(), w(), w())
    } else {
        random_pwc(rng)
    }
}

fn random_pwc(rng: &mut ChaCha8Rng) -> IllnessDeathModel {
    let mut h = || Hazard::piecewise(vec![6.0, 30.0, 60.0], (0..4).map(|_| rng.gen_range(0.0..0.3)).collect()).unwrap();
    IllnessDeathModel::new(h(), h(), h())
}

/// Asymptotic Kolmogorov-Smirnov statistic sqrt(n) * D of uniform draws.
fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u.iter().enumerate().map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n)).fold(0.0, f64::max);
    d * n.sqrt()
}

fn criterion_6() -> (bool, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut d = Vec::new();
    let mut ok = true;

    let (mut rows, mut ck, mut backends) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let m = random_model(&mut rng);
        let mut pts: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..100.0)).collect();
        pts.sort_by(f64::total_cmp);
        let (s, u, t) = (pts[0], pts[1], pts[2]);
        let direct = transition_matrix(&m, s, t).unwrap();
        rows = direct.row_sums().iter().map(|r| (r - 1.0).abs()).fold(rows, f64::max);
        let composed = transition_matrix(&m, s, u).unwrap().then(&transition_matrix(&m, u, t).unwrap());
        ck = ck.max(direct.max_abs_diff(&composed));
        let p = random_pwc(&mut rng);
        backends =
            backends.max(transition_matrix(&p, s, t).unwrap().max_abs_diff(&pwc_transition_matrix(&p, s, t).unwrap()));
    }
    ok &= check(&mut d, rows <= 1e-9, format!("row sums: max |sum - 1| {rows:.2e} over 200 models"));
    ok &= check(&mut d, ck <= 1e-6, format!("Chapman-Kolmogorov: max deviation {ck:.2e}"));
    ok &= check(&mut d, backends <= 1e-7, format!("quadrature vs matrix exponential: max deviation {backends:.2e}"));

    let mut closed = 0.0f64;
    for _ in 0..200 {
        let (a, b, c) = (rng.gen_range(0.005..0.5), rng.gen_range(0.005..0.5), rng.gen_range(0.005..0.5));
        let (s, dt) = (rng.gen_range(0.0..50.0), rng.gen_range(0.0..60.0));
        let m = IllnessDeathModel::constant(a, b, c).unwrap();
        let want = if (a + b - c).abs() < 1e-12 {
            a * dt * (-c * dt).exp()
        } else {
            a / (a + b - c) * ((-c * dt).exp() - (-(a + b) * dt).exp())
        };
        closed = closed.max((p01(&m, s, s + dt).unwrap() - want).abs());
    }
    ok &= check(&mut d, closed <= 1e-10, format!("constant-hazard P01 vs closed form: max deviation {closed:.2e}"));

    let mut grad = 0.0f64;
    for (name, seed) in [("A", 1u64), ("C", 2), ("F", 3)] {
        let mut cfg = scenario(name).unwrap().with_seed(seed);
        cfg.n_subjects = 100;
        let data = generate_dataset(&cfg).unwrap();
        let weib = IllnessDeathModel::new(
            Hazard::weibull(0.06, 0.45).unwrap(),
            Hazard::weibull(0.04, 0.55).unwrap(),
            Hazard::weibull(0.5, 0.6).unwrap(),
        );
        for m in [weib, random_pwc(&mut rng)] {
            grad = grad.max(loglik_gradient_check(&m, &data.records).unwrap().max_rel_deviation);
        }
    }
    ok &=
        check(&mut d, grad <= 1e-4, format!("log-likelihood gradient vs central differences: max relative {grad:.2e}"));

    let mut half = true;
    for _ in 0..50 {
        let (a, k) = (rng.gen_range(0.005..0.1), rng.gen_range(0.4..1.2));
        let m = IllnessDeathModel::new(
            Hazard::weibull(rng.gen_range(0.005..0.1), rng.gen_range(0.4..1.2)).unwrap(),
            Hazard::weibull(a, k).unwrap(),
            Hazard::weibull(a, k).unwrap(),
        );
        half &= auc_id(&m, rng.gen_range(0.1..60.0)).unwrap() == 0.5;
    }
    ok &= check(&mut d, half, "equal death hazards with and without disease: I/D AUC exactly 0.5 (50 models)".into());

    let (mut n, mut inside) = (0usize, true);
    for _ in 0..100 {
        let m = random_model(&mut rng);
        for def in [AucDefinition::IncidentDynamic, AucDefinition::CumulativeDynamic] {
            let window = (def == AucDefinition::CumulativeDynamic).then(|| rng.gen_range(1.0..80.0));
            let c = auc_model_based(&m, def, &[0.5, 6.0, 24.0, 60.0, 100.0], window, Estimator::Truth).unwrap();
            n += c.points.len();
            inside &= c.points.iter().all(|&(_, v)| (0.0..=1.0).contains(&v));
        }
    }
    ok &= check(&mut d, inside, format!("AUC values in [0, 1]: {n} evaluations"));

    // Under the simulator, U1 = exp(-(a01 + a02) T1^k) and
    // U2 = exp(-a12 (TD^k - TI^k)) are uniform.
    let p = WeibullParams::STUDY;
    let paths = simulate_paths(&p, 100_000, 66);
    let u1: Vec<f64> = paths
        .iter()
        .map(|x| (-(p.alpha01 + p.alpha02) * x.illness_time.unwrap_or(x.death_time).powf(p.k)).exp())
        .collect();
    let u2: Vec<f64> = paths
        .iter()
        .filter_map(|x| x.illness_time.map(|ti| (-p.alpha12 * (x.death_time.powf(p.k) - ti.powf(p.k))).exp()))
        .collect();
    let critical = (-0.5 * (0.001f64 / 2.0).ln()).sqrt();
    let (k1, k2) = (ks_uniform(u1), ks_uniform(u2.clone()));
    ok &= check(
        &mut d,
        k1 < critical,
        format!("KS first exit time, 10^5 draws: sqrt(n) D = {k1:.3} (critical {critical:.3})"),
    );
    ok &= check(&mut d, k2 < critical, format!("KS death after illness, {} draws: sqrt(n) D = {k2:.3}", u2.len()));
    (ok, d)
}

fn criterion_7() -> (bool, Vec<String>) {
    let m = WeibullParams::STUDY.model().unwrap();
    let paths = simulate_paths(&WeibullParams::STUDY, 1_000_000, 7);
    let mut d = Vec::new();
    let mut ok = true;
    for t in GRID {
        let mc = mc_auc_id(&paths, t, 0.5).unwrap();
        let v = auc_id(&m, t).unwrap();
        let z = (mc.estimate - v) / mc.stderr;
        ok &= check(
            &mut d,
            z.abs() <= 3.0,
            format!("I/D t={t}: MC {:.4} +/- {:.4} ({} cases) vs {v:.4}, z {z:+.2}", mc.estimate, mc.stderr, mc.cases),
        );
    }
    for s in GRID {
        let mc = mc_auc_cd(&paths, s, s + WINDOW).unwrap();
        let v = auc_cd(&m, s, s + WINDOW).unwrap();
        let z = (mc.estimate - v) / mc.stderr;
        ok &= check(
            &mut d,
            z.abs() <= 3.0,
            format!("C/D s={s}: MC {:.4} +/- {:.4} ({} cases) vs {v:.4}, z {z:+.2}", mc.estimate, mc.stderr, mc.cases),
        );
    }
    (ok, d)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |c: u32| selected.is_empty() || selected.contains(&c);
    let mut verdicts = Vec::new();
    let mut push = |criterion, title, (pass, details): (bool, Vec<String>), seconds| {
        verdicts.push(Verdict { criterion, title, pass, details, seconds });
    };

    if wanted(1) {
        let (r, s) = timed(criterion_1);
        push(1, "true AUC oracle", r, s);
    }
    if wanted(2) {
        let (r, s) = timed(criterion_2);
        push(2, "scenario A biases, 200 replications", r, s);
    }
    if wanted(3) || wanted(4) {
        let ((r3, r4), s) = timed(criteria_3_and_4);
        push(3, "scenario C Cox I/D and piecewise C/D biases, 200 replications", r3, s);
        push(4, "scenario C C/D biases of Cox and Weibull, same run", r4, 0.0);
    }
    if wanted(5) {
        let (r, s) = timed(criterion_5);
        push(5, "hazard ratio recovery, scenario B, 100 replications", r, s);
    }
    if wanted(6) {
        let (r, s) = timed(criterion_6);
        push(6, "property suite", r, s);
    }
    if wanted(7) {
        let (r, s) = timed(criterion_7);
        push(7, "Monte-Carlo oracle, 10^6 paths", r, s);
    }
    let mut unexpected = 0;
    for v in &verdicts {
        let known = KNOWN_RED.iter().find(|k| k.0 == v.criterion);
        let note = match (v.pass, known) {
            (false, Some((_, why))) => format!(" [known: {why}]"),
            (false, None) => {
                unexpected += 1;
                String::new()
            }
            _ => String::new(),
        };
        println!(
            "{} criterion {}: {} ({:.1} s){note}",
            if v.pass { "PASS" } else { "FAIL" },
            v.criterion,
            v.title,
            v.seconds
        );
        for line in &v.details {
            println!("    {line}");
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed unexpectedly");
        std::process::exit(1);
    }
}
