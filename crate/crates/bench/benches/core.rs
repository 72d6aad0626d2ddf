use criterion::{black_box, criterion_group, criterion_main, Criterion};
use illdeath::fit::{fit_cox_td, fit_pwc_ic, fit_weibull_ic, ic_loglik, FitOptions, PwcSpec};
use illdeath::{auc_model_based, AucDefinition, Estimator, TransitionModel, WeibullParams};
use illdeath_bench::records;

fn likelihood(c: &mut Criterion) {
    let model = WeibullParams::STUDY.model().unwrap();
    let mut g = c.benchmark_group("loglik");
    for name in ["A", "C"] {
        let data = records(name, 1);
        g.bench_function(format!("weibull scenario {name}"), |b| {
            b.iter(|| ic_loglik(&model, black_box(&data)).unwrap())
        });
    }
    g.finish();
}

fn fits(c: &mut Criterion) {
    let data = records("A", 2);
    let opts = FitOptions { standard_errors: false, ..FitOptions::default() };
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    g.bench_function("cox", |b| b.iter(|| fit_cox_td(black_box(&data)).unwrap()));
    g.bench_function("pwc study", |b| b.iter(|| fit_pwc_ic(black_box(&data), &PwcSpec::study(), &opts).unwrap()));
    g.bench_function("weibull", |b| b.iter(|| fit_weibull_ic(black_box(&data), None, &opts).unwrap()));
    g.finish();
}

fn auc(c: &mut Criterion) {
    let model = WeibullParams::STUDY.model().unwrap();
    let grid = [12.0, 36.0, 60.0];
    let mut g = c.benchmark_group("auc");
    g.bench_function("transition matrix 0..60", |b| b.iter(|| model.transition_matrix(0.0, black_box(60.0)).unwrap()));
    g.bench_function("truth I/D", |b| {
        b.iter(|| {
            auc_model_based(&model, AucDefinition::IncidentDynamic, black_box(&grid), None, Estimator::Truth).unwrap()
        })
    });
    g.bench_function("truth C/D", |b| {
        b.iter(|| {
            auc_model_based(&model, AucDefinition::CumulativeDynamic, black_box(&grid), Some(60.0), Estimator::Truth)
                .unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, likelihood, fits, auc);
criterion_main!(benches);
