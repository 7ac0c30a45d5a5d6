use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use evcharge_core::planner::{dp_plan, greedy_plan, value_function};
use evcharge_core::qp::{maximize_quadratic, DEFAULT_TOL};
use evcharge_core::scenario::synth_scenario;
use evcharge_core::utility::{quad_form, stage_constraints};
use evcharge_core::{EconomicParams, ElasticityModel, GridConfig, Profile, StageContext};

fn stage_qp(c: &mut Criterion) {
    let params = EconomicParams::table1();
    let ctx = StageContext { horizon: 0, wholesale_price: 30.0, renewable: 10.0, storage: 100.0, price_ceiling: None };
    let mut group = c.benchmark_group("stage_qp");
    for l in [1, 3, 5, 8] {
        let model = ElasticityModel::synthetic(1, l).unwrap();
        let form = quad_form(&model, &ctx, &params, 0.0);
        let set = stage_constraints(&model, &ctx, &params);
        group.bench_with_input(BenchmarkId::from_parameter(l), &l, |b, _| {
            b.iter(|| maximize_quadratic(black_box(&form), black_box(&set), DEFAULT_TOL).unwrap())
        });
    }
    group.finish();
}

fn plans(c: &mut Criterion) {
    let params = EconomicParams::table1();
    let model = ElasticityModel::synthetic(2, 3).unwrap();
    let mut group = c.benchmark_group("plan");
    group.sample_size(10);
    for n in [24, 48, 96] {
        let scenario = synth_scenario(2, n, Profile::Diurnal).unwrap();
        group.bench_with_input(BenchmarkId::new("greedy", n), &n, |b, _| {
            b.iter(|| greedy_plan(black_box(&scenario), &model, &params, 100.0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dp", n), &n, |b, _| {
            b.iter(|| dp_plan(black_box(&scenario), &model, &params, 100.0, &GridConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn grid_resolution(c: &mut Criterion) {
    let params = EconomicParams::table1();
    let model = ElasticityModel::synthetic(3, 3).unwrap();
    let scenario = synth_scenario(3, 24, Profile::Diurnal).unwrap();
    let mut group = c.benchmark_group("value_function");
    group.sample_size(10);
    for m in [51, 101, 201, 401] {
        let grid = GridConfig::with_points(m);
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| value_function(black_box(&scenario), &model, &params, &grid).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, stage_qp, plans, grid_resolution);
criterion_main!(benches);
