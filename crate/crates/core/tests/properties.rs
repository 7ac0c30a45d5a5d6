use approx::assert_relative_eq;
use evcharge_core::demand::regressor;
use evcharge_core::planner::{greedy_plan, solve_dp_stage, solve_dp_stage_piecewise, value_function, Continuation};
use evcharge_core::qp::{maximize_quadratic, DEFAULT_TOL};
use evcharge_core::scenario::synth_scenario;
use evcharge_core::utility::{check_feasible, quad_form, satisfaction, stage_constraints, stage_utility};
use evcharge_core::{
    Decision, EconomicParams, ElasticityModel, GridConfig, LinearConstraintSet, Profile, QuadForm, RlsState,
    StageContext,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn model_strategy(max_l: usize) -> impl Strategy<Value = ElasticityModel> {
    (1..=max_l).prop_flat_map(|l| {
        (
            prop::collection::vec(2.0..20.0f64, l),
            prop::collection::vec(0.1..0.6f64, l),
            prop::collection::vec(-0.04..0.04f64, l * l),
        )
            .prop_map(move |(g, own, cross)| {
                let mut a = vec![vec![0.0; l]; l];
                for i in 0..l {
                    a[i][i] = -own[i];
                    for j in 0..i {
                        a[i][j] = cross[i * l + j];
                        a[j][i] = cross[i * l + j];
                    }
                }
                ElasticityModel::new(g, a).unwrap()
            })
    })
}

fn ctx_strategy() -> impl Strategy<Value = StageContext> {
    (10.0..60.0f64, 0.0..25.0f64, 0.0..200.0f64).prop_map(|(c, u, i)| StageContext {
        horizon: 0,
        wholesale_price: c,
        renewable: u,
        storage: i,
        price_ceiling: None,
    })
}

fn params_strategy() -> impl Strategy<Value = EconomicParams> {
    (0.0..2e4f64, 0.01..1.0f64, 0.0..2.0f64, 0.0..80.0f64).prop_map(|(beta, mu, eta, o_ref)| EconomicParams {
        beta,
        mu,
        eta,
        o_ref,
        ..EconomicParams::table1()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quad_form_matches_direct_utility(
        model in model_strategy(4),
        ctx in ctx_strategy(),
        params in params_strategy(),
        raw in prop::collection::vec(0.0..1.0f64, 5),
        cont in -1e3..1e3f64,
    ) {
        let l = model.n_stations;
        let decision = Decision {
            prices: raw[..l].iter().map(|r| r * 40.0).collect(),
            purchase: raw[4] * params.o_max,
        };
        prop_assume!(check_feasible(&model, &ctx, &decision, &params).is_feasible());
        let direct = stage_utility(&model, &ctx, &decision, &params).unwrap().total;
        let form = quad_form(&model, &ctx, &params, cont);
        let err = (form.value(&decision.to_vector()) - direct - cont).abs();
        prop_assert!(err <= 1e-8 * (1.0 + direct.abs()));
    }

    #[test]
    fn predict_is_affine(model in model_strategy(4), p in prop::collection::vec(0.0..50.0f64, 4), q in prop::collection::vec(0.0..50.0f64, 4), t in 0.0..1.0f64) {
        let l = model.n_stations;
        let (p, q) = (&p[..l], &q[..l]);
        let mix: Vec<f64> = p.iter().zip(q).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let dp = model.predict(p).unwrap();
        let dq = model.predict(q).unwrap();
        let dm = model.predict(&mix).unwrap();
        for j in 0..l {
            prop_assert!((dm[j] - (t * dp[j] + (1.0 - t) * dq[j])).abs() <= 1e-9 * (1.0 + dm[j].abs()));
        }
    }

    #[test]
    fn rls_gain_stays_spd(lambda in 0.9..1.0f64, prices in prop::collection::vec(prop::collection::vec(0.0..60.0f64, 2), 1..200), noise in prop::collection::vec(-2.0..2.0f64, 200)) {
        let mut rls = RlsState::new(2, lambda).unwrap();
        for (k, p) in prices.iter().enumerate() {
            let x = regressor(p);
            rls.update(0, &x, 10.0 - 0.3 * p[0] + 0.02 * p[1] + noise[k]).unwrap();
            let h = rls.gain(0);
            prop_assert_eq!(h, &h.transpose());
            prop_assert!(h.clone().cholesky().is_some());
        }
    }

    #[test]
    fn satisfaction_is_concave(params in params_strategy(), a in 0.0..200.0f64, b in 0.0..200.0f64, t in 0.0..1.0f64) {
        let mid = satisfaction(t * a + (1.0 - t) * b, &params).unwrap();
        let chord = t * satisfaction(a, &params).unwrap() + (1.0 - t) * satisfaction(b, &params).unwrap();
        prop_assert!(mid >= chord - 1e-9 * (1.0 + chord.abs()));
    }

    #[test]
    fn qp_dominates_feasible_samples(
        entries in prop::collection::vec(-1.0..1.0f64, 9),
        lin in prop::collection::vec(-3.0..3.0f64, 3),
        row in prop::collection::vec(-1.0..1.0f64, 3),
        bound in 0.1..1.0f64,
        samples in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 50),
    ) {
        let m = DMatrix::from_row_slice(3, 3, &entries);
        let form = QuadForm::new(-(m.transpose() * &m), DVector::from_vec(lin), 0.0).unwrap();
        let mut set = LinearConstraintSet::boxed(vec![-1.0; 3], vec![1.0; 3]);
        set.push(row, bound);
        let sol = maximize_quadratic(&form, &set, DEFAULT_TOL).unwrap();
        prop_assert!(set.is_satisfied(&sol.x, 1e-6));
        for x in samples.iter().filter(|x| set.is_satisfied(x, 0.0)) {
            prop_assert!(sol.value >= form.value(x) - 1e-7 * (1.0 + sol.value.abs()));
        }
    }

    #[test]
    fn stage_solution_is_feasible(model in model_strategy(3), ctx in ctx_strategy(), params in params_strategy()) {
        let set = stage_constraints(&model, &ctx, &params);
        let form = quad_form(&model, &ctx, &params, 0.0);
        match maximize_quadratic(&form, &set, DEFAULT_TOL) {
            Ok(sol) => {
                let d = Decision::from_vector(&sol.x);
                prop_assert!(check_feasible(&model, &ctx, &d, &params).is_feasible());
            }
            Err(e) => {
                // only acceptable when even zero prices and zero purchase overflow storage
                let overflow = ctx.storage + ctx.renewable - model.total_intercept().min(params.capacity) - params.capacity;
                prop_assert!(overflow > 0.0, "stage solve failed: {e}");
            }
        }
    }
}

#[test]
fn epigraph_and_per_piece_routes_agree() {
    let scenario = synth_scenario(4, 4, Profile::Diurnal).unwrap();
    let model = ElasticityModel::synthetic(4, 2).unwrap();
    let params = EconomicParams::table1();
    let table = value_function(&scenario, &model, &params, &GridConfig::with_points(41)).unwrap();
    for k in 0..3 {
        let next = Continuation { grid: &table.storage_grid, values: &table.values[k + 1] };
        for storage in [0.0, 37.5, 100.0, 163.0, 200.0] {
            let ctx = StageContext {
                horizon: k,
                wholesale_price: scenario.wholesale_prices[k],
                renewable: scenario.renewable[k],
                storage,
                price_ceiling: None,
            };
            let a = solve_dp_stage(&model, &ctx, &params, next).unwrap();
            let b = solve_dp_stage_piecewise(&model, &ctx, &params, next).unwrap();
            assert_relative_eq!(a.value, b.value, max_relative = 1e-7);
        }
    }
}

#[test]
fn greedy_plan_is_feasible_and_consistent() {
    let params = EconomicParams::table1();
    for seed in 0..5 {
        let scenario = synth_scenario(seed, 24, Profile::Diurnal).unwrap();
        let model = ElasticityModel::synthetic(seed, 4).unwrap();
        let plan = greedy_plan(&scenario, &model, &params, 100.0).unwrap();
        assert_eq!(plan.storage_trajectory.len(), 25);
        for (k, d) in plan.decisions.iter().enumerate() {
            let ctx = StageContext {
                horizon: k,
                wholesale_price: scenario.wholesale_prices[k],
                renewable: scenario.renewable[k],
                storage: plan.storage_trajectory[k],
                price_ceiling: None,
            };
            assert!(check_feasible(&model, &ctx, d, &params).is_feasible(), "stage {k}");
            let b = plan.breakdowns[k];
            assert_eq!(b.total, b.revenue + b.satisfaction - b.grid_stress - b.storage_cost);
        }
        let sum: f64 = plan.breakdowns.iter().map(|b| b.total).sum::<f64>() + plan.terminal_utility;
        assert_relative_eq!(plan.total_utility, sum, max_relative = 1e-12);
    }
}

#[test]
fn continuation_interpolates_grid_values() {
    let grid = [0.0, 50.0, 100.0];
    let values = [f64::NEG_INFINITY, 10.0, 30.0];
    let c = Continuation { grid: &grid, values: &values };
    assert_eq!(c.eval(50.0), 10.0);
    assert_eq!(c.eval(75.0), 20.0);
    assert_eq!(c.eval(25.0), f64::NEG_INFINITY);
    assert!(c.is_concave());
}
