//! Closed-loop operation: each hour the provider plans with its current demand
//! estimate, posts prices, observes noisy demand, updates storage and refits
//! the estimate with RLS.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{regressor, ElasticityModel, RlsState};
use crate::error::{Error, Result};
use crate::planner::{
    dp_plan_with_table, greedy_plan, solve_dp_stage, solve_greedy_stage, stage_context, value_function, GridConfig,
    Plan, Policy,
};
use crate::scenario::{EconomicParams, MarketScenario};
use crate::utility::{self, Decision, UtilityBreakdown};

/// Ground truth hidden from the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueMarket {
    pub true_model: ElasticityModel,
    /// Standard deviation of the per-station demand noise, MWh.
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Re-plan every hour at the realized storage level with the latest estimate.
    Receding,
    /// Plan once before the first hour and execute that schedule.
    OpenLoop,
}

impl std::str::FromStr for Execution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "receding" => Ok(Execution::Receding),
            "open-loop" | "open_loop" => Ok(Execution::OpenLoop),
            other => Err(Error::Invalid(format!("unknown execution mode {other:?} (receding|open-loop)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub policy: Policy,
    pub execution: Execution,
    pub grid: GridConfig,
    /// RLS forgetting factor.
    pub forgetting: f64,
    /// Initial RLS gain is `gain_scale * I`.
    pub gain_scale: f64,
    /// Defaults to half the storage capacity.
    pub initial_storage: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            policy: Policy::Dp,
            execution: Execution::Receding,
            grid: GridConfig::default(),
            forgetting: 0.98,
            gain_scale: 1.0,
            initial_storage: None,
        }
    }
}

impl SimConfig {
    pub fn initial_storage(&self, params: &EconomicParams) -> f64 {
        self.initial_storage.unwrap_or(0.5 * params.capacity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapEvent {
    /// Demand exceeded the available energy and was scaled by `factor`.
    Shortage { hour: usize, factor: f64 },
    /// Total demand exceeded the storage capacity and was scaled by `factor`.
    DemandAboveCapacity { hour: usize, factor: f64 },
    /// Leftover energy above capacity was discarded.
    Spill { hour: usize, energy: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRecord {
    /// 1-based hour.
    pub hour: usize,
    pub wholesale_price: f64,
    pub renewable: f64,
    /// Storage at the start of the hour.
    pub storage: f64,
    pub decision: Decision,
    pub planned_demands: Vec<f64>,
    pub realized_demands: Vec<f64>,
    pub breakdown: UtilityBreakdown,
    /// Mean absolute one-step demand prediction error over stations.
    pub prediction_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: Policy,
    pub execution: Execution,
    pub hours: Vec<HourRecord>,
    pub storage_trajectory: Vec<f64>,
    pub terminal_utility: f64,
    pub total_utility: f64,
    pub total_profit: f64,
    pub total_satisfaction: f64,
    /// Total utility of the schedule planned before the first hour.
    pub day_ahead_planned_utility: f64,
    pub purchase_variance: f64,
    pub mean_price_variance: f64,
    /// RLS weights after each hour's update: `[hour][station][coef]`.
    pub rls_trajectory: Vec<Vec<Vec<f64>>>,
    pub cap_events: Vec<CapEvent>,
    /// Hours whose estimated model needed clamping.
    pub clamped_hours: Vec<usize>,
    pub nonconcave_hours: Vec<usize>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `hour,c,u,p_1..p_L,o,d_1..d_L,I,R,G,Q,W,Pi` with realized demands.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let l = self.hours.first().map_or(0, |h| h.decision.prices.len());
        let mut wtr = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::parse("report csv", e);
        let mut header = vec!["hour".to_string(), "c".into(), "u".into()];
        header.extend((1..=l).map(|j| format!("p_{j}")));
        header.push("o".into());
        header.extend((1..=l).map(|j| format!("d_{j}")));
        header.extend(["I", "R", "G", "Q", "W", "Pi"].map(String::from));
        wtr.write_record(&header).map_err(to_err)?;
        for h in &self.hours {
            let b = &h.breakdown;
            let mut rec = vec![h.hour.to_string(), h.wholesale_price.to_string(), h.renewable.to_string()];
            rec.extend(h.decision.prices.iter().map(f64::to_string));
            rec.push(h.decision.purchase.to_string());
            rec.extend(h.realized_demands.iter().map(f64::to_string));
            rec.extend(
                [h.storage, b.revenue, b.satisfaction, b.grid_stress, b.storage_cost, b.total].map(|v| v.to_string()),
            );
            wtr.write_record(&rec).map_err(to_err)?;
        }
        wtr.flush().map_err(|e| Error::parse("report csv", e))?;
        Ok(())
    }
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn purchase_variance(decisions: &[Decision]) -> f64 {
    variance(&decisions.iter().map(|d| d.purchase).collect::<Vec<_>>())
}

/// Variance of each station's price over the horizons, averaged over stations.
pub fn mean_price_variance(decisions: &[Decision]) -> f64 {
    let Some(first) = decisions.first() else {
        return 0.0;
    };
    let l = first.prices.len();
    (0..l).map(|j| variance(&decisions.iter().map(|d| d.prices[j]).collect::<Vec<_>>())).sum::<f64>() / l as f64
}

fn plan_day(
    scenario: &MarketScenario,
    model: &ElasticityModel,
    params: &EconomicParams,
    storage: f64,
    config: &SimConfig,
) -> Result<Plan> {
    match config.policy {
        Policy::Greedy => greedy_plan(scenario, model, params, storage),
        Policy::Dp => {
            let table = value_function(scenario, model, params, &config.grid)?;
            dp_plan_with_table(scenario, model, params, storage, &table)
        }
    }
}

/// Runs one simulated day. Deterministic given `true_market.seed`.
pub fn run_closed_loop(
    scenario: &MarketScenario,
    true_market: &TrueMarket,
    initial_model: &ElasticityModel,
    params: &EconomicParams,
    config: &SimConfig,
) -> Result<SimReport> {
    params.validate()?;
    true_market.true_model.validate()?;
    initial_model.validate()?;
    if true_market.true_model.n_stations != initial_model.n_stations {
        return Err(Error::Dimension {
            what: "stations of initial model",
            expected: true_market.true_model.n_stations,
            got: initial_model.n_stations,
        });
    }
    if !(true_market.noise_std >= 0.0) {
        return Err(Error::Invalid("noise_std must be >= 0".into()));
    }
    let l = initial_model.n_stations;
    let n = scenario.n_horizons;
    let initial_storage = config.initial_storage(params);
    if !(0.0..=params.capacity).contains(&initial_storage) {
        return Err(Error::Domain { what: "initial storage", value: initial_storage, lo: 0.0, hi: params.capacity });
    }
    let noise = Normal::new(0.0, true_market.noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(true_market.seed);
    let mut rls = RlsState::from_model(initial_model, config.forgetting, config.gain_scale)?;
    let mut model = initial_model.clone();
    // The tariff ceiling is fixed when the day starts. Re-deriving it from each
    // new estimate lets a briefly degenerate estimate post runaway prices.
    let mut scenario = scenario.clone();
    scenario.price_ceiling.get_or_insert_with(|| utility::price_cap(initial_model));
    let scenario = &scenario;

    let day_ahead = plan_day(scenario, &model, params, initial_storage, config)?;
    let mut storage = initial_storage;
    let mut hours = Vec::with_capacity(n);
    let mut storage_trajectory = vec![storage];
    let mut rls_trajectory = Vec::with_capacity(n);
    let mut cap_events = Vec::new();
    let mut clamped_hours = Vec::new();
    let mut nonconcave_hours = Vec::new();

    for k in 0..n {
        let ctx = stage_context(scenario, k, storage);
        let decision = match (config.execution, config.policy) {
            (Execution::OpenLoop, _) => day_ahead.decisions[k].clone(),
            (Execution::Receding, Policy::Greedy) => {
                let sol = solve_greedy_stage(&model, &ctx, params).map_err(|e| e.at_stage(k + 1))?;
                if !sol.concave {
                    nonconcave_hours.push(k + 1);
                }
                sol.decision
            }
            (Execution::Receding, Policy::Dp) => {
                let sol = if k == 0 {
                    day_ahead_first_stage(&day_ahead)
                } else {
                    let rest = scenario.suffix(k);
                    let table = value_function(&rest, &model, params, &config.grid).map_err(|e| e.at_stage(k + 1))?;
                    let local = stage_context(&rest, 0, storage);
                    let sol =
                        solve_dp_stage(&model, &local, params, table.continuation(1)).map_err(|e| e.at_stage(k + 1))?;
                    if !sol.concave || !table.nonconcave_stages.is_empty() {
                        nonconcave_hours.push(k + 1);
                    }
                    sol.decision
                };
                sol
            }
        };

        let planned = model.predict(&decision.prices)?;
        let mut realized: Vec<f64> = true_market
            .true_model
            .predict(&decision.prices)?
            .into_iter()
            .map(|d| {
                let eps = if true_market.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                (d + eps).max(0.0)
            })
            .collect();

        let available = storage + ctx.renewable + decision.purchase;
        let mut phi: f64 = realized.iter().sum();
        // Round-off at an active storage bound is not a cap event.
        let slack = utility::FEAS_TOL * (1.0 + available.abs());
        if phi > available + slack {
            let factor = if phi > 0.0 { available.max(0.0) / phi } else { 0.0 };
            realized.iter_mut().for_each(|d| *d *= factor);
            cap_events.push(CapEvent::Shortage { hour: k + 1, factor });
            phi = realized.iter().sum();
        }
        if phi > params.capacity + slack {
            let factor = params.capacity / phi;
            realized.iter_mut().for_each(|d| *d *= factor);
            cap_events.push(CapEvent::DemandAboveCapacity { hour: k + 1, factor });
            phi = realized.iter().sum();
        }
        let mut left = (available - phi).max(0.0);
        if left > params.capacity + slack {
            cap_events.push(CapEvent::Spill { hour: k + 1, energy: left - params.capacity });
            left = params.capacity;
        }
        left = left.min(params.capacity);

        let revenue = utility::revenue(&decision.prices, &realized, ctx.wholesale_price, decision.purchase)?;
        let satisfaction = utility::satisfaction(phi, params)?;
        let stress = utility::grid_stress(decision.purchase, params);
        let breakdown = UtilityBreakdown::new(revenue, satisfaction, stress, params.eta * left);

        let prediction_error = planned.iter().zip(&realized).map(|(p, r)| (p - r).abs()).sum::<f64>() / l as f64;

        let x = regressor(&decision.prices);
        for (j, &d) in realized.iter().enumerate() {
            rls.update(j, &x, d)?;
        }
        let (next_model, clamps) = rls.to_model();
        if clamps.any() {
            clamped_hours.push(k + 1);
        }
        model = next_model;
        rls_trajectory.push(rls.all_weights());

        hours.push(HourRecord {
            hour: k + 1,
            wholesale_price: ctx.wholesale_price,
            renewable: ctx.renewable,
            storage,
            decision,
            planned_demands: planned,
            realized_demands: realized,
            breakdown,
            prediction_error,
        });
        storage = left;
        storage_trajectory.push(storage);
    }

    let terminal_utility = params.terminal_salvage * storage;
    let decisions: Vec<Decision> = hours.iter().map(|h| h.decision.clone()).collect();
    Ok(SimReport {
        policy: config.policy,
        execution: config.execution,
        total_utility: hours.iter().map(|h| h.breakdown.total).sum::<f64>() + terminal_utility,
        total_profit: hours.iter().map(|h| h.breakdown.revenue).sum(),
        total_satisfaction: hours.iter().map(|h| h.breakdown.satisfaction).sum(),
        day_ahead_planned_utility: day_ahead.total_utility,
        purchase_variance: purchase_variance(&decisions),
        mean_price_variance: mean_price_variance(&decisions),
        terminal_utility,
        hours,
        storage_trajectory,
        rls_trajectory,
        cap_events,
        clamped_hours,
        nonconcave_hours,
    })
}

fn day_ahead_first_stage(plan: &Plan) -> Decision {
    plan.decisions[0].clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Beta,
    Eta,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SweepParam::Beta),
            "eta" => Ok(SweepParam::Eta),
            other => Err(Error::Invalid(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Day-ahead plan with the initial model, no simulation.
    Plan,
    ClosedLoop,
}

impl std::str::FromStr for SweepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plan" => Ok(SweepMode::Plan),
            "closed-loop" | "closed_loop" => Ok(SweepMode::ClosedLoop),
            other => Err(Error::Invalid(format!("unknown sweep mode {other:?} (plan|closed-loop)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepInputs<'a> {
    pub scenario: &'a MarketScenario,
    pub true_market: &'a TrueMarket,
    pub initial_model: &'a ElasticityModel,
    pub params: &'a EconomicParams,
    pub config: SimConfig,
    pub mode: SweepMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub total_profit: f64,
    pub total_satisfaction: f64,
    pub purchase_variance: f64,
    pub mean_price_variance: f64,
    pub total_utility: f64,
}

/// One run per value. Every run uses the same noise seed so rows differ only
/// through the swept parameter.
pub fn sweep(inputs: &SweepInputs<'_>, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Invalid("sweep needs at least one value".into()));
    }
    values
        .par_iter()
        .map(|&value| {
            let mut params = *inputs.params;
            match param {
                SweepParam::Beta => params.beta = value,
                SweepParam::Eta => params.eta = value,
            }
            match inputs.mode {
                SweepMode::Plan => {
                    let storage = inputs.config.initial_storage(&params);
                    let plan = plan_day(inputs.scenario, inputs.initial_model, &params, storage, &inputs.config)?;
                    Ok(SweepRow {
                        value,
                        total_profit: plan.total_profit,
                        total_satisfaction: plan.total_satisfaction,
                        purchase_variance: purchase_variance(&plan.decisions),
                        mean_price_variance: mean_price_variance(&plan.decisions),
                        total_utility: plan.total_utility,
                    })
                }
                SweepMode::ClosedLoop => {
                    let r = run_closed_loop(
                        inputs.scenario,
                        inputs.true_market,
                        inputs.initial_model,
                        &params,
                        &inputs.config,
                    )?;
                    Ok(SweepRow {
                        value,
                        total_profit: r.total_profit,
                        total_satisfaction: r.total_satisfaction,
                        purchase_variance: r.purchase_variance,
                        mean_price_variance: r.mean_price_variance,
                        total_utility: r.total_utility,
                    })
                }
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::parse("sweep csv", e);
    wtr.write_record([
        "value",
        "total_profit",
        "total_satisfaction",
        "purchase_variance",
        "mean_price_variance",
        "total_utility",
    ])
    .map_err(to_err)?;
    for r in rows {
        wtr.write_record(
            [
                r.value,
                r.total_profit,
                r.total_satisfaction,
                r.purchase_variance,
                r.mean_price_variance,
                r.total_utility,
            ]
            .map(|v| v.to_string()),
        )
        .map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::parse("sweep csv", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfitIncrease {
    /// `100 (dp - greedy) / |greedy|`; `None` when the baseline profit is ~0.
    pub percent: Option<f64>,
    pub absolute: f64,
}

/// Relative profit gain of `candidate` over `baseline`.
pub fn profit_increase(baseline: f64, candidate: f64) -> ProfitIncrease {
    let absolute = candidate - baseline;
    let percent = if baseline.abs() <= 1e-9 { None } else { Some(100.0 * absolute / baseline.abs()) };
    ProfitIncrease { percent, absolute }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub greedy: SimReport,
    pub dp: SimReport,
    pub increase: ProfitIncrease,
}

/// Runs the greedy and DP policies on the same seed.
pub fn compare_policies(
    scenario: &MarketScenario,
    true_market: &TrueMarket,
    initial_model: &ElasticityModel,
    params: &EconomicParams,
    config: &SimConfig,
) -> Result<Comparison> {
    let greedy_cfg = SimConfig { policy: Policy::Greedy, ..*config };
    let dp_cfg = SimConfig { policy: Policy::Dp, ..*config };
    let (greedy, dp) = rayon::join(
        || run_closed_loop(scenario, true_market, initial_model, params, &greedy_cfg),
        || run_closed_loop(scenario, true_market, initial_model, params, &dp_cfg),
    );
    let (greedy, dp) = (greedy?, dp?);
    let increase = profit_increase(greedy.total_profit, dp.total_profit);
    Ok(Comparison { greedy, dp, increase })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{synth_scenario, Profile};

    #[test]
    fn variance_helpers() {
        assert_eq!(variance(&[]), 0.0);
        assert_eq!(variance(&[2.0, 2.0]), 0.0);
        assert_eq!(variance(&[1.0, 3.0]), 1.0);
        let ds = vec![
            Decision { prices: vec![1.0, 5.0], purchase: 2.0 },
            Decision { prices: vec![3.0, 5.0], purchase: 4.0 },
        ];
        assert_eq!(purchase_variance(&ds), 1.0);
        assert_eq!(mean_price_variance(&ds), 0.5);
    }

    #[test]
    fn profit_increase_guard() {
        assert_eq!(profit_increase(100.0, 100.0).percent, Some(0.0));
        assert_eq!(profit_increase(-50.0, -25.0).percent, Some(50.0));
        let z = profit_increase(1e-12, 3.0);
        assert!(z.percent.is_none());
        assert_eq!(z.absolute, 3.0 - 1e-12);
    }

    #[test]
    fn greedy_closed_loop_storage_in_bounds() {
        let scenario = synth_scenario(2, 24, Profile::Diurnal).unwrap();
        let truth = ElasticityModel::synthetic(1, 3).unwrap();
        let initial = ElasticityModel::synthetic(2, 3).unwrap();
        let params = EconomicParams::table1();
        let market = TrueMarket { true_model: truth, noise_std: 1.0, seed: 3 };
        let config = SimConfig { policy: Policy::Greedy, ..Default::default() };
        let r = run_closed_loop(&scenario, &market, &initial, &params, &config).unwrap();
        assert_eq!(r.hours.len(), 24);
        assert_eq!(r.rls_trajectory.len(), 24);
        for s in &r.storage_trajectory {
            assert!((0.0..=params.capacity).contains(s));
        }
        for h in &r.hours {
            let b = h.breakdown;
            assert_eq!(b.total, b.revenue + b.satisfaction - b.grid_stress - b.storage_cost);
        }
    }
}
