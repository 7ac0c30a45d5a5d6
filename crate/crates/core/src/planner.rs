//! Day-ahead planning: greedy per-stage policy, backward dynamic programming
//! over the storage level, and an exhaustive lattice search for tiny instances.
//!
//! The DP value function `J_k` is sampled on a uniform storage grid and
//! linearly interpolated between grid points. Because `I_{k+1}` is affine in
//! the stage decision, the stage problem with the interpolated continuation is
//! piecewise quadratic. When the sampled row is concave it is solved exactly as
//! one QP with an epigraph variable bounded by every linear piece; otherwise each
//! piece is solved separately with the storage interval as extra constraints
//! and the best piece is kept.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::ElasticityModel;
use crate::error::{Error, Result};
use crate::qp::{maximize_quadratic, maximize_quadratic_from, LinearConstraintSet, QpStatus, QuadForm, DEFAULT_TOL};
use crate::scenario::{EconomicParams, MarketScenario};
use crate::utility::{self, breakdown, quad_form, stage_constraints, Decision, StageContext, UtilityBreakdown};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_points: usize,
    pub interpolation: Interpolation,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_points: 201, interpolation: Interpolation::Linear }
    }
}

impl GridConfig {
    pub fn with_points(n_points: usize) -> Self {
        GridConfig { n_points, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Greedy,
    Dp,
}

impl std::str::FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Policy::Greedy),
            "dp" => Ok(Policy::Dp),
            other => Err(Error::Invalid(format!("unknown policy {other:?}"))),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Policy::Greedy => "greedy",
            Policy::Dp => "dp",
        })
    }
}

/// Full-day schedule with the predicted outcome of every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub decisions: Vec<Decision>,
    /// `predicted_demands[k][j]`: demand at station `j` in stage `k`.
    pub predicted_demands: Vec<Vec<f64>>,
    /// Storage at the start of each stage plus the final level (`N + 1` values).
    pub storage_trajectory: Vec<f64>,
    pub breakdowns: Vec<UtilityBreakdown>,
    pub terminal_utility: f64,
    pub total_utility: f64,
    pub total_profit: f64,
    pub total_satisfaction: f64,
    /// Stages whose stage problem was not concave.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nonconcave_stages: Vec<usize>,
}

impl Plan {
    /// Evaluates `decisions` from `initial_storage` under `model`.
    pub fn assemble(
        scenario: &MarketScenario,
        model: &ElasticityModel,
        params: &EconomicParams,
        initial_storage: f64,
        decisions: Vec<Decision>,
        nonconcave_stages: Vec<usize>,
    ) -> Result<Plan> {
        let mut storage = initial_storage;
        let mut storage_trajectory = vec![storage];
        let mut predicted_demands = Vec::with_capacity(decisions.len());
        let mut breakdowns = Vec::with_capacity(decisions.len());
        for (k, d) in decisions.iter().enumerate() {
            let ctx = stage_context(scenario, k, storage);
            let demands = model.predict(&d.prices).map_err(|e| e.at_stage(k + 1))?;
            let b = breakdown(&ctx, d, &demands, params).map_err(|e| e.at_stage(k + 1))?;
            storage = utility::leftover(&ctx, d.purchase, demands.iter().sum()).clamp(0.0, params.capacity);
            storage_trajectory.push(storage);
            predicted_demands.push(demands);
            breakdowns.push(b);
        }
        let terminal_utility = params.terminal_salvage * storage;
        Ok(Plan {
            total_utility: breakdowns.iter().map(|b| b.total).sum::<f64>() + terminal_utility,
            total_profit: breakdowns.iter().map(|b| b.revenue).sum(),
            total_satisfaction: breakdowns.iter().map(|b| b.satisfaction).sum(),
            decisions,
            predicted_demands,
            storage_trajectory,
            breakdowns,
            terminal_utility,
            nonconcave_stages,
        })
    }

    pub fn summary_line(&self) -> String {
        format!(
            "total_utility={:.6} total_profit={:.6} total_satisfaction={:.6}",
            self.total_utility, self.total_profit, self.total_satisfaction
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// Flat per-horizon table:
    /// `hour,c,u,storage,p_1..p_L,o,d_1..d_L,R,G,Q,W,Pi`.
    pub fn write_csv<W: Write>(&self, scenario: &MarketScenario, writer: W) -> Result<()> {
        let l = self.decisions.first().map_or(0, |d| d.prices.len());
        let mut wtr = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::parse("plan csv", e);
        let mut header = vec!["hour".to_string(), "c".into(), "u".into(), "storage".into()];
        header.extend((1..=l).map(|j| format!("p_{j}")));
        header.push("o".into());
        header.extend((1..=l).map(|j| format!("d_{j}")));
        header.extend(["R", "G", "Q", "W", "Pi"].map(String::from));
        wtr.write_record(&header).map_err(to_err)?;
        for (k, d) in self.decisions.iter().enumerate() {
            let b = &self.breakdowns[k];
            let mut rec = vec![
                (k + 1).to_string(),
                scenario.wholesale_prices[k].to_string(),
                scenario.renewable[k].to_string(),
                self.storage_trajectory[k].to_string(),
            ];
            rec.extend(d.prices.iter().map(f64::to_string));
            rec.push(d.purchase.to_string());
            rec.extend(self.predicted_demands[k].iter().map(f64::to_string));
            rec.extend([b.revenue, b.satisfaction, b.grid_stress, b.storage_cost, b.total].map(|v| v.to_string()));
            wtr.write_record(&rec).map_err(to_err)?;
        }
        wtr.flush().map_err(|e| Error::parse("plan csv", e))?;
        Ok(())
    }
}

pub(crate) fn stage_context(scenario: &MarketScenario, k: usize, storage: f64) -> StageContext {
    StageContext {
        horizon: k,
        wholesale_price: scenario.wholesale_prices[k],
        renewable: scenario.renewable[k],
        storage,
        price_ceiling: scenario.price_ceiling,
    }
}

/// Solution of one stage problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    pub decision: Decision,
    /// Stage utility plus interpolated continuation value.
    pub value: f64,
    pub concave: bool,
}

/// Sampled value function of the next stage.
#[derive(Debug, Clone, Copy)]
pub struct Continuation<'a> {
    pub grid: &'a [f64],
    /// `NEG_INFINITY` marks storage levels from which no feasible schedule exists.
    pub values: &'a [f64],
}

impl Continuation<'_> {
    fn finite_range(&self) -> Option<(usize, usize)> {
        let lo = self.values.iter().position(|v| v.is_finite())?;
        let hi = self.values.iter().rposition(|v| v.is_finite())?;
        Some((lo, hi))
    }

    /// Linear interpolation; `NEG_INFINITY` outside the finite range.
    pub fn eval(&self, y: f64) -> f64 {
        let Some((lo, hi)) = self.finite_range() else {
            return f64::NEG_INFINITY;
        };
        let tol = 1e-9 * (1.0 + self.grid[self.grid.len() - 1]);
        if y < self.grid[lo] - tol || y > self.grid[hi] + tol {
            return f64::NEG_INFINITY;
        }
        if lo == hi {
            return self.values[lo];
        }
        let y = y.clamp(self.grid[lo], self.grid[hi]);
        let i = match self.grid[lo..=hi].binary_search_by(|g| g.total_cmp(&y)) {
            Ok(i) => return self.values[lo + i],
            Err(i) => (lo + i - 1).min(hi - 1),
        };
        let t = (y - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    fn slopes(&self, lo: usize, hi: usize) -> Vec<f64> {
        (lo..hi).map(|i| (self.values[i + 1] - self.values[i]) / (self.grid[i + 1] - self.grid[i])).collect()
    }

    /// True when the finite part has nonincreasing slopes (up to round-off).
    pub fn is_concave(&self) -> bool {
        let Some((lo, hi)) = self.finite_range() else {
            return true;
        };
        if self.values[lo..=hi].iter().any(|v| !v.is_finite()) {
            return false;
        }
        let slopes = self.slopes(lo, hi);
        let vmax = self.values[lo..=hi].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let spacing = (self.grid[hi] - self.grid[lo]).max(1e-12) / (hi - lo).max(1) as f64;
        let tol = 1e-8 * (1.0 + vmax) / spacing;
        slopes.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

/// Storage after the stage is `y = I + u - G0 + o - s'p`; returns `(offset, s)`.
fn next_storage_affine(model: &ElasticityModel, ctx: &StageContext) -> (f64, Vec<f64>) {
    (ctx.storage + ctx.renewable - model.total_intercept(), model.total_sensitivity())
}

/// Greedy stage: maximizes the stage utility alone.
pub fn solve_greedy_stage(
    model: &ElasticityModel,
    ctx: &StageContext,
    params: &EconomicParams,
) -> Result<StageSolution> {
    let form = quad_form(model, ctx, params, 0.0);
    let set = stage_constraints(model, ctx, params);
    let sol = maximize_quadratic(&form, &set, DEFAULT_TOL)?;
    Ok(StageSolution {
        decision: Decision::from_vector(&sol.x),
        value: sol.value,
        concave: sol.status == QpStatus::Optimal,
    })
}

/// Stage problem with an interpolated continuation value.
pub fn solve_dp_stage(
    model: &ElasticityModel,
    ctx: &StageContext,
    params: &EconomicParams,
    next: Continuation<'_>,
) -> Result<StageSolution> {
    solve_dp_stage_from(model, ctx, params, next, None)
}

/// As [`solve_dp_stage`], seeding the solver with a nearby decision.
fn solve_dp_stage_from(
    model: &ElasticityModel,
    ctx: &StageContext,
    params: &EconomicParams,
    next: Continuation<'_>,
    start: Option<&Decision>,
) -> Result<StageSolution> {
    let form = quad_form(model, ctx, params, 0.0);
    let concave_form = crate::qp::concavity_report(&form.q)?.negative_semidefinite;
    if concave_form && next.is_concave() {
        solve_epigraph(model, ctx, params, &form, next, start)
    } else {
        solve_piecewise(model, ctx, params, &form, next)
    }
}

fn finish(
    form: &QuadForm,
    x: &[f64],
    model: &ElasticityModel,
    ctx: &StageContext,
    next: Continuation<'_>,
    concave: bool,
) -> StageSolution {
    let (offset, s) = next_storage_affine(model, ctx);
    let l = model.n_stations;
    let y = offset + x[l] - s.iter().zip(x).map(|(a, p)| a * p).sum::<f64>();
    StageSolution { decision: Decision::from_vector(&x[..=l]), value: form.value(&x[..=l]) + next.eval(y), concave }
}

/// One QP in `(p, o, t)` with `t <= piece_i(y)` for every linear piece.
fn solve_epigraph(
    model: &ElasticityModel,
    ctx: &StageContext,
    params: &EconomicParams,
    form: &QuadForm,
    next: Continuation<'_>,
    start: Option<&Decision>,
) -> Result<StageSolution> {
    let (lo, hi) = next.finite_range().ok_or(Error::InfeasibleConstraints(f64::INFINITY))?;
    let l = model.n_stations;
    let n = l + 2;
    let (offset, s) = next_storage_affine(model, ctx);
    let base = stage_constraints(model, ctx, params);

    let mut q = nalgebra::DMatrix::zeros(n, n);
    q.view_mut((0, 0), (l + 1, l + 1)).copy_from(&form.q);
    let mut b = nalgebra::DVector::zeros(n);
    b.rows_mut(0, l + 1).copy_from(&form.b);
    b[l + 1] = 1.0;
    let ext_form = QuadForm { q, b, r: form.r };

    let mut lower = base.lower.clone();
    let mut upper = base.upper.clone();
    let vmax = next.values[lo..=hi].iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    lower.push(f64::NEG_INFINITY);
    upper.push(vmax);
    let mut set = LinearConstraintSet::boxed(lower, upper);
    for row in &base.rows {
        set.push(row.coeffs.iter().copied().chain(std::iter::once(0.0)).collect(), row.bound);
    }
    // y in [grid[lo], grid[hi]]
    let y_row = |sign: f64| -> Vec<f64> { s.iter().map(|v| -sign * v).chain([sign, 0.0]).collect() };
    if lo > 0 {
        set.push(y_row(-1.0), offset - next.grid[lo]);
    }
    if hi + 1 < next.grid.len() {
        set.push(y_row(1.0), next.grid[hi] - offset);
    }
    if lo == hi {
        set.push(s.iter().map(|_| 0.0).chain([0.0, 1.0]).collect(), next.values[lo]);
    }
    // t - slope * (o - s'p) <= J_i + slope * (offset - g_i)
    for i in lo..hi {
        let slope = (next.values[i + 1] - next.values[i]) / (next.grid[i + 1] - next.grid[i]);
        let row: Vec<f64> = s.iter().map(|v| slope * v).chain([-slope, 1.0]).collect();
        set.push(row, next.values[i] + slope * (offset - next.grid[i]));
    }
    // Start just below the continuation so the solver does not walk every piece.
    let start = start.map(|d| {
        let mut x = d.to_vector();
        let y = offset + x[l] - s.iter().zip(&x).map(|(a, p)| a * p).sum::<f64>();
        let j = next.eval(y.clamp(next.grid[lo], next.grid[hi]));
        x.push(j - 1e-9 * (1.0 + j.abs()));
        x
    });
    let sol = maximize_quadratic_from(&ext_form, &set, DEFAULT_TOL, start.as_deref())?;
    Ok(finish(form, &sol.x, model, ctx, next, true))
}

/// Range of next-stage storage `y = offset + o - s'p` over the stage constraints.
fn reachable_storage(set: &LinearConstraintSet, offset: f64, s: &[f64]) -> Result<(f64, f64)> {
    let n = set.dim();
    let extreme = |sign: f64| -> Result<f64> {
        let b: Vec<f64> = s.iter().map(|v| -sign * v).chain([sign]).collect();
        let lp = QuadForm { q: nalgebra::DMatrix::zeros(n, n), b: nalgebra::DVector::from_vec(b), r: 0.0 };
        Ok(offset + sign * maximize_quadratic(&lp, set, DEFAULT_TOL)?.value)
    };
    Ok((extreme(-1.0)?, extreme(1.0)?))
}

/// One QP per linear piece of the continuation that the stage can reach; keeps the best.
fn solve_piecewise(
    model: &ElasticityModel,
    ctx: &StageContext,
    params: &EconomicParams,
    form: &QuadForm,
    next: Continuation<'_>,
) -> Result<StageSolution> {
    let (lo, hi) = next.finite_range().ok_or(Error::InfeasibleConstraints(f64::INFINITY))?;
    let l = model.n_stations;
    let (offset, s) = next_storage_affine(model, ctx);
    let base = stage_constraints(model, ctx, params);
    let (y_min, y_max) = reachable_storage(&base, offset, &s)?;
    let tol = 1e-9 * (1.0 + params.capacity);
    let pieces: Vec<(usize, usize)> = if lo == hi {
        vec![(lo, lo)]
    } else {
        (lo..hi)
            .filter(|&i| next.grid[i + 1] >= y_min - tol && next.grid[i] <= y_max + tol)
            .map(|i| (i, i + 1))
            .collect()
    };
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    // adjacent pieces have nearby optima
    let mut prev: Option<Vec<f64>> = None;
    for (a, b) in pieces {
        let slope = if a == b { 0.0 } else { (next.values[b] - next.values[a]) / (next.grid[b] - next.grid[a]) };
        let mut piece_form = form.clone();
        for j in 0..l {
            piece_form.b[j] -= slope * s[j];
        }
        piece_form.b[l] += slope;
        piece_form.r += next.values[a] + slope * (offset - next.grid[a]);
        let mut set = base.clone();
        // grid[a] <= y <= grid[b]
        set.push(s.iter().copied().chain([-1.0]).collect(), offset - next.grid[a]);
        set.push(s.iter().map(|v| -v).chain([1.0]).collect(), next.grid[b] - offset);
        let sol = match maximize_quadratic_from(&piece_form, &set, DEFAULT_TOL, prev.as_deref()) {
            Ok(sol) => {
                prev = Some(sol.x.clone());
                sol
            }
            Err(Error::InfeasibleConstraints(_)) => continue,
            Err(e) => return Err(e),
        };
        let better = match &best {
            None => true,
            Some((bx, bv, _)) => sol.value > *bv || (sol.value == *bv && sol.x < *bx),
        };
        if better {
            best = Some((sol.x, sol.value, sol.status == QpStatus::Optimal));
        }
    }
    let (x, _, concave) = best.ok_or(Error::InfeasibleConstraints(f64::INFINITY))?;
    let concave = concave && crate::qp::concavity_report(&form.q)?.negative_semidefinite;
    Ok(finish(form, &x, model, ctx, next, concave))
}

/// Per-piece solve regardless of concavity; exposed so tests can cross-check
/// the epigraph route.
pub fn solve_dp_stage_piecewise(
    model: &ElasticityModel,
    ctx: &StageContext,
    params: &EconomicParams,
    next: Continuation<'_>,
) -> Result<StageSolution> {
    let form = quad_form(model, ctx, params, 0.0);
    solve_piecewise(model, ctx, params, &form, next)
}

fn check_initial(initial_storage: f64, params: &EconomicParams) -> Result<()> {
    params.validate()?;
    if !(0.0..=params.capacity).contains(&initial_storage) {
        return Err(Error::Domain { what: "initial storage", value: initial_storage, lo: 0.0, hi: params.capacity });
    }
    Ok(())
}

fn check_model(scenario: &MarketScenario, model: &ElasticityModel) -> Result<()> {
    model.validate()?;
    if scenario.n_horizons == 0 {
        return Err(Error::Invalid("empty scenario".into()));
    }
    Ok(())
}

/// Maximizes each stage's utility on its own, advancing storage between stages.
pub fn greedy_plan(
    scenario: &MarketScenario,
    model: &ElasticityModel,
    params: &EconomicParams,
    initial_storage: f64,
) -> Result<Plan> {
    check_initial(initial_storage, params)?;
    check_model(scenario, model)?;
    let mut storage = initial_storage;
    let mut decisions = Vec::with_capacity(scenario.n_horizons);
    let mut nonconcave = Vec::new();
    for k in 0..scenario.n_horizons {
        let ctx = stage_context(scenario, k, storage);
        let sol = solve_greedy_stage(model, &ctx, params).map_err(|e| e.at_stage(k + 1))?;
        if !sol.concave {
            nonconcave.push(k);
        }
        let phi: f64 = model.predict_unchecked(&sol.decision.prices).iter().sum();
        storage = utility::leftover(&ctx, sol.decision.purchase, phi).clamp(0.0, params.capacity);
        decisions.push(sol.decision);
    }
    Plan::assemble(scenario, model, params, initial_storage, decisions, nonconcave)
}

/// Backward value table over a uniform storage grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub storage_grid: Vec<f64>,
    /// `values[k][m]` is `J_{k+1}` at `storage_grid[m]`; row `N` is the terminal row.
    pub values: Vec<Vec<f64>>,
    /// Maximizing decision per stage and grid point (`None` where infeasible).
    pub decisions: Vec<Vec<Option<Decision>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nonconcave_stages: Vec<usize>,
}

impl ValueTable {
    pub fn continuation(&self, stage: usize) -> Continuation<'_> {
        Continuation { grid: &self.storage_grid, values: &self.values[stage] }
    }

    /// `stage,storage,value` rows with 1-based stages, terminal row included.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::parse("value table csv", e);
        wtr.write_record(["stage", "storage", "value"]).map_err(to_err)?;
        for (k, row) in self.values.iter().enumerate() {
            for (g, v) in self.storage_grid.iter().zip(row) {
                wtr.write_record([(k + 1).to_string(), g.to_string(), v.to_string()]).map_err(to_err)?;
            }
        }
        wtr.flush().map_err(|e| Error::parse("value table csv", e))?;
        Ok(())
    }
}

pub fn storage_grid(params: &EconomicParams, grid: &GridConfig) -> Result<Vec<f64>> {
    if grid.n_points < 2 {
        return Err(Error::Invalid(format!("grid needs at least 2 points, got {}", grid.n_points)));
    }
    let m = grid.n_points - 1;
    Ok((0..=m).map(|i| params.capacity * i as f64 / m as f64).collect())
}

const WARM_CHUNK: usize = 32;

/// Backward recursion `J_k(I) = max { Pi_k + J_{k+1}(I_{k+1}) }` on the grid.
pub fn value_function(
    scenario: &MarketScenario,
    model: &ElasticityModel,
    params: &EconomicParams,
    grid: &GridConfig,
) -> Result<ValueTable> {
    params.validate()?;
    check_model(scenario, model)?;
    let storage_grid = storage_grid(params, grid)?;
    let n = scenario.n_horizons;
    let mut values = vec![Vec::new(); n + 1];
    values[n] = storage_grid.iter().map(|g| params.terminal_salvage * g).collect();
    let mut decisions = vec![Vec::new(); n];
    let mut nonconcave = Vec::new();
    for k in (0..n).rev() {
        let next = Continuation { grid: &storage_grid, values: &values[k + 1] };
        // Neighbouring grid points have similar optima, so each chunk is
        // solved in order with warm starts.
        let solved: Vec<Result<Option<StageSolution>>> = storage_grid
            .par_chunks(WARM_CHUNK)
            .flat_map_iter(|chunk| {
                let mut prev: Option<Decision> = None;
                chunk
                    .iter()
                    .map(|&g| {
                        let ctx = stage_context(scenario, k, g);
                        match solve_dp_stage_from(model, &ctx, params, next, prev.as_ref()) {
                            Ok(sol) => {
                                prev = Some(sol.decision.clone());
                                Ok(Some(sol))
                            }
                            Err(Error::InfeasibleConstraints(_)) => Ok(None),
                            Err(e) => Err(e),
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut row = Vec::with_capacity(storage_grid.len());
        let mut row_decisions = Vec::with_capacity(storage_grid.len());
        let mut stage_concave = true;
        for sol in solved {
            match sol.map_err(|e| e.at_stage(k + 1))? {
                Some(s) => {
                    stage_concave &= s.concave;
                    row.push(s.value);
                    row_decisions.push(Some(s.decision));
                }
                None => {
                    row.push(f64::NEG_INFINITY);
                    row_decisions.push(None);
                }
            }
        }
        if row.iter().all(|v| !v.is_finite()) {
            return Err(Error::InfeasibleConstraints(f64::INFINITY).at_stage(k + 1));
        }
        if !stage_concave {
            nonconcave.push(k);
        }
        values[k] = row;
        decisions[k] = row_decisions;
    }
    nonconcave.reverse();
    Ok(ValueTable { storage_grid, values, decisions, nonconcave_stages: nonconcave })
}

/// Forward pass of the DP policy from `initial_storage`, re-solving each
/// stage at the exact storage level.
pub fn dp_plan(
    scenario: &MarketScenario,
    model: &ElasticityModel,
    params: &EconomicParams,
    initial_storage: f64,
    grid: &GridConfig,
) -> Result<Plan> {
    check_initial(initial_storage, params)?;
    let table = value_function(scenario, model, params, grid)?;
    dp_plan_with_table(scenario, model, params, initial_storage, &table)
}

pub fn dp_plan_with_table(
    scenario: &MarketScenario,
    model: &ElasticityModel,
    params: &EconomicParams,
    initial_storage: f64,
    table: &ValueTable,
) -> Result<Plan> {
    let mut storage = initial_storage;
    let mut decisions = Vec::with_capacity(scenario.n_horizons);
    let mut nonconcave = table.nonconcave_stages.clone();
    for k in 0..scenario.n_horizons {
        let ctx = stage_context(scenario, k, storage);
        let sol = solve_dp_stage(model, &ctx, params, table.continuation(k + 1)).map_err(|e| e.at_stage(k + 1))?;
        if !sol.concave && !nonconcave.contains(&k) {
            nonconcave.push(k);
        }
        let phi: f64 = model.predict_unchecked(&sol.decision.prices).iter().sum();
        storage = utility::leftover(&ctx, sol.decision.purchase, phi).clamp(0.0, params.capacity);
        decisions.push(sol.decision);
    }
    nonconcave.sort_unstable();
    Plan::assemble(scenario, model, params, initial_storage, decisions, nonconcave)
}

/// Limit on the number of decision sequences [`exhaustive_oracle`] enumerates.
pub const MAX_ENUMERATION: f64 = 1e8;

struct LatticeOption {
    decision: Decision,
    phi: f64,
    /// `sum p d + G(phi) - Q(o)`: the storage-independent part except `c o`.
    base: f64,
}

/// Brute-force search over lattice decisions for every stage.
pub fn exhaustive_oracle(
    scenario: &MarketScenario,
    model: &ElasticityModel,
    params: &EconomicParams,
    initial_storage: f64,
    price_lattice: &[f64],
    purchase_lattice: &[f64],
) -> Result<Plan> {
    check_initial(initial_storage, params)?;
    check_model(scenario, model)?;
    let l = model.n_stations;
    let per_stage = (price_lattice.len() as f64).powi(l as i32) * purchase_lattice.len() as f64;
    let combos = per_stage.powi(scenario.n_horizons as i32);
    if combos > MAX_ENUMERATION {
        return Err(Error::TooManyCombinations(combos, MAX_ENUMERATION));
    }
    let mut options = Vec::new();
    let mut idx = vec![0usize; l];
    'outer: loop {
        let prices: Vec<f64> = idx.iter().map(|&i| price_lattice[i]).collect();
        let demands = model.predict_unchecked(&prices);
        let phi: f64 = demands.iter().sum();
        let ok_prices = prices.iter().all(|&p| p >= 0.0)
            && demands.iter().all(|&d| d >= -utility::FEAS_TOL)
            && phi <= params.capacity + utility::FEAS_TOL;
        if ok_prices {
            let pd: f64 = prices.iter().zip(&demands).map(|(p, d)| p * d).sum();
            let g = params.beta * (params.omega * phi - 0.5 * params.alpha * phi * phi);
            for &o in purchase_lattice {
                if o < 0.0 || o > params.o_max {
                    continue;
                }
                options.push(LatticeOption {
                    decision: Decision { prices: prices.clone(), purchase: o },
                    phi,
                    base: pd + g - utility::grid_stress(o, params),
                });
            }
        }
        for d in (0..l).rev() {
            idx[d] += 1;
            if idx[d] < price_lattice.len() {
                continue 'outer;
            }
            idx[d] = 0;
        }
        break;
    }

    struct Search<'a> {
        scenario: &'a MarketScenario,
        params: &'a EconomicParams,
        options: &'a [LatticeOption],
        path: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }
    impl Search<'_> {
        fn go(&mut self, k: usize, storage: f64, acc: f64) {
            if k == self.scenario.n_horizons {
                let total = acc + self.params.terminal_salvage * storage;
                if self.best.as_ref().is_none_or(|(b, _)| total > *b) {
                    self.best = Some((total, self.path.clone()));
                }
                return;
            }
            let c = self.scenario.wholesale_prices[k];
            let supply = storage + self.scenario.renewable[k];
            for (i, opt) in self.options.iter().enumerate() {
                let left = supply + opt.decision.purchase - opt.phi;
                if left < -utility::FEAS_TOL || left > self.params.capacity + utility::FEAS_TOL {
                    continue;
                }
                let value = opt.base - c * opt.decision.purchase - self.params.eta * left;
                self.path.push(i);
                self.go(k + 1, left.clamp(0.0, self.params.capacity), acc + value);
                self.path.pop();
            }
        }
    }
    let mut search = Search { scenario, params, options: &options, path: Vec::new(), best: None };
    search.go(0, initial_storage, 0.0);
    let (_, path) = search.best.ok_or(Error::EmptyFeasibleSet)?;
    let decisions = path.into_iter().map(|i| options[i].decision.clone()).collect();
    Plan::assemble(scenario, model, params, initial_storage, decisions, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{synth_scenario, Profile};
    use approx::assert_abs_diff_eq;

    fn single_station() -> ElasticityModel {
        ElasticityModel::new(vec![20.0], vec![vec![-0.5]]).unwrap()
    }

    fn bare_params() -> EconomicParams {
        EconomicParams { beta: 0.0, mu: 0.0, eta: 0.0, ..EconomicParams::table1() }
    }

    #[test]
    fn continuation_interpolates() {
        let grid = [0.0, 1.0, 2.0];
        let vals = [0.0, 2.0, 3.0];
        let c = Continuation { grid: &grid, values: &vals };
        assert_eq!(c.eval(0.5), 1.0);
        assert_eq!(c.eval(2.0), 3.0);
        assert_eq!(c.eval(1.0), 2.0);
        assert!(c.is_concave());
        let vals = [0.0, 1.0, 3.0];
        assert!(!Continuation { grid: &grid, values: &vals }.is_concave());
        let vals = [f64::NEG_INFINITY, 1.0, 3.0];
        let c = Continuation { grid: &grid, values: &vals };
        assert_eq!(c.eval(0.5), f64::NEG_INFINITY);
        assert_eq!(c.eval(1.5), 2.0);
    }

    #[test]
    fn greedy_monopoly_price() {
        // revenue p (g - a p) - c o with o forced to match demand via storage;
        // with a large store and no costs the stage maximizes p (g - a p) - c o, o = 0
        let model = single_station();
        let scenario = MarketScenario::new(vec![30.0; 3], vec![0.0; 3]).unwrap();
        let plan = greedy_plan(&scenario, &model, &bare_params(), 200.0).unwrap();
        // p* = g / (2 |a|) = 20 while storage lasts
        assert_abs_diff_eq!(plan.decisions[0].prices[0], 20.0, epsilon = 1e-6);
        assert_abs_diff_eq!(plan.decisions[0].purchase, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn greedy_decisions_are_feasible() {
        let scenario = synth_scenario(1, 24, Profile::Diurnal).unwrap();
        let model = ElasticityModel::synthetic(2, 3).unwrap();
        let params = EconomicParams::table1();
        let plan = greedy_plan(&scenario, &model, &params, 100.0).unwrap();
        for (k, d) in plan.decisions.iter().enumerate() {
            let ctx = stage_context(&scenario, k, plan.storage_trajectory[k]);
            let f = utility::check_feasible(&model, &ctx, d, &params);
            assert!(f.is_feasible(), "stage {k}: {:?}", f.violations);
        }
    }

    #[test]
    fn single_stage_dp_equals_greedy() {
        let scenario = synth_scenario(5, 1, Profile::Diurnal).unwrap();
        let model = ElasticityModel::synthetic(5, 2).unwrap();
        let params = EconomicParams::table1();
        let g = greedy_plan(&scenario, &model, &params, 100.0).unwrap();
        let d = dp_plan(&scenario, &model, &params, 100.0, &GridConfig::with_points(21)).unwrap();
        assert_abs_diff_eq!(g.total_utility, d.total_utility, epsilon = 1e-6 * (1.0 + g.total_utility.abs()));
        for (a, b) in g.decisions[0].to_vector().iter().zip(d.decisions[0].to_vector()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-5);
        }
    }

    #[test]
    fn terminal_row_and_free_storage_monotone() {
        let scenario = synth_scenario(3, 6, Profile::Diurnal).unwrap();
        let model = ElasticityModel::synthetic(3, 2).unwrap();
        let mut params = EconomicParams::table1();
        params.eta = 0.0;
        let table = value_function(&scenario, &model, &params, &GridConfig::with_points(41)).unwrap();
        assert!(table.values[6].iter().all(|&v| v == 0.0));
        for row in &table.values {
            for w in row.windows(2) {
                assert!(w[1] >= w[0] - 1e-6 * (1.0 + w[0].abs()), "{w:?}");
            }
        }
    }

    #[test]
    fn zero_price_rows_are_nonpositive() {
        // zero intercepts with negative own elasticity: d >= 0 forces p = 0
        let scenario = synth_scenario(3, 4, Profile::Diurnal).unwrap();
        let model = ElasticityModel::new(vec![0.0], vec![vec![-1.0]]).unwrap();
        let params = EconomicParams { beta: 0.0, ..EconomicParams::table1() };
        let table = value_function(&scenario, &model, &params, &GridConfig::with_points(21)).unwrap();
        for (k, row) in table.values[..4].iter().enumerate() {
            assert!(row.iter().all(|&v| v <= 1e-9), "{row:?}");
            for d in table.decisions[k].iter().flatten() {
                assert!(d.prices[0].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lattice_oracle_guard() {
        let scenario = synth_scenario(3, 24, Profile::Flat).unwrap();
        let lattice: Vec<f64> = (0..21).map(|i| i as f64).collect();
        let err = exhaustive_oracle(&scenario, &single_station(), &EconomicParams::table1(), 100.0, &lattice, &lattice);
        assert!(matches!(err, Err(Error::TooManyCombinations(..))));
    }

    #[test]
    fn lattice_single_stage_matches_grid_search() {
        let scenario = MarketScenario::new(vec![30.0], vec![0.0]).unwrap();
        let model = single_station();
        let params = EconomicParams { capacity: 60.0, o_ref: 10.0, o_max: 20.0, ..EconomicParams::table1() };
        let prices: Vec<f64> = (0..=20).map(|i| 2.0 * i as f64).collect();
        let purchases: Vec<f64> = (0..=20).map(|i| i as f64).collect();
        let plan = exhaustive_oracle(&scenario, &model, &params, 10.0, &prices, &purchases).unwrap();
        let ctx = stage_context(&scenario, 0, 10.0);
        let form = quad_form(&model, &ctx, &params, 0.0);
        let mut set = stage_constraints(&model, &ctx, &params);
        set.upper[0] = 40.0;
        let (x, v) = crate::qp::grid_oracle(&form, &set, 1.0).unwrap();
        // grid search on odd prices too; the oracle lattice is a subset
        assert!(plan.total_utility <= v + 1e-9);
        let (_, v2) = {
            let mut best = (Vec::new(), f64::NEG_INFINITY);
            for &p in &prices {
                for &o in &purchases {
                    let xx = [p, o];
                    if set.is_satisfied(&xx, 1e-9) && form.value(&xx) > best.1 {
                        best = (xx.to_vec(), form.value(&xx));
                    }
                }
            }
            best
        };
        assert_abs_diff_eq!(plan.total_utility, v2, epsilon = 1e-9);
        let _ = x;
    }
}
