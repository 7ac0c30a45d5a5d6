//! Stage utility of the provider and its quadratic form.
//!
//! For one stage with prices `p`, purchase `o`, storage `I` and renewable `u`:
//!
//! ```text
//! revenue       R = sum_j p_j d_j - c o
//! satisfaction  G = beta (omega phi - alpha/2 phi^2),   phi = sum_j d_j
//! grid stress   Q = mu (o - o_ref)^2
//! storage cost  W = eta (I + u + o - phi)
//! total         R + G - Q - W
//! ```
//!
//! With the linear demand model the total is a quadratic in `X = (p, o)`,
//! assembled by [`quad_form`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::demand::ElasticityModel;
use crate::error::{Error, Result};
use crate::qp::{LinearConstraintSet, QuadForm};
use crate::scenario::EconomicParams;

/// Absolute tolerance used when classifying a decision as feasible.
pub const FEAS_TOL: f64 = 1e-6;

/// Prices for every station and the wholesale purchase for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub prices: Vec<f64>,
    pub purchase: f64,
}

impl Decision {
    /// Stacks the decision as `(p_1, .., p_L, o)`.
    pub fn to_vector(&self) -> Vec<f64> {
        self.prices.iter().copied().chain(std::iter::once(self.purchase)).collect()
    }

    pub fn from_vector(x: &[f64]) -> Decision {
        let (prices, o) = x.split_at(x.len() - 1);
        Decision { prices: prices.to_vec(), purchase: o[0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageContext {
    /// 0-based stage index.
    pub horizon: usize,
    pub wholesale_price: f64,
    pub renewable: f64,
    pub storage: f64,
    /// Overrides the model-derived price cap when set.
    #[serde(default)]
    pub price_ceiling: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityBreakdown {
    pub revenue: f64,
    pub satisfaction: f64,
    pub grid_stress: f64,
    pub storage_cost: f64,
    pub total: f64,
}

impl UtilityBreakdown {
    pub fn new(revenue: f64, satisfaction: f64, grid_stress: f64, storage_cost: f64) -> Self {
        UtilityBreakdown {
            revenue,
            satisfaction,
            grid_stress,
            storage_cost,
            total: revenue + satisfaction - grid_stress - storage_cost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    PurchaseNegative,
    PurchaseAboveCap,
    NegativePrice {
        station: usize,
    },
    NegativeDemand {
        station: usize,
    },
    /// Leftover energy `I + u + o - phi` below zero.
    StorageNegative,
    /// Leftover energy above the storage capacity.
    StorageAboveCapacity,
    /// Total demand above the capacity, outside the satisfaction domain.
    DemandAboveCapacity,
    DimensionMismatch,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub violations: Vec<Violation>,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn revenue(prices: &[f64], demands: &[f64], wholesale_price: f64, purchase: f64) -> Result<f64> {
    if prices.len() != demands.len() {
        return Err(Error::Dimension { what: "demands", expected: prices.len(), got: demands.len() });
    }
    Ok(prices.iter().zip(demands).map(|(p, d)| p * d).sum::<f64>() - wholesale_price * purchase)
}

/// Satisfaction of total demand `phi`, defined on `[0, E]`.
pub fn satisfaction(total_demand: f64, params: &EconomicParams) -> Result<f64> {
    let slack = FEAS_TOL * (1.0 + params.capacity);
    if !(total_demand >= -slack && total_demand <= params.capacity + slack) {
        return Err(Error::Domain { what: "total demand", value: total_demand, lo: 0.0, hi: params.capacity });
    }
    Ok(satisfaction_unchecked(total_demand, params))
}

fn satisfaction_unchecked(phi: f64, params: &EconomicParams) -> f64 {
    params.beta * (params.omega * phi - 0.5 * params.alpha * phi * phi)
}

pub fn grid_stress(purchase: f64, params: &EconomicParams) -> f64 {
    let dev = purchase - params.o_ref;
    params.mu * dev * dev
}

/// Energy left after the stage: `I + u + o - phi`.
pub fn leftover(ctx: &StageContext, purchase: f64, total_demand: f64) -> f64 {
    ctx.storage + ctx.renewable + purchase - total_demand
}

/// Storage cost `eta * leftover`; a leftover outside `[0, E]` is infeasible.
pub fn storage_cost(ctx: &StageContext, purchase: f64, total_demand: f64, params: &EconomicParams) -> Result<f64> {
    let left = leftover(ctx, purchase, total_demand);
    if left < -FEAS_TOL {
        return Err(Error::Infeasible(vec![Violation::StorageNegative]));
    }
    if left > params.capacity + FEAS_TOL {
        return Err(Error::Infeasible(vec![Violation::StorageAboveCapacity]));
    }
    Ok(params.eta * left)
}

/// Breakdown for given (predicted or realized) demands.
pub fn breakdown(
    ctx: &StageContext,
    decision: &Decision,
    demands: &[f64],
    params: &EconomicParams,
) -> Result<UtilityBreakdown> {
    if let Some(j) = demands.iter().position(|&d| d < -FEAS_TOL) {
        return Err(Error::Infeasible(vec![Violation::NegativeDemand { station: j }]));
    }
    let phi: f64 = demands.iter().sum();
    let r = revenue(&decision.prices, demands, ctx.wholesale_price, decision.purchase)?;
    let g = satisfaction(phi, params)?;
    let q = grid_stress(decision.purchase, params);
    let w = storage_cost(ctx, decision.purchase, phi, params)?;
    Ok(UtilityBreakdown::new(r, g, q, w))
}

/// Stage utility with demand predicted by `model`.
pub fn stage_utility(
    model: &ElasticityModel,
    ctx: &StageContext,
    decision: &Decision,
    params: &EconomicParams,
) -> Result<UtilityBreakdown> {
    let demands = model.predict(&decision.prices)?;
    breakdown(ctx, decision, &demands, params)
}

/// Coefficients `(Q, B, r)` with `1/2 X'QX + B'X + r = total + continuation`
/// for `X = (p_1, .., p_L, o)`.
///
/// With `d = g + A p`, `phi = G0 + s'p` where `G0 = sum g` and `s = A'1`:
///
/// ```text
/// Q_pp = 2 A - alpha beta s s'          Q_oo = -2 mu        Q_po = 0
/// B_p  = g + (eta + beta omega - alpha beta G0) s
/// B_o  = -c - eta + 2 mu o_ref
/// r    = -eta (I + u) - mu o_ref^2 + (eta + beta omega) G0 - alpha beta / 2 G0^2 + continuation
/// ```
pub fn quad_form(model: &ElasticityModel, ctx: &StageContext, params: &EconomicParams, continuation: f64) -> QuadForm {
    let l = model.n_stations;
    let s = model.total_sensitivity();
    let g0 = model.total_intercept();
    let ab = params.alpha * params.beta;
    let mut q = DMatrix::<f64>::zeros(l + 1, l + 1);
    for i in 0..l {
        for j in 0..l {
            q[(i, j)] = model.elasticity[i][j] + model.elasticity[j][i] - ab * s[i] * s[j];
        }
    }
    q[(l, l)] = -2.0 * params.mu;
    let lin = params.eta + params.beta * params.omega - ab * g0;
    let mut b = DVector::<f64>::zeros(l + 1);
    for j in 0..l {
        b[j] = model.intercepts[j] + lin * s[j];
    }
    b[l] = -ctx.wholesale_price - params.eta + 2.0 * params.mu * params.o_ref;
    let r = -params.eta * (ctx.storage + ctx.renewable) - params.mu * params.o_ref * params.o_ref
        + (params.eta + params.beta * params.omega) * g0
        - 0.5 * ab * g0 * g0
        + continuation;
    QuadForm { q, b, r }
}

/// Upper bound placed on every price so stage problems stay bounded even when
/// an estimated model is not strictly concave. Ten times the largest own-price
/// choke price `g_j / |A_jj|` over stations with a negative own elasticity;
/// stations whose elasticity was clamped to 0 do not set the scale.
pub fn price_cap(model: &ElasticityModel) -> f64 {
    let choke = model
        .intercepts
        .iter()
        .enumerate()
        .filter(|&(j, _)| -model.elasticity[j][j] > 1e-9)
        .map(|(j, &g)| g / -model.elasticity[j][j])
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    match choke {
        Some(c) => (10.0 * c).max(1.0),
        // no price scale at all: fall back to a large multiple of demand
        None => 1e4 * (1.0 + model.intercepts.iter().fold(0.0f64, |a, &g| a.max(g))),
    }
}

/// Feasible set of one stage in `X = (p, o)`.
pub fn stage_constraints(model: &ElasticityModel, ctx: &StageContext, params: &EconomicParams) -> LinearConstraintSet {
    let l = model.n_stations;
    let cap = ctx.price_ceiling.unwrap_or_else(|| price_cap(model));
    let mut lower = vec![0.0; l + 1];
    let mut upper = vec![cap; l + 1];
    lower[l] = 0.0;
    upper[l] = params.o_max;
    let mut set = LinearConstraintSet::boxed(lower, upper);
    // d_j >= 0
    for j in 0..l {
        let row: Vec<f64> = model.elasticity[j].iter().map(|a| -a).chain(std::iter::once(0.0)).collect();
        set.push(row, model.intercepts[j]);
    }
    let s = model.total_sensitivity();
    let g0 = model.total_intercept();
    let supply = ctx.storage + ctx.renewable;
    // leftover >= 0:  s'p - o <= I + u - G0
    set.push(s.iter().copied().chain(std::iter::once(-1.0)).collect(), supply - g0);
    // leftover <= E:  -s'p + o <= E - I - u + G0
    set.push(s.iter().map(|v| -v).chain(std::iter::once(1.0)).collect(), params.capacity - supply + g0);
    // phi <= E
    set.push(s.iter().copied().chain(std::iter::once(0.0)).collect(), params.capacity - g0);
    set
}

/// Checks the stage constraints for `decision` with predicted demand.
pub fn check_feasible(
    model: &ElasticityModel,
    ctx: &StageContext,
    decision: &Decision,
    params: &EconomicParams,
) -> Feasibility {
    let mut violations = Vec::new();
    let Ok(demands) = model.predict(&decision.prices) else {
        return Feasibility { violations: vec![Violation::DimensionMismatch] };
    };
    if decision.purchase < -FEAS_TOL {
        violations.push(Violation::PurchaseNegative);
    }
    if decision.purchase > params.o_max + FEAS_TOL {
        violations.push(Violation::PurchaseAboveCap);
    }
    for (j, &p) in decision.prices.iter().enumerate() {
        if p < -FEAS_TOL {
            violations.push(Violation::NegativePrice { station: j });
        }
    }
    for (j, &d) in demands.iter().enumerate() {
        if d < -FEAS_TOL {
            violations.push(Violation::NegativeDemand { station: j });
        }
    }
    let phi: f64 = demands.iter().sum();
    let left = leftover(ctx, decision.purchase, phi);
    if left < -FEAS_TOL {
        violations.push(Violation::StorageNegative);
    }
    if left > params.capacity + FEAS_TOL {
        violations.push(Violation::StorageAboveCapacity);
    }
    if phi > params.capacity + FEAS_TOL {
        violations.push(Violation::DemandAboveCapacity);
    }
    Feasibility { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ctx(storage: f64, renewable: f64) -> StageContext {
        StageContext { horizon: 0, wholesale_price: 25.0, renewable, storage, price_ceiling: None }
    }

    #[test]
    fn revenue_cases() {
        assert_eq!(revenue(&[0.0, 0.0], &[3.0, 4.0], 30.0, 0.0).unwrap(), 0.0);
        assert_eq!(revenue(&[30.0], &[10.0], 25.0, 12.0).unwrap(), 0.0);
        let a = revenue(&[2.0, 6.0], &[8.0, 3.0], 0.0, 0.0).unwrap();
        let b = revenue(&[4.0, 12.0], &[4.0, 1.5], 0.0, 0.0).unwrap();
        assert_eq!(a, b);
        assert!(revenue(&[1.0], &[1.0, 2.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn satisfaction_anchor_points() {
        let mut p = EconomicParams::table1();
        p.beta = 1.0;
        assert_eq!(satisfaction(0.0, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(satisfaction(200.0, &p).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(satisfaction(100.0, &p).unwrap(), 0.75, epsilon = 1e-15);
        assert!(satisfaction(201.0, &p).is_err());
        assert!(satisfaction(-1.0, &p).is_err());
    }

    #[test]
    fn grid_stress_cases() {
        let mut p = EconomicParams::table1();
        assert_eq!(grid_stress(40.0, &p), 0.0);
        p.mu = 0.1;
        assert_abs_diff_eq!(grid_stress(50.0, &p), 10.0, epsilon = 1e-12);
        for delta in [0.5, 3.0, 17.25] {
            assert_eq!(grid_stress(40.0 + delta, &p), grid_stress(40.0 - delta, &p));
        }
    }

    #[test]
    fn storage_cost_cases() {
        let p = EconomicParams::table1();
        assert_eq!(storage_cost(&ctx(10.0, 0.0), 0.0, 10.0, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(storage_cost(&ctx(20.0, 5.0), 40.0, 55.0, &p).unwrap(), 5.0, epsilon = 1e-12);
        assert!(matches!(
            storage_cost(&ctx(0.0, 0.0), 10.0, 20.0, &p),
            Err(Error::Infeasible(v)) if v == vec![Violation::StorageNegative]
        ));
    }

    #[test]
    fn degenerate_params_give_revenue() {
        let model = ElasticityModel::synthetic(1, 3).unwrap();
        let mut p = EconomicParams::table1();
        p.beta = 0.0;
        p.mu = 0.0;
        p.eta = 0.0;
        let d = Decision { prices: vec![20.0, 25.0, 30.0], purchase: 30.0 };
        let c = ctx(50.0, 2.0);
        let b = stage_utility(&model, &c, &d, &p).unwrap();
        assert_eq!(b.total, b.revenue);
        let form = quad_form(&model, &c, &p, 0.0);
        assert_eq!(form.r, 0.0);
        assert_abs_diff_eq!(form.value(&d.to_vector()), b.revenue, epsilon = 1e-9);
    }

    #[test]
    fn purchase_coefficients() {
        let model = ElasticityModel::synthetic(1, 2).unwrap();
        let p = EconomicParams::table1();
        let c = ctx(10.0, 0.0);
        let form = quad_form(&model, &c, &p, 0.0);
        assert_eq!(form.q[(2, 2)], -2.0 * p.mu);
        assert_eq!(form.b[2], -c.wholesale_price - p.eta + 2.0 * p.mu * p.o_ref);
        assert_eq!(form.q[(0, 2)], 0.0);
        assert_eq!(form.q[(2, 1)], 0.0);
    }

    #[test]
    fn feasibility_verdicts() {
        let zero = ElasticityModel::new(vec![0.0], vec![vec![-1.0]]).unwrap();
        let p = EconomicParams::table1();
        let d = Decision { prices: vec![0.0], purchase: 0.0 };
        assert!(check_feasible(&zero, &ctx(0.0, 0.0), &d, &p).is_feasible());

        let over = Decision { prices: vec![0.0], purchase: p.o_max + 1.0 };
        assert!(check_feasible(&zero, &ctx(0.0, 0.0), &over, &p).violations.contains(&Violation::PurchaseAboveCap));

        let model = ElasticityModel::new(vec![20.0], vec![vec![-0.5]]).unwrap();
        let short = Decision { prices: vec![0.0], purchase: 5.0 };
        let v = check_feasible(&model, &ctx(0.0, 0.0), &short, &p).violations;
        assert_eq!(v, vec![Violation::StorageNegative]);
    }

    #[test]
    fn constraint_set_agrees_with_check() {
        let model = ElasticityModel::synthetic(4, 2).unwrap();
        let p = EconomicParams::table1();
        let c = ctx(30.0, 5.0);
        let set = stage_constraints(&model, &c, &p);
        for x in [[10.0, 10.0, 20.0], [0.0, 0.0, 0.0], [60.0, 60.0, 0.0], [5.0, 80.0, 79.0], [1.0, 1.0, 81.0]] {
            let d = Decision::from_vector(&x);
            assert_eq!(set.is_satisfied(&x, FEAS_TOL), check_feasible(&model, &c, &d, &p).is_feasible(), "{x:?}");
        }
    }
}
