//! Linear price-elasticity demand model and its estimators.
//!
//! Demand at station `j` is `d_j = g_j + sum_i A[j][i] * p_i`, where `g` are the
//! intercepts and `A` is a signed, symmetric elasticity matrix with a
//! non-positive diagonal. Coefficients are learned online with recursive least
//! squares ([`RlsState`]) or offline with ridge regression ([`fit_batch`]).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-station intercepts and the signed L x L elasticity matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityModel {
    pub n_stations: usize,
    pub intercepts: Vec<f64>,
    /// Row `j` holds the coefficients of station `j`'s demand on every station's price.
    pub elasticity: Vec<Vec<f64>>,
}

impl ElasticityModel {
    pub fn new(intercepts: Vec<f64>, elasticity: Vec<Vec<f64>>) -> Result<Self> {
        let model = ElasticityModel { n_stations: intercepts.len(), intercepts, elasticity };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.n_stations;
        if l == 0 {
            return Err(Error::Invalid("model needs at least one station".into()));
        }
        if self.intercepts.len() != l {
            return Err(Error::Dimension { what: "intercepts", expected: l, got: self.intercepts.len() });
        }
        if self.elasticity.len() != l {
            return Err(Error::Dimension { what: "elasticity rows", expected: l, got: self.elasticity.len() });
        }
        for (j, row) in self.elasticity.iter().enumerate() {
            if row.len() != l {
                return Err(Error::Dimension { what: "elasticity columns", expected: l, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) || !self.intercepts[j].is_finite() {
                return Err(Error::Invalid(format!("non-finite coefficient for station {}", j + 1)));
            }
            if row[j] > 0.0 {
                return Err(Error::Invalid(format!(
                    "own-price elasticity of station {} must be <= 0, got {}",
                    j + 1,
                    row[j]
                )));
            }
            if self.intercepts[j] < 0.0 {
                return Err(Error::Invalid(format!("intercept of station {} must be >= 0", j + 1)));
            }
            for i in 0..j {
                if self.elasticity[i][j] != row[i] {
                    return Err(Error::Invalid(format!("elasticity matrix not symmetric at ({}, {})", j + 1, i + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let l = self.n_stations;
        DMatrix::from_fn(l, l, |i, j| self.elasticity[i][j])
    }

    /// Total intercept demand, the demand at zero prices.
    pub fn total_intercept(&self) -> f64 {
        self.intercepts.iter().sum()
    }

    /// Sensitivity of total demand to each station's price: column sums of `A`.
    pub fn total_sensitivity(&self) -> Vec<f64> {
        (0..self.n_stations).map(|i| self.elasticity.iter().map(|row| row[i]).sum()).collect()
    }

    pub fn predict(&self, prices: &[f64]) -> Result<Vec<f64>> {
        if prices.len() != self.n_stations {
            return Err(Error::Dimension { what: "prices", expected: self.n_stations, got: prices.len() });
        }
        Ok(self.predict_unchecked(prices))
    }

    pub(crate) fn predict_unchecked(&self, prices: &[f64]) -> Vec<f64> {
        self.elasticity
            .iter()
            .zip(&self.intercepts)
            .map(|(row, g)| g + row.iter().zip(prices).map(|(a, p)| a * p).sum::<f64>())
            .collect()
    }

    /// Random diagonally dominant model: own elasticities in [-0.30, -0.20],
    /// cross elasticities in [0.005, 0.03], intercepts in [10, 14] MWh.
    pub fn synthetic(seed: u64, n_stations: usize) -> Result<Self> {
        if n_stations == 0 {
            return Err(Error::Invalid("n_stations must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intercepts: Vec<f64> = (0..n_stations).map(|_| rng.random_range(10.0..14.0)).collect();
        let mut a = vec![vec![0.0; n_stations]; n_stations];
        for j in 0..n_stations {
            a[j][j] = -rng.random_range(0.20..0.30);
            for i in 0..j {
                let cross = rng.random_range(0.005..0.03);
                a[i][j] = cross;
                a[j][i] = cross;
            }
        }
        ElasticityModel::new(intercepts, a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ElasticityModel = serde_json::from_str(text).map_err(|e| Error::parse("model", e))?;
        if model.n_stations != model.intercepts.len() {
            return Err(Error::Dimension {
                what: "n_stations vs intercepts",
                expected: model.n_stations,
                got: model.intercepts.len(),
            });
        }
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Raw model prediction; negative values are returned as-is.
pub fn predict_demand(model: &ElasticityModel, prices: &[f64]) -> Result<Vec<f64>> {
    model.predict(prices)
}

/// Prices posted in one horizon and the demand observed at every station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandObservation {
    pub prices: Vec<f64>,
    pub demands: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<Vec<f64>>,
}

impl DemandObservation {
    /// Regression row `(1, p_1, .., p_L)`.
    pub fn regressor(&self) -> Vec<f64> {
        regressor(&self.prices)
    }
}

pub fn regressor(prices: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(prices.iter().copied()).collect()
}

/// Recursive least-squares estimator, one weight vector and gain matrix per station.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    lambda: f64,
    weights: Vec<DVector<f64>>,
    gains: Vec<DMatrix<f64>>,
}

/// Which coefficients [`RlsState::to_model`] had to clamp.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelClamps {
    /// Stations whose own-price coefficient was positive and was set to 0.
    pub diagonal: Vec<usize>,
    /// Stations whose intercept was negative and was set to 0.
    pub intercept: Vec<usize>,
}

impl ModelClamps {
    pub fn any(&self) -> bool {
        !self.diagonal.is_empty() || !self.intercept.is_empty()
    }
}

impl RlsState {
    /// Zero weights and identity gains.
    pub fn new(n_stations: usize, lambda: f64) -> Result<Self> {
        Self::with_gain_scale(n_stations, lambda, 1.0)
    }

    /// Zero weights and gains `scale * I`. Equivalent to ridge regression with
    /// penalty `1 / scale` when `lambda = 1`.
    pub fn with_gain_scale(n_stations: usize, lambda: f64, scale: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Invalid(format!("gain scale must be positive, got {scale}")));
        }
        let dim = n_stations + 1;
        Ok(RlsState {
            lambda,
            weights: vec![DVector::zeros(dim); n_stations],
            gains: vec![DMatrix::identity(dim, dim) * scale; n_stations],
        })
    }

    /// Starts from an existing model's coefficients.
    pub fn from_model(model: &ElasticityModel, lambda: f64, scale: f64) -> Result<Self> {
        let mut state = Self::with_gain_scale(model.n_stations, lambda, scale)?;
        for (j, w) in state.weights.iter_mut().enumerate() {
            w[0] = model.intercepts[j];
            for i in 0..model.n_stations {
                w[i + 1] = model.elasticity[j][i];
            }
        }
        Ok(state)
    }

    pub fn n_stations(&self) -> usize {
        self.weights.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weights(&self, station: usize) -> &DVector<f64> {
        &self.weights[station]
    }

    pub fn gain(&self, station: usize) -> &DMatrix<f64> {
        &self.gains[station]
    }

    pub fn all_weights(&self) -> Vec<Vec<f64>> {
        self.weights.iter().map(|w| w.iter().copied().collect()).collect()
    }

    pub fn predict(&self, station: usize, regressor: &[f64]) -> f64 {
        self.weights[station].iter().zip(regressor).map(|(w, x)| w * x).sum()
    }

    /// One RLS step for `station`. Returns the a-priori prediction error.
    pub fn update(&mut self, station: usize, regressor: &[f64], observed: f64) -> Result<f64> {
        let dim = self.n_stations() + 1;
        if station >= self.n_stations() {
            return Err(Error::Invalid(format!("station index {station} out of range")));
        }
        if regressor.len() != dim {
            return Err(Error::Dimension { what: "regressor", expected: dim, got: regressor.len() });
        }
        if !observed.is_finite() || regressor.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite RLS input".into()));
        }
        let x = DVector::from_column_slice(regressor);
        let h = &self.gains[station];
        let err = observed - x.dot(&self.weights[station]);
        let hx = h * &x;
        let denom = self.lambda + x.dot(&hx);
        let g = &hx / denom;
        // H <- (H - g x^T H) / lambda, then symmetrize
        let mut next = (h - &g * hx.transpose()) / self.lambda;
        let t = next.transpose();
        next += t;
        next *= 0.5;
        self.gains[station] = next;
        self.weights[station] += &g * err;
        Ok(err)
    }

    /// Current estimate as a model; see [`model_from_weights`].
    pub fn to_model(&self) -> (ElasticityModel, ModelClamps) {
        model_from_weights(&self.all_weights())
    }
}

/// Assembles an [`ElasticityModel`] from per-station regression weights
/// `(g_j, a_j1, .., a_jL)`: symmetrizes the elasticity block and clamps
/// positive own-price coefficients and negative intercepts to 0.
pub fn model_from_weights(weights: &[Vec<f64>]) -> (ElasticityModel, ModelClamps) {
    let l = weights.len();
    let mut clamps = ModelClamps::default();
    let mut intercepts = Vec::with_capacity(l);
    let mut a = vec![vec![0.0; l]; l];
    for j in 0..l {
        let g = weights[j][0];
        if g < 0.0 {
            clamps.intercept.push(j);
            intercepts.push(0.0);
        } else {
            intercepts.push(g);
        }
        for i in 0..=j {
            let v = if i == j { weights[j][j + 1] } else { 0.5 * (weights[j][i + 1] + weights[i][j + 1]) };
            a[j][i] = v;
            a[i][j] = v;
        }
        if a[j][j] > 0.0 {
            clamps.diagonal.push(j);
            a[j][j] = 0.0;
        }
    }
    (ElasticityModel { n_stations: l, intercepts, elasticity: a }, clamps)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Invalid(format!("forgetting factor must be in (0, 1], got {lambda}")));
    }
    Ok(())
}

/// Functional form of [`RlsState::update`].
pub fn rls_update(mut state: RlsState, station: usize, regressor: &[f64], observed: f64) -> Result<RlsState> {
    state.update(station, regressor, observed)?;
    Ok(state)
}

/// Ridge regression of one station's demand on `(1, prices)`.
///
/// Minimizes `sum (d_j - x^T w)^2 + ridge * |w|^2`. With `ridge = 0` the
/// regressors must have full column rank.
pub fn fit_batch(history: &[DemandObservation], station: usize, ridge: f64) -> Result<Vec<f64>> {
    let first = history.first().ok_or_else(|| Error::Invalid("fit_batch needs at least one observation".into()))?;
    let l = first.prices.len();
    if station >= l {
        return Err(Error::Invalid(format!("station index {station} out of range")));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Invalid(format!("ridge must be >= 0, got {ridge}")));
    }
    let dim = l + 1;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for obs in history {
        if obs.prices.len() != l || obs.demands.len() != l {
            return Err(Error::Dimension { what: "observation", expected: l, got: obs.prices.len() });
        }
        let x = DVector::from_vec(obs.regressor());
        gram += &x * x.transpose();
        rhs += &x * obs.demands[station];
    }
    if ridge == 0.0 {
        let eig = gram.clone().symmetric_eigen();
        let max = eig.eigenvalues.amax();
        let rank = eig.eigenvalues.iter().filter(|&&v| v > 1e-12 * max.max(1e-300)).count();
        if rank < dim {
            return Err(Error::RankDeficient { rank, needed: dim });
        }
    } else {
        for i in 0..dim {
            gram[(i, i)] += ridge;
        }
    }
    let chol = gram.cholesky().ok_or(Error::RankDeficient { rank: 0, needed: dim })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Generates a random-price history from `model`. Prices are drawn uniformly
/// from `price_range`; demand noise is Gaussian and demand is floored at 0.
pub fn generate_history(
    model: &ElasticityModel,
    seed: u64,
    n_horizons: usize,
    noise_std: f64,
    price_range: (f64, f64),
) -> Result<Vec<DemandObservation>> {
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_horizons);
    for _ in 0..n_horizons {
        let prices: Vec<f64> = (0..model.n_stations).map(|_| rng.random_range(price_range.0..price_range.1)).collect();
        let clean = model.predict_unchecked(&prices);
        let mut residuals = Vec::with_capacity(clean.len());
        let demands = clean
            .iter()
            .map(|d| {
                let eps = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                residuals.push(eps);
                (d + eps).max(0.0)
            })
            .collect();
        out.push(DemandObservation { prices, demands, residuals: Some(residuals) });
    }
    Ok(out)
}

/// Writes observations as `horizon,station,p_1..p_L,demand` rows (1-based indices).
pub fn write_observations<W: std::io::Write>(writer: W, history: &[DemandObservation]) -> Result<()> {
    let l = history.first().map_or(0, |o| o.prices.len());
    let mut wtr = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::parse("observations", e);
    let mut header = vec!["horizon".to_string(), "station".to_string()];
    header.extend((1..=l).map(|i| format!("p_{i}")));
    header.push("demand".into());
    wtr.write_record(&header).map_err(to_err)?;
    for (k, obs) in history.iter().enumerate() {
        for (j, d) in obs.demands.iter().enumerate() {
            let mut rec = vec![(k + 1).to_string(), (j + 1).to_string()];
            rec.extend(obs.prices.iter().map(|p| p.to_string()));
            rec.push(d.to_string());
            wtr.write_record(&rec).map_err(to_err)?;
        }
    }
    wtr.flush().map_err(|e| Error::parse("observations", e))?;
    Ok(())
}

/// Parses an observation file and groups rows by horizon. Every horizon must
/// list every station once, with identical prices.
pub fn read_observations<R: std::io::Read>(reader: R, n_stations: usize) -> Result<Vec<DemandObservation>> {
    let ctx = "observations";
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let width = n_stations + 3;
    let mut out: Vec<(usize, DemandObservation, Vec<bool>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::parse(ctx, format!("row {row}: {e}")))?;
        if rec.len() != width {
            return Err(Error::parse(
                ctx,
                format!("row {row}: expected {width} columns for {n_stations} stations, got {}", rec.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().map_err(|_| Error::parse(ctx, format!("row {row}: {:?} is not numeric", &rec[k])))
        };
        let int = |k: usize| -> Result<usize> {
            rec[k].parse::<usize>().map_err(|_| Error::parse(ctx, format!("row {row}: {:?} is not an index", &rec[k])))
        };
        let horizon = int(0)?;
        let station = int(1)?;
        if station == 0 || station > n_stations {
            return Err(Error::parse(ctx, format!("row {row}: station {station} outside 1..={n_stations}")));
        }
        let prices = (0..n_stations).map(|k| num(k + 2)).collect::<Result<Vec<_>>>()?;
        let demand = num(width - 1)?;
        if demand < 0.0 {
            return Err(Error::parse(ctx, format!("row {row}: negative demand")));
        }
        let slot = match out.last_mut() {
            Some((h, _, _)) if *h == horizon => out.last_mut().unwrap(),
            _ => {
                if out.iter().any(|(h, _, _)| *h == horizon) {
                    return Err(Error::parse(ctx, format!("row {row}: horizon {horizon} is not contiguous")));
                }
                out.push((
                    horizon,
                    DemandObservation { prices: prices.clone(), demands: vec![0.0; n_stations], residuals: None },
                    vec![false; n_stations],
                ));
                out.last_mut().unwrap()
            }
        };
        if slot.1.prices != prices {
            return Err(Error::parse(ctx, format!("row {row}: prices differ within horizon {horizon}")));
        }
        if std::mem::replace(&mut slot.2[station - 1], true) {
            return Err(Error::parse(ctx, format!("row {row}: duplicate station {station} in horizon {horizon}")));
        }
        slot.1.demands[station - 1] = demand;
    }
    if out.is_empty() {
        return Err(Error::parse(ctx, "no observations"));
    }
    for (h, _, seen) in &out {
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::parse(ctx, format!("horizon {h} is missing station {}", j + 1)));
        }
    }
    Ok(out.into_iter().map(|(_, o, _)| o).collect())
}
