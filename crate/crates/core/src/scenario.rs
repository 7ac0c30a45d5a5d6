//! Market scenarios: wholesale price and renewable series plus the economic
//! parameters of the service provider.
//!
//! Hours are 1-based on disk (`hour,value` files, hours `1..=N`) and 0-based
//! in memory.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wholesale prices and renewable forecast over `n_horizons` planning stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketScenario {
    pub n_horizons: usize,
    /// Day-ahead wholesale price per stage, money/MWh.
    pub wholesale_prices: Vec<f64>,
    /// Forecast renewable generation per stage, MWh.
    pub renewable: Vec<f64>,
    /// Non-fatal findings from loading, e.g. negative wholesale prices.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Tariff ceiling on posted prices. When absent each stage derives one
    /// from the demand model (see [`crate::utility::price_cap`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_ceiling: Option<f64>,
}

impl MarketScenario {
    pub fn new(wholesale_prices: Vec<f64>, renewable: Vec<f64>) -> Result<Self> {
        if wholesale_prices.len() != renewable.len() {
            return Err(Error::LengthMismatch { prices: wholesale_prices.len(), renewable: renewable.len() });
        }
        if wholesale_prices.is_empty() {
            return Err(Error::Invalid("scenario needs at least one horizon".into()));
        }
        for (k, (&c, &u)) in wholesale_prices.iter().zip(&renewable).enumerate() {
            if !c.is_finite() {
                return Err(Error::Invalid(format!("wholesale price at hour {} is not finite", k + 1)));
            }
            if !u.is_finite() || u < 0.0 {
                return Err(Error::Invalid(format!(
                    "renewable generation at hour {} must be finite and >= 0, got {u}",
                    k + 1
                )));
            }
        }
        let warnings = wholesale_prices
            .iter()
            .enumerate()
            .filter(|(_, &c)| c < 0.0)
            .map(|(k, c)| format!("negative wholesale price {c} at hour {}", k + 1))
            .collect();
        Ok(MarketScenario {
            n_horizons: wholesale_prices.len(),
            wholesale_prices,
            renewable,
            warnings,
            price_ceiling: None,
        })
    }

    /// Stages `start..` as a standalone scenario (used for receding-horizon replanning).
    pub fn suffix(&self, start: usize) -> MarketScenario {
        MarketScenario {
            n_horizons: self.n_horizons - start,
            wholesale_prices: self.wholesale_prices[start..].to_vec(),
            renewable: self.renewable[start..].to_vec(),
            warnings: Vec::new(),
            price_ceiling: self.price_ceiling,
        }
    }

    pub fn mean_wholesale_price(&self) -> f64 {
        self.wholesale_prices.iter().sum::<f64>() / self.n_horizons as f64
    }
}

/// Economic weights and physical limits of the provider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomicParams {
    /// Weight of customer satisfaction.
    pub beta: f64,
    /// Linear shape of the satisfaction curve.
    pub omega: f64,
    /// Quadratic shape of the satisfaction curve.
    pub alpha: f64,
    /// Weight of the grid-stress penalty.
    pub mu: f64,
    /// Storage cost per MWh held over a stage.
    pub eta: f64,
    /// Reference (average) purchase, MWh.
    pub o_ref: f64,
    /// Purchase cap per stage, MWh.
    pub o_max: f64,
    /// Storage capacity, MWh.
    pub capacity: f64,
    /// Value per MWh left in storage after the last stage.
    pub terminal_salvage: f64,
}

impl EconomicParams {
    /// Simulation parameters used throughout the experiments: beta = 10000,
    /// mu = 0.1, eta = 0.5, o_ref = 40, E = 200. `o_max` defaults to `2 * o_ref`.
    pub fn table1() -> Self {
        EconomicParams {
            beta: 10_000.0,
            omega: 0.01,
            alpha: 5e-5,
            mu: 0.1,
            eta: 0.5,
            o_ref: 40.0,
            o_max: 80.0,
            capacity: 200.0,
            terminal_salvage: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("beta", self.beta),
            ("omega", self.omega),
            ("alpha", self.alpha),
            ("mu", self.mu),
            ("eta", self.eta),
            ("o_ref", self.o_ref),
            ("o_max", self.o_max),
            ("capacity", self.capacity),
            ("terminal_salvage", self.terminal_salvage),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Invalid(format!("parameter {name} is not finite")));
        }
        if self.alpha <= 0.0 || self.omega <= 0.0 || self.capacity <= 0.0 {
            return Err(Error::Invalid("alpha, omega and capacity must be > 0".into()));
        }
        if self.o_ref < 0.0 || self.o_ref > self.o_max {
            return Err(Error::Invalid(format!(
                "need 0 <= o_ref <= o_max, got o_ref = {}, o_max = {}",
                self.o_ref, self.o_max
            )));
        }
        if self.beta < 0.0 || self.mu < 0.0 || self.eta < 0.0 {
            return Err(Error::Invalid("beta, mu and eta must be >= 0".into()));
        }
        Ok(())
    }

    /// Parses the flat `key = value` config format. Every key is required.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let params: EconomicParams = toml::from_str(text).map_err(|e| Error::parse("params", e.message()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("flat struct always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Flat,
    Diurnal,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Flat => f.write_str("flat"),
            Profile::Diurnal => f.write_str("diurnal"),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Profile::Flat),
            "diurnal" => Ok(Profile::Diurnal),
            other => Err(Error::Invalid(format!("unknown profile {other:?}"))),
        }
    }
}

/// Solar generation begins at 8:00, peaks at 13:00 and ends at 17:00.
const SOLAR_START: f64 = 8.0;
const SOLAR_PEAK: f64 = 13.0;
const SOLAR_END: f64 = 17.0;

fn solar_shape(hour_of_day: f64) -> f64 {
    if hour_of_day <= SOLAR_START || hour_of_day >= SOLAR_END {
        0.0
    } else if hour_of_day <= SOLAR_PEAK {
        (0.5 * PI * (hour_of_day - SOLAR_START) / (SOLAR_PEAK - SOLAR_START)).sin()
    } else {
        (0.5 * PI * (SOLAR_END - hour_of_day) / (SOLAR_END - SOLAR_PEAK)).sin()
    }
}

/// Deterministic synthetic scenario. Series repeat with a 24-hour period, so
/// `n_horizons = 96` gives four similar days.
pub fn synth_scenario(seed: u64, n_horizons: usize, profile: Profile) -> Result<MarketScenario> {
    if n_horizons == 0 {
        return Err(Error::Invalid("n_horizons must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (prices, renewable) = match profile {
        Profile::Flat => {
            let level = 35.0 + rng.random_range(-5.0..5.0);
            (vec![level; n_horizons], vec![0.0; n_horizons])
        }
        Profile::Diurnal => {
            let level = 32.0 + rng.random_range(-3.0..3.0);
            let amplitude = 12.0 * rng.random_range(0.85..1.15);
            let solar_peak = rng.random_range(12.0..24.0);
            let mut prices = Vec::with_capacity(n_horizons);
            let mut renewable = Vec::with_capacity(n_horizons);
            for k in 0..n_horizons {
                let hour = (k % 24 + 1) as f64;
                // trough before dawn, peak late afternoon
                let base = level + amplitude * (2.0 * PI * (hour - 17.0) / 24.0).cos();
                prices.push(base + rng.random_range(-1.0..1.0));
                renewable.push(solar_peak * solar_shape(hour));
            }
            (prices, renewable)
        }
    };
    MarketScenario::new(prices, renewable)
}

/// Reads a two-column `hour,value` file with hours `1..=N` in any order.
pub fn read_hourly_series(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_hourly_series(file, &path.display().to_string())
}

pub fn parse_hourly_series<R: std::io::Read>(reader: R, context: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(context, e))?.clone();
    if headers.len() != 2 || &headers[0] != "hour" || &headers[1] != "value" {
        return Err(Error::parse(context, format!("expected header `hour,value`, got {headers:?}")));
    }
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::parse(context, e))?;
        let hour: usize = rec[0]
            .parse()
            .map_err(|_| Error::parse(context, format!("row {row}: hour {:?} is not an integer", &rec[0])))?;
        let value: f64 = rec[1]
            .parse()
            .map_err(|_| Error::parse(context, format!("row {row}: value {:?} is not numeric", &rec[1])))?;
        entries.push((hour, value));
    }
    let n = entries.len();
    let mut series = vec![None; n];
    for (hour, value) in entries {
        if hour == 0 || hour > n {
            return Err(Error::parse(context, format!("hour {hour} outside 1..={n} (missing hour index)")));
        }
        if series[hour - 1].replace(value).is_some() {
            return Err(Error::parse(context, format!("duplicate hour {hour}")));
        }
    }
    // n entries, all distinct and in 1..=n, so every slot is filled
    Ok(series.into_iter().map(|v| v.expect("slot filled")).collect())
}

pub fn write_hourly_series<W: std::io::Write>(writer: W, values: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::parse("hourly series", e);
    wtr.write_record(["hour", "value"]).map_err(to_err)?;
    for (k, v) in values.iter().enumerate() {
        wtr.write_record([(k + 1).to_string(), v.to_string()]).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::parse("hourly series", e))?;
    Ok(())
}

/// Loads price and renewable files and validates them against the params.
pub fn load_scenario(price_path: &Path, renewable_path: &Path, params: &EconomicParams) -> Result<MarketScenario> {
    params.validate()?;
    let prices = read_hourly_series(price_path)?;
    let renewable = read_hourly_series(renewable_path)?;
    MarketScenario::new(prices, renewable)
}
