//! JSON scenario documents.
//!
//! A document can reference CSV files (prices, wind speeds); relative paths are
//! resolved against a base directory, normally the one holding the document.
//! [`emit`] always writes every series inline, so `parse(emit(s)) == s`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{GridPrices, MicrogridParams, Scenario, StorageParams, TimeGrid, UserParams};
use crate::error::{Error, Result};
use crate::wind::{ingest_speeds, WindCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub time: TimeSection,
    pub prices: PriceSection,
    /// Feed-in tariff used when `prices` gives no sell series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feed_in_rate: Option<f64>,
    #[serde(default)]
    pub feed_in_mode: FeedInMode,
    pub microgrids: Vec<MicrogridSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(rename = "T")]
    pub slots: usize,
    #[serde(default = "one")]
    pub slot_hours: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriceSection {
    Inline {
        buy: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sell: Option<Vec<f64>>,
    },
    Csv {
        csv: String,
        #[serde(default = "buy_column")]
        buy_column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sell_column: Option<String>,
    },
}

fn buy_column() -> String {
    "buy".into()
}

/// Whether the feed-in rate is a price or a fraction of the purchase price.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedInMode {
    #[default]
    Absolute,
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridSection {
    pub id: String,
    pub wind: WindSection,
    pub max_buy_kw: f64,
    pub max_sell_kw: f64,
    pub inelastic: Vec<f64>,
    #[serde(default)]
    pub users: Vec<UserSection>,
    pub storage: StorageSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSection {
    pub capacity_kw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fractions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speeds_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speeds_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    pub cut_in: f64,
    pub rated: f64,
    pub cut_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub total_kwh: f64,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub preferred: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSection {
    pub capacity: f64,
    pub dod: f64,
    pub max_charge: f64,
    pub max_discharge: f64,
    pub eff_c: f64,
    pub eff_d: f64,
    pub cs: f64,
    pub initial: f64,
}

impl ScenarioFile {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: if e.path().to_string() == "." {
                origin.to_string()
            } else {
                format!("{origin}: {}", e.path())
            },
            message: e.inner().to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario documents always serialize");
        s.push('\n');
        s
    }

    /// Inline document describing `scenario` exactly.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self {
            time: TimeSection {
                slots: scenario.time.slots,
                slot_hours: scenario.time.slot_hours,
            },
            prices: PriceSection::Inline {
                buy: scenario.prices.buy.clone(),
                sell: Some(scenario.prices.sell.clone()),
            },
            feed_in_rate: None,
            feed_in_mode: FeedInMode::Absolute,
            microgrids: scenario
                .microgrids
                .iter()
                .map(|mg| MicrogridSection {
                    id: mg.id.clone(),
                    wind: WindSection {
                        capacity_kw: mg.wind_capacity_kw,
                        fractions: Some(mg.wind_fraction.clone()),
                        speeds_csv: None,
                        speeds_column: None,
                        curve: None,
                    },
                    max_buy_kw: mg.max_buy_kw,
                    max_sell_kw: mg.max_sell_kw,
                    inelastic: mg.inelastic_load.clone(),
                    users: mg
                        .users
                        .iter()
                        .map(|u| UserSection {
                            total_kwh: u.total_demand_kwh,
                            min: u.min_load.clone(),
                            max: u.max_load.clone(),
                            preferred: u.preferred.clone(),
                            beta: u.discomfort_weight,
                        })
                        .collect(),
                    storage: StorageSection {
                        capacity: mg.storage.capacity_kwh,
                        dod: mg.storage.dod,
                        max_charge: mg.storage.max_charge_kw,
                        max_discharge: mg.storage.max_discharge_kw,
                        eff_c: mg.storage.eff_charge,
                        eff_d: mg.storage.eff_discharge,
                        cs: mg.storage.amortized_cost_per_kwh,
                        initial: mg.storage.initial_level_kwh,
                    },
                })
                .collect(),
        }
    }

    /// Resolves external files relative to `base_dir` and validates the result.
    pub fn to_scenario(&self, base_dir: &Path) -> Result<Scenario> {
        let time = TimeGrid::new(self.time.slots, self.time.slot_hours).map_err(|e| e.context("time"))?;
        let t = time.slots;
        let prices = self.prices(base_dir, t).map_err(|e| e.context("prices"))?;
        let microgrids = self
            .microgrids
            .iter()
            .enumerate()
            .map(|(i, m)| m.to_params(base_dir, t).map_err(|e| e.context(format!("microgrids[{i}]"))))
            .collect::<Result<Vec<_>>>()?;
        let mut ids: Vec<&str> = microgrids.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("duplicate microgrid id `{}`", w[0])));
        }
        Scenario::new(time, prices, microgrids)
    }

    fn prices(&self, base_dir: &Path, t: usize) -> Result<GridPrices> {
        let (buy, sell) = match &self.prices {
            PriceSection::Inline { buy, sell } => (buy.clone(), sell.clone()),
            PriceSection::Csv {
                csv,
                buy_column,
                sell_column,
            } => {
                let path = resolve(base_dir, csv);
                let buy = read_column(&path, buy_column, t)?;
                let sell = sell_column.as_ref().map(|c| read_column(&path, c, t)).transpose()?;
                (buy, sell)
            }
        };
        let sell = match (sell, self.feed_in_rate) {
            (Some(_), Some(_)) => {
                return Err(Error::Validation(
                    "give either a sell price series or feed_in_rate, not both".into(),
                ))
            }
            (Some(s), None) => s,
            (None, Some(rate)) => match self.feed_in_mode {
                FeedInMode::Absolute => vec![rate; buy.len()],
                FeedInMode::Relative => buy.iter().map(|b| rate * b).collect(),
            },
            (None, None) => return Err(Error::Validation("no sell prices and no feed_in_rate".into())),
        };
        Ok(GridPrices { buy, sell })
    }
}

impl MicrogridSection {
    fn to_params(&self, base_dir: &Path, t: usize) -> Result<MicrogridParams> {
        let w = &self.wind;
        let wind_fraction = match (&w.fractions, &w.speeds_csv) {
            (Some(f), None) => f.clone(),
            (None, Some(csv)) => {
                let curve = w.curve.map_or_else(WindCurve::default, |c| WindCurve {
                    cut_in_mps: c.cut_in,
                    rated_mps: c.rated,
                    cut_out_mps: c.cut_out,
                });
                ingest_speeds(
                    &resolve(base_dir, csv),
                    w.speeds_column.as_deref().unwrap_or("speed"),
                    t,
                    &curve,
                )
                .map_err(|e| e.context("wind.speeds_csv"))?
            }
            _ => {
                return Err(Error::Validation(
                    "wind needs exactly one of `fractions` or `speeds_csv`".into(),
                ))
            }
        };
        let s = &self.storage;
        Ok(MicrogridParams {
            id: self.id.clone(),
            wind_capacity_kw: w.capacity_kw,
            wind_fraction,
            max_buy_kw: self.max_buy_kw,
            max_sell_kw: self.max_sell_kw,
            inelastic_load: self.inelastic.clone(),
            users: self
                .users
                .iter()
                .map(|u| UserParams {
                    total_demand_kwh: u.total_kwh,
                    min_load: u.min.clone(),
                    max_load: u.max.clone(),
                    preferred: u.preferred.clone(),
                    discomfort_weight: u.beta,
                })
                .collect(),
            storage: StorageParams {
                capacity_kwh: s.capacity,
                dod: s.dod,
                max_charge_kw: s.max_charge,
                max_discharge_kw: s.max_discharge,
                eff_charge: s.eff_c,
                eff_discharge: s.eff_d,
                amortized_cost_per_kwh: s.cs,
                initial_level_kwh: s.initial,
            },
        })
    }
}

fn resolve(base_dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

fn read_column(path: &Path, column: &str, t: usize) -> Result<Vec<f64>> {
    let shown = path.display().to_string();
    let csv_err = |source| Error::Csv {
        path: shown.clone(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let col = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::Parse {
            path: shown.clone(),
            message: format!("missing column `{column}`"),
        })?;
    let mut out = Vec::with_capacity(t);
    for (row, rec) in rdr.records().take(t).enumerate() {
        let rec = rec.map_err(csv_err)?;
        let cell = rec.get(col).unwrap_or("");
        out.push(cell.parse().map_err(|_| Error::Parse {
            path: shown.clone(),
            message: format!("row {}: `{cell}` is not a number", row + 1),
        })?);
    }
    if out.len() < t {
        return Err(Error::Parse {
            path: shown,
            message: format!("expected at least {t} rows, found {}", out.len()),
        });
    }
    Ok(out)
}

/// Reads and validates a scenario document from disk.
pub fn load(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file = ScenarioFile::from_json(&text, &path.display().to_string())?;
    file.to_scenario(path.parent().unwrap_or(Path::new(".")))
}

/// Parses a document whose relative paths resolve against `base_dir`.
pub fn parse(text: &str, base_dir: &Path) -> Result<Scenario> {
    ScenarioFile::from_json(text, "<scenario>")?.to_scenario(base_dir)
}

pub fn emit(scenario: &Scenario) -> String {
    ScenarioFile::from_scenario(scenario).to_json()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_json(extra_prices: &str) -> String {
        format!(
            r#"{{
  "time": {{"T": 2}},
  "prices": {{"buy": [0.2, 0.3]{extra_prices}}},
  "feed_in_rate": 0.1,
  "microgrids": [{{
    "id": "a",
    "wind": {{"capacity_kw": 10, "fractions": [0.5, 0.1]}},
    "max_buy_kw": 50, "max_sell_kw": 50,
    "inelastic": [5, 6],
    "users": [{{"total_kwh": 4, "min": [1, 1], "max": [3, 3], "preferred": [2, 2], "beta": 0.5}}],
    "storage": {{"capacity": 10, "dod": 0.8, "max_charge": 3, "max_discharge": 3,
                 "eff_c": 0.95, "eff_d": 0.95, "cs": 0.01, "initial": 6}}
  }}]
}}"#
        )
    }

    #[test]
    fn parses_feed_in_rate() {
        let s = parse(&tiny_json(""), Path::new(".")).unwrap();
        assert_eq!(s.prices.sell, vec![0.1, 0.1]);
        assert_eq!(s.time.slot_hours, 1.0);
        let mut f = ScenarioFile::from_json(&tiny_json(""), "x").unwrap();
        f.feed_in_mode = FeedInMode::Relative;
        let s = f.to_scenario(Path::new(".")).unwrap();
        assert!((s.prices.sell[1] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn rejects_both_sell_sources() {
        let err = parse(&tiny_json(r#", "sell": [0.1, 0.1]"#), Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("feed_in_rate"));
    }

    #[test]
    fn error_names_field_path() {
        let bad = tiny_json("").replace(r#""max_buy_kw": 50"#, r#""max_buy_kw": "lots""#);
        let err = parse(&bad, Path::new(".")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("microgrids[0].max_buy_kw"), "{msg}");
    }

    #[test]
    fn round_trip() {
        let s = parse(&tiny_json(""), Path::new(".")).unwrap();
        assert_eq!(parse(&emit(&s), Path::new("/nowhere")).unwrap(), s);
    }

    #[test]
    fn reads_csv_relative_to_base() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("p.csv"), "buy,sell\n0.2,0.05\n0.3,0.05\n").unwrap();
        std::fs::write(dir.path().join("w.csv"), "speed\n13\n2\n").unwrap();
        let doc = tiny_json("")
            .replace(r#"{"buy": [0.2, 0.3]}"#, r#"{"csv": "p.csv", "sell_column": "sell"}"#)
            .replace(r#""feed_in_rate": 0.1,"#, "")
            .replace(r#""fractions": [0.5, 0.1]"#, r#""speeds_csv": "w.csv""#);
        let path = dir.path().join("s.json");
        std::fs::write(&path, doc).unwrap();
        let s = load(&path).unwrap();
        assert_eq!(s.prices.buy, vec![0.2, 0.3]);
        assert_eq!(s.prices.sell, vec![0.05, 0.05]);
        assert_eq!(s.microgrids[0].wind_fraction, vec![1.0, 0.0]);
    }
}
