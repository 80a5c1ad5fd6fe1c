//! Run settings: command-line flags over a settings file over defaults.

use std::path::{Path, PathBuf};

use landex_core::ingest::{RowPriceMode, TokenMode, WinsorBounds};
use landex_core::market::{Denomination, WeekId};
use landex_core::repeat_sales::VarianceModel;
use serde::Deserialize;

use crate::{usage_error, CliError, DataArgs};

/// Keys of the settings file; each is the long flag name without dashes.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    tx: Option<PathBuf>,
    prices: Option<PathBuf>,
    denom: Option<Denoms>,
    winsor_low: Option<f64>,
    winsor_high: Option<f64>,
    out_dir: Option<PathBuf>,
    row_price_mode: Option<String>,
    base_week: Option<String>,
    variance_model: Option<String>,
    lenient_tokens: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Denoms {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub tx: PathBuf,
    pub prices: Option<PathBuf>,
    pub denominations: Vec<Denomination>,
    pub winsor: WinsorBounds,
    pub out_dir: PathBuf,
    pub row_price_mode: RowPriceMode,
    pub token_mode: TokenMode,
    pub base_week: Option<WeekId>,
    pub variance_model: VarianceModel,
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

impl Settings {
    pub(crate) fn resolve(subcommand: &'static str, args: DataArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let usage = |m: String| usage_error(subcommand, m);

        let tx = args
            .tx
            .or(file.tx)
            .ok_or_else(|| usage("missing --tx".into()))?;
        let prices = args.prices.or(file.prices);
        if prices.is_none() && subcommand != "ingest" {
            return Err(usage("missing --prices".into()));
        }

        let denom_names: Vec<String> = if !args.denom.is_empty() {
            args.denom
        } else {
            match file.denom {
                Some(Denoms::One(d)) => vec![d],
                Some(Denoms::Many(ds)) => ds,
                None => vec!["USD".into(), "ETH".into(), "SAND".into()],
            }
        };
        let mut denominations: Vec<Denomination> = Vec::new();
        for name in &denom_names {
            if name.trim().is_empty() {
                return Err(usage("empty --denom".into()));
            }
            let d: Denomination = name.parse().expect("denomination parsing is infallible");
            if !denominations.contains(&d) {
                denominations.push(d);
            }
        }
        if denominations.is_empty() {
            return Err(usage("no denominations given".into()));
        }

        let defaults = WinsorBounds::default();
        let low = args.winsor_low.or(file.winsor_low).unwrap_or(defaults.low());
        let high = args.winsor_high.or(file.winsor_high).unwrap_or(defaults.high());
        let winsor = WinsorBounds::new(low, high).map_err(|e| usage(e.to_string()))?;

        let row_price_mode = match args.row_price_mode.or(file.row_price_mode) {
            Some(s) => s.parse().map_err(usage)?,
            None => RowPriceMode::default(),
        };
        let base_week = match args.base_week.or(file.base_week) {
            Some(s) => Some(
                s.parse::<WeekId>()
                    .map_err(|e| usage(format!("--base-week: {e}")))?,
            ),
            None => None,
        };
        let variance_model = match args.variance_model.or(file.variance_model).as_deref() {
            None | Some("linear") => VarianceModel::Linear,
            Some("quadratic") => VarianceModel::Quadratic,
            Some(other) => {
                return Err(usage(format!(
                    "unknown variance model `{other}` (expected linear or quadratic)"
                )))
            }
        };
        let token_mode = if args.lenient_tokens || file.lenient_tokens.unwrap_or(false) {
            TokenMode::Lenient
        } else {
            TokenMode::Strict
        };

        Ok(Settings {
            tx,
            prices,
            denominations,
            winsor,
            out_dir: args.out_dir.or(file.out_dir).unwrap_or_else(|| PathBuf::from("out")),
            row_price_mode,
            token_mode,
            base_week,
            variance_model,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn args() -> DataArgs {
        DataArgs {
            tx: Some("t.csv".into()),
            prices: Some("p.csv".into()),
            ..DataArgs::default()
        }
    }

    #[test]
    fn defaults() {
        let s = Settings::resolve("hedonic", args()).unwrap();
        assert_eq!(s.denominations.len(), 3);
        assert_eq!(s.winsor, WinsorBounds::default());
        assert_eq!(s.out_dir, PathBuf::from("out"));
        assert_eq!(s.token_mode, TokenMode::Strict);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "denom = \"ETH\"\nwinsor-low = 0.01\nwinsor-high = 0.9\nout-dir = \"from-file\"").unwrap();
        let a = DataArgs {
            winsor_high: Some(0.95),
            config: Some(f.path().to_path_buf()),
            ..args()
        };
        let s = Settings::resolve("hedonic", a).unwrap();
        assert_eq!(s.denominations, vec!["ETH".parse().unwrap()]);
        assert_eq!((s.winsor.low(), s.winsor.high()), (0.01, 0.95));
        assert_eq!(s.out_dir, PathBuf::from("from-file"));
    }

    #[test]
    fn missing_prices_is_a_usage_error() {
        let a = DataArgs {
            prices: None,
            ..args()
        };
        assert!(matches!(
            Settings::resolve("hedonic", a),
            Err(CliError::Usage { .. })
        ));
        let a = DataArgs {
            prices: None,
            ..args()
        };
        assert!(Settings::resolve("ingest", a).is_ok());
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "denomination = \"ETH\"").unwrap();
        let a = DataArgs {
            config: Some(f.path().to_path_buf()),
            ..args()
        };
        assert!(Settings::resolve("hedonic", a).is_err());
    }
}
