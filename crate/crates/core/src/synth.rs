//! Seeded synthetic market with known ground truth.
//!
//! Every sale's USD log price is
//!
//! ```text
//! ln p = delta[week] + lot * ln(lot size) + age * ln(age days + 1)
//!        + primary * [mint] + premium[settlement token] + noise
//! ```
//!
//! where `delta` is a drifting random walk and premia are relative to ETH.
//! The noise of a bundle's trade is a per-bundle random walk (variance
//! `noise_slope` per week since its previous trade) plus white noise of
//! variance `noise_base_variance`, so repeat-sale price changes have variance
//! linear in holding time.
//!
//! Randomness comes from ChaCha8 seeded with `seed` via `seed_from_u64`; all
//! draws happen in a fixed order, so a config always produces the same bytes.
//! Token prices are constant within each ISO week, which makes the truth in
//! every denomination exact: `delta_D = delta_USD - ln(usd price of D)`.
//!
//! Bundles are contiguous shapes placed in disjoint 3x3 slots of the grid.
//! Mints happen Monday to Wednesday and resales Thursday to Sunday, so a
//! bundle never trades twice at the same instant.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use rust_decimal::prelude::FromPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hedonic::{settlement_term, AGE_TERM, LOT_TERM, PRIMARY_TERM};
use crate::market::{Denomination, Token, WeekId, GRID_SIZE};
use crate::stats::WeeklySeries;

/// Bundles sit in 3x3 slots; this many fit along each grid axis.
const SLOTS_PER_SIDE: usize = (GRID_SIZE / 3) as usize;

/// Cell order inside a slot; every prefix is contiguous.
const SNAKE: [(usize, usize); 9] = [
    (0, 0),
    (1, 0),
    (2, 0),
    (2, 1),
    (1, 1),
    (0, 1),
    (0, 2),
    (1, 2),
    (2, 2),
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("cannot parse synthetic config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Any day of the first week; the market starts on that week's Monday.
    pub start_date: NaiveDate,
    pub n_weeks: usize,
    /// New bundles minted each week; `n_weeks * mints_per_week` bundles in
    /// total.
    pub mints_per_week: usize,
    /// Resales attempted each week, capped by the number of minted bundles.
    pub resales_per_week: usize,
    /// Relative frequency of lot sizes 1 through 9.
    pub lot_weights: [f64; 9],

    /// USD log level of the first week.
    pub index_start: f64,
    pub index_drift: f64,
    /// Weekly standard deviation of the log index.
    pub index_vol: f64,

    pub lot_elasticity: f64,
    pub age_coefficient: f64,
    pub primary_effect: f64,
    /// Log premia of settlement tokens relative to ETH.
    pub premia: BTreeMap<String, f64>,

    pub noise_base_variance: f64,
    /// Extra noise variance per week since the bundle's previous trade.
    pub noise_slope: f64,

    pub eth_usd_start: f64,
    pub eth_drift: f64,
    pub eth_vol: f64,
    pub sand_usd_start: f64,
    pub sand_drift: f64,
    pub sand_vol: f64,
    /// First week (0-based) with a SAND price and SAND-settled sales.
    pub sand_intro_week: usize,

    /// Share of mints settled in SAND once it exists; the rest use ETH.
    pub primary_sand_share: f64,
    /// Relative frequency of settlement tokens among resales.
    pub secondary_shares: BTreeMap<String, f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2019,
            start_date: NaiveDate::from_ymd_opt(2019, 12, 2).expect("valid date"),
            n_weeks: 100,
            mints_per_week: 80,
            resales_per_week: 120,
            lot_weights: [40.0, 10.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 20.0],
            index_start: 7.0,
            index_drift: 0.01,
            index_vol: 0.05,
            lot_elasticity: 0.8,
            age_coefficient: 0.05,
            primary_effect: -0.25,
            premia: [("WETH", -0.30), ("SAND", 0.15), ("DAI", 0.0), ("USDC", 0.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            noise_base_variance: 0.04,
            noise_slope: 0.002,
            eth_usd_start: 150.0,
            eth_drift: 0.01,
            eth_vol: 0.08,
            sand_usd_start: 0.05,
            sand_drift: 0.02,
            sand_vol: 0.1,
            sand_intro_week: 8,
            primary_sand_share: 0.9,
            secondary_shares: [
                ("ETH", 0.55),
                ("WETH", 0.2),
                ("SAND", 0.15),
                ("DAI", 0.05),
                ("USDC", 0.05),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        }
    }
}

impl SynthConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_weeks < 2 {
            return bad(format!("n_weeks must be at least 2, got {}", self.n_weeks));
        }
        if self.mints_per_week == 0 {
            return bad("mints_per_week must be positive".into());
        }
        let slots = SLOTS_PER_SIDE * SLOTS_PER_SIDE;
        if self.n_weeks * self.mints_per_week > slots {
            return bad(format!(
                "{} bundles do not fit in {slots} grid slots",
                self.n_weeks * self.mints_per_week
            ));
        }
        for (name, v) in [
            ("noise_base_variance", self.noise_base_variance),
            ("noise_slope", self.noise_slope),
            ("index_vol", self.index_vol),
            ("eth_vol", self.eth_vol),
            ("sand_vol", self.sand_vol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        if self.eth_usd_start <= 0.0 || self.sand_usd_start <= 0.0 {
            return bad("token start prices must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.primary_sand_share) {
            return bad("primary_sand_share must lie in [0, 1]".into());
        }
        if self.lot_weights.iter().any(|w| *w < 0.0) || self.lot_weights.iter().sum::<f64>() <= 0.0 {
            return bad("lot_weights must be non-negative with a positive sum".into());
        }
        for (what, map) in [("premia", &self.premia), ("secondary_shares", &self.secondary_shares)] {
            for (k, v) in map {
                let token = Token::new(k);
                if !token.is_known() {
                    return bad(format!("{what}: unknown token `{k}`"));
                }
                if !v.is_finite() {
                    return bad(format!("{what}: `{k}` is not finite"));
                }
            }
        }
        if self.premia.iter().any(|(k, v)| Token::new(k) == Token::eth() && *v != 0.0) {
            return bad("premia are relative to ETH; an ETH premium must be 0".into());
        }
        if self.secondary_shares.values().any(|v| *v < 0.0)
            || self
                .secondary_shares
                .iter()
                .filter(|(k, _)| Token::new(k) != Token::sand())
                .map(|(_, v)| v)
                .sum::<f64>()
                <= 0.0
        {
            return bad("secondary_shares need a positive weight on a token other than SAND".into());
        }
        Ok(())
    }

    fn premium(&self, token: &Token) -> f64 {
        self.premia
            .iter()
            .find(|(k, _)| Token::new(k) == *token)
            .map_or(0.0, |(_, v)| *v)
    }
}

/// True parameters behind a generated market.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// USD log level of every generated week.
    pub usd_log_delta: Vec<(WeekId, f64)>,
    /// USD price of each token per generated week; `None` before it exists.
    pub token_usd: BTreeMap<Token, Vec<Option<f64>>>,
    pub lot_elasticity: f64,
    pub age_coefficient: f64,
    pub primary_effect: f64,
    pub premia: BTreeMap<Token, f64>,
}

impl GroundTruth {
    /// Latent log levels in `denomination`, for weeks where it is priced.
    pub fn log_delta(&self, denomination: &Denomination) -> WeeklySeries<f64> {
        match denomination {
            Denomination::Usd => self.usd_log_delta.iter().copied().collect(),
            Denomination::Token(t) => match self.token_usd.get(t) {
                None => WeeklySeries::new(),
                Some(prices) => self
                    .usd_log_delta
                    .iter()
                    .zip(prices)
                    .filter_map(|(&(w, d), p)| p.map(|p| (w, d - p.ln())))
                    .collect(),
            },
        }
    }

    /// True value of a hedonic non-week coefficient, by term label.
    pub fn coefficient(&self, term: &str) -> Option<f64> {
        match term {
            LOT_TERM => Some(self.lot_elasticity),
            AGE_TERM => Some(self.age_coefficient),
            PRIMARY_TERM => Some(self.primary_effect),
            _ => self
                .premia
                .iter()
                .find(|(t, _)| settlement_term(t.symbol()) == term)
                .map(|(_, v)| *v),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthMarket {
    pub transactions_csv: String,
    pub prices_csv: String,
    pub truth_csv: String,
    pub truth: GroundTruth,
    /// Bundle-level sales (mints plus resales).
    pub n_sales: usize,
}

struct BundleState {
    slot: usize,
    lot: usize,
    mint_date: NaiveDate,
    mint_week: usize,
    walk: f64,
    last_week: usize,
}

struct Sale {
    timestamp: chrono::DateTime<Utc>,
    tx_id: String,
    bundle: usize,
    amount: Decimal,
    token: Token,
    primary: bool,
}

fn round_decimal(v: f64, figures: u32) -> Decimal {
    let d = Decimal::from_f64(v).expect("finite value in decimal range");
    d.round_sf(figures).unwrap_or(d).normalize()
}

fn log_walk(rng: &mut ChaCha8Rng, n: usize, start: f64, drift: f64, vol: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut level = start;
    for _ in 0..n {
        out.push(level);
        let z: f64 = StandardNormal.sample(rng);
        level += drift + vol * z;
    }
    out
}

pub fn generate_market(config: &SynthConfig) -> Result<SynthMarket, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_weeks = config.n_weeks;
    let first_monday = WeekId::of_date(config.start_date).monday();
    let week_ids: Vec<WeekId> = (0..n_weeks)
        .map(|w| WeekId::of_date(first_monday + Duration::weeks(w as i64)))
        .collect();

    // Latent paths, drawn in a fixed order.
    let delta = log_walk(&mut rng, n_weeks, config.index_start, config.index_drift, config.index_vol);
    let eth_log = log_walk(&mut rng, n_weeks, config.eth_usd_start.ln(), config.eth_drift, config.eth_vol);
    let sand_log = log_walk(&mut rng, n_weeks, config.sand_usd_start.ln(), config.sand_drift, config.sand_vol);

    let eth: Vec<Decimal> = eth_log.iter().map(|l| round_decimal(l.exp(), 10)).collect();
    let sand: Vec<Option<Decimal>> = (0..n_weeks)
        .map(|w| {
            (w >= config.sand_intro_week)
                .then(|| round_decimal(sand_log[w - config.sand_intro_week].exp(), 10))
        })
        .collect();
    let unit = |token: &Token, w: usize| -> Option<Decimal> {
        match token.symbol() {
            "ETH" | "WETH" => Some(eth[w]),
            "DAI" | "USDC" => Some(Decimal::ONE),
            "SAND" => sand[w],
            _ => None,
        }
    };
    let listed = [Token::dai(), Token::eth(), Token::sand(), Token::usdc(), Token::weth()];

    let lot_dist = WeightedIndex::new(config.lot_weights).expect("weights validated");
    let secondary: Vec<(Token, f64)> = config
        .secondary_shares
        .iter()
        .map(|(k, v)| (Token::new(k), *v))
        .collect();

    let mut bundles: Vec<BundleState> = Vec::new();
    let mut sales: Vec<Sale> = Vec::new();
    let mut next_tx = 0usize;
    let mut new_tx_id = || {
        next_tx += 1;
        format!("tx{next_tx:07}")
    };

    let log_price = |b: &BundleState, token: &Token, primary: bool, date: NaiveDate, w: usize, eps: f64| {
        let age_days = (date - b.mint_date).num_days() as f64;
        delta[w]
            + config.lot_elasticity * (b.lot as f64).ln()
            + config.age_coefficient * (age_days + 1.0).ln()
            + if primary { config.primary_effect } else { 0.0 }
            + config.premium(token)
            + eps
    };
    let base_sd = config.noise_base_variance.sqrt();

    for (w, monday) in (0..n_weeks).map(|w| (w, first_monday + Duration::weeks(w as i64))) {
        let sand_live = sand[w].is_some();

        for _ in 0..config.mints_per_week {
            let lot = lot_dist.sample(&mut rng) + 1;
            let day = rng.gen_range(0..3);
            let secs = rng.gen_range(0..86_400);
            let u: f64 = rng.gen();
            let white: f64 = StandardNormal.sample(&mut rng);
            let date = monday + Duration::days(day);
            let timestamp = Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
                + Duration::seconds(secs);
            let token = if sand_live && u < config.primary_sand_share {
                Token::sand()
            } else {
                Token::eth()
            };
            let state = BundleState {
                slot: bundles.len(),
                lot,
                mint_date: date,
                mint_week: w,
                walk: 0.0,
                last_week: w,
            };
            let lp = log_price(&state, &token, true, date, w, base_sd * white);
            let price = unit(&token, w).expect("mint token is priced");
            let amount = round_decimal(lp.exp() / decimal_f64(price), 15);
            sales.push(Sale {
                timestamp,
                tx_id: new_tx_id(),
                bundle: bundles.len(),
                amount,
                token,
                primary: true,
            });
            bundles.push(state);
        }

        let pool: Vec<usize> = (0..bundles.len())
            .filter(|&b| bundles[b].mint_week <= w)
            .collect();
        let k = config.resales_per_week.min(pool.len());
        let mut chosen: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
        chosen.sort_unstable();
        for b in chosen {
            let day = rng.gen_range(3..7);
            let secs = rng.gen_range(0..86_400);
            let u: f64 = rng.gen();
            let step: f64 = StandardNormal.sample(&mut rng);
            let white: f64 = StandardNormal.sample(&mut rng);
            let date = monday + Duration::days(day);
            let timestamp = Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
                + Duration::seconds(secs);

            let choices: Vec<&(Token, f64)> = secondary
                .iter()
                .filter(|(t, _)| sand_live || *t != Token::sand())
                .collect();
            let total: f64 = choices.iter().map(|(_, s)| s).sum();
            let mut target = u * total;
            let mut token = choices.last().expect("validated non-empty").0.clone();
            for (t, s) in &choices {
                if target < *s {
                    token = t.clone();
                    break;
                }
                target -= s;
            }

            let state = &mut bundles[b];
            let held = (w - state.last_week) as f64;
            state.walk += (config.noise_slope * held).sqrt() * step;
            state.last_week = w;
            let eps = state.walk + base_sd * white;
            let lp = log_price(state, &token, false, date, w, eps);
            let price = unit(&token, w).expect("resale token is priced");
            let amount = round_decimal(lp.exp() / decimal_f64(price), 15);
            sales.push(Sale {
                timestamp,
                tx_id: new_tx_id(),
                bundle: b,
                amount,
                token,
                primary: false,
            });
        }
    }
    sales.sort_by(|a, b| (a.timestamp, &a.tx_id).cmp(&(b.timestamp, &b.tx_id)));

    let mut tx_csv = String::from("tx_id,timestamp,parcel_x,parcel_y,price_amount,token,sale_type,mint_date\n");
    for s in &sales {
        let b = &bundles[s.bundle];
        let (ox, oy) = (3 * (b.slot % SLOTS_PER_SIDE), 3 * (b.slot / SLOTS_PER_SIDE));
        let mut cells: Vec<(usize, usize)> = SNAKE[..b.lot].iter().map(|&(x, y)| (ox + x, oy + y)).collect();
        cells.sort_unstable();
        let parts = Decimal::from(b.lot);
        let share = (s.amount / parts).round_dp(s.amount.scale() + 2);
        let kind = if s.primary { "primary" } else { "secondary" };
        for (i, (x, y)) in cells.iter().enumerate() {
            let amount = if i + 1 == cells.len() {
                s.amount - share * Decimal::from(b.lot - 1)
            } else {
                share
            };
            let _ = writeln!(
                tx_csv,
                "{},{},{x},{y},{},{},{kind},{}",
                s.tx_id,
                s.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
                amount.normalize(),
                s.token,
                b.mint_date
            );
        }
    }

    let mut prices_csv = String::from("date,token,usd_price\n");
    for w in 0..n_weeks {
        for day in 0..7 {
            let date = first_monday + Duration::weeks(w as i64) + Duration::days(day);
            for token in &listed {
                if let Some(p) = unit(token, w) {
                    let _ = writeln!(prices_csv, "{date},{token},{p}");
                }
            }
        }
    }

    let token_usd: BTreeMap<Token, Vec<Option<f64>>> = listed
        .iter()
        .map(|t| (t.clone(), (0..n_weeks).map(|w| unit(t, w).map(decimal_f64)).collect()))
        .collect();
    let truth = GroundTruth {
        usd_log_delta: week_ids.iter().copied().zip(delta.iter().copied()).collect(),
        token_usd,
        lot_elasticity: config.lot_elasticity,
        age_coefficient: config.age_coefficient,
        primary_effect: config.primary_effect,
        premia: listed
            .iter()
            .filter(|t| **t != Token::eth())
            .map(|t| (t.clone(), config.premium(t)))
            .collect(),
    };
    let truth_csv = truth_csv(&truth);

    Ok(SynthMarket {
        transactions_csv: tx_csv,
        prices_csv,
        truth_csv,
        truth,
        n_sales: sales.len(),
    })
}

impl SynthMarket {
    /// Runs the generated files through the parsers, as the CLI would.
    pub fn parse(
        &self,
    ) -> Result<(crate::ingest::Aggregation, crate::market::PriceTable), crate::ingest::IngestError> {
        use crate::ingest::{aggregate_to_bundles, parse_price_table, parse_transactions};
        let records = parse_transactions(
            self.transactions_csv.as_bytes(),
            crate::ingest::TokenMode::Strict,
        )?;
        let aggregation = aggregate_to_bundles(&records, crate::ingest::RowPriceMode::PerParcel)?;
        let table = parse_price_table(self.prices_csv.as_bytes())?;
        Ok((aggregation, table))
    }
}

fn decimal_f64(d: Decimal) -> f64 {
    crate::ingest::decimal_to_f64(d)
}

/// `iso_year,iso_week,denom,true_log_delta` for USD, ETH and SAND.
pub fn truth_csv(truth: &GroundTruth) -> String {
    let denoms = [
        Denomination::Usd,
        Denomination::Token(Token::eth()),
        Denomination::Token(Token::sand()),
    ];
    let series: Vec<WeeklySeries<f64>> = denoms.iter().map(|d| truth.log_delta(d)).collect();
    let mut out = String::from("iso_year,iso_week,denom,true_log_delta\n");
    for &(week, _) in &truth.usd_log_delta {
        for (d, s) in denoms.iter().zip(&series) {
            if let Some(v) = s.get(&week) {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    week.iso_year,
                    week.iso_week,
                    d.label(),
                    crate::output::fmt_real(*v)
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_weeks: 6,
            mints_per_week: 10,
            resales_per_week: 8,
            sand_intro_week: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_market(&small()).unwrap();
        let b = generate_market(&small()).unwrap();
        assert_eq!(a.transactions_csv, b.transactions_csv);
        assert_eq!(a.prices_csv, b.prices_csv);
        assert_eq!(a.truth_csv, b.truth_csv);
        let c = generate_market(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.transactions_csv, c.transactions_csv);
    }

    #[test]
    fn sales_count() {
        let m = generate_market(&small()).unwrap();
        // week 0 has only 10 bundles to resell
        assert_eq!(m.n_sales, 6 * 10 + 6 * 8);
    }

    #[test]
    fn no_sand_before_introduction() {
        let m = generate_market(&small()).unwrap();
        let first_sand_week = m.truth.token_usd[&Token::sand()]
            .iter()
            .position(Option::is_some)
            .unwrap();
        assert_eq!(first_sand_week, 2);
        let sand_truth = m.truth.log_delta(&Denomination::Token(Token::sand()));
        assert_eq!(sand_truth.len(), 4);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cases = [
            SynthConfig { n_weeks: 1, ..small() },
            SynthConfig { noise_slope: -1.0, ..small() },
            SynthConfig { mints_per_week: 20_000, ..small() },
            SynthConfig {
                premia: [("ETH".to_string(), 0.1)].into(),
                ..small()
            },
        ];
        for c in cases {
            assert!(matches!(generate_market(&c), Err(SynthError::InvalidConfig(_))));
        }
    }

    #[test]
    fn toml_round_trip() {
        let text = toml::to_string(&small()).unwrap();
        assert_eq!(SynthConfig::from_toml_str(&text).unwrap(), small());
        let partial = SynthConfig::from_toml_str("seed = 5\nn_weeks = 3\n").unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.mints_per_week, SynthConfig::default().mints_per_week);
        assert!(SynthConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn truth_coefficients_by_label() {
        let m = generate_market(&small()).unwrap();
        assert_eq!(m.truth.coefficient(LOT_TERM), Some(0.8));
        assert_eq!(m.truth.coefficient(&settlement_term("WETH")), Some(-0.30));
        assert_eq!(m.truth.coefficient("week 2020-W01"), None);
    }
}
