//! Domain types shared by every stage of the pipeline: parcels, bundles,
//! tokens, ISO weeks, bundle-level transactions and daily token prices.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Utc, Weekday};
use rust_decimal::Decimal;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Side length of the parcel map.
pub const GRID_SIZE: i64 = 408;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarketError {
    #[error("bundle has no parcels")]
    EmptyBundle,
    #[error("parcel ({x}, {y}) lies outside the {GRID_SIZE}x{GRID_SIZE} grid")]
    OutOfGrid { x: i64, y: i64 },
    #[error("parcel ({x}, {y}) appears more than once in a bundle")]
    DuplicateParcel { x: u16, y: u16 },
    #[error("invalid ISO week `{0}`")]
    BadWeek(String),
    #[error("unknown sale type `{0}` (expected primary or secondary)")]
    BadSaleKind(String),
    #[error("price table already has an entry for {token} on {date}")]
    DuplicatePriceRow { date: NaiveDate, token: Token },
    #[error("non-positive USD price {price} for {token} on {date}")]
    NonPositivePrice {
        date: NaiveDate,
        token: Token,
        price: Decimal,
    },
}

/// One parcel on the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParcelCoord {
    x: u16,
    y: u16,
}

impl ParcelCoord {
    pub fn new(x: i64, y: i64) -> Result<Self, MarketError> {
        if !(0..GRID_SIZE).contains(&x) || !(0..GRID_SIZE).contains(&y) {
            return Err(MarketError::OutOfGrid { x, y });
        }
        Ok(Self {
            x: x as u16,
            y: y as u16,
        })
    }

    pub fn x(self) -> u16 {
        self.x
    }

    pub fn y(self) -> u16 {
        self.y
    }

    /// Edge-adjacent neighbours that stay on the grid.
    pub fn neighbours(self) -> impl Iterator<Item = ParcelCoord> {
        let (x, y) = (self.x as i64, self.y as i64);
        [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
            .into_iter()
            .filter_map(|(x, y)| ParcelCoord::new(x, y).ok())
    }
}

impl fmt::Display for ParcelCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Identity of a bundle: its parcels, sorted by `(x, y)` without duplicates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BundleKey(Vec<ParcelCoord>);

impl BundleKey {
    pub fn coords(&self) -> &[ParcelCoord] {
        &self.0
    }

    pub fn lot_size(&self) -> usize {
        self.0.len()
    }

    /// Stable short identifier: the first 16 hex digits of SHA-256 over
    /// `x:y;x:y;...`.
    pub fn hash_hex(&self) -> String {
        let mut hasher = Sha256::new();
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                hasher.update(b";");
            }
            hasher.update(format!("{}:{}", c.x, c.y).as_bytes());
        }
        hasher.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Sorts a parcel list into its canonical bundle key.
pub fn canonical_bundle_key(coords: &[ParcelCoord]) -> Result<BundleKey, MarketError> {
    if coords.is_empty() {
        return Err(MarketError::EmptyBundle);
    }
    let mut sorted = coords.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(MarketError::DuplicateParcel {
            x: w[0].x,
            y: w[0].y,
        });
    }
    Ok(BundleKey(sorted))
}

/// A settlement token symbol, canonicalized to upper case.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(String);

impl Token {
    pub const KNOWN: [&'static str; 5] = ["ETH", "WETH", "SAND", "DAI", "USDC"];

    pub fn new(symbol: &str) -> Self {
        Token(symbol.trim().to_ascii_uppercase())
    }

    pub fn eth() -> Self {
        Token::new("ETH")
    }

    pub fn weth() -> Self {
        Token::new("WETH")
    }

    pub fn sand() -> Self {
        Token::new("SAND")
    }

    pub fn dai() -> Self {
        Token::new("DAI")
    }

    pub fn usdc() -> Self {
        Token::new("USDC")
    }

    pub fn symbol(&self) -> &str {
        &self.0
    }

    pub fn is_known(&self) -> bool {
        Self::KNOWN.contains(&self.0.as_str())
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Unit of account prices are expressed in.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Denomination {
    Usd,
    Token(Token),
}

impl Denomination {
    pub fn label(&self) -> &str {
        match self {
            Denomination::Usd => "USD",
            Denomination::Token(t) => t.symbol(),
        }
    }
}

impl fmt::Display for Denomination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Denomination {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let token = Token::new(s);
        Ok(if token.symbol() == "USD" {
            Denomination::Usd
        } else {
            Denomination::Token(token)
        })
    }
}

impl From<Token> for Denomination {
    fn from(token: Token) -> Self {
        Denomination::Token(token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SaleKind {
    Primary,
    Secondary,
}

impl SaleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SaleKind::Primary => "primary",
            SaleKind::Secondary => "secondary",
        }
    }
}

impl FromStr for SaleKind {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "primary" => Ok(SaleKind::Primary),
            "secondary" => Ok(SaleKind::Secondary),
            _ => Err(MarketError::BadSaleKind(s.to_string())),
        }
    }
}

/// ISO-8601 week. Field order makes the derived ordering chronological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeekId {
    pub iso_year: i32,
    pub iso_week: u32,
}

impl WeekId {
    pub fn new(iso_year: i32, iso_week: u32) -> Result<Self, MarketError> {
        let week = WeekId { iso_year, iso_week };
        NaiveDate::from_isoywd_opt(iso_year, iso_week, Weekday::Mon)
            .map(|_| week)
            .ok_or_else(|| MarketError::BadWeek(week.to_string()))
    }

    pub fn of_date(date: NaiveDate) -> Self {
        let iso = date.iso_week();
        WeekId {
            iso_year: iso.year(),
            iso_week: iso.week(),
        }
    }

    pub fn monday(self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.iso_year, self.iso_week, Weekday::Mon)
            .expect("WeekId is validated on construction")
    }

    /// Weeks elapsed since the ISO week containing 1970-01-01.
    pub fn ordinal(self) -> i64 {
        let epoch = NaiveDate::from_ymd_opt(1969, 12, 29).expect("valid date");
        (self.monday() - epoch).num_days() / 7
    }

    pub fn weeks_until(self, later: WeekId) -> i64 {
        later.ordinal() - self.ordinal()
    }

    pub fn plus_weeks(self, weeks: i64) -> WeekId {
        WeekId::of_date(self.monday() + chrono::Duration::weeks(weeks))
    }
}

impl fmt::Display for WeekId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.iso_year, self.iso_week)
    }
}

/// Accepts `2020-33`, `2020-W33` and `2020W33`.
impl FromStr for WeekId {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MarketError::BadWeek(s.to_string());
        let t = s.trim();
        let (year, week) = match t.split_once('-') {
            Some((y, w)) => (y, w.trim_start_matches(['W', 'w'])),
            None => t.split_once(['W', 'w']).ok_or_else(bad)?,
        };
        let year = year.parse().map_err(|_| bad())?;
        let week = week.parse().map_err(|_| bad())?;
        WeekId::new(year, week).map_err(|_| bad())
    }
}

/// ISO year-week of the UTC calendar date of `timestamp`.
pub fn week_of(timestamp: DateTime<Utc>) -> WeekId {
    WeekId::of_date(timestamp.date_naive())
}

/// A bundle-level sale or mint.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub tx_id: String,
    pub bundle: BundleKey,
    pub lot_size: usize,
    pub timestamp: DateTime<Utc>,
    pub price_amount: Decimal,
    pub settlement: Token,
    pub sale_kind: SaleKind,
    pub mint_date: NaiveDate,
    pub age_days: i64,
}

impl Transaction {
    pub fn week(&self) -> WeekId {
        week_of(self.timestamp)
    }

    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

/// Daily USD prices per token.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceTable {
    entries: BTreeMap<(Token, NaiveDate), Decimal>,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        date: NaiveDate,
        token: Token,
        usd_price: Decimal,
    ) -> Result<(), MarketError> {
        if usd_price <= Decimal::ZERO {
            return Err(MarketError::NonPositivePrice {
                date,
                token,
                price: usd_price,
            });
        }
        match self.entries.entry((token, date)) {
            std::collections::btree_map::Entry::Occupied(e) => Err(MarketError::DuplicatePriceRow {
                date,
                token: e.key().0.clone(),
            }),
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(usd_price);
                Ok(())
            }
        }
    }

    pub fn usd(&self, token: &Token, date: NaiveDate) -> Option<Decimal> {
        self.entries.get(&(token.clone(), date)).copied()
    }

    /// USD value of one unit of `denomination`; USD itself is 1.
    pub fn unit_usd(&self, denomination: &Denomination, date: NaiveDate) -> Option<Decimal> {
        match denomination {
            Denomination::Usd => Some(Decimal::ONE),
            Denomination::Token(t) => self.usd(t, date),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All `(date, usd_price)` entries for one token, in date order.
    pub fn series(&self, token: &Token) -> impl Iterator<Item = (NaiveDate, Decimal)> + '_ {
        let token = token.clone();
        self.entries
            .range((token.clone(), NaiveDate::MIN)..=(token, NaiveDate::MAX))
            .map(|((_, d), p)| (*d, *p))
    }

    pub fn tokens(&self) -> Vec<Token> {
        let mut out: Vec<Token> = Vec::new();
        for (t, _) in self.entries.keys() {
            if out.last() != Some(t) {
                out.push(t.clone());
            }
        }
        out
    }

    /// `(date, token, usd_price)` rows ordered by date, then token.
    pub fn rows(&self) -> Vec<(NaiveDate, Token, Decimal)> {
        let mut rows: Vec<_> = self
            .entries
            .iter()
            .map(|((t, d), p)| (*d, t.clone(), *p))
            .collect();
        rows.sort();
        rows
    }
}

/// A transaction priced in a chosen unit of account.
#[derive(Debug, Clone, PartialEq)]
pub struct DenominatedSale {
    pub source: Transaction,
    pub denomination: Denomination,
    pub price: Decimal,
    pub log_price: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn pc(x: i64, y: i64) -> ParcelCoord {
        ParcelCoord::new(x, y).unwrap()
    }

    #[test]
    fn bundle_key_sorts() {
        let key = canonical_bundle_key(&[pc(1, 0), pc(0, 0)]).unwrap();
        assert_eq!(key.coords(), &[pc(0, 0), pc(1, 0)]);
        let single = canonical_bundle_key(&[pc(5, 5)]).unwrap();
        assert_eq!(single.coords(), &[pc(5, 5)]);
        assert_eq!(single.lot_size(), 1);
    }

    #[test]
    fn bundle_key_rejects_degenerate_input() {
        assert_eq!(
            canonical_bundle_key(&[pc(0, 0), pc(0, 0)]),
            Err(MarketError::DuplicateParcel { x: 0, y: 0 })
        );
        assert_eq!(canonical_bundle_key(&[]), Err(MarketError::EmptyBundle));
        assert_eq!(
            ParcelCoord::new(408, 0),
            Err(MarketError::OutOfGrid { x: 408, y: 0 })
        );
        assert!(ParcelCoord::new(0, -1).is_err());
        assert!(ParcelCoord::new(407, 407).is_ok());
    }

    #[test]
    fn bundle_hash_is_stable_and_key_sensitive() {
        let a = canonical_bundle_key(&[pc(1, 0), pc(0, 0)]).unwrap();
        let b = canonical_bundle_key(&[pc(0, 0), pc(1, 0)]).unwrap();
        let c = canonical_bundle_key(&[pc(0, 0)]).unwrap();
        assert_eq!(a.hash_hex(), b.hash_hex());
        assert_ne!(a.hash_hex(), c.hash_hex());
        assert_eq!(a.hash_hex().len(), 16);
    }

    #[test]
    fn week_of_matches_iso_calendar() {
        let w = |s: &str| week_of(s.parse::<DateTime<Utc>>().unwrap());
        assert_eq!(w("2019-12-05T12:00:00Z"), WeekId::new(2019, 49).unwrap());
        assert_eq!(w("2020-08-14T00:00:00Z"), WeekId::new(2020, 33).unwrap());
        assert_eq!(w("2021-01-01T00:00:00Z"), WeekId::new(2020, 53).unwrap());
    }

    #[test]
    fn week_ids_parse_and_count() {
        let a: WeekId = "2020-53".parse().unwrap();
        let b: WeekId = "2021-W01".parse().unwrap();
        assert_eq!(a.weeks_until(b), 1);
        assert_eq!(a.plus_weeks(1), b);
        assert!("2021-53".parse::<WeekId>().is_err());
        assert!("nonsense".parse::<WeekId>().is_err());
        assert_eq!(b.to_string(), "2021-W01");
    }

    #[test]
    fn tokens_are_case_insensitive() {
        assert_eq!(Token::new("weth"), Token::weth());
        assert!(Token::new("Sand").is_known());
        assert!(!Token::new("FOO").is_known());
        assert_eq!("usd".parse::<Denomination>().unwrap(), Denomination::Usd);
        assert_eq!(
            "eth".parse::<Denomination>().unwrap(),
            Denomination::Token(Token::eth())
        );
    }

    #[test]
    fn price_table_rejects_duplicates_and_non_positive() {
        let d = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        let mut table = PriceTable::new();
        table.insert(d, Token::eth(), Decimal::new(730, 0)).unwrap();
        assert!(matches!(
            table.insert(d, Token::eth(), Decimal::new(731, 0)),
            Err(MarketError::DuplicatePriceRow { .. })
        ));
        assert!(matches!(
            table.insert(d, Token::sand(), Decimal::ZERO),
            Err(MarketError::NonPositivePrice { .. })
        ));
        assert_eq!(table.len(), 1);
        assert_eq!(table.unit_usd(&Denomination::Usd, d), Some(Decimal::ONE));
    }

    proptest! {
        #[test]
        fn bundle_key_is_order_insensitive(
            mut cells in proptest::collection::btree_set((0i64..408, 0i64..408), 1..12)
                .prop_map(|s| s.into_iter().collect::<Vec<_>>()),
            seed in any::<u64>(),
        ) {
            let coords: Vec<_> = cells.iter().map(|&(x, y)| pc(x, y)).collect();
            let key = canonical_bundle_key(&coords).unwrap();
            // deterministic shuffle
            let n = cells.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                cells.swap(i, (s >> 33) as usize % (i + 1));
            }
            let shuffled: Vec<_> = cells.iter().map(|&(x, y)| pc(x, y)).collect();
            let again = canonical_bundle_key(&shuffled).unwrap();
            prop_assert_eq!(&key, &again);
            prop_assert_eq!(canonical_bundle_key(key.coords()).unwrap(), key);
        }

        #[test]
        fn week_of_is_monotone(a in 0i64..2_000_000_000, b in 0i64..2_000_000_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let t1 = Utc.timestamp_opt(lo, 0).unwrap();
            let t2 = Utc.timestamp_opt(hi, 0).unwrap();
            prop_assert!(week_of(t1) <= week_of(t2));
        }
    }
}
