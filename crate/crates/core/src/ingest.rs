//! Reading transaction and price exports, rolling parcel rows up into bundle
//! transactions, and the price transformations applied before estimation:
//! denomination conversion and winsorization.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Read;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use rust_decimal::Decimal;
use thiserror::Error;

use crate::market::{
    canonical_bundle_key, BundleKey, DenominatedSale, Denomination, MarketError, ParcelCoord,
    PriceTable, SaleKind, Token, Transaction,
};
use crate::scalar::Quantity;

pub const TRANSACTION_COLUMNS: [&str; 8] = [
    "tx_id",
    "timestamp",
    "parcel_x",
    "parcel_y",
    "price_amount",
    "token",
    "sale_type",
    "mint_date",
];

pub const PRICE_COLUMNS: [&str; 3] = ["date", "token", "usd_price"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: unknown token `{token}`")]
    UnknownToken { line: u64, token: String },
    #[error("line {line}: bad timestamp `{value}` (expected e.g. 2021-11-30T14:03:22Z)")]
    BadTimestamp { line: u64, value: String },
    #[error("line {line}: duplicate price row for {token} on {date}")]
    DuplicatePriceRow {
        line: u64,
        date: NaiveDate,
        token: Token,
    },
    #[error("line {line}: non-positive USD price {price} for {token} on {date}")]
    NonPositivePrice {
        line: u64,
        date: NaiveDate,
        token: Token,
        price: Decimal,
    },
    #[error("transaction {tx_id}: parcels disagree on {field}")]
    InconsistentGroup { tx_id: String, field: &'static str },
    #[error("transaction {tx_id}: {source}")]
    Bundle {
        tx_id: String,
        #[source]
        source: MarketError,
    },
    #[error("bundle has no parcels")]
    EmptyBundle,
    #[error("sale on {sale} precedes mint date {mint}")]
    NegativeAge { mint: NaiveDate, sale: NaiveDate },
    #[error("winsorization needs at least one value")]
    EmptyInput,
    #[error("invalid winsor bounds ({low}, {high}): need 0 <= low < high <= 1")]
    BadBounds { low: f64, high: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConvertError {
    #[error("no {token} price on {date}")]
    MissingPrice { token: Token, date: NaiveDate },
    #[error("transaction {tx_id} has zero price")]
    ZeroPrice { tx_id: String },
    #[error("transaction {tx_id}: decimal overflow during conversion")]
    Overflow { tx_id: String },
}

/// How unknown settlement tokens are treated while parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenMode {
    #[default]
    Strict,
    Lenient,
}

/// Whether `price_amount` is the parcel's share or the whole bundle's price
/// repeated on every row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowPriceMode {
    #[default]
    PerParcel,
    PerBundle,
}

impl FromStr for RowPriceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-parcel" => Ok(RowPriceMode::PerParcel),
            "per-bundle" => Ok(RowPriceMode::PerBundle),
            other => Err(format!(
                "unknown row price mode `{other}` (expected per-parcel or per-bundle)"
            )),
        }
    }
}

/// One parcel's row of a (possibly multi-parcel) transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSaleRecord {
    pub line: u64,
    pub tx_id: String,
    pub timestamp: DateTime<Utc>,
    pub parcel: ParcelCoord,
    pub price_amount: Decimal,
    pub settlement: Token,
    pub sale_kind: SaleKind,
    pub mint_date: NaiveDate,
}

fn column_positions<const N: usize>(
    headers: &csv::StringRecord,
    names: [&str; N],
) -> Result<[usize; N], IngestError> {
    let mut out = [0; N];
    for (slot, name) in out.iter_mut().zip(names) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::MalformedRow {
                line: 1,
                reason: format!("missing column `{name}`"),
            })?;
    }
    Ok(out)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn parse_date(line: u64, field: &str, value: &str) -> Result<NaiveDate, IngestError> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| IngestError::MalformedRow {
        line,
        reason: format!("bad {field} `{value}` (expected YYYY-MM-DD)"),
    })
}

fn parse_decimal(line: u64, field: &str, value: &str) -> Result<Decimal, IngestError> {
    Decimal::from_str_exact(value)
        .or_else(|_| Decimal::from_scientific(value))
        .map_err(|_| IngestError::MalformedRow {
            line,
            reason: format!("bad {field} `{value}`"),
        })
}

/// Parses `transactions.csv`. Rows come back in file order.
pub fn parse_transactions<R: Read>(
    input: R,
    mode: TokenMode,
) -> Result<Vec<RawSaleRecord>, IngestError> {
    let mut rdr = reader(input);
    let cols = column_positions(rdr.headers()?, TRANSACTION_COLUMNS)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(cols[i]).unwrap_or("");
        let malformed = |reason: String| IngestError::MalformedRow { line, reason };

        let tx_id = field(0).to_string();
        if tx_id.is_empty() {
            return Err(malformed("empty tx_id".into()));
        }
        let timestamp = DateTime::parse_from_rfc3339(field(1))
            .map_err(|_| IngestError::BadTimestamp {
                line,
                value: field(1).to_string(),
            })?
            .with_timezone(&Utc);
        let coord = |i: usize| -> Result<i64, IngestError> {
            field(i)
                .parse()
                .map_err(|_| malformed(format!("bad {} `{}`", TRANSACTION_COLUMNS[i], field(i))))
        };
        let parcel = ParcelCoord::new(coord(2)?, coord(3)?)
            .map_err(|e| malformed(e.to_string()))?;
        let price_amount = parse_decimal(line, "price_amount", field(4))?;
        if price_amount < Decimal::ZERO {
            return Err(malformed(format!("negative price_amount {price_amount}")));
        }
        let settlement = Token::new(field(5));
        if settlement.symbol().is_empty() {
            return Err(malformed("empty token".into()));
        }
        if mode == TokenMode::Strict && !settlement.is_known() {
            return Err(IngestError::UnknownToken {
                line,
                token: field(5).to_string(),
            });
        }
        let sale_kind = field(6)
            .parse::<SaleKind>()
            .map_err(|e| malformed(e.to_string()))?;
        let mint_date = parse_date(line, "mint_date", field(7))?;
        out.push(RawSaleRecord {
            line,
            tx_id,
            timestamp,
            parcel,
            price_amount,
            settlement,
            sale_kind,
            mint_date,
        });
    }
    Ok(out)
}

/// Parses `prices.csv` (`date,token,usd_price`).
pub fn parse_price_table<R: Read>(input: R) -> Result<PriceTable, IngestError> {
    let mut rdr = reader(input);
    let cols = column_positions(rdr.headers()?, PRICE_COLUMNS)?;
    let mut table = PriceTable::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(cols[i]).unwrap_or("");
        let date = parse_date(line, "date", field(0))?;
        let token = Token::new(field(1));
        let price = parse_decimal(line, "usd_price", field(2))?;
        table.insert(date, token, price).map_err(|e| match e {
            MarketError::DuplicatePriceRow { date, token } => {
                IngestError::DuplicatePriceRow { line, date, token }
            }
            MarketError::NonPositivePrice { date, token, price } => IngestError::NonPositivePrice {
                line,
                date,
                token,
                price,
            },
            other => IngestError::MalformedRow {
                line,
                reason: other.to_string(),
            },
        })?;
    }
    Ok(table)
}

/// True when the parcels form one edge-connected region.
pub fn is_contiguous(coords: &[ParcelCoord]) -> Result<bool, IngestError> {
    let Some(&start) = coords.first() else {
        return Err(IngestError::EmptyBundle);
    };
    let cells: HashSet<ParcelCoord> = coords.iter().copied().collect();
    let mut seen = HashSet::with_capacity(cells.len());
    let mut queue = VecDeque::from([start]);
    seen.insert(start);
    while let Some(c) = queue.pop_front() {
        for n in c.neighbours() {
            if cells.contains(&n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    Ok(seen.len() == cells.len())
}

/// Whole UTC days from the mint date to the sale date.
pub fn compute_age(mint_date: NaiveDate, timestamp: DateTime<Utc>) -> Result<i64, IngestError> {
    let sale = timestamp.date_naive();
    let days = (sale - mint_date).num_days();
    if days < 0 {
        return Err(IngestError::NegativeAge {
            mint: mint_date,
            sale,
        });
    }
    Ok(days)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    NonContiguous,
    NegativeAge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedGroup {
    pub tx_id: String,
    pub parcels: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregation {
    pub transactions: Vec<Transaction>,
    pub rejected: Vec<RejectedGroup>,
}

/// Groups parcel rows by `tx_id` into bundle transactions.
///
/// Accepted transactions are ordered by `(timestamp, tx_id)`; rejected groups
/// by first appearance.
pub fn aggregate_to_bundles(
    records: &[RawSaleRecord],
    mode: RowPriceMode,
) -> Result<Aggregation, IngestError> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&RawSaleRecord>> = HashMap::new();
    for r in records {
        groups
            .entry(r.tx_id.as_str())
            .or_insert_with(|| {
                order.push(r.tx_id.as_str());
                Vec::new()
            })
            .push(r);
    }

    let mut out = Aggregation::default();
    for tx_id in order {
        let rows = &groups[tx_id];
        let first = rows[0];
        for r in &rows[1..] {
            let field = if r.timestamp != first.timestamp {
                Some("timestamp")
            } else if r.settlement != first.settlement {
                Some("token")
            } else if r.sale_kind != first.sale_kind {
                Some("sale_type")
            } else {
                None
            };
            if let Some(field) = field {
                return Err(IngestError::InconsistentGroup {
                    tx_id: tx_id.to_string(),
                    field,
                });
            }
        }
        let coords: Vec<ParcelCoord> = rows.iter().map(|r| r.parcel).collect();
        let bundle: BundleKey =
            canonical_bundle_key(&coords).map_err(|source| IngestError::Bundle {
                tx_id: tx_id.to_string(),
                source,
            })?;
        let reject = |reason| RejectedGroup {
            tx_id: tx_id.to_string(),
            parcels: rows.len(),
            reason,
        };
        if !is_contiguous(bundle.coords())? {
            out.rejected.push(reject(RejectReason::NonContiguous));
            continue;
        }
        let mint_date = rows.iter().map(|r| r.mint_date).min().expect("non-empty group");
        let Ok(age_days) = compute_age(mint_date, first.timestamp) else {
            out.rejected.push(reject(RejectReason::NegativeAge));
            continue;
        };
        let price_amount = match mode {
            RowPriceMode::PerParcel => rows.iter().map(|r| r.price_amount).sum(),
            RowPriceMode::PerBundle => first.price_amount,
        };
        out.transactions.push(Transaction {
            tx_id: tx_id.to_string(),
            lot_size: bundle.lot_size(),
            bundle,
            timestamp: first.timestamp,
            price_amount,
            settlement: first.settlement.clone(),
            sale_kind: first.sale_kind,
            mint_date,
            age_days,
        });
    }
    out.transactions
        .sort_by(|a, b| (a.timestamp, &a.tx_id).cmp(&(b.timestamp, &b.tx_id)));
    Ok(out)
}

/// Prices a transaction in `target` using the rates on its UTC sale date.
///
/// Converting into the settlement token itself is the identity and needs no
/// table entry.
pub fn convert(
    tx: &Transaction,
    target: &Denomination,
    table: &PriceTable,
) -> Result<DenominatedSale, ConvertError> {
    if tx.price_amount <= Decimal::ZERO {
        return Err(ConvertError::ZeroPrice {
            tx_id: tx.tx_id.clone(),
        });
    }
    let date = tx.date();
    let price = match target {
        Denomination::Token(t) if *t == tx.settlement => tx.price_amount,
        _ => {
            let missing = |token: Token| ConvertError::MissingPrice { token, date };
            let settlement_usd = table
                .usd(&tx.settlement, date)
                .ok_or_else(|| missing(tx.settlement.clone()))?;
            let target_usd = table.unit_usd(target, date).ok_or_else(|| {
                missing(match target {
                    Denomination::Token(t) => t.clone(),
                    Denomination::Usd => unreachable!("USD always has a unit price"),
                })
            })?;
            let overflow = || ConvertError::Overflow {
                tx_id: tx.tx_id.clone(),
            };
            tx.price_amount
                .checked_mul(settlement_usd)
                .ok_or_else(overflow)?
                .checked_div(target_usd)
                .ok_or_else(overflow)?
        }
    };
    if price <= Decimal::ZERO {
        // rounding underflow of a tiny amount
        return Err(ConvertError::ZeroPrice {
            tx_id: tx.tx_id.clone(),
        });
    }
    let log_price = decimal_to_f64(price).ln();
    Ok(DenominatedSale {
        source: tx.clone(),
        denomination: target.clone(),
        price,
        log_price,
    })
}

pub(crate) fn decimal_to_f64(value: Decimal) -> f64 {
    num_traits::ToPrimitive::to_f64(&value).expect("decimal fits in f64")
}

/// Counts of transactions that could not be priced in a denomination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConversionDrops {
    pub missing_price: usize,
    pub zero_price: usize,
}

impl ConversionDrops {
    pub fn total(&self) -> usize {
        self.missing_price + self.zero_price
    }
}

/// Converts every transaction it can, counting the rest. Missing rates are
/// expected (e.g. a token that did not exist yet) and are not errors here.
pub fn convert_all(
    txs: &[Transaction],
    target: &Denomination,
    table: &PriceTable,
) -> Result<(Vec<DenominatedSale>, ConversionDrops), ConvertError> {
    let mut sales = Vec::with_capacity(txs.len());
    let mut drops = ConversionDrops::default();
    for tx in txs {
        match convert(tx, target, table) {
            Ok(s) => sales.push(s),
            Err(ConvertError::MissingPrice { .. }) => drops.missing_price += 1,
            Err(ConvertError::ZeroPrice { .. }) => drops.zero_price += 1,
            Err(e @ ConvertError::Overflow { .. }) => return Err(e),
        }
    }
    Ok((sales, drops))
}

/// Quantile pair for winsorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinsorBounds {
    low_q: f64,
    high_q: f64,
}

impl WinsorBounds {
    pub fn new(low_q: f64, high_q: f64) -> Result<Self, IngestError> {
        if !(0.0 <= low_q && low_q < high_q && high_q <= 1.0) {
            return Err(IngestError::BadBounds {
                low: low_q,
                high: high_q,
            });
        }
        Ok(Self { low_q, high_q })
    }

    /// The full range: winsorizing with it changes nothing.
    pub fn none() -> Self {
        Self {
            low_q: 0.0,
            high_q: 1.0,
        }
    }

    pub fn low(&self) -> f64 {
        self.low_q
    }

    pub fn high(&self) -> f64 {
        self.high_q
    }
}

impl Default for WinsorBounds {
    fn default() -> Self {
        Self {
            low_q: 0.001,
            high_q: 0.999,
        }
    }
}

/// Linear-interpolation quantile of already sorted values: position
/// `h = (n - 1) q`, interpolating between `floor(h)` and `ceil(h)`.
///
/// `q` is converted into `Q` first, so decimal inputs interpolate exactly.
pub fn quantile_sorted<Q: Quantity>(sorted: &[Q], q: f64) -> Q {
    assert!(!sorted.is_empty(), "quantile of an empty slice");
    let n = sorted.len();
    let q = Q::from_f64(q.clamp(0.0, 1.0)).expect("quantile level is representable");
    let h = Q::from_usize(n - 1).expect("length is representable") * q;
    let lo = h.to_usize().expect("non-negative position").min(n - 1);
    let frac = h - Q::from_usize(lo).expect("index is representable");
    let hi = (lo + 1).min(n - 1);
    if frac == Q::zero() || lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub(crate) fn sorted_copy<Q: Quantity>(values: &[Q]) -> Vec<Q> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("values are ordered (no NaN)"));
    sorted
}

/// Clamps every value into `[Q(low), Q(high)]`; order is preserved.
pub fn winsorize<Q: Quantity>(values: &[Q], bounds: WinsorBounds) -> Result<Vec<Q>, IngestError> {
    if values.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let sorted = sorted_copy(values);
    let lo = quantile_sorted(&sorted, bounds.low_q);
    let hi = quantile_sorted(&sorted, bounds.high_q);
    Ok(values
        .iter()
        .map(|&v| {
            if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            }
        })
        .collect())
}
