//! Descriptive statistics and weekly series.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use thiserror::Error;

use crate::hedonic::PriceIndex;
use crate::ingest::{decimal_to_f64, quantile_sorted, sorted_copy};
use crate::market::{Denomination, PriceTable, SaleKind, Token, Transaction, WeekId};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("series is constant; correlation undefined")]
    ConstantSeries,
    #[error("series share {0} weeks; need at least 2")]
    NoOverlap(usize),
    #[error("no {token} price in base week {week}")]
    MissingPrice { token: Token, week: WeekId },
    #[error("non-finite value in input")]
    NonFinite,
}

/// Moments and percentiles of a sample.
///
/// Skewness and kurtosis standardize population central moments; kurtosis is
/// raw (a normal sample gives about 3). `std_dev` uses the `n - 1` divisor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats<T> {
    pub n: usize,
    pub mean: T,
    pub std_dev: T,
    pub skewness: T,
    pub kurtosis: T,
    pub p5: T,
    pub p50: T,
    pub p95: T,
}

pub fn summarize<T: Scalar>(values: &[T]) -> Result<SummaryStats<T>, StatsError> {
    let n = values.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nt = T::of_usize(n);
    let mean = values.iter().copied().sum::<T>() / nt;
    let (mut m2, mut m3, mut m4) = (T::zero(), T::zero(), T::zero());
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 = m2 + d2;
        m3 = m3 + d2 * d;
        m4 = m4 + d2 * d2;
    }
    let std_dev = (m2 / T::of_usize(n - 1)).sqrt();
    let (m2, m3, m4) = (m2 / nt, m3 / nt, m4 / nt);
    let (skewness, kurtosis) = if m2 > T::zero() {
        (m3 / m2.powf(T::of(1.5)), m4 / (m2 * m2))
    } else {
        (T::nan(), T::nan())
    };
    let sorted = sorted_copy(values);
    Ok(SummaryStats {
        n,
        mean,
        std_dev,
        skewness,
        kurtosis,
        p5: quantile_sorted(&sorted, 0.05),
        p50: quantile_sorted(&sorted, 0.50),
        p95: quantile_sorted(&sorted, 0.95),
    })
}

pub type WeeklySeries<T> = BTreeMap<WeekId, T>;

/// Sample correlation of two equal-length slices.
pub fn pearson_slices<T: Scalar>(a: &[T], b: &[T]) -> Result<T, StatsError> {
    let n = a.len().min(b.len());
    if n < 2 {
        return Err(StatsError::NoOverlap(n));
    }
    let (a, b) = (&a[..n], &b[..n]);
    let nt = T::of_usize(n);
    let ma = a.iter().copied().sum::<T>() / nt;
    let mb = b.iter().copied().sum::<T>() / nt;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa == T::zero() || sbb == T::zero() {
        return Err(StatsError::ConstantSeries);
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// Correlation over the weeks present in both series.
pub fn pearson<T: Scalar>(a: &WeeklySeries<T>, b: &WeeklySeries<T>) -> Result<T, StatsError> {
    let (xs, ys): (Vec<T>, Vec<T>) = a
        .iter()
        .filter_map(|(w, &x)| b.get(w).map(|&y| (x, y)))
        .unzip();
    if xs.len() < 2 {
        return Err(StatsError::NoOverlap(xs.len()));
    }
    pearson_slices(&xs, &ys)
}

pub fn index_series<T: Scalar>(index: &PriceIndex<T>) -> WeeklySeries<T> {
    index.points.iter().map(|p| (p.week, p.level)).collect()
}

/// Mean daily USD price of `token` per ISO week.
pub fn weekly_mean_price<T: Scalar>(table: &PriceTable, token: &Token) -> WeeklySeries<T> {
    let mut acc: BTreeMap<WeekId, (f64, usize)> = BTreeMap::new();
    for (date, price) in table.series(token) {
        let e = acc.entry(WeekId::of_date(date)).or_default();
        e.0 += decimal_to_f64(price);
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(w, (sum, k))| (w, T::of(sum / k as f64)))
        .collect()
}

/// Relative price of `denominator` in units of `numerator`, normalized to 1
/// at `base`.
///
/// Each week's value is the mean daily USD price of `denominator` divided by
/// the mean daily USD price of `numerator`, both over the days of that week
/// on which both tokens are priced. The series rises when `denominator`
/// appreciates against `numerator`. Weeks without a common priced day are
/// omitted.
pub fn relative_price_index<T: Scalar>(
    numerator: &Token,
    denominator: &Token,
    table: &PriceTable,
    base: WeekId,
) -> Result<WeeklySeries<T>, StatsError> {
    let num: BTreeMap<NaiveDate, f64> = table
        .series(numerator)
        .map(|(d, p)| (d, decimal_to_f64(p)))
        .collect();
    let mut acc: BTreeMap<WeekId, (f64, f64)> = BTreeMap::new();
    for (date, den) in table.series(denominator) {
        if let Some(&n) = num.get(&date) {
            let e = acc.entry(WeekId::of_date(date)).or_default();
            e.0 += decimal_to_f64(den);
            e.1 += n;
        }
    }
    let ratios: BTreeMap<WeekId, f64> = acc.into_iter().map(|(w, (d, n))| (w, d / n)).collect();
    let base_ratio = match ratios.get(&base) {
        Some(&r) => r,
        None => {
            let token = if table.series(denominator).any(|(d, _)| WeekId::of_date(d) == base) {
                numerator.clone()
            } else {
                denominator.clone()
            };
            return Err(StatsError::MissingPrice { token, week: base });
        }
    };
    Ok(ratios
        .into_iter()
        .map(|(w, r)| (w, if w == base { T::one() } else { T::of(r / base_ratio) }))
        .collect())
}

/// Weekly share of secondary sales settled in `token`. Weeks without
/// secondary sales are omitted.
pub fn settlement_share<T: Scalar>(txs: &[Transaction], token: &Token) -> WeeklySeries<T> {
    let mut acc: BTreeMap<WeekId, (usize, usize)> = BTreeMap::new();
    for tx in txs.iter().filter(|t| t.sale_kind == SaleKind::Secondary) {
        let e = acc.entry(tx.week()).or_default();
        e.1 += 1;
        if tx.settlement == *token {
            e.0 += 1;
        }
    }
    acc.into_iter()
        .map(|(w, (hit, all))| (w, T::of_usize(hit) / T::of_usize(all)))
        .collect()
}

pub fn sand_settlement_share<T: Scalar>(txs: &[Transaction]) -> WeeklySeries<T> {
    settlement_share(txs, &Token::sand())
}

/// Transactions per week.
pub fn weekly_counts(txs: &[Transaction]) -> BTreeMap<WeekId, usize> {
    let mut out = BTreeMap::new();
    for tx in txs {
        *out.entry(tx.week()).or_default() += 1;
    }
    out
}

/// Sale counts by kind and settlement token.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SettlementBreakdown {
    pub primary: BTreeMap<Token, usize>,
    pub secondary: BTreeMap<Token, usize>,
}

impl SettlementBreakdown {
    pub fn of(txs: &[Transaction]) -> Self {
        let mut out = Self::default();
        for tx in txs {
            let side = match tx.sale_kind {
                SaleKind::Primary => &mut out.primary,
                SaleKind::Secondary => &mut out.secondary,
            };
            *side.entry(tx.settlement.clone()).or_default() += 1;
        }
        out
    }

    pub fn total(&self, kind: SaleKind) -> usize {
        match kind {
            SaleKind::Primary => self.primary.values().sum(),
            SaleKind::Secondary => self.secondary.values().sum(),
        }
    }
}

/// Converts priced sale values in `denomination` into plain numbers for
/// summaries.
pub fn sale_prices<T: Scalar>(
    txs: &[Transaction],
    denomination: &Denomination,
    table: &PriceTable,
) -> Vec<T> {
    txs.iter()
        .filter_map(|tx| crate::ingest::convert(tx, denomination, table).ok())
        .map(|s| T::of(decimal_to_f64(s.price)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rust_decimal::Decimal;

    fn week(n: u32) -> WeekId {
        WeekId::new(2021, n).unwrap()
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std_dev, s.skewness, s.p50), (2.0, 1.0, 0.0, 2.0));
        let s = summarize(&[0.0f64, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!((s.std_dev - 2.0).abs() < 1e-12);
        assert!((s.skewness - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            summarize(&[1.0]),
            Err(StatsError::TooFewObservations { needed: 2, got: 1 })
        );
    }

    #[test]
    fn constant_sample_has_undefined_shape() {
        let s = summarize(&[5.0f64; 4]).unwrap();
        assert_eq!(s.std_dev, 0.0);
        assert!(s.skewness.is_nan() && s.kurtosis.is_nan());
    }

    #[test]
    fn pearson_examples() {
        let a: WeeklySeries<f64> = (1..=5).map(|i| (week(i), i as f64)).collect();
        let b: WeeklySeries<f64> = a.iter().map(|(w, v)| (*w, 2.0 * v + 1.0)).collect();
        let c: WeeklySeries<f64> = a.iter().map(|(w, v)| (*w, -v)).collect();
        let k: WeeklySeries<f64> = a.keys().map(|w| (*w, 3.0)).collect();
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &c).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&k, &a), Err(StatsError::ConstantSeries));
        let late: WeeklySeries<f64> = [(week(9), 1.0), (week(10), 2.0)].into();
        assert_eq!(pearson(&a, &late), Err(StatsError::NoOverlap(0)));
    }

    fn table(rows: &[(&str, &str, i64)]) -> PriceTable {
        let mut t = PriceTable::new();
        for (date, sym, p) in rows {
            t.insert(date.parse().unwrap(), Token::new(sym), Decimal::from(*p))
                .unwrap();
        }
        t
    }

    #[test]
    fn relative_index_examples() {
        // 2021-01-04 and 2021-01-11 are consecutive Mondays
        let flat = table(&[
            ("2021-01-04", "ETH", 1000),
            ("2021-01-04", "SAND", 2),
            ("2021-01-11", "ETH", 1000),
            ("2021-01-11", "SAND", 2),
        ]);
        let s = relative_price_index::<f64>(&Token::eth(), &Token::sand(), &flat, week(1)).unwrap();
        assert_eq!(s.values().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);

        let doubled = table(&[
            ("2021-01-04", "ETH", 1000),
            ("2021-01-04", "SAND", 2),
            ("2021-01-11", "ETH", 1000),
            ("2021-01-11", "SAND", 4),
        ]);
        let s = relative_price_index::<f64>(&Token::eth(), &Token::sand(), &doubled, week(1)).unwrap();
        assert_eq!(s[&week(2)], 2.0);

        let err = relative_price_index::<f64>(&Token::eth(), &Token::sand(), &doubled, week(3));
        assert!(matches!(err, Err(StatsError::MissingPrice { .. })));
    }
}
