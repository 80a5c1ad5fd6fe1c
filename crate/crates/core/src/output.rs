//! CSV rendering of results.
//!
//! Every writer returns the file contents as a `String` so callers decide
//! when and where to write. Reals use a fixed 10-decimal format, which keeps
//! files byte-stable across runs and platforms.

use std::fmt::Write as _;

use crate::hedonic::{PremiumRow, PriceIndex};
use crate::market::Denomination;
use crate::repeat_sales::RepeatSalePair;
use crate::scalar::Scalar;
use crate::stats::{SummaryStats, WeeklySeries};

/// Fixed-point with 10 decimals; `-0` prints as `0`, non-finite values as
/// `inf`, `-inf` and `NaN`.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{v:.10}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn real<T: Scalar>(v: T) -> String {
    fmt_real(v.to_f64().unwrap_or(f64::NAN))
}

/// Quotes a field when it contains a comma, quote or newline.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn index_csv<T: Scalar>(index: &PriceIndex<T>) -> String {
    let mut out = String::from("iso_year,iso_week,level,n_obs\n");
    for p in &index.points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.week.iso_year,
            p.week.iso_week,
            real(p.level),
            p.n_obs
        );
    }
    out
}

pub fn coefs_csv<T: Scalar>(rows: &[PremiumRow<T>]) -> String {
    let mut out = String::from("term,estimate,robust_se,t_stat\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            field(&r.term),
            real(r.estimate),
            real(r.robust_se),
            real(r.t_stat)
        );
    }
    out
}

/// One row per pair; `values` holds the MOIC for each pair or `None` when it
/// could not be priced, in which case the row is skipped.
pub fn moic_csv<T: Scalar>(pairs: &[RepeatSalePair], values: &[Option<T>]) -> String {
    let mut out = String::from("bundle_hash,buy_ts,sell_ts,hold_weeks,moic\n");
    for (p, v) in pairs.iter().zip(values) {
        if let Some(v) = v {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.bundle.hash_hex(),
                p.buy.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
                p.sell.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
                p.hold_weeks,
                real(*v)
            );
        }
    }
    out
}

pub fn series_csv<T: Scalar>(series: &WeeklySeries<T>) -> String {
    let mut out = String::from("iso_year,iso_week,value\n");
    for (w, v) in series {
        let _ = writeln!(out, "{},{},{}", w.iso_year, w.iso_week, real(*v));
    }
    out
}

pub fn summary_csv<T: Scalar>(s: &SummaryStats<T>) -> String {
    format!(
        "n,mean,std_dev,skewness,kurtosis,p5,p50,p95\n{},{},{},{},{},{},{},{}\n",
        s.n,
        real(s.mean),
        real(s.std_dev),
        real(s.skewness),
        real(s.kurtosis),
        real(s.p5),
        real(s.p50),
        real(s.p95)
    )
}

/// File-name suffix for a denomination, e.g. `USD` or `SAND`.
pub fn denom_suffix(d: &Denomination) -> String {
    d.label()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}
