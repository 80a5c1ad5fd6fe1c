//! All-sales hedonic index: log price on week-year dummies plus lot size,
//! age, primary-sale and settlement-token controls. The exponentiated week
//! coefficients, rebased to the earliest week, are the index levels.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ingest::{convert_all, decimal_to_f64, winsorize, ConversionDrops, ConvertError, WinsorBounds};
use crate::market::{DenominatedSale, Denomination, PriceTable, SaleKind, Token, Transaction, WeekId};
use crate::regress::{ols_with, Covariance, DesignMatrix, RegressError, RegressionResult};
use crate::scalar::Scalar;

pub const LOT_TERM: &str = "ln(lot size)";
pub const AGE_TERM: &str = "ln(age + 1)";
pub const PRIMARY_TERM: &str = "primary sale";
pub const OTHER_TOKEN: &str = "OTHER";

/// Label of the settlement dummy for a token (or `OTHER`).
pub fn settlement_term(symbol: &str) -> String {
    format!("settled in {symbol}")
}

/// Label of a week-year dummy.
pub fn week_term(week: WeekId) -> String {
    format!("week {week}")
}

#[derive(Debug, Error)]
pub enum HedonicError {
    #[error("no priceable sales remain in {denomination}")]
    EmptyAfterFilter { denomination: Denomination },
    #[error("omitted settlement category {0} does not appear in the data")]
    OmittedCategoryAbsent(Token),
    #[error("term `{0}` is not in the fitted design")]
    MissingTerm(String),
    #[error("week {0} has no index level")]
    BaseWeekAbsent(WeekId),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Convert(#[from] ConvertError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedonicSpec {
    pub denomination: Denomination,
    pub omitted_settlement: Token,
    pub winsor: WinsorBounds,
    /// Days added to age before taking logs.
    pub age_offset: i64,
    /// Settlement tokens seen fewer times than this share one `OTHER` dummy.
    pub min_token_count: usize,
    pub covariance: Covariance,
}

impl HedonicSpec {
    pub fn new(denomination: Denomination) -> Self {
        Self {
            denomination,
            omitted_settlement: Token::eth(),
            winsor: WinsorBounds::default(),
            age_offset: 1,
            min_token_count: 2,
            covariance: Covariance::Hc0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexPoint<T> {
    pub week: WeekId,
    pub level: T,
    pub n_obs: usize,
}

/// Weekly index levels; the base week sits at exactly 1. Weeks without data
/// have no point.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceIndex<T> {
    pub points: Vec<IndexPoint<T>>,
    pub base_week: WeekId,
}

impl<T: Scalar> PriceIndex<T> {
    /// Builds levels `exp(delta_t - delta_base)` from log levels in week order.
    pub fn from_log_levels(log_levels: &[(WeekId, T, usize)], base_week: WeekId) -> Self {
        let base = log_levels
            .iter()
            .find(|(w, _, _)| *w == base_week)
            .map_or(T::zero(), |(_, d, _)| *d);
        let points = log_levels
            .iter()
            .map(|&(week, delta, n_obs)| IndexPoint {
                week,
                level: if week == base_week {
                    T::one()
                } else {
                    (delta - base).exp()
                },
                n_obs,
            })
            .collect();
        Self { points, base_week }
    }

    pub fn level(&self, week: WeekId) -> Option<T> {
        self.points.iter().find(|p| p.week == week).map(|p| p.level)
    }

    pub fn weeks(&self) -> Vec<WeekId> {
        self.points.iter().map(|p| p.week).collect()
    }

    pub fn log_levels(&self) -> Vec<T> {
        self.points.iter().map(|p| p.level.ln()).collect()
    }

    /// Renormalizes so that `week` has level 1.
    pub fn rebase(&self, week: WeekId) -> Result<Self, HedonicError> {
        let base = self.level(week).ok_or(HedonicError::BaseWeekAbsent(week))?;
        let points = self
            .points
            .iter()
            .map(|p| IndexPoint {
                level: if p.week == week { T::one() } else { p.level / base },
                ..*p
            })
            .collect();
        Ok(Self {
            points,
            base_week: week,
        })
    }
}

/// The regression inputs built from a set of sales.
#[derive(Debug, Clone)]
pub struct HedonicDesign<T> {
    pub matrix: DesignMatrix<T>,
    pub response: Vec<T>,
    /// Observed weeks in column order with their sale counts.
    pub weeks: Vec<(WeekId, usize)>,
}

/// Table 2 order for the non-week terms, followed by any other tokens
/// alphabetically and then `OTHER`.
fn control_labels(tokens: &[String], has_primary: bool) -> Vec<String> {
    let mut labels = vec![LOT_TERM.to_string(), AGE_TERM.to_string()];
    if has_primary {
        labels.push(PRIMARY_TERM.to_string());
    }
    let preferred = ["SAND", "WETH", "DAI", "USDC"];
    let mut rest: Vec<&String> = tokens
        .iter()
        .filter(|t| !preferred.contains(&t.as_str()) && t.as_str() != OTHER_TOKEN)
        .collect();
    rest.sort();
    for p in preferred {
        if tokens.iter().any(|t| t == p) {
            labels.push(settlement_term(p));
        }
    }
    labels.extend(rest.into_iter().map(|t| settlement_term(t)));
    if tokens.iter().any(|t| t == OTHER_TOKEN) {
        labels.push(settlement_term(OTHER_TOKEN));
    }
    labels
}

pub fn build_hedonic_design<T: Scalar>(
    sales: &[DenominatedSale],
    spec: &HedonicSpec,
) -> Result<HedonicDesign<T>, HedonicError> {
    if sales.is_empty() {
        return Err(HedonicError::EmptyAfterFilter {
            denomination: spec.denomination.clone(),
        });
    }
    let prices: Vec<_> = sales.iter().map(|s| s.price).collect();
    let prices = winsorize(&prices, spec.winsor).expect("non-empty");

    let mut week_counts: BTreeMap<WeekId, usize> = BTreeMap::new();
    let mut token_counts: BTreeMap<&Token, usize> = BTreeMap::new();
    for s in sales {
        *week_counts.entry(s.source.week()).or_default() += 1;
        *token_counts.entry(&s.source.settlement).or_default() += 1;
    }
    if !token_counts.contains_key(&spec.omitted_settlement) {
        return Err(HedonicError::OmittedCategoryAbsent(
            spec.omitted_settlement.clone(),
        ));
    }
    let column_token = |t: &Token| -> Option<String> {
        if *t == spec.omitted_settlement {
            None
        } else if token_counts[t] < spec.min_token_count {
            Some(OTHER_TOKEN.to_string())
        } else {
            Some(t.symbol().to_string())
        }
    };
    let mut tokens: Vec<String> = token_counts.keys().filter_map(|t| column_token(t)).collect();
    tokens.dedup();
    let has_primary = sales.iter().any(|s| s.source.sale_kind == SaleKind::Primary);

    let weeks: Vec<(WeekId, usize)> = week_counts.into_iter().collect();
    let week_col: BTreeMap<WeekId, usize> =
        weeks.iter().enumerate().map(|(j, (w, _))| (*w, j)).collect();
    let mut labels: Vec<String> = weeks.iter().map(|(w, _)| week_term(*w)).collect();
    let controls = control_labels(&tokens, has_primary);
    let first_control = labels.len();
    labels.extend(controls.iter().cloned());
    let col_of = |label: &str| first_control + controls.iter().position(|l| l == label).unwrap();
    let lot_col = col_of(LOT_TERM);
    let age_col = col_of(AGE_TERM);
    let primary_col = has_primary.then(|| col_of(PRIMARY_TERM));

    let mut matrix = DesignMatrix::zeros(sales.len(), labels)?;
    let mut response = Vec::with_capacity(sales.len());
    for (i, (s, price)) in sales.iter().zip(&prices).enumerate() {
        let tx = &s.source;
        matrix.set(i, week_col[&tx.week()], T::one());
        matrix.set(i, lot_col, T::of_usize(tx.lot_size).ln());
        matrix.set(i, age_col, T::of((tx.age_days + spec.age_offset) as f64).ln());
        if let (Some(c), SaleKind::Primary) = (primary_col, tx.sale_kind) {
            matrix.set(i, c, T::one());
        }
        if let Some(tok) = column_token(&tx.settlement) {
            matrix.set(i, col_of(&settlement_term(&tok)), T::one());
        }
        response.push(T::of(decimal_to_f64(*price).ln()));
    }
    Ok(HedonicDesign {
        matrix,
        response,
        weeks,
    })
}

#[derive(Debug, Clone)]
pub struct HedonicFit<T> {
    pub index: PriceIndex<T>,
    pub regression: RegressionResult<T>,
}

pub fn hedonic_index<T: Scalar>(
    sales: &[DenominatedSale],
    spec: &HedonicSpec,
) -> Result<HedonicFit<T>, HedonicError> {
    let design = build_hedonic_design::<T>(sales, spec)?;
    let regression = ols_with(&design.matrix, &design.response, spec.covariance)?;
    let log_levels: Vec<(WeekId, T, usize)> = design
        .weeks
        .iter()
        .enumerate()
        .map(|(j, &(w, n))| (w, regression.coefficients[j], n))
        .collect();
    let base = design.weeks[0].0;
    Ok(HedonicFit {
        index: PriceIndex::from_log_levels(&log_levels, base),
        regression,
    })
}

/// Converts, then fits; sales that cannot be priced in the denomination are
/// dropped and counted.
pub fn hedonic_from_transactions<T: Scalar>(
    txs: &[Transaction],
    table: &PriceTable,
    spec: &HedonicSpec,
) -> Result<(HedonicFit<T>, ConversionDrops), HedonicError> {
    let (sales, drops) = convert_all(txs, &spec.denomination, table)?;
    Ok((hedonic_index(&sales, spec)?, drops))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PremiumRow<T> {
    pub term: String,
    pub estimate: T,
    pub robust_se: T,
    /// `estimate / robust_se`; infinite with the estimate's sign when the
    /// standard error is zero.
    pub t_stat: T,
}

fn t_stat<T: Scalar>(estimate: T, se: T) -> T {
    if se == T::zero() {
        if estimate < T::zero() {
            T::neg_infinity()
        } else {
            T::infinity()
        }
    } else {
        estimate / se
    }
}

/// Control and settlement coefficients in table order. With `terms` given,
/// exactly those rows are returned, in that order.
pub fn settlement_premia<T: Scalar>(
    result: &RegressionResult<T>,
    terms: Option<&[&str]>,
) -> Result<Vec<PremiumRow<T>>, HedonicError> {
    let wanted: Vec<String> = match terms {
        Some(t) => t.iter().map(|s| s.to_string()).collect(),
        None => result
            .labels
            .iter()
            .filter(|l| !l.starts_with("week "))
            .cloned()
            .collect(),
    };
    wanted
        .into_iter()
        .map(|term| {
            let (estimate, robust_se) = result
                .term(&term)
                .ok_or_else(|| HedonicError::MissingTerm(term.clone()))?;
            Ok(PremiumRow {
                t_stat: t_stat(estimate, robust_se),
                term,
                estimate,
                robust_se,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{canonical_bundle_key, ParcelCoord};
    use chrono::{DateTime, Duration, Utc};
    use rust_decimal::Decimal;

    fn sale(
        id: usize,
        when: &str,
        lot: usize,
        age: i64,
        kind: SaleKind,
        token: Token,
        price: f64,
    ) -> DenominatedSale {
        let ts: DateTime<Utc> = when.parse().unwrap();
        let coords: Vec<_> = (0..lot)
            .map(|i| ParcelCoord::new(i as i64, id as i64).unwrap())
            .collect();
        let price = Decimal::try_from(price).unwrap();
        let tx = Transaction {
            tx_id: format!("t{id}"),
            bundle: canonical_bundle_key(&coords).unwrap(),
            lot_size: lot,
            timestamp: ts,
            price_amount: price,
            settlement: token,
            sale_kind: kind,
            mint_date: ts.date_naive() - Duration::days(age),
            age_days: age,
        };
        DenominatedSale {
            source: tx,
            denomination: Denomination::Usd,
            price,
            log_price: decimal_to_f64(price).ln(),
        }
    }

    fn spec() -> HedonicSpec {
        HedonicSpec {
            winsor: WinsorBounds::none(),
            ..HedonicSpec::new(Denomination::Usd)
        }
    }

    #[test]
    fn two_secondary_eth_sales_give_three_columns() {
        let sales = vec![
            sale(0, "2021-03-01T00:00:00Z", 1, 0, SaleKind::Secondary, Token::eth(), 10.0),
            sale(1, "2021-03-02T00:00:00Z", 1, 0, SaleKind::Secondary, Token::eth(), 12.0),
        ];
        let d = build_hedonic_design::<f64>(&sales, &spec()).unwrap();
        assert_eq!(d.matrix.n_rows(), 2);
        assert_eq!(
            d.matrix.labels(),
            &["week 2021-W09", LOT_TERM, AGE_TERM].map(String::from)
        );
        assert_eq!(d.matrix.row(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(d.weeks, vec![(WeekId::new(2021, 9).unwrap(), 2)]);
    }

    #[test]
    fn primary_sand_mint_sets_both_flags() {
        let sales = vec![
            sale(0, "2021-03-01T00:00:00Z", 1, 0, SaleKind::Primary, Token::sand(), 10.0),
            sale(1, "2021-03-02T00:00:00Z", 2, 5, SaleKind::Secondary, Token::sand(), 12.0),
            sale(2, "2021-03-03T00:00:00Z", 1, 9, SaleKind::Secondary, Token::eth(), 12.0),
        ];
        let d = build_hedonic_design::<f64>(&sales, &spec()).unwrap();
        let labels = d.matrix.labels();
        let col = |l: &str| labels.iter().position(|x| x == l).unwrap();
        assert_eq!(d.matrix.get(0, col(PRIMARY_TERM)), 1.0);
        assert_eq!(d.matrix.get(0, col(&settlement_term("SAND"))), 1.0);
        assert_eq!(d.matrix.get(0, col(AGE_TERM)), 0.0);
        assert_eq!(d.matrix.get(1, col(AGE_TERM)), 6f64.ln());
        assert_eq!(d.matrix.get(1, col(LOT_TERM)), 2f64.ln());
        assert_eq!(d.matrix.get(2, col(&settlement_term("SAND"))), 0.0);
    }

    #[test]
    fn rare_tokens_fold_into_other() {
        let sales = vec![
            sale(0, "2021-03-01T00:00:00Z", 1, 0, SaleKind::Secondary, Token::eth(), 10.0),
            sale(1, "2021-03-02T00:00:00Z", 1, 1, SaleKind::Secondary, Token::usdc(), 10.0),
            sale(2, "2021-03-02T00:00:00Z", 1, 1, SaleKind::Secondary, Token::dai(), 10.0),
        ];
        let d = build_hedonic_design::<f64>(&sales, &spec()).unwrap();
        let other = settlement_term(OTHER_TOKEN);
        assert_eq!(d.matrix.labels().last().unwrap(), &other);
        assert_eq!(d.matrix.column(d.matrix.n_cols() - 1), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn missing_omitted_category_is_an_error() {
        let sales = vec![sale(
            0,
            "2021-03-01T00:00:00Z",
            1,
            0,
            SaleKind::Secondary,
            Token::sand(),
            10.0,
        )];
        assert!(matches!(
            build_hedonic_design::<f64>(&sales, &spec()),
            Err(HedonicError::OmittedCategoryAbsent(_))
        ));
        assert!(matches!(
            build_hedonic_design::<f64>(&[], &spec()),
            Err(HedonicError::EmptyAfterFilter { .. })
        ));
    }

    #[test]
    fn single_week_index_is_one() {
        let sales: Vec<_> = (0..6)
            .map(|i| {
                let p = 100.0 * (i as f64 + 1.0);
                sale(i, "2021-03-01T00:00:00Z", 1 + i % 3, (i * i) as i64, SaleKind::Secondary, Token::eth(), p)
            })
            .collect();
        let fit = hedonic_index::<f64>(&sales, &spec()).unwrap();
        assert_eq!(fit.index.points.len(), 1);
        assert_eq!(fit.index.points[0].level, 1.0);
        assert_eq!(fit.index.points[0].n_obs, 6);
    }

    #[test]
    fn zero_residual_fit_gives_signed_infinite_t() {
        let result = RegressionResult {
            coefficients: vec![0.5, -0.2, 0.0],
            residuals: vec![0.0; 3],
            robust_se: vec![0.0; 3],
            r_squared: 1.0,
            adj_r_squared: f64::NAN,
            n_obs: 3,
            labels: vec!["week 2021-W01".into(), settlement_term("SAND"), settlement_term("WETH")],
            covariance: Covariance::Hc0,
        };
        let rows = settlement_premia(&result, None).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].t_stat, f64::NEG_INFINITY);
        assert_eq!(rows[1].t_stat, f64::INFINITY);
        let wanted = [settlement_term("WETH"), settlement_term("SAND")];
        let wanted: Vec<&str> = wanted.iter().map(String::as_str).collect();
        let rows = settlement_premia(&result, Some(&wanted)).unwrap();
        assert_eq!(rows[0].term, "settled in WETH");
        assert!(matches!(
            settlement_premia(&result, Some(&["settled in DAI"])),
            Err(HedonicError::MissingTerm(_))
        ));
    }

    #[test]
    fn rebase_moves_the_unit_level() {
        let w = |n| WeekId::new(2021, n).unwrap();
        let idx = PriceIndex::<f64>::from_log_levels(&[(w(1), 0.3, 1), (w(2), 0.3 + 2f64.ln(), 1)], w(1));
        assert_eq!(idx.level(w(1)), Some(1.0));
        assert!((idx.level(w(2)).unwrap() - 2.0).abs() < 1e-12);
        let r = idx.rebase(w(2)).unwrap();
        assert_eq!(r.level(w(2)), Some(1.0));
        assert!((r.level(w(1)).unwrap() - 0.5).abs() < 1e-12);
        assert!(idx.rebase(w(3)).is_err());
    }
}
