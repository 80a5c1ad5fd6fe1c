//! Repeat-sales estimation on identical bundles.
//!
//! The Case-Shiller index is built in three steps:
//!
//! 1. regress each pair's log price change on week dummies that are `+1` at
//!    the sell week and `-1` at the buy week (no intercept, earliest week
//!    fixed at zero);
//! 2. regress the squared step-1 residuals on the holding period;
//! 3. re-run step 1 by weighted least squares with weights equal to the
//!    reciprocal of the step-2 predictions.
//!
//! Same-week pairs carry an all-zero dummy row and are dropped from index
//! estimation, though they still have a MOIC.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::hedonic::{week_term, PriceIndex};
use crate::ingest::{convert, decimal_to_f64, ConvertError};
use crate::market::{BundleKey, Denomination, PriceTable, SaleKind, Transaction, WeekId};
use crate::regress::{ols, wls, DesignMatrix, RegressError, RegressionResult};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum RepeatSalesError {
    #[error("no usable repeat-sale pairs in {denomination} ({dropped} dropped)")]
    EmptyAfterFilter {
        denomination: Denomination,
        dropped: usize,
    },
    #[error("week graph is disconnected into {} groups: {}", .components.len(), describe_components(.components))]
    DisconnectedWeeks { components: Vec<Vec<WeekId>> },
    #[error("residual and holding-period lengths differ ({residuals} vs {holds})")]
    LengthMismatch { residuals: usize, holds: usize },
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Convert(#[from] ConvertError),
}

fn describe_components(components: &[Vec<WeekId>]) -> String {
    components
        .iter()
        .map(|c| match (c.first(), c.last()) {
            (Some(a), Some(b)) if c.len() > 1 => format!("[{a}..{b}, {} weeks]", c.len()),
            (Some(a), _) => format!("[{a}]"),
            _ => "[]".to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Two consecutive transactions of one bundle, the later a secondary sale.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatSalePair {
    pub bundle: BundleKey,
    pub buy: Transaction,
    pub sell: Transaction,
    pub hold_weeks: i64,
}

impl RepeatSalePair {
    pub fn buy_week(&self) -> WeekId {
        self.buy.week()
    }

    pub fn sell_week(&self) -> WeekId {
        self.sell.week()
    }

    /// Log price change in `denomination`.
    pub fn dlog_price(
        &self,
        denomination: &Denomination,
        table: &PriceTable,
    ) -> Result<f64, ConvertError> {
        let buy = convert(&self.buy, denomination, table)?;
        let sell = convert(&self.sell, denomination, table)?;
        Ok(sell.log_price - buy.log_price)
    }
}

/// Pairs every secondary sale with the bundle's immediately preceding
/// transaction (mint or purchase). Ties on timestamp order by `tx_id` and are
/// never paired with each other. Output is ordered by sell time.
pub fn match_repeat_sales(txs: &[Transaction]) -> Vec<RepeatSalePair> {
    let mut by_bundle: BTreeMap<&BundleKey, Vec<&Transaction>> = BTreeMap::new();
    for tx in txs {
        by_bundle.entry(&tx.bundle).or_default().push(tx);
    }
    let mut pairs = Vec::new();
    for (bundle, mut history) in by_bundle {
        history.sort_by(|a, b| (a.timestamp, &a.tx_id).cmp(&(b.timestamp, &b.tx_id)));
        for w in history.windows(2) {
            let (buy, sell) = (w[0], w[1]);
            if sell.sale_kind != SaleKind::Secondary || buy.timestamp >= sell.timestamp {
                continue;
            }
            pairs.push(RepeatSalePair {
                bundle: bundle.clone(),
                hold_weeks: buy.week().weeks_until(sell.week()),
                buy: buy.clone(),
                sell: sell.clone(),
            });
        }
    }
    pairs.sort_by(|a, b| {
        (a.sell.timestamp, &a.sell.tx_id).cmp(&(b.sell.timestamp, &b.sell.tx_id))
    });
    pairs
}

/// Multiple on invested capital: sell price over buy price, both converted
/// into `denomination` on their own dates.
pub fn moic<T: Scalar>(
    pair: &RepeatSalePair,
    denomination: &Denomination,
    table: &PriceTable,
) -> Result<T, ConvertError> {
    let buy = convert(&pair.buy, denomination, table)?;
    let sell = convert(&pair.sell, denomination, table)?;
    let ratio = sell.price.checked_div(buy.price).ok_or(ConvertError::Overflow {
        tx_id: pair.sell.tx_id.clone(),
    })?;
    Ok(T::of(decimal_to_f64(ratio)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairDrops {
    /// A leg had no rate in the denomination (or a zero price).
    pub unpriceable: usize,
    pub same_week: usize,
}

/// Inputs and output of the first-stage regression.
#[derive(Debug, Clone)]
pub struct BmnStage<T> {
    pub regression: RegressionResult<T>,
    pub design: DesignMatrix<T>,
    pub response: Vec<T>,
    pub hold_weeks: Vec<T>,
    /// Positions in the input pair list of the rows used.
    pub used: Vec<usize>,
    pub base_week: WeekId,
    /// Non-base weeks in column order.
    pub weeks: Vec<WeekId>,
    /// Legs observed per week, base week included.
    pub week_counts: BTreeMap<WeekId, usize>,
    pub drops: PairDrops,
}

impl<T: Scalar> BmnStage<T> {
    /// Index levels implied by a coefficient vector over this stage's weeks.
    pub fn index_from(&self, coefficients: &[T]) -> PriceIndex<T> {
        let mut log_levels = vec![(self.base_week, T::zero(), self.week_counts[&self.base_week])];
        log_levels.extend(
            self.weeks
                .iter()
                .zip(coefficients)
                .map(|(w, &d)| (*w, d, self.week_counts[w])),
        );
        PriceIndex::from_log_levels(&log_levels, self.base_week)
    }
}

/// Week groups linked by at least one pair.
fn week_components(edges: &[(WeekId, WeekId)]) -> Vec<Vec<WeekId>> {
    let weeks: BTreeSet<WeekId> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let weeks: Vec<WeekId> = weeks.into_iter().collect();
    let idx = |w: &WeekId| weeks.binary_search(w).expect("week was collected");
    let mut parent: Vec<usize> = (0..weeks.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, idx(a)), find(&mut parent, idx(b)));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<WeekId>> = BTreeMap::new();
    for (i, w) in weeks.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(*w);
    }
    groups.into_values().collect()
}

/// Step 1: unweighted repeat-sales regression.
pub fn bmn_stage<T: Scalar>(
    pairs: &[RepeatSalePair],
    denomination: &Denomination,
    table: &PriceTable,
) -> Result<BmnStage<T>, RepeatSalesError> {
    let mut drops = PairDrops::default();
    let mut rows: Vec<(usize, WeekId, WeekId, f64)> = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let (bw, sw) = (p.buy_week(), p.sell_week());
        let dlog = match p.dlog_price(denomination, table) {
            Ok(d) => d,
            Err(_) => {
                drops.unpriceable += 1;
                continue;
            }
        };
        if bw == sw {
            drops.same_week += 1;
            continue;
        }
        rows.push((i, bw, sw, dlog));
    }
    if rows.is_empty() {
        return Err(RepeatSalesError::EmptyAfterFilter {
            denomination: denomination.clone(),
            dropped: drops.unpriceable + drops.same_week,
        });
    }

    let edges: Vec<(WeekId, WeekId)> = rows.iter().map(|r| (r.1, r.2)).collect();
    let components = week_components(&edges);
    if components.len() > 1 {
        return Err(RepeatSalesError::DisconnectedWeeks { components });
    }

    let mut week_counts: BTreeMap<WeekId, usize> = BTreeMap::new();
    for &(_, b, s, _) in &rows {
        *week_counts.entry(b).or_default() += 1;
        *week_counts.entry(s).or_default() += 1;
    }
    let base_week = *week_counts.keys().next().expect("rows are non-empty");
    let weeks: Vec<WeekId> = week_counts.keys().skip(1).copied().collect();
    let col: BTreeMap<WeekId, usize> = weeks.iter().enumerate().map(|(j, w)| (*w, j)).collect();

    let labels = weeks.iter().map(|w| week_term(*w)).collect();
    let mut design = DesignMatrix::zeros(rows.len(), labels)?;
    let mut response = Vec::with_capacity(rows.len());
    let mut hold_weeks = Vec::with_capacity(rows.len());
    for (r, &(i, b, s, dlog)) in rows.iter().enumerate() {
        if let Some(&j) = col.get(&s) {
            design.set(r, j, T::one());
        }
        if let Some(&j) = col.get(&b) {
            design.set(r, j, -T::one());
        }
        response.push(T::of(dlog));
        hold_weeks.push(T::of(pairs[i].hold_weeks as f64));
    }
    let regression = ols(&design, &response)?;
    Ok(BmnStage {
        regression,
        design,
        response,
        hold_weeks,
        used: rows.iter().map(|r| r.0).collect(),
        base_week,
        weeks,
        week_counts,
        drops,
    })
}

/// Functional form of the step-2 variance model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceModel {
    /// `e^2 = a + b h`
    #[default]
    Linear,
    /// `e^2 = a + b h + c h^2`
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceFit<T> {
    pub intercept: T,
    pub slope: T,
    pub quadratic: Option<T>,
    /// Floored predicted squared residuals, one per pair.
    pub predictions: Vec<T>,
    /// Too few distinct holding periods: the fit collapsed to the mean.
    pub constant: bool,
    /// Perfect first stage: every prediction is 1.
    pub uniform: bool,
}

/// Step 2: squared residuals on holding period.
///
/// Predictions are floored at `max(1e-8, 1e-3 * smallest positive fitted
/// value)` so that every weight is positive.
pub fn variance_stage<T: Scalar>(
    residuals: &[T],
    hold_weeks: &[T],
    model: VarianceModel,
) -> Result<VarianceFit<T>, RepeatSalesError> {
    if residuals.len() != hold_weeks.len() {
        return Err(RepeatSalesError::LengthMismatch {
            residuals: residuals.len(),
            holds: hold_weeks.len(),
        });
    }
    let n = residuals.len();
    let sq: Vec<T> = residuals.iter().map(|&e| e * e).collect();
    let mean_sq = sq.iter().copied().sum::<T>() / T::of_usize(n.max(1));
    if n == 0 || mean_sq == T::zero() {
        return Ok(VarianceFit {
            intercept: T::one(),
            slope: T::zero(),
            quadratic: None,
            predictions: vec![T::one(); n],
            constant: true,
            uniform: true,
        });
    }

    let params = match model {
        VarianceModel::Linear => 2,
        VarianceModel::Quadratic => 3,
    };
    let distinct: BTreeSet<u64> = hold_weeks.iter().map(|h| h.to_f64().unwrap().to_bits()).collect();
    if distinct.len() < params || n < params {
        return Ok(VarianceFit {
            intercept: mean_sq,
            slope: T::zero(),
            quadratic: (params == 3).then(T::zero),
            predictions: vec![mean_sq; n],
            constant: true,
            uniform: false,
        });
    }

    let rows: Vec<Vec<T>> = hold_weeks
        .iter()
        .map(|&h| match model {
            VarianceModel::Linear => vec![T::one(), h],
            VarianceModel::Quadratic => vec![T::one(), h, h * h],
        })
        .collect();
    let labels = ["intercept", "hold_weeks", "hold_weeks^2"][..params]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let x = DesignMatrix::from_rows(&rows, labels)?;
    let fit = ols(&x, &sq)?;
    let fitted: Vec<T> = x.mul_vec(&fit.coefficients);
    let smallest_positive = fitted
        .iter()
        .copied()
        .filter(|&v| v > T::zero())
        .fold(T::infinity(), T::min);
    let mut floor = T::of(1e-8);
    if smallest_positive.is_finite() {
        floor = floor.max(smallest_positive * T::of(1e-3));
    }
    Ok(VarianceFit {
        intercept: fit.coefficients[0],
        slope: fit.coefficients[1],
        quadratic: fit.coefficients.get(2).copied(),
        predictions: fitted.into_iter().map(|v| v.max(floor)).collect(),
        constant: false,
        uniform: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CaseShillerOptions {
    pub variance_model: VarianceModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseShillerDiagnostics {
    pub denomination: Denomination,
    pub pairs_total: usize,
    pub pairs_used: usize,
    pub drops: PairDrops,
    pub base_week: WeekId,
    pub step2_intercept: f64,
    pub step2_slope: f64,
    pub step2_quadratic: Option<f64>,
    pub constant_variance: bool,
    pub uniform_weights: bool,
    pub weight_min: f64,
    pub weight_max: f64,
}

impl fmt::Display for CaseShillerDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "repeat-sales diagnostics ({})", self.denomination)?;
        writeln!(f, "  pairs matched:        {}", self.pairs_total)?;
        writeln!(f, "  dropped unpriceable:  {}", self.drops.unpriceable)?;
        writeln!(f, "  dropped same-week:    {}", self.drops.same_week)?;
        writeln!(f, "  pairs regressed:      {}", self.pairs_used)?;
        writeln!(f, "  base week:            {}", self.base_week)?;
        writeln!(f, "  step-2 intercept:     {}", crate::output::fmt_real(self.step2_intercept))?;
        writeln!(f, "  step-2 slope:         {}", crate::output::fmt_real(self.step2_slope))?;
        if let Some(q) = self.step2_quadratic {
            writeln!(f, "  step-2 quadratic:     {}", crate::output::fmt_real(q))?;
        }
        let mode = if self.uniform_weights {
            "uniform (perfect first stage)"
        } else if self.constant_variance {
            "constant (single holding period)"
        } else {
            "fitted"
        };
        writeln!(f, "  variance model:       {mode}")?;
        writeln!(
            f,
            "  weight range:         [{}, {}]",
            crate::output::fmt_real(self.weight_min),
            crate::output::fmt_real(self.weight_max)
        )
    }
}

#[derive(Debug, Clone)]
pub struct CaseShillerFit<T> {
    pub index: PriceIndex<T>,
    /// Unweighted step-1 index, for comparison.
    pub stage1_index: PriceIndex<T>,
    pub stage1: BmnStage<T>,
    pub variance: VarianceFit<T>,
    pub stage3: RegressionResult<T>,
    pub diagnostics: CaseShillerDiagnostics,
}

pub fn case_shiller_index<T: Scalar>(
    pairs: &[RepeatSalePair],
    denomination: &Denomination,
    table: &PriceTable,
    options: CaseShillerOptions,
) -> Result<CaseShillerFit<T>, RepeatSalesError> {
    let stage1 = bmn_stage::<T>(pairs, denomination, table)?;
    let e = &stage1.regression.residuals;
    // Round-off residuals of an exactly identified system count as zero.
    let scale = stage1
        .response
        .iter()
        .fold(T::one(), |acc, v| acc.max(v.abs()));
    let cutoff = T::of(1e3) * T::epsilon() * scale;
    let perfect = e.iter().all(|v| v.abs() <= cutoff);
    let variance = if perfect {
        variance_stage(&vec![T::zero(); e.len()], &stage1.hold_weeks, options.variance_model)?
    } else {
        variance_stage(e, &stage1.hold_weeks, options.variance_model)?
    };
    let weights: Vec<T> = variance.predictions.iter().map(|&p| T::one() / p).collect();
    let stage3 = wls(&stage1.design, &stage1.response, &weights)?;

    let index = stage1.index_from(&stage3.coefficients);
    let stage1_index = stage1.index_from(&stage1.regression.coefficients);
    let to_f64 = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let diagnostics = CaseShillerDiagnostics {
        denomination: denomination.clone(),
        pairs_total: pairs.len(),
        pairs_used: stage1.used.len(),
        drops: stage1.drops,
        base_week: stage1.base_week,
        step2_intercept: to_f64(variance.intercept),
        step2_slope: to_f64(variance.slope),
        step2_quadratic: variance.quadratic.map(to_f64),
        constant_variance: variance.constant,
        uniform_weights: variance.uniform,
        weight_min: to_f64(weights.iter().copied().fold(T::infinity(), T::min)),
        weight_max: to_f64(weights.iter().copied().fold(T::neg_infinity(), T::max)),
    };
    Ok(CaseShillerFit {
        index,
        stage1_index,
        stage1,
        variance,
        stage3,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{canonical_bundle_key, ParcelCoord, Token};
    use chrono::{DateTime, Duration, Utc};
    use rust_decimal::Decimal;

    fn bundle(cells: &[(i64, i64)]) -> BundleKey {
        let coords: Vec<_> = cells
            .iter()
            .map(|&(x, y)| ParcelCoord::new(x, y).unwrap())
            .collect();
        canonical_bundle_key(&coords).unwrap()
    }

    fn tx(id: &str, key: &BundleKey, when: DateTime<Utc>, kind: SaleKind, price: Decimal) -> Transaction {
        Transaction {
            tx_id: id.into(),
            bundle: key.clone(),
            lot_size: key.lot_size(),
            timestamp: when,
            price_amount: price,
            settlement: Token::eth(),
            sale_kind: kind,
            mint_date: when.date_naive(),
            age_days: 0,
        }
    }

    fn week_start(n: i64) -> DateTime<Utc> {
        // Monday of 2021-W01 plus n weeks, at noon
        "2021-01-04T12:00:00Z".parse::<DateTime<Utc>>().unwrap() + Duration::weeks(n)
    }

    fn eth() -> Denomination {
        Denomination::Token(Token::eth())
    }

    /// A pair with a chosen log change between two weeks.
    fn pair(id: usize, from: i64, to: i64, dlog: f64) -> RepeatSalePair {
        let key = bundle(&[(id as i64, 0)]);
        let buy_price = Decimal::from(100);
        let sell_price = Decimal::try_from(100.0 * dlog.exp()).unwrap();
        let buy = tx(&format!("b{id}"), &key, week_start(from), SaleKind::Secondary, buy_price);
        let sell = tx(&format!("s{id}"), &key, week_start(to), SaleKind::Secondary, sell_price);
        RepeatSalePair {
            bundle: key,
            hold_weeks: to - from,
            buy,
            sell,
        }
    }

    #[test]
    fn mint_then_sale_is_one_pair() {
        let key = bundle(&[(0, 0)]);
        let txs = vec![
            tx("m", &key, week_start(10), SaleKind::Primary, Decimal::ONE),
            tx("s", &key, week_start(20), SaleKind::Secondary, Decimal::TWO),
        ];
        let pairs = match_repeat_sales(&txs);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].hold_weeks, 10);
        assert_eq!(pairs[0].buy.tx_id, "m");
    }

    #[test]
    fn chains_pair_consecutively() {
        let key = bundle(&[(0, 0)]);
        let txs = vec![
            tx("s2", &key, week_start(5), SaleKind::Secondary, Decimal::TWO),
            tx("m", &key, week_start(1), SaleKind::Primary, Decimal::ONE),
            tx("s1", &key, week_start(3), SaleKind::Secondary, Decimal::TWO),
        ];
        let pairs = match_repeat_sales(&txs);
        let ids: Vec<_> = pairs
            .iter()
            .map(|p| (p.buy.tx_id.as_str(), p.sell.tx_id.as_str()))
            .collect();
        assert_eq!(ids, vec![("m", "s1"), ("s1", "s2")]);
    }

    #[test]
    fn rebundled_parcels_are_not_repeat_sales() {
        let single = bundle(&[(0, 0)]);
        let cells: Vec<(i64, i64)> = (0..9).map(|i| (i % 3, i / 3)).collect();
        let block = bundle(&cells);
        let txs = vec![
            tx("a", &single, week_start(1), SaleKind::Secondary, Decimal::ONE),
            tx("b", &block, week_start(4), SaleKind::Secondary, Decimal::TEN),
        ];
        assert!(match_repeat_sales(&txs).is_empty());
    }

    #[test]
    fn moic_examples() {
        let key = bundle(&[(0, 0)]);
        let p = RepeatSalePair {
            bundle: key.clone(),
            buy: tx("b", &key, week_start(0), SaleKind::Secondary, Decimal::from(100)),
            sell: tx("s", &key, week_start(3), SaleKind::Secondary, Decimal::from(200)),
            hold_weeks: 3,
        };
        let table = PriceTable::new();
        assert_eq!(moic::<f64>(&p, &eth(), &table).unwrap(), 2.0);
        let flat = RepeatSalePair {
            sell: tx("s", &key, week_start(3), SaleKind::Secondary, Decimal::from(100)),
            ..p.clone()
        };
        assert_eq!(moic::<f64>(&flat, &eth(), &table).unwrap(), 1.0);
        assert!(matches!(
            moic::<f64>(&p, &Denomination::Token(Token::sand()), &table),
            Err(ConvertError::MissingPrice { .. })
        ));
    }

    #[test]
    fn exactly_identified_chain() {
        let pairs = vec![pair(0, 0, 1, 0.1), pair(1, 1, 2, 0.3)];
        let s = bmn_stage::<f64>(&pairs, &eth(), &PriceTable::new()).unwrap();
        assert!((s.regression.coefficients[0] - 0.1).abs() < 1e-12);
        assert!((s.regression.coefficients[1] - 0.4).abs() < 1e-12);
        assert!(s.regression.residuals.iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn unobserved_weeks_have_no_column() {
        let s = bmn_stage::<f64>(&[pair(0, 0, 5, 0.2)], &eth(), &PriceTable::new()).unwrap();
        assert_eq!(s.weeks.len(), 1);
        assert_eq!(s.design.labels(), &["week 2021-W06".to_string()]);
        assert!((s.regression.coefficients[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn repeated_week_pair_takes_the_mean() {
        let pairs = vec![pair(0, 0, 1, 0.1), pair(1, 0, 1, 0.3)];
        let s = bmn_stage::<f64>(&pairs, &eth(), &PriceTable::new()).unwrap();
        assert!((s.regression.coefficients[0] - 0.2).abs() < 1e-12);
        assert!((s.regression.residuals[0] + 0.1).abs() < 1e-12);
        assert!((s.regression.residuals[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn same_week_and_unpriceable_pairs_are_counted() {
        let pairs = vec![pair(0, 0, 0, 0.1), pair(1, 0, 2, 0.3)];
        let s = bmn_stage::<f64>(&pairs, &eth(), &PriceTable::new()).unwrap();
        assert_eq!(s.drops.same_week, 1);
        assert_eq!(s.used, vec![1]);
        let err = bmn_stage::<f64>(&pairs, &Denomination::Usd, &PriceTable::new()).unwrap_err();
        assert!(matches!(
            err,
            RepeatSalesError::EmptyAfterFilter { dropped: 2, .. }
        ));
    }

    #[test]
    fn disconnected_weeks_are_reported() {
        let pairs = vec![pair(0, 0, 1, 0.1), pair(1, 3, 4, 0.3)];
        match bmn_stage::<f64>(&pairs, &eth(), &PriceTable::new()) {
            Err(RepeatSalesError::DisconnectedWeeks { components }) => {
                assert_eq!(components.len(), 2);
                assert_eq!(components[0].len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn design_rows_sum_to_zero_or_plus_minus_one() {
        let pairs = vec![pair(0, 0, 2, 0.1), pair(1, 1, 2, 0.3), pair(2, 1, 3, 0.2)];
        let s = bmn_stage::<f64>(&pairs, &eth(), &PriceTable::new()).unwrap();
        for (r, &i) in s.used.iter().enumerate() {
            let sum: f64 = s.design.row(r).iter().sum();
            let touches_base = pairs[i].buy_week() == s.base_week;
            assert_eq!(sum, if touches_base { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn variance_stage_examples() {
        let fit = variance_stage(&[2.0, 8f64.sqrt()], &[1.0, 2.0], VarianceModel::Linear).unwrap();
        assert!(fit.intercept.abs() < 1e-12);
        assert!((fit.slope - 4.0).abs() < 1e-12);
        assert!((fit.predictions[0] - 4.0).abs() < 1e-12);
        assert!((fit.predictions[1] - 8.0).abs() < 1e-12);

        let zero = variance_stage(&[0.0; 3], &[1.0, 2.0, 3.0], VarianceModel::Linear).unwrap();
        assert!(zero.uniform);
        assert_eq!(zero.predictions, vec![1.0; 3]);

        let flat = variance_stage(&[1.0f64, -1.0, 1.0], &[1.0, 2.0, 3.0], VarianceModel::Linear).unwrap();
        for p in flat.predictions {
            assert!((p - 1.0).abs() < 1e-12);
        }

        let same = variance_stage(&[1.0, 3.0], &[4.0, 4.0], VarianceModel::Linear).unwrap();
        assert!(same.constant && !same.uniform);
        assert_eq!(same.predictions, vec![5.0, 5.0]);
    }

    #[test]
    fn variance_predictions_are_floored() {
        // the fitted line goes negative for long holds
        let e: Vec<f64> = [3.0, 2.0, 1.0, 0.1].iter().map(|v: &f64| v.sqrt()).collect();
        let fit = variance_stage(&e, &[1.0, 2.0, 3.0, 4.0], VarianceModel::Linear).unwrap();
        assert!(fit.predictions.iter().all(|&p| p > 0.0));
        let quad = variance_stage(&e, &[1.0, 2.0, 3.0, 4.0], VarianceModel::Quadratic).unwrap();
        assert!(quad.quadratic.is_some());
    }

    #[test]
    fn exact_chain_index_and_uniform_weights() {
        let pairs = vec![pair(0, 0, 1, 0.1), pair(1, 1, 2, 0.3)];
        let fit = case_shiller_index::<f64>(&pairs, &eth(), &PriceTable::new(), Default::default())
            .unwrap();
        assert!(fit.variance.uniform);
        let levels: Vec<f64> = fit.index.points.iter().map(|p| p.level).collect();
        assert_eq!(levels[0], 1.0);
        assert!((levels[1] - 0.1f64.exp()).abs() < 1e-12);
        assert!((levels[2] - 0.4f64.exp()).abs() < 1e-12);
        assert!(fit.diagnostics.to_string().contains("uniform"));
    }
}
