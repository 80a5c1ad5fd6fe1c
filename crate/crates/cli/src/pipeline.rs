//! Subcommand bodies. Each one computes everything in memory, prints its
//! stage counts, then writes all files at the end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::thread;

use landex_core::hedonic::{hedonic_from_transactions, settlement_premia, HedonicSpec, PremiumRow};
use landex_core::ingest::{
    aggregate_to_bundles, parse_price_table, parse_transactions, Aggregation, ConversionDrops,
    RejectReason,
};
use landex_core::market::{Denomination, PriceTable, Token, Transaction, WeekId};
use landex_core::output::{
    coefs_csv, denom_suffix, fmt_real, index_csv, moic_csv, series_csv, summary_csv,
};
use landex_core::repeat_sales::{
    case_shiller_index, match_repeat_sales, moic, CaseShillerOptions, RepeatSalePair,
};
use landex_core::stats::{
    index_series, pearson, relative_price_index, sale_prices, sand_settlement_share, summarize,
    weekly_mean_price, SettlementBreakdown, SummaryStats, WeeklySeries,
};
use landex_core::synth::{generate_market, SynthConfig};
use landex_core::{CaseShillerFit, HedonicFit, Index};

use crate::config::Settings;
use crate::report::render_report;
use crate::CliError;

/// File name to contents, written in name order.
pub(crate) type Outputs = BTreeMap<String, String>;

fn write_outputs(dir: &Path, outputs: &Outputs) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    for (name, contents) in outputs {
        let path = dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    }
    println!("wrote {} files to {}", outputs.len(), dir.display());
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))
}

pub(crate) struct Loaded {
    pub rows: usize,
    pub aggregation: Aggregation,
    pub table: PriceTable,
}

impl Loaded {
    pub fn transactions(&self) -> &[Transaction] {
        &self.aggregation.transactions
    }

    fn rejected(&self, reason: RejectReason) -> usize {
        self.aggregation
            .rejected
            .iter()
            .filter(|r| r.reason == reason)
            .count()
    }

    pub fn non_contiguous(&self) -> usize {
        self.rejected(RejectReason::NonContiguous)
    }

    pub fn negative_age(&self) -> usize {
        self.rejected(RejectReason::NegativeAge)
    }
}

fn load(s: &Settings) -> Result<Loaded, CliError> {
    let records = parse_transactions(open(&s.tx)?, s.token_mode)
        .map_err(|e| CliError::from_core(s.tx.display(), e))?;
    let aggregation = aggregate_to_bundles(&records, s.row_price_mode)
        .map_err(|e| CliError::from_core(s.tx.display(), e))?;
    let table = match &s.prices {
        Some(p) => parse_price_table(open(p)?).map_err(|e| CliError::from_core(p.display(), e))?,
        None => PriceTable::new(),
    };
    let loaded = Loaded {
        rows: records.len(),
        aggregation,
        table,
    };
    println!("parsed rows:           {}", loaded.rows);
    println!(
        "bundle transactions:   {}",
        loaded.transactions().len() + loaded.aggregation.rejected.len()
    );
    println!(
        "contiguous:            {} (rejected {} non-contiguous, {} negative age)",
        loaded.transactions().len(),
        loaded.non_contiguous(),
        loaded.negative_age()
    );
    if loaded.transactions().is_empty() {
        return Err(CliError::data("no usable transactions"));
    }
    Ok(loaded)
}

/// Runs `work` once per denomination on scoped threads; results come back
/// in the order of `denoms`, and the first error in that order wins.
fn per_denom<R, F>(denoms: &[Denomination], work: F) -> Result<Vec<R>, CliError>
where
    R: Send,
    F: Fn(&Denomination) -> Result<R, CliError> + Sync,
{
    thread::scope(|scope| {
        let handles: Vec<_> = denoms
            .iter()
            .map(|d| {
                let work = &work;
                scope.spawn(move || work(d))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

fn rebased(index: &Index, base: Option<WeekId>, what: &str, d: &Denomination) -> Result<Index, CliError> {
    match base {
        None => Ok(index.clone()),
        Some(w) => index
            .rebase(w)
            .map_err(|e| CliError::from_core(format!("{what} index in {d}"), e)),
    }
}

pub(crate) struct HedonicRun {
    pub denomination: Denomination,
    pub fit: HedonicFit,
    pub index: Index,
    pub drops: ConversionDrops,
    pub premia: Vec<PremiumRow<f64>>,
}

fn hedonic_for(data: &Loaded, s: &Settings, d: &Denomination) -> Result<HedonicRun, CliError> {
    let spec = HedonicSpec {
        winsor: s.winsor,
        ..HedonicSpec::new(d.clone())
    };
    let (fit, drops) = hedonic_from_transactions::<f64>(data.transactions(), &data.table, &spec)
        .map_err(|e| CliError::from_core(format!("hedonic fit in {d}"), e))?;
    let premia = settlement_premia(&fit.regression, None)
        .map_err(|e| CliError::from_core(format!("hedonic fit in {d}"), e))?;
    let index = rebased(&fit.index, s.base_week, "hedonic", d)?;
    Ok(HedonicRun {
        denomination: d.clone(),
        index,
        fit,
        drops,
        premia,
    })
}

pub(crate) struct RepeatRun {
    pub denomination: Denomination,
    pub fit: CaseShillerFit,
    pub index: Index,
    pub moic: Vec<Option<f64>>,
}

fn repeat_for(
    data: &Loaded,
    pairs: &[RepeatSalePair],
    s: &Settings,
    d: &Denomination,
) -> Result<RepeatRun, CliError> {
    let options = CaseShillerOptions {
        variance_model: s.variance_model,
    };
    let fit = case_shiller_index::<f64>(pairs, d, &data.table, options)
        .map_err(|e| CliError::from_core(format!("repeat-sales index in {d}"), e))?;
    let moic = pairs
        .iter()
        .map(|p| moic::<f64>(p, d, &data.table).ok())
        .collect();
    let index = rebased(&fit.index, s.base_week, "repeat-sales", d)?;
    Ok(RepeatRun {
        denomination: d.clone(),
        fit,
        index,
        moic,
    })
}

fn print_hedonic_counts(data: &Loaded, run: &HedonicRun) {
    let n = data.transactions().len();
    println!(
        "{}: priceable {} (dropped {}), regressed {}",
        run.denomination,
        n - run.drops.total(),
        run.drops.total(),
        run.fit.regression.n_obs
    );
}

fn print_repeat_counts(run: &RepeatRun) {
    let d = &run.fit.diagnostics;
    println!(
        "{}: pairs {}, priceable {}, regressed {} (same-week {})",
        run.denomination,
        d.pairs_total,
        d.pairs_total - d.drops.unpriceable,
        d.pairs_used,
        d.drops.same_week
    );
}

fn add_hedonic_outputs(out: &mut Outputs, run: &HedonicRun) {
    let sfx = denom_suffix(&run.denomination);
    out.insert(format!("index_{sfx}.csv"), index_csv(&run.index));
    out.insert(format!("hedonic_coefs_{sfx}.csv"), coefs_csv(&run.premia));
}

fn add_repeat_outputs(out: &mut Outputs, pairs: &[RepeatSalePair], run: &RepeatRun) {
    let sfx = denom_suffix(&run.denomination);
    out.insert(format!("rs_index_{sfx}.csv"), index_csv(&run.index));
    out.insert(format!("moic_{sfx}.csv"), moic_csv(pairs, &run.moic));
    out.insert(
        format!("rs_diagnostics_{sfx}.txt"),
        run.fit.diagnostics.to_string(),
    );
}

pub(crate) fn ingest(s: &Settings) -> Result<(), CliError> {
    let data = load(s)?;
    let mut bundles =
        String::from("tx_id,timestamp,bundle_hash,lot_size,price_amount,token,sale_type,mint_date,age_days\n");
    for tx in data.transactions() {
        let _ = writeln!(
            bundles,
            "{},{},{},{},{},{},{},{},{}",
            tx.tx_id,
            tx.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
            tx.bundle.hash_hex(),
            tx.lot_size,
            tx.price_amount.normalize(),
            tx.settlement,
            tx.sale_kind.as_str(),
            tx.mint_date,
            tx.age_days
        );
    }
    let mut rejected = String::from("tx_id,parcels,reason\n");
    for r in &data.aggregation.rejected {
        let reason = match r.reason {
            RejectReason::NonContiguous => "non-contiguous",
            RejectReason::NegativeAge => "negative-age",
        };
        let _ = writeln!(rejected, "{},{},{reason}", r.tx_id, r.parcels);
    }
    for d in &s.denominations {
        if s.prices.is_some() {
            let priceable = data
                .transactions()
                .iter()
                .filter(|tx| landex_core::ingest::convert(tx, d, &data.table).is_ok())
                .count();
            println!("{d}: priceable {priceable}");
        }
    }
    let outputs = Outputs::from([
        ("bundles.csv".to_string(), bundles),
        ("rejected.csv".to_string(), rejected),
    ]);
    write_outputs(&s.out_dir, &outputs)
}

pub(crate) fn hedonic(s: &Settings) -> Result<(), CliError> {
    let data = load(s)?;
    let runs = per_denom(&s.denominations, |d| hedonic_for(&data, s, d))?;
    let mut out = Outputs::new();
    for run in &runs {
        print_hedonic_counts(&data, run);
        add_hedonic_outputs(&mut out, run);
    }
    write_outputs(&s.out_dir, &out)
}

pub(crate) fn repeat(s: &Settings) -> Result<(), CliError> {
    let data = load(s)?;
    let pairs = match_repeat_sales(data.transactions());
    let runs = per_denom(&s.denominations, |d| repeat_for(&data, &pairs, s, d))?;
    let mut out = Outputs::new();
    for run in &runs {
        print_repeat_counts(run);
        print!("{}", run.fit.diagnostics);
        add_repeat_outputs(&mut out, &pairs, run);
    }
    write_outputs(&s.out_dir, &out)
}

/// Descriptive results shared by `stats` and `report`.
pub(crate) struct StatsRun {
    pub breakdown: SettlementBreakdown,
    pub summaries: Vec<(String, Option<SummaryStats<f64>>)>,
    pub sand_share: WeeklySeries<f64>,
    pub relative: Option<WeeklySeries<f64>>,
    pub token_prices: Vec<(Token, WeeklySeries<f64>)>,
    /// `(index kind, denomination, token, overlapping weeks, correlation)`
    pub correlations: Vec<(String, Denomination, Token, usize, f64)>,
}

fn overlap<T>(a: &WeeklySeries<T>, b: &WeeklySeries<T>) -> usize {
    a.keys().filter(|w| b.contains_key(w)).count()
}

fn compute_stats(
    data: &Loaded,
    s: &Settings,
    hedonic: &[HedonicRun],
    repeat: &[RepeatRun],
) -> StatsRun {
    let txs = data.transactions();
    let mut summaries = Vec::new();
    let summary = |v: &[f64]| summarize(v).ok();
    summaries.push((
        "lot_size".to_string(),
        summary(&txs.iter().map(|t| t.lot_size as f64).collect::<Vec<_>>()),
    ));
    summaries.push((
        "age_days".to_string(),
        summary(&txs.iter().map(|t| t.age_days as f64).collect::<Vec<_>>()),
    ));
    for d in &s.denominations {
        let prices: Vec<f64> = sale_prices(txs, d, &data.table);
        summaries.push((format!("price_{}", denom_suffix(d)), summary(&prices)));
    }
    for run in repeat {
        let values: Vec<f64> = run.moic.iter().flatten().copied().collect();
        summaries.push((
            format!("moic_{}", denom_suffix(&run.denomination)),
            summary(&values),
        ));
    }

    let eth = Token::eth();
    let sand = Token::sand();
    let relative = {
        let base = s.base_week.or_else(|| {
            // earliest week in which both tokens are priced
            let eth_weeks = weekly_mean_price::<f64>(&data.table, &eth);
            weekly_mean_price::<f64>(&data.table, &sand)
                .keys()
                .find(|w| eth_weeks.contains_key(w))
                .copied()
        });
        base.and_then(|b| relative_price_index(&eth, &sand, &data.table, b).ok())
    };
    let token_prices: Vec<(Token, WeeklySeries<f64>)> = [eth, sand]
        .into_iter()
        .map(|t| {
            let series = weekly_mean_price(&data.table, &t);
            (t, series)
        })
        .filter(|(_, series)| !series.is_empty())
        .collect();

    let mut correlations = Vec::new();
    let indices = hedonic
        .iter()
        .map(|r| ("hedonic", &r.denomination, &r.index))
        .chain(repeat.iter().map(|r| ("repeat-sales", &r.denomination, &r.index)));
    for (kind, d, index) in indices {
        let levels = index_series(index);
        for (t, prices) in &token_prices {
            let r = pearson(&levels, prices).unwrap_or(f64::NAN);
            correlations.push((kind.to_string(), d.clone(), t.clone(), overlap(&levels, prices), r));
        }
    }

    StatsRun {
        breakdown: SettlementBreakdown::of(txs),
        summaries,
        sand_share: sand_settlement_share(txs),
        relative,
        token_prices,
        correlations,
    }
}

fn add_stats_outputs(out: &mut Outputs, stats: &StatsRun) {
    for (name, summary) in &stats.summaries {
        if let Some(summary) = summary {
            out.insert(format!("summary_{name}.csv"), summary_csv(summary));
        }
    }
    out.insert("series_sand_share.csv".into(), series_csv(&stats.sand_share));
    if let Some(rel) = &stats.relative {
        out.insert("series_relative_eth_sand.csv".into(), series_csv(rel));
    }
    for (t, series) in &stats.token_prices {
        out.insert(format!("series_usd_{}.csv", t.symbol()), series_csv(series));
    }
    let mut csv = String::from("index,denom,token,n_weeks,pearson\n");
    for (kind, d, t, n, r) in &stats.correlations {
        let _ = writeln!(csv, "{kind},{},{t},{n},{}", d.label(), fmt_real(*r));
    }
    out.insert("correlations.csv".into(), csv);
}

pub(crate) fn stats(s: &Settings) -> Result<(), CliError> {
    let data = load(s)?;
    let pairs = match_repeat_sales(data.transactions());
    let runs = per_denom(&s.denominations, |d| {
        let h = hedonic_for(&data, s, d)?;
        let r = repeat_for(&data, &pairs, s, d)?;
        Ok((h, r))
    })?;
    let (hedonic, repeat): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let stats = compute_stats(&data, s, &hedonic, &repeat);
    for (name, summary) in &stats.summaries {
        match summary {
            Some(sm) => println!("{name}: n {}", sm.n),
            None => println!("{name}: too few observations, skipped"),
        }
    }
    let mut out = Outputs::new();
    add_stats_outputs(&mut out, &stats);
    write_outputs(&s.out_dir, &out)
}

pub(crate) fn report(s: &Settings) -> Result<(), CliError> {
    let data = load(s)?;
    let pairs = match_repeat_sales(data.transactions());
    let runs = per_denom(&s.denominations, |d| {
        let h = hedonic_for(&data, s, d)?;
        let r = repeat_for(&data, &pairs, s, d)?;
        Ok((h, r))
    })?;
    let (hedonic, repeat): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let mut out = Outputs::new();
    for run in &hedonic {
        print_hedonic_counts(&data, run);
        add_hedonic_outputs(&mut out, run);
    }
    for run in &repeat {
        print_repeat_counts(run);
        add_repeat_outputs(&mut out, &pairs, run);
    }
    let stats = compute_stats(&data, s, &hedonic, &repeat);
    add_stats_outputs(&mut out, &stats);
    out.insert(
        "report.md".into(),
        render_report(&data, s, &hedonic, &repeat, &stats),
    );
    write_outputs(&s.out_dir, &out)
}

pub(crate) fn simulate(
    seed: Option<u64>,
    config: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = match &config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", p.display())))?;
            SynthConfig::from_toml_str(&text).map_err(|e| CliError::from_core(p.display(), e))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let market = generate_market(&cfg).map_err(|e| CliError::from_core("simulate", e))?;
    println!(
        "generated {} sales over {} weeks (seed {})",
        market.n_sales, cfg.n_weeks, cfg.seed
    );
    let outputs = Outputs::from([
        ("transactions.csv".to_string(), market.transactions_csv),
        ("prices.csv".to_string(), market.prices_csv),
        ("truth.csv".to_string(), market.truth_csv),
    ]);
    write_outputs(&out_dir.unwrap_or_else(|| PathBuf::from("out")), &outputs)
}
