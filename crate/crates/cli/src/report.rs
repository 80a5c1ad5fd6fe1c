//! Markdown summary written by `landex report`.

use std::fmt::Write as _;

use landex_core::market::{SaleKind, Token};
use landex_core::stats::SummaryStats;
use landex_core::Index;

use crate::config::Settings;
use crate::pipeline::{HedonicRun, Loaded, RepeatRun, StatsRun};

fn num(v: f64) -> String {
    if v.is_finite() {
        let s = format!("{v:.4}");
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            s.trim_start_matches('-').to_string()
        } else {
            s
        }
    } else {
        landex_core::output::fmt_real(v)
    }
}

fn pct(part: usize, total: usize) -> String {
    if total == 0 {
        "-".into()
    } else {
        format!("{:.1}%", 100.0 * part as f64 / total as f64)
    }
}

fn summary_row(out: &mut String, name: &str, s: &Option<SummaryStats<f64>>) {
    match s {
        Some(s) => {
            let _ = writeln!(
                out,
                "| {name} | {} | {} | {} | {} | {} | {} | {} | {} |",
                s.n,
                num(s.mean),
                num(s.std_dev),
                num(s.skewness),
                num(s.kurtosis),
                num(s.p5),
                num(s.p50),
                num(s.p95)
            );
        }
        None => {
            let _ = writeln!(out, "| {name} | too few observations | | | | | | | |");
        }
    }
}

fn index_line(out: &mut String, label: &str, index: &Index) {
    let (Some(first), Some(last)) = (index.points.first(), index.points.last()) else {
        return;
    };
    let peak = index
        .points
        .iter()
        .max_by(|a, b| a.level.total_cmp(&b.level))
        .expect("non-empty");
    let _ = writeln!(
        out,
        "| {label} | {} | {} | {} | {} | {} ({}) | {} |",
        index.points.len(),
        index.base_week,
        first.week,
        last.week,
        num(peak.level),
        peak.week,
        num(last.level)
    );
}

pub(crate) fn render_report(
    data: &Loaded,
    s: &Settings,
    hedonic: &[HedonicRun],
    repeat: &[RepeatRun],
    stats: &StatsRun,
) -> String {
    let mut out = String::from("# Virtual land market report\n\n");
    let txs = data.transactions();

    out.push_str("## Sample\n\n");
    let _ = writeln!(out, "| stage | count |\n|---|---|");
    let _ = writeln!(out, "| parcel rows parsed | {} |", data.rows);
    let _ = writeln!(
        out,
        "| bundle transactions | {} |",
        txs.len() + data.aggregation.rejected.len()
    );
    let _ = writeln!(out, "| rejected, non-contiguous | {} |", data.non_contiguous());
    let _ = writeln!(out, "| rejected, negative age | {} |", data.negative_age());
    let _ = writeln!(out, "| accepted | {} |", txs.len());
    for run in hedonic {
        let _ = writeln!(
            out,
            "| priceable in {} | {} |",
            run.denomination,
            txs.len() - run.drops.total()
        );
    }
    out.push('\n');

    out.push_str("## Settlement tokens\n\n");
    let b = &stats.breakdown;
    let (np, ns) = (b.total(SaleKind::Primary), b.total(SaleKind::Secondary));
    let mut tokens: Vec<&Token> = b.primary.keys().chain(b.secondary.keys()).collect();
    tokens.sort();
    tokens.dedup();
    let _ = writeln!(out, "| token | primary | share | secondary | share |\n|---|---|---|---|---|");
    for t in tokens {
        let p = b.primary.get(t).copied().unwrap_or(0);
        let q = b.secondary.get(t).copied().unwrap_or(0);
        let _ = writeln!(out, "| {t} | {p} | {} | {q} | {} |", pct(p, np), pct(q, ns));
    }
    let _ = writeln!(out, "| total | {np} | | {ns} | |\n");

    out.push_str("## Summary statistics\n\n");
    let _ = writeln!(
        out,
        "| variable | n | mean | std dev | skewness | kurtosis | p5 | p50 | p95 |\n|---|---|---|---|---|---|---|---|---|"
    );
    for (name, summary) in &stats.summaries {
        if !name.starts_with("moic_") {
            summary_row(&mut out, name, summary);
        }
    }
    out.push_str("\nKurtosis is raw (a normal sample gives 3).\n\n");

    out.push_str("## Hedonic regressions\n\n");
    let _ = writeln!(
        out,
        "Log price on week dummies and controls; settlement effects are relative to ETH. \
         Standard errors are heteroskedasticity-robust (HC0). Prices winsorized at quantiles \
         {} and {}.\n",
        s.winsor.low(),
        s.winsor.high()
    );
    for run in hedonic {
        let r = &run.fit.regression;
        let _ = writeln!(out, "### {}\n", run.denomination);
        let _ = writeln!(out, "| term | estimate | robust SE | t |\n|---|---|---|---|");
        for p in &run.premia {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                p.term,
                num(p.estimate),
                num(p.robust_se),
                num(p.t_stat)
            );
        }
        let weeks = r.labels.iter().filter(|l| l.starts_with("week ")).count();
        let _ = writeln!(
            out,
            "| week dummies | {weeks} | | |\n| observations | {} | | |\n| adjusted R² | {} | | |\n",
            r.n_obs,
            num(r.adj_r_squared)
        );
    }

    out.push_str("## Price indices\n\n");
    let _ = writeln!(
        out,
        "| index | weeks | base | first | last | peak (week) | final level |\n|---|---|---|---|---|---|---|"
    );
    for run in hedonic {
        index_line(&mut out, &format!("hedonic {}", run.denomination), &run.index);
    }
    for run in repeat {
        index_line(&mut out, &format!("repeat-sales {}", run.denomination), &run.index);
    }
    out.push('\n');

    out.push_str("## Repeat sales\n\n");
    let _ = writeln!(
        out,
        "| denomination | pairs | unpriceable | same week | regressed | step-2 slope | weights |\n|---|---|---|---|---|---|---|"
    );
    for run in repeat {
        let d = &run.fit.diagnostics;
        let weights = if d.uniform_weights {
            "uniform".to_string()
        } else {
            format!("{} to {}", num(d.weight_min), num(d.weight_max))
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {weights} |",
            run.denomination,
            d.pairs_total,
            d.drops.unpriceable,
            d.drops.same_week,
            d.pairs_used,
            num(d.step2_slope)
        );
    }
    out.push_str("\nMOIC (sell price over previous price):\n\n");
    let _ = writeln!(
        out,
        "| denomination | n | mean | std dev | skewness | kurtosis | p5 | p50 | p95 |\n|---|---|---|---|---|---|---|---|---|"
    );
    for (name, summary) in &stats.summaries {
        if let Some(d) = name.strip_prefix("moic_") {
            summary_row(&mut out, d, summary);
        }
    }
    out.push('\n');

    out.push_str("## Correlations with token prices\n\n");
    let _ = writeln!(out, "| index | denomination | token | weeks | correlation |\n|---|---|---|---|---|");
    for (kind, d, t, n, r) in &stats.correlations {
        let _ = writeln!(out, "| {kind} | {d} | {t} | {n} | {} |", num(*r));
    }
    out.push('\n');

    out.push_str("## SAND settlement and relative price\n\n");
    let share = &stats.sand_share;
    if share.is_empty() {
        out.push_str("No secondary sales.\n");
    } else {
        let mean = share.values().sum::<f64>() / share.len() as f64;
        let (peak_week, peak) = share
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let _ = writeln!(
            out,
            "Weekly share of secondary sales settled in SAND: {} weeks, mean {}, peak {} in {}.",
            share.len(),
            num(mean),
            num(*peak),
            peak_week
        );
    }
    match &stats.relative {
        Some(rel) if !rel.is_empty() => {
            let (last_week, last) = rel.iter().next_back().expect("non-empty");
            let _ = writeln!(
                out,
                "SAND price relative to ETH (1 at the base week): {} weeks, last {} in {}.",
                rel.len(),
                num(*last),
                last_week
            );
        }
        _ => out.push_str("SAND price relative to ETH: not available (ETH and SAND never priced in the same week).\n"),
    }
    out
}
