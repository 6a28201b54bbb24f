//! Result rows, the results CSV and the per-cell summary.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use fedsim::{History, Method};
use serde::{Deserialize, Serialize};

use crate::LabError;

/// One row per (run, synchronisation round). Field order is the CSV
/// column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub m: usize,
    pub tau: usize,
    pub seed: u64,
    pub round: usize,
    pub avg_test_acc: f64,
    pub classification_term: f64,
    pub transport_dual_term: f64,
    pub reg_term: f64,
    pub total: f64,
    pub zero_sum_residual: f64,
    pub stationarity_proxy: f64,
    pub wall_ms: u64,
    pub diverged: bool,
}

pub const COLUMNS: [&str; 14] = [
    "method",
    "m",
    "tau",
    "seed",
    "round",
    "avg_test_acc",
    "classification_term",
    "transport_dual_term",
    "reg_term",
    "total",
    "zero_sum_residual",
    "stationarity_proxy",
    "wall_ms",
    "diverged",
];

pub fn rows_of(history: &History) -> Vec<ResultRow> {
    let c = &history.config;
    history
        .rounds
        .iter()
        .map(|r| ResultRow {
            method: c.method.name().to_string(),
            m: c.m,
            tau: c.tau,
            seed: c.seed,
            round: r.round,
            avg_test_acc: r.avg_test_acc,
            classification_term: r.classification_term,
            transport_dual_term: r.transport_dual_term,
            reg_term: r.reg_term,
            total: r.total,
            zero_sum_residual: r.zero_sum_residual,
            stationarity_proxy: r.stationarity_proxy,
            wall_ms: r.wall_ms,
            diverged: r.diverged,
        })
        .collect()
}

pub fn write_rows(rows: &[ResultRow], out: impl Write) -> Result<(), LabError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(input: impl Read) -> Result<Vec<ResultRow>, LabError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(LabError::Validation(format!("unexpected columns {header:?}; expected {COLUMNS:?}")));
    }
    Ok(r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?)
}

/// Final-round accuracy of one grid cell (method, m, τ) over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryCell {
    pub method: String,
    pub m: usize,
    pub tau: usize,
    pub seeds: usize,
    pub mean_acc: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std_acc: f64,
    pub diverged_runs: usize,
}

/// Groups rows by (method, m, τ) and takes the last round of every seed.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryCell> {
    let mut last: BTreeMap<(String, usize, usize, u64), &ResultRow> = BTreeMap::new();
    for row in rows {
        let key = (row.method.clone(), row.m, row.tau, row.seed);
        if last.get(&key).is_none_or(|r| r.round <= row.round) {
            last.insert(key, row);
        }
    }
    let mut cells: BTreeMap<(usize, String, usize, usize), Vec<&ResultRow>> = BTreeMap::new();
    for ((method, m, tau, _), row) in last {
        cells.entry((method_rank(&method), method, m, tau)).or_default().push(row);
    }
    cells
        .into_iter()
        .map(|((_, method, m, tau), rows)| {
            let accs: Vec<f64> = rows.iter().map(|r| r.avg_test_acc).collect();
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let std = if accs.len() > 1 { (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            SummaryCell { method, m, tau, seeds: rows.len(), mean_acc: mean, std_acc: std, diverged_runs: rows.iter().filter(|r| r.diverged).count() }
        })
        .collect()
}

fn method_rank(name: &str) -> usize {
    Method::ALL.iter().position(|m| m.name() == name).unwrap_or(usize::MAX)
}

/// Methods as rows, (m, τ) pairs as columns, `mean ± std` in percent.
pub fn format_table(cells: &[SummaryCell]) -> String {
    let mut cols: Vec<(usize, usize)> = cells.iter().map(|c| (c.m, c.tau)).collect();
    cols.sort_unstable();
    cols.dedup();
    let mut methods: Vec<&str> = Vec::new();
    for c in cells {
        if !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
    }
    let headers: Vec<String> = cols.iter().map(|(m, t)| format!("m={m} tau={t}")).collect();
    let width = 16usize.max(headers.iter().map(String::len).max().unwrap_or(0) + 2);
    let mut out = format!("{:<12}", "method");
    for h in &headers {
        out.push_str(&format!("{h:>width$}"));
    }
    out.push('\n');
    for method in methods {
        out.push_str(&format!("{method:<12}"));
        for &(m, tau) in &cols {
            let text = match cells.iter().find(|c| c.method == method && c.m == m && c.tau == tau) {
                Some(c) if c.diverged_runs > 0 => format!("{:.1} ± {:.1}*", 100.0 * c.mean_acc, 100.0 * c.std_acc),
                Some(c) => format!("{:.1} ± {:.1}", 100.0 * c.mean_acc, 100.0 * c.std_acc),
                None => "-".into(),
            };
            out.push_str(&format!("{text:>width$}"));
        }
        out.push('\n');
    }
    if cells.iter().any(|c| c.diverged_runs > 0) {
        out.push_str("* at least one seed diverged\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, seed: u64, round: usize, acc: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            m: 50,
            tau: 5,
            seed,
            round,
            avg_test_acc: acc,
            classification_term: 0.5,
            transport_dual_term: 0.0,
            reg_term: 0.0,
            total: 0.5,
            zero_sum_residual: 0.0,
            stationarity_proxy: f64::NAN,
            wall_ms: 0,
            diverged: false,
        }
    }

    #[test]
    fn csv_round_trip_keeps_columns_and_values() {
        let rows = vec![row("fedot", 0, 1, 0.25), row("fedot", 0, 2, 0.5)];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
        assert!(!text.contains('\r'));
        let back = read_rows(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].avg_test_acc, 0.5);
        assert!(back[0].stationarity_proxy.is_nan());
    }

    #[test]
    fn summary_uses_last_round_per_seed() {
        let rows = vec![row("fedavg", 0, 1, 0.1), row("fedavg", 0, 2, 0.6), row("fedavg", 1, 2, 0.8), row("fedot", 0, 2, 0.9)];
        let cells = summarize(&rows);
        assert_eq!(cells[0].method, "fedot");
        let avg = &cells[1];
        assert_eq!(avg.seeds, 2);
        assert!((avg.mean_acc - 0.7).abs() < 1e-12);
        assert!((avg.std_acc - 0.2f64.hypot(0.0) / 2f64.sqrt()).abs() < 1e-12);
        assert!(format_table(&cells).contains("70.0 ± 14.1"));
    }
}
