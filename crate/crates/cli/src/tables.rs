//! Summary tables rendered as header + string rows.

use npglm::summary::{autocorrelation, effective_sample_size};
use npglm::{
    cluster_summary, functional_summary, summarize_coefficients, trace_table, PosteriorDraws,
};

use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }
}

/// mean, median, s.e. and 0.95 HPD bounds per fixed effect.
pub fn coefficients(draws: &PosteriorDraws) -> CliResult<Table> {
    let mut t = Table::new(&["parameter", "mean", "median", "se", "hpd_lo", "hpd_hi"]);
    for c in summarize_coefficients(draws)? {
        t.rows.push(vec![
            c.name,
            c.mean.to_string(),
            c.median.to_string(),
            c.std_error.to_string(),
            c.hpd_lo.to_string(),
            c.hpd_hi.to_string(),
        ]);
    }
    Ok(t)
}

/// Plot-ready band for one level: age, mean, hpd_lo, hpd_hi.
pub fn functional_band(draws: &PosteriorDraws, level: usize) -> CliResult<Table> {
    let mut t = Table::new(&["age", "mean", "hpd_lo", "hpd_hi"]);
    for p in functional_summary(draws, level)? {
        t.rows.push(vec![p.age.to_string(), p.mean.to_string(), p.lo.to_string(), p.hi.to_string()]);
    }
    Ok(t)
}

/// G × G co-clustering frequencies.
pub fn coclustering(draws: &PosteriorDraws) -> CliResult<Table> {
    let c = cluster_summary(draws)?;
    let g = c.coclustering.len();
    let mut header = vec!["group".to_string()];
    header.extend((1..=g).map(|i| format!("g{i}")));
    let rows = c
        .coclustering
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = vec![(i + 1).to_string()];
            r.extend(row.iter().map(f64::to_string));
            r
        })
        .collect();
    Ok(Table { header, rows })
}

/// Frequency of each occupied-cluster count.
pub fn cluster_counts(draws: &PosteriorDraws) -> CliResult<Table> {
    let c = cluster_summary(draws)?;
    let max = c.occupied.iter().copied().max().unwrap_or(0);
    let mut t = Table::new(&["clusters", "draws"]);
    for k in 1..=max {
        let n = c.occupied.iter().filter(|&&o| o == k).count();
        if n > 0 {
            t.rows.push(vec![k.to_string(), n.to_string()]);
        }
    }
    Ok(t)
}

/// Draws × groups matrix of group intercepts.
pub fn intercept_draws(draws: &PosteriorDraws) -> Table {
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=draws.layout.num_groups).map(|i| format!("mu.{i}")));
    let rows = draws
        .iterations
        .iter()
        .zip(draws.intercept_draws())
        .map(|(t, mu)| {
            let mut r = vec![t.to_string()];
            r.extend(mu.iter().map(f64::to_string));
            r
        })
        .collect();
    Table { header, rows }
}

pub fn trace(draws: &PosteriorDraws) -> CliResult<Table> {
    let tt = trace_table(draws)?;
    let mut header = vec!["iteration".to_string()];
    header.extend(tt.headers);
    let rows = draws
        .iterations
        .iter()
        .zip(tt.rows)
        .map(|(t, row)| {
            let mut r = vec![t.to_string()];
            r.extend(row.iter().map(f64::to_string));
            r
        })
        .collect();
    Ok(Table { header, rows })
}

/// Effective sample size and lag-1 autocorrelation of every traced scalar.
pub fn diagnostics(draws: &PosteriorDraws) -> CliResult<Table> {
    let tt = trace_table(draws)?;
    let mut t = Table::new(&["parameter", "ess", "acf1"]);
    for (j, name) in tt.headers.iter().enumerate() {
        let column: Vec<f64> = tt.rows.iter().map(|r| r[j]).collect();
        let acf1 = autocorrelation(&column, 1).get(1).copied().unwrap_or(0.0);
        t.rows.push(vec![
            name.clone(),
            effective_sample_size(&column).to_string(),
            acf1.to_string(),
        ]);
    }
    Ok(t)
}
