//! Posterior summaries: intervals, coefficient tables, co-clustering,
//! functional bands, traces and mixing diagnostics.

use crate::error::{Error, Result};
use crate::gibbs::PosteriorDraws;
use crate::model::{FunctionalMode, InterceptMode, Intercepts};
use crate::simulation::quantile;

/// Fewest samples for which an empirical HPD interval is computed.
pub const MIN_HPD_SAMPLES: usize = 20;

fn check_mass(mass: f64) -> Result<()> {
    if mass > 0.0 && mass < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("interval mass must lie in (0, 1), got {mass}")))
    }
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Shortest window covering ⌈mass·n⌉ sorted samples; ties go to the lowest start.
pub fn hpd_interval(samples: &[f64], mass: f64) -> Result<(f64, f64)> {
    check_mass(mass)?;
    if samples.len() < MIN_HPD_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_HPD_SAMPLES, got: samples.len() });
    }
    let v = sorted(samples);
    let n = v.len();
    let m = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = 0;
    let mut width = f64::INFINITY;
    for i in 0..=n - m {
        let w = v[i + m - 1] - v[i];
        if w < width {
            width = w;
            best = i;
        }
    }
    Ok((v[best], v[best + m - 1]))
}

/// Central window of ⌈mass·n⌉ order statistics, splitting the excluded draws
/// evenly between the tails (the extra one goes to the upper tail).
pub fn equal_tailed_interval(samples: &[f64], mass: f64) -> Result<(f64, f64)> {
    check_mass(mass)?;
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let v = sorted(samples);
    let n = v.len();
    let m = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let lo = (n - m) / 2;
    Ok((v[lo], v[lo + m - 1]))
}

/// HPD interval, or the sample range when there are too few draws for one.
pub fn credible_band(samples: &[f64], mass: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if samples.len() < MIN_HPD_SAMPLES {
        check_mass(mass)?;
        let v = sorted(samples);
        return Ok((v[0], v[v.len() - 1]));
    }
    hpd_interval(samples, mass)
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

pub fn median(samples: &[f64]) -> f64 {
    quantile(samples, 0.5)
}

/// Sample standard deviation (n − 1 denominator; 0 for a single draw).
pub fn std_dev(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(samples);
    (samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub std_error: f64,
    pub hpd_lo: f64,
    pub hpd_hi: f64,
}

impl CoefficientSummary {
    pub fn of(name: &str, samples: &[f64], mass: f64) -> Result<Self> {
        let (hpd_lo, hpd_hi) = credible_band(samples, mass)?;
        Ok(Self {
            name: name.to_string(),
            mean: mean(samples),
            median: median(samples),
            std_error: std_dev(samples),
            hpd_lo,
            hpd_hi,
        })
    }
}

/// mean, median, s.e. and 0.95 HPD per fixed effect.
pub fn summarize_coefficients(draws: &PosteriorDraws) -> Result<Vec<CoefficientSummary>> {
    if draws.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    draws
        .layout
        .column_names
        .iter()
        .enumerate()
        .map(|(j, name)| CoefficientSummary::of(name, &draws.beta_column(j), 0.95))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    /// Fraction of draws in which groups i and i′ share an atom.
    pub coclustering: Vec<Vec<f64>>,
    /// Draws × groups matrix of μ_i = θ_{S_i}.
    pub intercepts: Vec<Vec<f64>>,
    /// Occupied clusters per draw.
    pub occupied: Vec<usize>,
}

impl ClusterSummary {
    /// Most frequent occupied-cluster count; ties go to the smaller count.
    pub fn modal_cluster_count(&self) -> usize {
        let max = self.occupied.iter().copied().max().unwrap_or(0);
        let mut freq = vec![0usize; max + 1];
        for &k in &self.occupied {
            freq[k] += 1;
        }
        let top = freq.iter().copied().max().unwrap_or(0);
        freq.iter().position(|&f| f == top).unwrap_or(0)
    }
}

pub fn cluster_summary(draws: &PosteriorDraws) -> Result<ClusterSummary> {
    if draws.spec.intercepts != InterceptMode::Dirichlet {
        return Err(Error::ModeMismatch(format!(
            "cluster summary needs DP intercepts, draws use '{}'",
            draws.spec.intercepts
        )));
    }
    if draws.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let g = draws.layout.num_groups;
    let mut counts = vec![vec![0usize; g]; g];
    let mut occupied = Vec::with_capacity(draws.len());
    for state in &draws.states {
        let Intercepts::Dirichlet { assignments, .. } = &state.intercepts else {
            return Err(Error::ModeMismatch("draw without DP intercepts".into()));
        };
        for i in 0..g {
            for j in 0..g {
                if assignments[i] == assignments[j] {
                    counts[i][j] += 1;
                }
            }
        }
        occupied.push(crate::dp::occupied_clusters(assignments));
    }
    let n = draws.len() as f64;
    let coclustering =
        counts.iter().map(|row| row.iter().map(|&c| c as f64 / n).collect()).collect();
    Ok(ClusterSummary { coclustering, intercepts: draws.intercept_draws(), occupied })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPoint {
    pub age: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Pointwise posterior mean and 0.95 HPD band of f⁽ᵏ⁾ on the level's grid.
pub fn functional_summary(draws: &PosteriorDraws, level: usize) -> Result<Vec<BandPoint>> {
    if draws.spec.functional != FunctionalMode::Gp {
        return Err(Error::ModeMismatch(format!(
            "functional bands need GP draws, draws use '{}'",
            draws.spec.functional
        )));
    }
    let grid = draws
        .layout
        .grids
        .get(level)
        .ok_or(Error::IndexOutOfRange { index: level, len: draws.layout.grids.len() })?;
    let curves = draws.functional_curves(level, grid)?;
    grid.iter()
        .enumerate()
        .map(|(c, &age)| {
            let column: Vec<f64> = curves.iter().map(|row| row[c]).collect();
            let (lo, hi) = credible_band(&column, 0.95)?;
            Ok(BandPoint { age, mean: mean(&column), lo, hi })
        })
        .collect()
}

/// Sample autocorrelations at lags 0..=max_lag.
pub fn autocorrelation(samples: &[f64], max_lag: usize) -> Vec<f64> {
    let n = samples.len();
    let m = mean(samples);
    let centered: Vec<f64> = samples.iter().map(|x| x - m).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|lag| {
            if c0 == 0.0 {
                return if lag == 0 { 1.0 } else { 0.0 };
            }
            let c: f64 = centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum();
            c / n as f64 / c0
        })
        .collect()
}

/// Effective sample size by the initial monotone sequence estimator.
pub fn effective_sample_size(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(samples);
    let centered: Vec<f64> = samples.iter().map(|x| x - m).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum();
    if c0 == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / c0
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn column(&self, header: &str) -> Option<Vec<f64>> {
        let j = self.headers.iter().position(|h| h == header)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// One row per kept draw with every scalar parameter and flattened f grids.
pub fn trace_table(draws: &PosteriorDraws) -> Result<TraceTable> {
    let mut headers: Vec<String> =
        draws.layout.column_names.iter().map(|n| format!("beta.{n}")).collect();
    let mut curve_columns = Vec::new();
    if draws.spec.functional != FunctionalMode::None {
        for (k, grid) in draws.layout.grids.iter().enumerate() {
            headers.extend(grid.iter().map(|a| format!("f{k}.age{a}")));
            curve_columns.push(draws.functional_curves(k, grid)?);
        }
    }
    match draws.spec.intercepts {
        InterceptMode::Dirichlet => {
            headers.extend((1..=draws.spec.truncation).map(|h| format!("theta.{h}")));
            headers.push("sigma2.inv".into());
            headers.push("alpha".into());
        }
        InterceptMode::Gaussian => {
            headers.extend((1..=draws.layout.num_groups).map(|i| format!("mu.{i}")));
            headers.push("sigma2.inv".into());
        }
        InterceptMode::None => {}
    }
    let rows = draws
        .states
        .iter()
        .enumerate()
        .map(|(d, s)| {
            let mut row = s.beta.clone();
            for curves in &curve_columns {
                row.extend_from_slice(&curves[d]);
            }
            match &s.intercepts {
                Intercepts::Dirichlet { atoms, sigma_inv, alpha, .. } => {
                    row.extend_from_slice(atoms);
                    row.push(*sigma_inv);
                    row.push(*alpha);
                }
                Intercepts::Gaussian { mu, sigma_inv } => {
                    row.extend_from_slice(mu);
                    row.push(*sigma_inv);
                }
                Intercepts::None => {}
            }
            row
        })
        .collect();
    Ok(TraceTable { headers, rows })
}
