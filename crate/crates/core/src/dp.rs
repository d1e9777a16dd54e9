//! Truncated stick-breaking Dirichlet process over group intercepts.
//!
//! Groups are allocated to atoms θ₁..θ_H with stick weights
//! πₕ = Vₕ ∏_{l<h} (1 − V_l), V_H = 1.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{bernoulli_log_density, Intercepts, ParamState};
use crate::random::{sample_beta, sample_categorical_log, sample_gamma, sample_normal};
use crate::rng::StreamRng;

/// Sampled sticks below the last are kept in [1e-12, 1 - 1e-12] so that
/// log(1 - V) stays finite.
pub const STICK_BOUND: f64 = 1e-12;

pub fn clamp_stick(v: f64) -> f64 {
    v.clamp(STICK_BOUND, 1.0 - STICK_BOUND)
}

fn validate_sticks(sticks: &[f64]) -> Result<()> {
    let Some((&last, head)) = sticks.split_last() else {
        return Err(Error::invalid("empty stick vector"));
    };
    if last != 1.0 {
        return Err(Error::invalid(format!("last stick must be 1, got {last}")));
    }
    if let Some(v) = head.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::invalid(format!("stick {v} outside (0, 1]")));
    }
    Ok(())
}

pub fn stick_weights(sticks: &[f64]) -> Result<Vec<f64>> {
    validate_sticks(sticks)?;
    let mut remaining = 1.0;
    Ok(sticks
        .iter()
        .map(|&v| {
            let w = v * remaining;
            remaining *= 1.0 - v;
            w
        })
        .collect())
}

/// log πₕ accumulated in log space, so deep sticks do not underflow.
pub fn log_stick_weights(sticks: &[f64]) -> Result<Vec<f64>> {
    validate_sticks(sticks)?;
    let mut log_remaining = 0.0;
    Ok(sticks
        .iter()
        .map(|&v| {
            let lw = v.ln() + log_remaining;
            log_remaining += (-v).ln_1p();
            lw
        })
        .collect())
}

fn dp_parts(params: &ParamState) -> Result<(&[usize], &[f64], &[f64])> {
    match &params.intercepts {
        Intercepts::Dirichlet { assignments, sticks, atoms, .. } => Ok((assignments, sticks, atoms)),
        _ => Err(Error::ModeMismatch("expected Dirichlet-process intercepts".into())),
    }
}

/// Normalized log allocation probabilities of `group` over the H atoms:
/// log πₕ + Σⱼ log Bern(yᵢⱼ; θₕ + f + xᵀβ), normalized by log-sum-exp.
pub fn allocation_log_probabilities(
    group: usize,
    params: &ParamState,
    data: &Dataset,
) -> Result<Vec<f64>> {
    let (_, sticks, atoms) = dp_parts(params)?;
    let mut logp = log_stick_weights(sticks)?;
    let members = data.group_members(group);
    let rest: Vec<f64> = members
        .iter()
        .map(|&i| params.functional_term(data, i) + params.linear_term(data, i))
        .collect();
    for (lp, &theta) in logp.iter_mut().zip(atoms) {
        if lp.is_finite() {
            *lp += members
                .iter()
                .zip(&rest)
                .map(|(&i, &r)| bernoulli_log_density(data.observations()[i].y, theta + r))
                .sum::<f64>();
        }
    }
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + logp.iter().map(|lp| (lp - max).exp()).sum::<f64>().ln();
    for lp in &mut logp {
        *lp -= log_norm;
    }
    Ok(logp)
}

/// Independent child generators, one per unit of parallel work.
pub(crate) fn fork<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<StreamRng> {
    (0..count).map(|_| StreamRng::seed_from_u64(rng.random())).collect()
}

/// Allocation labels S (0-based), each group drawn from its H-point categorical.
pub fn sample_cluster_assignments<R: Rng + ?Sized>(
    params: &ParamState,
    data: &Dataset,
    rng: &mut R,
) -> Result<Vec<usize>> {
    dp_parts(params)?;
    let children = fork(rng, data.num_groups());
    children
        .into_par_iter()
        .enumerate()
        .map(|(group, mut child)| {
            let logp = allocation_log_probabilities(group, params, data)?;
            sample_categorical_log(&logp, &mut child)
        })
        .collect()
}

/// Vₕ ~ Beta(1 + nₕ, α + Σ_{r>h} n_r) for h < H, V_H = 1.
pub fn sample_stick_weights<R: Rng + ?Sized>(
    assignments: &[usize],
    alpha: f64,
    truncation: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; truncation];
    for &s in assignments {
        if s >= truncation {
            return Err(Error::IndexOutOfRange { index: s, len: truncation });
        }
        counts[s] += 1;
    }
    let mut tail = assignments.len();
    let mut sticks = Vec::with_capacity(truncation);
    for (h, &n) in counts.iter().enumerate() {
        tail -= n;
        if h + 1 == truncation {
            sticks.push(1.0);
        } else {
            let v = sample_beta(1.0 + n as f64, alpha + tail as f64, rng)?;
            sticks.push(clamp_stick(v));
        }
    }
    Ok(sticks)
}

/// Per-cluster ω-sums and z-sums with z = y − ½ − ω (f + xᵀβ), for groups
/// mapped to clusters by `cluster_of`.
pub fn intercept_sufficient_stats(
    cluster_of: impl Fn(usize) -> usize,
    num_clusters: usize,
    omega: &[f64],
    params: &ParamState,
    data: &Dataset,
) -> (Vec<f64>, Vec<f64>) {
    let mut weights = vec![0.0; num_clusters];
    let mut shifts = vec![0.0; num_clusters];
    for group in 0..data.num_groups() {
        let h = cluster_of(group);
        for &i in data.group_members(group) {
            let obs = &data.observations()[i];
            let offset = params.functional_term(data, i) + params.linear_term(data, i);
            weights[h] += omega[i];
            shifts[h] += obs.y as f64 - 0.5 - omega[i] * offset;
        }
    }
    (weights, shifts)
}

fn conjugate_normal_draws<R: Rng + ?Sized>(
    weights: &[f64],
    shifts: &[f64],
    prior_precision: f64,
    rng: &mut R,
) -> Vec<f64> {
    weights
        .iter()
        .zip(shifts)
        .map(|(&w, &s)| {
            let precision = prior_precision + w;
            sample_normal(s / precision, precision.sqrt().recip(), rng)
        })
        .collect()
}

/// θ | − with diagonal covariance [σ⁻² I + diag(cluster ω-sums)]⁻¹.
pub fn sample_atoms<R: Rng + ?Sized>(
    omega: &[f64],
    params: &ParamState,
    data: &Dataset,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let Intercepts::Dirichlet { assignments, atoms, sigma_inv, .. } = &params.intercepts else {
        return Err(Error::ModeMismatch("expected Dirichlet-process intercepts".into()));
    };
    let (w, s) =
        intercept_sufficient_stats(|g| assignments[g], atoms.len(), omega, params, data);
    Ok(conjugate_normal_draws(&w, &s, *sigma_inv, rng))
}

/// μ | − for independent N(0, σ²) intercepts.
pub fn sample_gaussian_intercepts<R: Rng + ?Sized>(
    omega: &[f64],
    params: &ParamState,
    data: &Dataset,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let Intercepts::Gaussian { sigma_inv, .. } = &params.intercepts else {
        return Err(Error::ModeMismatch("expected Gaussian intercepts".into()));
    };
    let (w, s) = intercept_sufficient_stats(|g| g, data.num_groups(), omega, params, data);
    Ok(conjugate_normal_draws(&w, &s, *sigma_inv, rng))
}

/// σ⁻² ~ Ga(a + m/2, b + Σ v²/2) over the m values (atoms or intercepts).
pub fn sample_sigma_inv<R: Rng + ?Sized>(
    values: &[f64],
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> Result<f64> {
    let ss: f64 = values.iter().map(|v| v * v).sum();
    sample_gamma(shape + 0.5 * values.len() as f64, rate + 0.5 * ss, rng)
}

/// α ~ Ga(a_α + H − 1, b_α − Σ_{h<H} log(1 − Vₕ)).
pub fn sample_alpha<R: Rng + ?Sized>(
    sticks: &[f64],
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = alpha_conditional(sticks, shape, rate);
    sample_gamma(shape, rate, rng)
}

/// Shape and rate of the concentration's full conditional.
pub fn alpha_conditional(sticks: &[f64], shape: f64, rate: f64) -> (f64, f64) {
    let h = sticks.len();
    let head = &sticks[..h.saturating_sub(1)];
    let log_sum: f64 = head.iter().map(|&v| (-clamp_stick(v)).ln_1p()).sum();
    (shape + head.len() as f64, rate - log_sum)
}

/// Number of distinct occupied clusters.
pub fn occupied_clusters(assignments: &[usize]) -> usize {
    let mut seen: Vec<usize> = assignments.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}
