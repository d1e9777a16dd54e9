//! Squared-exponential GP priors on the functional effects and their
//! Pólya-Gamma full conditional.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ParamState;
use crate::random::jittered_cholesky;

/// K with entries exp(-κ (gᵢ - gⱼ)²).
pub fn build_kernel_matrix(grid: &[f64], kappa: f64) -> Result<DMatrix<f64>> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!("length-scale must be positive, got {kappa}")));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate grid entries"));
    }
    let n = grid.len();
    let mut k = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let d = grid[i] - grid[j];
            let v = (-kappa * d * d).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Gaussian full conditional of the grid values given per-cell ω-sums `weights`
/// and pseudo-response sums `shifts`.
///
/// Covariance (W + K⁻¹)⁻¹ is formed without inverting K, as
/// K − K W½ (I + W½ K W½)⁻¹ W½ K; the mean is that covariance times `shifts`.
pub fn functional_conditional(
    kernel: &DMatrix<f64>,
    weights: &[f64],
    shifts: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = kernel.nrows();
    if weights.len() != n || shifts.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "kernel is {n}x{n}, got {} weights and {} shifts",
            weights.len(),
            shifts.len()
        )));
    }
    let root: Vec<f64> = weights.iter().map(|w| w.max(0.0).sqrt()).collect();
    // W½ K
    let mut scaled = kernel.clone();
    for (i, &r) in root.iter().enumerate() {
        scaled.row_mut(i).scale_mut(r);
    }
    // I + W½ K W½, eigenvalues >= 1
    let mut inner = scaled.clone();
    for (j, &r) in root.iter().enumerate() {
        inner.column_mut(j).scale_mut(r);
    }
    for i in 0..n {
        inner[(i, i)] += 1.0;
    }
    let inner_chol = jittered_cholesky(&inner)?;
    let v = inner_chol
        .factor
        .solve_lower_triangular(&scaled)
        .ok_or_else(|| Error::NotPositiveDefinite { dim: n, detail: "GP update".into() })?;
    let mut cov = kernel - v.transpose() * &v;
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let mean = &cov * DVector::from_column_slice(shifts);
    Ok((mean, cov))
}

/// Per-cell ω-sums and z-sums for level `level`, where
/// z = y − ½ − ω (μ + xᵀβ).
pub fn functional_sufficient_stats(
    level: usize,
    omega: &[f64],
    params: &ParamState,
    data: &Dataset,
) -> (Vec<f64>, Vec<f64>) {
    let cells = data.grid(level).len();
    let mut weights = vec![0.0; cells];
    let mut shifts = vec![0.0; cells];
    for cell in 0..cells {
        for &i in data.cell_members(level, cell) {
            let obs = &data.observations()[i];
            let offset = params.intercept_term(data, i) + params.linear_term(data, i);
            weights[cell] += omega[i];
            shifts[cell] += obs.y as f64 - 0.5 - omega[i] * offset;
        }
    }
    (weights, shifts)
}

/// Draw f⁽ᵏ⁾ on the level's grid from its full conditional.
pub fn sample_functional_effect<R: Rng + ?Sized>(
    level: usize,
    kernel: &DMatrix<f64>,
    omega: &[f64],
    params: &ParamState,
    data: &Dataset,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (weights, shifts) = functional_sufficient_stats(level, omega, params, data);
    let (mean, cov) = functional_conditional(kernel, &weights, &shifts)?;
    let chol = jittered_cholesky(&cov)?;
    let eps = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| StandardNormal.sample(rng)));
    Ok((mean + chol.factor * eps).iter().copied().collect())
}

/// GP conditional mean at `points` given values on `grid`.
pub fn predict(grid: &[f64], values: &[f64], kappa: f64, points: &[f64]) -> Result<Vec<f64>> {
    if grid.len() != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} grid points, {} values",
            grid.len(),
            values.len()
        )));
    }
    if grid.is_empty() {
        return Ok(vec![0.0; points.len()]);
    }
    let k = build_kernel_matrix(grid, kappa)?;
    let chol = jittered_cholesky(&k)?;
    let l = &chol.factor;
    let tmp = l
        .solve_lower_triangular(&DVector::from_column_slice(values))
        .expect("positive diagonal");
    let weights = l.tr_solve_lower_triangular(&tmp).expect("positive diagonal");
    Ok(points
        .iter()
        .map(|&x| {
            grid.iter()
                .zip(weights.iter())
                .map(|(&g, &w)| (-kappa * (x - g) * (x - g)).exp() * w)
                .sum()
        })
        .collect())
}
