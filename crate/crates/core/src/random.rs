//! Exact random-variate generators used by the full conditionals.

use std::f64::consts::{FRAC_PI_2, LN_2, PI, SQRT_2};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Boundary between the inverse-Gaussian and exponential proposal pieces.
const PG_TRUNC: f64 = 0.64;

/// Below this |c| the moment formulas switch to their Taylor series.
const SMALL_TILT: f64 = 1e-4;

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

/// Parameters of a Pólya-Gamma law PG(b, c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyaGammaParams {
    pub shape: f64,
    pub tilt: f64,
}

impl PolyaGammaParams {
    pub fn new(shape: f64, tilt: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !tilt.is_finite() {
            return Err(Error::invalid(format!("PG({shape}, {tilt})")));
        }
        Ok(Self { shape, tilt })
    }

    pub fn moments(&self) -> (f64, f64) {
        polya_gamma_moments(self.shape, self.tilt)
    }
}

/// Analytic mean and variance of PG(b, c).
pub fn polya_gamma_moments(b: f64, c: f64) -> (f64, f64) {
    let c = c.abs();
    if c < SMALL_TILT {
        let c2 = c * c;
        let mean = 0.25 - c2 / 48.0 + c2 * c2 / 480.0 - 17.0 * c2 * c2 * c2 / 80640.0;
        let var = 1.0 / 24.0 - c2 / 120.0 + 17.0 * c2 * c2 / 13440.0
            - 31.0 * c2 * c2 * c2 / 181440.0;
        return (b * mean, b * var);
    }
    let mean = (0.5 * c).tanh() / (2.0 * c);
    let sech = 1.0 / (0.5 * c).cosh();
    // For large c, sinh overflows; sech^2 * sinh -> 2 tanh(c/2)
    let var = if c > 700.0 {
        (2.0 * (0.5 * c).tanh() - c * sech * sech) / (4.0 * c * c * c)
    } else {
        sinh_minus_identity(c) * sech * sech / (4.0 * c * c * c)
    };
    (b * mean, b * var)
}

/// sinh(c) − c without cancellation for small c.
fn sinh_minus_identity(c: f64) -> f64 {
    if c >= 1.0 {
        return c.sinh() - c;
    }
    let c2 = c * c;
    let mut term = c * c2 / 6.0;
    let mut sum = 0.0;
    let mut k = 3.0;
    while term > sum * f64::EPSILON {
        sum += term;
        term *= c2 / ((k + 1.0) * (k + 2.0));
        k += 2.0;
    }
    sum
}

fn ln_std_normal_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / SQRT_2)).ln()
}

fn ln_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Terms of the alternating series for the Jacobi density J*(1, 0).
fn series_term(n: usize, x: f64) -> f64 {
    let k = n as f64 + 0.5;
    if x <= PG_TRUNC {
        PI * k * (2.0 / (PI * x)).powf(1.5) * (-2.0 * k * k / x).exp()
    } else {
        PI * k * (-0.5 * k * k * PI * PI * x).exp()
    }
}

/// Inverse-Gaussian(mean 1/z, shape 1) restricted to (0, PG_TRUNC).
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = PG_TRUNC;
    if z < 1.0 / t {
        loop {
            let e = loop {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / t {
                    break e1;
                }
            };
            let x = t / (1.0 + t * e) / (1.0 + t * e);
            let accept = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= accept {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let mu_y = mu * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}

/// One exact draw from PG(1, c).
///
/// Devroye's alternating-series rejection sampler for J*(1, |c|/2), scaled by
/// 1/4. The proposal is an exponential tail above 0.64 mixed with a truncated
/// inverse Gaussian below it.
pub fn sample_polya_gamma<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    debug_assert!(c.is_finite());
    let z = 0.5 * c.abs();
    let t = PG_TRUNC;
    let k = PI * PI / 8.0 + 0.5 * z * z;

    let ln_p = (FRAC_PI_2 / k).ln() - k * t;
    let rt = t.sqrt();
    let a = (t * z - 1.0) / rt;
    let b = (t * z + 1.0) / rt;
    let ln_q = LN_2 + ln_add_exp(-z + ln_std_normal_cdf(a), z + ln_std_normal_cdf(-b));
    let prob_exp = 1.0 / (1.0 + (ln_q - ln_p).exp());

    loop {
        let x = if rng.random::<f64>() < prob_exp {
            let e: f64 = Exp1.sample(rng);
            t + e / k
        } else {
            truncated_inverse_gaussian(z, rng)
        };

        let mut s = series_term(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            let term = series_term(n, x);
            if n % 2 == 1 {
                s -= term;
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += term;
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Lower Cholesky factor of `matrix + jitter * I`.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    pub factor: DMatrix<f64>,
    pub jitter: f64,
}

fn check_square_symmetric(matrix: &DMatrix<f64>) -> Result<()> {
    if !matrix.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "matrix is {}x{}, expected square",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let n = matrix.nrows();
    let scale = matrix.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!("matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Cholesky factorization with escalating diagonal jitter.
///
/// Tries the bare matrix first, then adds `1e-8 * mean(diag)` to the diagonal,
/// multiplying by ten on each failure up to `1e-4 * mean(diag)`.
pub fn jittered_cholesky(matrix: &DMatrix<f64>) -> Result<JitteredCholesky> {
    check_square_symmetric(matrix)?;
    let n = matrix.nrows();
    if n == 0 {
        return Ok(JitteredCholesky { factor: DMatrix::zeros(0, 0), jitter: 0.0 });
    }
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok(JitteredCholesky { factor: chol.unpack(), jitter: 0.0 });
    }
    let mean_diag = matrix.diagonal().mean();
    if !(mean_diag > 0.0 && mean_diag.is_finite()) {
        return Err(Error::NotPositiveDefinite {
            dim: n,
            detail: format!("mean diagonal entry {mean_diag}"),
        });
    }
    let max_jitter = JITTER_MAX * mean_diag;
    let mut jitter = JITTER_START * mean_diag;
    while jitter <= max_jitter * (1.0 + 1e-9) {
        let mut shifted = matrix.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(JitteredCholesky { factor: chol.unpack(), jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        dim: n,
        detail: format!("factorization failed with diagonal jitter up to {max_jitter:e}"),
    })
}

fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// Draw from N(mean, covariance).
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if covariance.nrows() != mean.len() {
        return Err(Error::ShapeMismatch(format!(
            "mean has length {}, covariance is {}x{}",
            mean.len(),
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    let chol = jittered_cholesky(covariance)?;
    let eps = standard_normal_vector(mean.len(), rng);
    Ok(mean + chol.factor * eps)
}

/// Strict Cholesky of a precision matrix; rejects numerically singular input.
///
/// Fails when any pivot falls below `1e-12` of its diagonal entry, which is
/// how exact collinearity shows up in floating point.
pub fn precision_cholesky(precision: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    check_square_symmetric(precision)?;
    let n = precision.nrows();
    let chol = Cholesky::new(precision.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        dim: n,
        detail: "precision matrix factorization failed".into(),
    })?;
    let l = chol.l_dirty();
    for j in 0..n {
        let pivot = l[(j, j)] * l[(j, j)];
        if !(pivot > 1e-12 * precision[(j, j)]) {
            return Err(Error::NotPositiveDefinite {
                dim: n,
                detail: format!("precision matrix is singular at column {j}"),
            });
        }
    }
    Ok(chol)
}

/// Draw from N(Q⁻¹ r, Q⁻¹) given precision Q and linear term r.
pub fn sample_mvn_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if precision.nrows() != linear.len() {
        return Err(Error::ShapeMismatch(format!(
            "linear term has length {}, precision is {}x{}",
            linear.len(),
            precision.nrows(),
            precision.ncols()
        )));
    }
    let chol = precision_cholesky(precision)?;
    let mean = chol.solve(linear);
    let eps = standard_normal_vector(linear.len(), rng);
    // L^T v = eps gives v ~ N(0, Q^-1)
    let noise = chol
        .l_dirty()
        .tr_solve_lower_triangular(&eps)
        .expect("Cholesky factor has a positive diagonal");
    Ok(mean + noise)
}

pub fn sample_normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}

/// Gamma draw with the shape/rate parameterization.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(Error::invalid(format!("Gamma(shape {shape}, rate {rate})")));
    }
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.sample(rng))
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::invalid(format!("Beta({a}, {b})")));
    }
    let dist = Beta::new(a, b).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// Index drawn with probability proportional to `weights` (0-based).
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let mut total = 0.0;
    for &w in weights {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::invalid(format!("categorical weight {w}")));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::invalid("categorical weights are all zero"));
    }
    let u = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            cumulative += w;
            last_positive = i;
            if u < cumulative {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

/// Categorical draw from unnormalized log-weights (max-subtracted before
/// exponentiation).
pub fn sample_categorical_log<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::invalid("log-weights have no finite maximum"));
    }
    let weights: Vec<f64> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    sample_categorical(&weights, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_relative_eq;

    const N: usize = 100_000;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    fn pg_draws(c: f64, stream: u64) -> Vec<f64> {
        let mut rng = RngStream::new(11, stream).rng();
        (0..N).map(|_| sample_polya_gamma(c, &mut rng)).collect()
    }

    #[test]
    fn moments_at_zero_are_known_limits() {
        let (m, v) = polya_gamma_moments(1.0, 0.0);
        assert_eq!(m, 0.25);
        assert_relative_eq!(v, 1.0 / 24.0, max_relative = 1e-15);
    }

    #[test]
    fn moments_match_high_precision_values() {
        // 40-digit evaluations of the closed forms
        let cases = [
            (0.5, 0.24491866240370912928, 0.039659800808458560834),
            (1.0, 0.23105857863000487925, 0.034446645388523026714),
            (2.0, 0.19039853898894122203, 0.021351238396358670570),
            (5.0, 0.098661429815143028888, 0.0036805349257741149590),
        ];
        for (c, mean, var) in cases {
            let (m, v) = polya_gamma_moments(1.0, c);
            assert_relative_eq!(m, mean, max_relative = 1e-13);
            assert_relative_eq!(v, var, max_relative = 1e-12);
        }
        assert_relative_eq!(polya_gamma_moments(1.0, 2.0).0, 1f64.tanh() / 4.0, max_relative = 1e-14);
    }

    #[test]
    fn moments_additive_in_shape() {
        let (m1, v1) = polya_gamma_moments(1.0, 1.0);
        let (m2, v2) = polya_gamma_moments(2.0, 1.0);
        assert_eq!(m2, 2.0 * m1);
        assert_eq!(v2, 2.0 * v1);
    }

    #[test]
    fn series_branch_is_continuous() {
        for c in [SMALL_TILT * 0.999, SMALL_TILT * 1.001] {
            let (m, v) = polya_gamma_moments(1.0, c);
            assert_relative_eq!(m, 0.25, max_relative = 1e-8);
            assert_relative_eq!(v, 1.0 / 24.0, max_relative = 1e-8);
        }
        let (m, v) = polya_gamma_moments(1.0, 1e3);
        assert!(m.is_finite() && v.is_finite() && v > 0.0);
    }

    #[test]
    fn pg_mean_at_zero() {
        let xs = pg_draws(0.0, 1);
        let (m, v) = mean_var(&xs);
        assert!((m - 0.25).abs() < 3.0 * (v / N as f64).sqrt(), "mean {m}");
    }

    #[test]
    fn pg_mean_at_two() {
        let xs = pg_draws(2.0, 2);
        let (m, v) = mean_var(&xs);
        let target = 1f64.tanh() / 4.0;
        assert!((m - target).abs() < 3.0 * (v / N as f64).sqrt(), "mean {m}");
    }

    #[test]
    fn pg_symmetric_in_tilt() {
        let (m1, v1) = mean_var(&pg_draws(5.0, 3));
        let (m2, v2) = mean_var(&pg_draws(-5.0, 4));
        let se = ((v1 + v2) / N as f64).sqrt();
        assert!((m1 - m2).abs() < 3.0 * se);
    }

    #[test]
    fn pg_draws_positive_and_reproducible() {
        let a = pg_draws(0.7, 9);
        assert!(a.iter().all(|&x| x > 0.0));
        assert_eq!(a, pg_draws(0.7, 9));
    }

    #[test]
    fn pg_extreme_tilts_are_finite() {
        let mut rng = RngStream::new(1, 1).rng();
        for c in [30.0, 200.0, -1000.0, 1e-300] {
            for _ in 0..100 {
                let w = sample_polya_gamma(c, &mut rng);
                assert!(w > 0.0 && w.is_finite(), "c = {c}, w = {w}");
            }
        }
        let mut rng = RngStream::new(1, 2).rng();
        let xs: Vec<f64> = (0..20_000).map(|_| sample_polya_gamma(200.0, &mut rng)).collect();
        let (m, v) = mean_var(&xs);
        let (em, _) = polya_gamma_moments(1.0, 200.0);
        assert!((m - em).abs() < 4.0 * (v / xs.len() as f64).sqrt());
    }

    #[test]
    fn mvn_standard_normal() {
        let mut rng = RngStream::new(5, 0).rng();
        let mean = DVector::zeros(3);
        let cov = DMatrix::identity(3, 3);
        let draws: Vec<DVector<f64>> =
            (0..N).map(|_| sample_mvn(&mean, &cov, &mut rng).unwrap()).collect();
        for d in 0..3 {
            let xs: Vec<f64> = draws.iter().map(|x| x[d]).collect();
            let (m, v) = mean_var(&xs);
            assert!(m.abs() < 3.0 / (N as f64).sqrt());
            assert!((v - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn mvn_diagonal_variances() {
        let mut rng = RngStream::new(5, 1).rng();
        let mean = DVector::zeros(2);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let draws: Vec<DVector<f64>> =
            (0..N).map(|_| sample_mvn(&mean, &cov, &mut rng).unwrap()).collect();
        for (d, target) in [(0, 4.0), (1, 9.0)] {
            let xs: Vec<f64> = draws.iter().map(|x| x[d]).collect();
            let (_, v) = mean_var(&xs);
            assert!((v - target).abs() < 0.05 * target);
        }
    }

    #[test]
    fn mvn_correlation() {
        let mut rng = RngStream::new(5, 2).rng();
        let mean = DVector::zeros(2);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let draws: Vec<DVector<f64>> =
            (0..N).map(|_| sample_mvn(&mean, &cov, &mut rng).unwrap()).collect();
        let xs: Vec<f64> = draws.iter().map(|x| x[0]).collect();
        let ys: Vec<f64> = draws.iter().map(|x| x[1]).collect();
        let (mx, vx) = mean_var(&xs);
        let (my, vy) = mean_var(&ys);
        let cov_xy =
            xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (N as f64 - 1.0);
        let corr = cov_xy / (vx * vy).sqrt();
        assert!((corr - 0.5).abs() < 0.02, "corr {corr}");
    }

    #[test]
    fn jitter_only_touches_diagonal() {
        // Rank-one matrix needs jitter.
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        let chol = jittered_cholesky(&m).unwrap();
        assert!(chol.jitter > 0.0);
        let rebuilt = &chol.factor * chol.factor.transpose();
        let diff = rebuilt - &m;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert!(diff[(i, i)].abs() <= chol.jitter * (1.0 + 1e-6) + 1e-12);
                } else {
                    assert!(diff[(i, j)].abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn jitter_gives_up_on_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(jittered_cholesky(&m), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn canonical_form_matches_covariance_form() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = DVector::from_vec(vec![1.0, -1.0]);
        let cov = q.clone().try_inverse().unwrap();
        let mean = &cov * &r;
        let mut rng = RngStream::new(3, 3).rng();
        let draws: Vec<DVector<f64>> =
            (0..N).map(|_| sample_mvn_canonical(&q, &r, &mut rng).unwrap()).collect();
        for d in 0..2 {
            let xs: Vec<f64> = draws.iter().map(|x| x[d]).collect();
            let (m, v) = mean_var(&xs);
            assert!((m - mean[d]).abs() < 4.0 * (cov[(d, d)] / N as f64).sqrt());
            assert!((v - cov[(d, d)]).abs() < 0.03 * cov[(d, d)]);
        }
    }

    #[test]
    fn singular_precision_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(precision_cholesky(&q), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn gamma_beta_means() {
        let mut rng = RngStream::new(4, 0).rng();
        let g: Vec<f64> = (0..N).map(|_| sample_gamma(1.0, 1.0, &mut rng).unwrap()).collect();
        let (m, v) = mean_var(&g);
        assert!((m - 1.0).abs() < 3.0 * (v / N as f64).sqrt());
        let b: Vec<f64> = (0..N).map(|_| sample_beta(1.0, 1.0, &mut rng).unwrap()).collect();
        let (m, v) = mean_var(&b);
        assert!((m - 0.5).abs() < 3.0 * (v / N as f64).sqrt());
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut rng = RngStream::new(4, 1).rng();
        assert!(sample_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_gamma(1.0, -1.0, &mut rng).is_err());
        assert!(sample_beta(1.0, 0.0, &mut rng).is_err());
        assert!(sample_categorical(&[0.0, 0.0], &mut rng).is_err());
        assert!(sample_categorical(&[1.0, -1.0], &mut rng).is_err());
        assert!(PolyaGammaParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn degenerate_categorical() {
        let mut rng = RngStream::new(4, 2).rng();
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[0.0, 0.0, 7.0], &mut rng).unwrap(), 2);
        }
        let lw = [-1e4, -2e4, 0.0];
        assert_eq!(sample_categorical_log(&lw, &mut rng).unwrap(), 2);
    }
}
