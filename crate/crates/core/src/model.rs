//! Model specification, chain state, and the deterministic predictor.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::Dataset;
use crate::dp::stick_weights;
use crate::error::{Error, Result};

/// How group-level intercepts enter the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterceptMode {
    /// Truncated stick-breaking Dirichlet-process mixture of Gaussian atoms.
    Dirichlet,
    /// Independent N(0, σ²) intercepts.
    Gaussian,
    None,
}

/// How the functional covariate enters the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionalMode {
    /// Gaussian-process prior on the grid values of each level.
    Gp,
    /// Quadratic in age per level, flat prior on the coefficients.
    Parabolic,
    None,
}

impl fmt::Display for InterceptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterceptMode::Dirichlet => "dp",
            InterceptMode::Gaussian => "gaussian",
            InterceptMode::None => "none",
        })
    }
}

impl FromStr for InterceptMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(InterceptMode::Dirichlet),
            "gaussian" => Ok(InterceptMode::Gaussian),
            "none" => Ok(InterceptMode::None),
            other => Err(Error::invalid(format!("unknown intercept mode {other:?}"))),
        }
    }
}

impl fmt::Display for FunctionalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FunctionalMode::Gp => "gp",
            FunctionalMode::Parabolic => "parabolic",
            FunctionalMode::None => "none",
        })
    }
}

impl FromStr for FunctionalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp" => Ok(FunctionalMode::Gp),
            "parabolic" => Ok(FunctionalMode::Parabolic),
            "none" => Ok(FunctionalMode::None),
            other => Err(Error::invalid(format!("unknown functional mode {other:?}"))),
        }
    }
}

/// Gaussian prior on the fixed effects, or the flat prior (B⁻¹ = 0).
#[derive(Debug, Clone, PartialEq)]
pub enum BetaPrior {
    Improper,
    Gaussian { mean: DVector<f64>, covariance: DMatrix<f64> },
}

impl BetaPrior {
    /// N(mean·1, variance·I) in dimension `p`.
    pub fn isotropic(p: usize, mean: f64, variance: f64) -> Self {
        BetaPrior::Gaussian {
            mean: DVector::from_element(p, mean),
            covariance: DMatrix::identity(p, p) * variance,
        }
    }

    /// Prior precision B⁻¹ and B⁻¹b, or `None` for the flat prior.
    pub fn canonical(&self) -> Result<Option<(DMatrix<f64>, DVector<f64>)>> {
        match self {
            BetaPrior::Improper => Ok(None),
            BetaPrior::Gaussian { mean, covariance } => {
                let precision = covariance
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::invalid("beta prior covariance is not positive definite"))?
                    .inverse();
                let linear = &precision * mean;
                Ok(Some((precision, linear)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub beta_prior: BetaPrior,
    /// Squared-exponential length-scale κ per interaction level.
    pub kappa: Vec<f64>,
    /// Stick-breaking truncation H.
    pub truncation: usize,
    /// Ga(a, b) hyperprior on the base-measure precision σ⁻².
    pub sigma_shape: f64,
    pub sigma_rate: f64,
    /// Ga(a_α, b_α) hyperprior on the DP concentration.
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub intercepts: InterceptMode,
    pub functional: FunctionalMode,
}

impl ModelSpec {
    /// κ = 0.02, H = number of groups, a = b = 0.001, a_α = b_α = 1, flat β prior,
    /// GP functional effects with DP intercepts.
    pub fn defaults(num_levels: usize, num_groups: usize) -> Self {
        Self {
            beta_prior: BetaPrior::Improper,
            kappa: vec![0.02; num_levels],
            truncation: num_groups,
            sigma_shape: 0.001,
            sigma_rate: 0.001,
            alpha_shape: 1.0,
            alpha_rate: 1.0,
            intercepts: InterceptMode::Dirichlet,
            functional: FunctionalMode::Gp,
        }
    }

    pub fn for_dataset(data: &Dataset) -> Self {
        Self::defaults(data.num_levels(), data.num_groups())
    }

    /// Check hyperparameters and compatibility with `data`.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let positive = [
            ("a", self.sigma_shape),
            ("b", self.sigma_rate),
            ("a_alpha", self.alpha_shape),
            ("b_alpha", self.alpha_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.functional == FunctionalMode::Gp {
            if self.kappa.len() != data.num_levels() {
                return Err(Error::invalid(format!(
                    "{} length-scales for {} levels",
                    self.kappa.len(),
                    data.num_levels()
                )));
            }
            if let Some(k) = self.kappa.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
                return Err(Error::invalid(format!("length-scale must be positive, got {k}")));
            }
        }
        if self.intercepts == InterceptMode::Dirichlet
            && (self.truncation == 0 || self.truncation > data.num_groups())
        {
            return Err(Error::invalid(format!(
                "truncation {} must lie in 1..={}",
                self.truncation,
                data.num_groups()
            )));
        }
        if let BetaPrior::Gaussian { mean, covariance } = &self.beta_prior {
            let p = data.design_width();
            if mean.len() != p || covariance.nrows() != p || covariance.ncols() != p {
                return Err(Error::ShapeMismatch(format!("beta prior is not {p}-dimensional")));
            }
            self.beta_prior.canonical()?;
        }
        Ok(())
    }
}

/// Functional-effect parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalEffects {
    /// Values f⁽ᵏ⁾ on each level's grid.
    Gp(Vec<Vec<f64>>),
    /// (c₀, c₁, c₂) per level: f(age) = c₀ + c₁·age + c₂·age².
    Parabolic(Vec<[f64; 3]>),
    None,
}

/// Group-intercept parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Intercepts {
    None,
    Gaussian {
        mu: Vec<f64>,
        sigma_inv: f64,
    },
    /// Cluster labels are 0-based; `sticks` has `V_H = 1`.
    Dirichlet {
        assignments: Vec<usize>,
        sticks: Vec<f64>,
        atoms: Vec<f64>,
        sigma_inv: f64,
        alpha: f64,
    },
}

impl Intercepts {
    /// μ_i; for the DP this is θ at the group's allocation, never stored.
    pub fn mu(&self, group: usize) -> f64 {
        match self {
            Intercepts::None => 0.0,
            Intercepts::Gaussian { mu, .. } => mu[group],
            Intercepts::Dirichlet { assignments, atoms, .. } => atoms[assignments[group]],
        }
    }

    pub fn sigma_inv(&self) -> Option<f64> {
        match self {
            Intercepts::None => None,
            Intercepts::Gaussian { sigma_inv, .. } | Intercepts::Dirichlet { sigma_inv, .. } => {
                Some(*sigma_inv)
            }
        }
    }
}

/// Model parameters of one iteration (everything except the auxiliary ω).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub beta: Vec<f64>,
    pub functional: FunctionalEffects,
    pub intercepts: Intercepts,
}

/// Full sampler state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub omega: Vec<f64>,
    pub params: ParamState,
}

pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log Bern(y; logit⁻¹(η)).
pub fn bernoulli_log_density(y: u8, eta: f64) -> f64 {
    y as f64 * eta - log1p_exp(eta)
}

impl ParamState {
    /// Starting point of every chain: zero effects, groups spread round-robin
    /// over the atoms, V_h = 1/2, σ⁻² = 1, α = 1.
    pub fn initial(spec: &ModelSpec, data: &Dataset) -> Self {
        let functional = match spec.functional {
            FunctionalMode::Gp => {
                FunctionalEffects::Gp(data.grids().iter().map(|g| vec![0.0; g.len()]).collect())
            }
            FunctionalMode::Parabolic => FunctionalEffects::Parabolic(vec![[0.0; 3]; data.num_levels()]),
            FunctionalMode::None => FunctionalEffects::None,
        };
        let intercepts = match spec.intercepts {
            InterceptMode::None => Intercepts::None,
            InterceptMode::Gaussian => {
                Intercepts::Gaussian { mu: vec![0.0; data.num_groups()], sigma_inv: 1.0 }
            }
            InterceptMode::Dirichlet => {
                let h = spec.truncation;
                let mut sticks = vec![0.5; h];
                sticks[h - 1] = 1.0;
                Intercepts::Dirichlet {
                    assignments: (0..data.num_groups()).map(|i| i % h).collect(),
                    sticks,
                    atoms: vec![0.0; h],
                    sigma_inv: 1.0,
                    alpha: 1.0,
                }
            }
        };
        Self { beta: vec![0.0; data.design_width()], functional, intercepts }
    }

    /// f⁽ᵏ⁾ at `age`, where `cell` is the grid position of `age` on level `level`.
    #[inline]
    pub fn functional_value(&self, level: usize, cell: usize, age: f64) -> f64 {
        match &self.functional {
            FunctionalEffects::Gp(f) => f[level][cell],
            FunctionalEffects::Parabolic(c) => {
                let c = &c[level];
                c[0] + c[1] * age + c[2] * age * age
            }
            FunctionalEffects::None => 0.0,
        }
    }

    #[inline]
    pub(crate) fn functional_term(&self, data: &Dataset, index: usize) -> f64 {
        let obs = &data.observations()[index];
        self.functional_value(obs.level, data.grid_index(index), obs.age)
    }

    #[inline]
    pub(crate) fn linear_term(&self, data: &Dataset, index: usize) -> f64 {
        let x = &data.observations()[index].x;
        x.iter().zip(&self.beta).map(|(a, b)| a * b).sum()
    }

    #[inline]
    pub(crate) fn intercept_term(&self, data: &Dataset, index: usize) -> f64 {
        self.intercepts.mu(data.observations()[index].group)
    }

    /// η = μ_i + f⁽ᵏ⁾(age) + xᵀβ for observation `index`.
    pub fn linear_predictor(&self, data: &Dataset, index: usize) -> Result<f64> {
        data.observation(index)?;
        Ok(self.intercept_term(data, index)
            + self.functional_term(data, index)
            + self.linear_term(data, index))
    }

    pub fn predictors(&self, data: &Dataset) -> Vec<f64> {
        (0..data.len())
            .map(|i| {
                self.intercept_term(data, i) + self.functional_term(data, i) + self.linear_term(data, i)
            })
            .collect()
    }

    /// Bernoulli-logit log-likelihood of the responses in `data`.
    pub fn log_likelihood(&self, data: &Dataset) -> f64 {
        self.predictors(data)
            .iter()
            .zip(data.observations())
            .map(|(&eta, obs)| bernoulli_log_density(obs.y, eta))
            .sum()
    }

    /// Draw responses y ~ Bern(logit⁻¹(η)).
    pub fn simulate_responses<R: Rng + ?Sized>(&self, data: &Dataset, rng: &mut R) -> Vec<u8> {
        self.predictors(data)
            .iter()
            .map(|&eta| u8::from(rng.random::<f64>() < inv_logit(eta)))
            .collect()
    }

    /// Intercepts μ_1..μ_G.
    pub fn group_intercepts(&self, num_groups: usize) -> Vec<f64> {
        (0..num_groups).map(|g| self.intercepts.mu(g)).collect()
    }

    /// Shape and range checks on all components.
    pub fn check(&self, spec: &ModelSpec, data: &Dataset) -> Result<()> {
        if self.beta.len() != data.design_width() {
            return Err(Error::ShapeMismatch(format!(
                "beta has {} entries, design has {} columns",
                self.beta.len(),
                data.design_width()
            )));
        }
        match (&self.functional, spec.functional) {
            (FunctionalEffects::Gp(f), FunctionalMode::Gp) => {
                let ok = f.len() == data.num_levels()
                    && f.iter().zip(data.grids()).all(|(v, g)| v.len() == g.len());
                if !ok {
                    return Err(Error::ShapeMismatch("functional grid sizes".into()));
                }
            }
            (FunctionalEffects::Parabolic(c), FunctionalMode::Parabolic) => {
                if c.len() != data.num_levels() {
                    return Err(Error::ShapeMismatch("parabolic coefficient count".into()));
                }
            }
            (FunctionalEffects::None, FunctionalMode::None) => {}
            _ => return Err(Error::ModeMismatch("functional effects do not match spec".into())),
        }
        match (&self.intercepts, spec.intercepts) {
            (Intercepts::None, InterceptMode::None) => {}
            (Intercepts::Gaussian { mu, sigma_inv }, InterceptMode::Gaussian) => {
                if mu.len() != data.num_groups() || !(*sigma_inv > 0.0) {
                    return Err(Error::invalid("gaussian intercept state"));
                }
            }
            (
                Intercepts::Dirichlet { assignments, sticks, atoms, sigma_inv, alpha },
                InterceptMode::Dirichlet,
            ) => {
                let h = spec.truncation;
                if assignments.len() != data.num_groups() || sticks.len() != h || atoms.len() != h {
                    return Err(Error::ShapeMismatch("dirichlet process state".into()));
                }
                if assignments.iter().any(|&s| s >= h) {
                    return Err(Error::invalid("allocation outside 1..=H"));
                }
                stick_weights(sticks)?;
                if !(*sigma_inv > 0.0 && *alpha > 0.0) {
                    return Err(Error::invalid("nonpositive precision or concentration"));
                }
            }
            _ => return Err(Error::ModeMismatch("intercepts do not match spec".into())),
        }
        Ok(())
    }
}

/// η for observation `index` under `params`.
pub fn linear_predictor(params: &ParamState, data: &Dataset, index: usize) -> Result<f64> {
    params.linear_predictor(data, index)
}

pub fn log_likelihood(params: &ParamState, data: &Dataset) -> f64 {
    params.log_likelihood(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, DatasetSchema, RawRow};
    use proptest::prelude::*;

    fn survey_rows() -> Vec<RawRow> {
        vec![
            RawRow { y: 1.0, group: 1, age: 20.0, level: 1, covariates: vec![1.0, 0.0, 0.0] },
            RawRow { y: 0.0, group: 2, age: 30.0, level: 0, covariates: vec![0.0, 1.0, 2.0] },
            RawRow { y: 1.0, group: 2, age: 20.0, level: 1, covariates: vec![0.0, 2.0, 1.0] },
        ]
    }

    fn toy() -> (Dataset, ModelSpec) {
        let data = build_dataset(&survey_rows(), &DatasetSchema::contraceptive_survey()).unwrap();
        let mut spec = ModelSpec::for_dataset(&data);
        spec.truncation = 2;
        (data, spec)
    }

    #[test]
    fn zero_state_gives_even_odds() {
        let (data, spec) = toy();
        let p = ParamState::initial(&spec, &data);
        let eta = p.linear_predictor(&data, 0).unwrap();
        assert_eq!(eta, 0.0);
        assert_eq!(inv_logit(eta), 0.5);
        assert!((p.log_likelihood(&data) + 3.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn single_intercept_term() {
        let (data, spec) = toy();
        let mut p = ParamState::initial(&spec, &data);
        if let Intercepts::Dirichlet { atoms, assignments, .. } = &mut p.intercepts {
            atoms[assignments[0]] = 1.0;
        }
        assert_eq!(p.linear_predictor(&data, 0).unwrap(), 1.0);
    }

    #[test]
    fn three_term_sum() {
        let (data, spec) = toy();
        let mut p = ParamState::initial(&spec, &data);
        if let Intercepts::Dirichlet { atoms, assignments, .. } = &mut p.intercepts {
            atoms[assignments[0]] = 0.2;
        }
        if let FunctionalEffects::Gp(f) = &mut p.functional {
            f[1][data.grid_index(0)] = -0.3;
        }
        p.beta[0] = 0.5; // observation 0 is urban
        assert!((p.linear_predictor(&data, 0).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_index() {
        let (data, spec) = toy();
        let p = ParamState::initial(&spec, &data);
        assert!(matches!(p.linear_predictor(&data, 3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn saturated_likelihood_has_no_overflow() {
        assert!(bernoulli_log_density(1, 50.0).abs() < 1e-20);
        assert!((bernoulli_log_density(0, 50.0) + 50.0).abs() < 1e-12);
        assert!((bernoulli_log_density(1, -1000.0) + 1000.0).abs() < 1e-9);
        assert!(bernoulli_log_density(0, 1000.0).is_finite());
    }

    #[test]
    fn toy_likelihood_matches_direct_evaluation() {
        let (data, spec) = toy();
        let mut p = ParamState::initial(&spec, &data);
        p.beta = vec![0.7, -1.1, 0.4, 2.0, -0.5];
        if let FunctionalEffects::Gp(f) = &mut p.functional {
            f[0] = vec![0.25];
            f[1] = vec![-0.6];
        }
        if let Intercepts::Dirichlet { atoms, .. } = &mut p.intercepts {
            *atoms = vec![0.3, -0.8];
        }
        // Hand-assembled predictors: group 1 -> atom 0, group 2 -> atom 1.
        let etas = [0.3 - 0.6 + 0.7, -0.8 + 0.25 - 1.1 - 0.5, -0.8 - 0.6 + 0.4 + 2.0];
        let ys = [1.0, 0.0, 1.0];
        let direct: f64 = etas
            .iter()
            .zip(ys)
            .map(|(&e, y): (&f64, f64)| {
                let pi = 1.0 / (1.0 + (-e).exp());
                y * pi.ln() + (1.0 - y) * (1.0 - pi).ln()
            })
            .sum();
        assert!((p.log_likelihood(&data) - direct).abs() < 1e-13);
    }

    #[test]
    fn parabolic_predictor() {
        let (data, mut spec) = toy();
        spec.functional = FunctionalMode::Parabolic;
        let mut p = ParamState::initial(&spec, &data);
        p.functional = FunctionalEffects::Parabolic(vec![[0.0; 3], [1.0, 0.1, -0.01], [0.0; 3]]);
        let expected = 1.0 + 0.1 * 20.0 - 0.01 * 400.0;
        assert!((p.linear_predictor(&data, 0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let (data, mut spec) = toy();
        spec.validate(&data).unwrap();
        spec.truncation = 3;
        assert!(spec.validate(&data).is_err());
        spec.truncation = 2;
        spec.kappa[1] = 0.0;
        assert!(spec.validate(&data).is_err());
        spec.kappa[1] = 0.02;
        spec.sigma_rate = -1.0;
        assert!(spec.validate(&data).is_err());
    }

    proptest! {
        #[test]
        fn likelihood_finite_for_large_predictors(b in -1e3f64..1e3, theta in -1e3f64..1e3) {
            let (data, spec) = toy();
            let mut p = ParamState::initial(&spec, &data);
            p.beta = vec![b, -b, b, 0.0, 0.0];
            if let Intercepts::Dirichlet { atoms, .. } = &mut p.intercepts {
                atoms[0] = theta;
            }
            prop_assert!(p.log_likelihood(&data).is_finite());
        }

        #[test]
        fn predictor_invariant_under_row_permutation(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let rows = survey_rows();
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<RawRow> = order.iter().map(|&i| rows[i].clone()).collect();
            let schema = DatasetSchema::contraceptive_survey();
            let a = build_dataset(&rows, &schema).unwrap();
            let b = build_dataset(&permuted, &schema).unwrap();
            let spec = ModelSpec::for_dataset(&a);
            let mut p = ParamState::initial(&spec, &a);
            p.beta = vec![0.1, 0.2, 0.3, 0.4, 0.5];
            if let FunctionalEffects::Gp(f) = &mut p.functional {
                f[1][0] = 0.9;
                f[0][0] = -0.4;
            }
            if let Intercepts::Dirichlet { atoms, .. } = &mut p.intercepts {
                atoms[0] = 1.5;
                atoms[1] = -2.5;
            }
            for (new_pos, &old) in order.iter().enumerate() {
                prop_assert_eq!(
                    p.linear_predictor(&a, old).unwrap(),
                    p.linear_predictor(&b, new_pos).unwrap()
                );
            }
        }
    }
}
