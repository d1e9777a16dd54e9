//! The Pólya-Gamma Gibbs sampler.
//!
//! One sweep updates, in order: ω (1), the functional effects per level (2),
//! the fixed effects (3), then for DP intercepts the allocations (4), sticks
//! (5), atoms (6), base-measure precision (7) and concentration (8). The
//! Gaussian-intercept variant replaces 4-8 by a block update of μ followed by
//! the precision update; the parabolic variant folds the quadratic
//! coefficients into the fixed-effect block and skips step 2.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::dp::{
    clamp_stick, fork, sample_alpha, sample_atoms, sample_cluster_assignments,
    sample_gaussian_intercepts, sample_sigma_inv, sample_stick_weights, stick_weights,
};
use crate::error::{Error, Result};
use crate::gp::{build_kernel_matrix, predict, sample_functional_effect};
use crate::model::{
    BetaPrior, ChainState, FunctionalEffects, FunctionalMode, InterceptMode, Intercepts, ModelSpec,
    ParamState,
};
use crate::random::{
    precision_cholesky, sample_beta as sample_beta_variate, sample_categorical, sample_gamma,
    sample_mvn, sample_mvn_canonical, sample_normal, sample_polya_gamma,
};
use crate::rng::{RngStream, Step};

/// Observations per independently seeded block in step 1.
const OMEGA_BLOCK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl ChainConfig {
    /// 5,000 iterations, the first 2,000 discarded, no thinning.
    pub fn defaults(seed: u64) -> Self {
        Self { iterations: 5000, burn_in: 2000, thin: 1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::invalid(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    /// ⌈(iterations − burn-in) / thin⌉
    pub fn kept_draws(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in) % self.thin == 0
    }
}

/// Names and grids needed to interpret stored states.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawLayout {
    pub column_names: Vec<String>,
    pub grids: Vec<Vec<f64>>,
    pub num_groups: usize,
}

impl DrawLayout {
    pub fn of(data: &Dataset) -> Self {
        Self {
            column_names: data.column_names(),
            grids: data.grids().to_vec(),
            num_groups: data.num_groups(),
        }
    }
}

/// Kept states after burn-in and thinning.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub config: ChainConfig,
    pub layout: DrawLayout,
    pub dataset_digest: String,
    pub elapsed: Duration,
    /// 0-based sweep index of each kept state.
    pub iterations: Vec<usize>,
    pub states: Vec<ParamState>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn beta_column(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.beta[j]).collect()
    }

    /// Draws × groups matrix of μ_i.
    pub fn intercept_draws(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.group_intercepts(self.layout.num_groups)).collect()
    }

    /// Draws × points matrix of f⁽ᵏ⁾ evaluated at `ages`. GP draws at ages off
    /// the sampled grid use the GP conditional mean given the grid values.
    pub fn functional_curves(&self, level: usize, ages: &[f64]) -> Result<Vec<Vec<f64>>> {
        if level >= self.layout.grids.len() {
            return Err(Error::IndexOutOfRange { index: level, len: self.layout.grids.len() });
        }
        let grid = &self.layout.grids[level];
        let on_grid: Vec<Option<usize>> =
            ages.iter().map(|a| grid.iter().position(|g| g == a)).collect();
        let all_on_grid = on_grid.iter().all(Option::is_some);
        self.states
            .iter()
            .map(|s| match &s.functional {
                FunctionalEffects::Gp(f) => {
                    if all_on_grid {
                        Ok(on_grid.iter().map(|c| f[level][c.unwrap()]).collect())
                    } else {
                        predict(grid, &f[level], self.spec.kappa[level], ages)
                    }
                }
                FunctionalEffects::Parabolic(_) => Ok(ages
                    .iter()
                    .map(|&a| s.functional_value(level, 0, a))
                    .collect()),
                FunctionalEffects::None => {
                    Err(Error::ModeMismatch("draws carry no functional effect".into()))
                }
            })
            .collect()
    }
}

/// Per-level centring and scaling of age for the quadratic basis.
#[derive(Debug, Clone, Copy)]
struct QuadraticBasis {
    center: f64,
    scale: f64,
}

impl QuadraticBasis {
    fn for_grid(grid: &[f64]) -> Self {
        if grid.is_empty() {
            return Self { center: 0.0, scale: 1.0 };
        }
        let lo = grid[0];
        let hi = grid[grid.len() - 1];
        Self { center: 0.5 * (lo + hi), scale: (0.5 * (hi - lo)).max(1.0) }
    }

    fn features(&self, age: f64) -> [f64; 3] {
        let u = (age - self.center) / self.scale;
        [1.0, u, u * u]
    }

    /// Coefficients on (1, u, u²) mapped to (1, age, age²).
    fn raw_coefficients(&self, d: [f64; 3]) -> [f64; 3] {
        let (m, s) = (self.center, self.scale);
        [
            d[0] - d[1] * m / s + d[2] * m * m / (s * s),
            d[1] / s - 2.0 * m * d[2] / (s * s),
            d[2] / (s * s),
        ]
    }
}

/// Draw ω for every observation from PG(1, η).
///
/// Observations are processed in fixed blocks, each with its own generator
/// forked from `rng`, so the result does not depend on thread scheduling.
pub fn sample_omega<R: Rng + ?Sized>(params: &ParamState, data: &Dataset, rng: &mut R) -> Vec<f64> {
    let n = data.len();
    let blocks = n.div_ceil(OMEGA_BLOCK);
    let children = fork(rng, blocks);
    let mut omega = vec![0.0; n];
    omega
        .par_chunks_mut(OMEGA_BLOCK)
        .zip(children.into_par_iter())
        .enumerate()
        .for_each(|(b, (chunk, mut child))| {
            let start = b * OMEGA_BLOCK;
            for (k, w) in chunk.iter_mut().enumerate() {
                let i = start + k;
                let eta = params.intercept_term(data, i)
                    + params.functional_term(data, i)
                    + params.linear_term(data, i);
                *w = sample_polya_gamma(eta, &mut child);
            }
        });
    omega
}

/// Precision Σ ω x xᵀ and linear term Σ x (y − ½ − ω·offset) for a design
/// given by `features`.
fn gaussian_block_stats(
    width: usize,
    omega: &[f64],
    data: &Dataset,
    offset: impl Fn(usize) -> f64,
    features: impl Fn(usize, &mut Vec<f64>),
) -> (DMatrix<f64>, DVector<f64>) {
    let mut precision = DMatrix::zeros(width, width);
    let mut linear = DVector::zeros(width);
    let mut row = Vec::with_capacity(width);
    for (i, obs) in data.observations().iter().enumerate() {
        row.clear();
        features(i, &mut row);
        let w = omega[i];
        let z = obs.y as f64 - 0.5 - w * offset(i);
        for a in 0..width {
            let xa = row[a];
            if xa == 0.0 {
                continue;
            }
            linear[a] += xa * z;
            for b in 0..=a {
                precision[(a, b)] += w * xa * row[b];
            }
        }
    }
    for a in 0..width {
        for b in 0..a {
            precision[(b, a)] = precision[(a, b)];
        }
    }
    (precision, linear)
}

/// Identify the first column that is linearly dependent on the preceding ones.
fn collinearity_report(precision: &DMatrix<f64>, names: &[String]) -> String {
    for j in 0..precision.nrows() {
        let lead = precision.view((0, 0), (j + 1, j + 1)).into_owned();
        if precision_cholesky(&lead).is_err() {
            return if precision[(j, j)] == 0.0 {
                format!("column '{}' carries no information", names[j])
            } else {
                format!("column '{}' is collinear with {:?}", names[j], &names[..j])
            };
        }
    }
    "design is rank deficient".into()
}

fn draw_block<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    names: &[String],
    rng: &mut R,
) -> Result<DVector<f64>> {
    sample_mvn_canonical(precision, linear, rng).map_err(|e| match e {
        Error::NotPositiveDefinite { dim, .. } => {
            Error::NotPositiveDefinite { dim, detail: collinearity_report(precision, names) }
        }
        other => other,
    })
}

/// β | − ~ N(Σ(Xᵀz + B⁻¹b), Σ), Σ = (XᵀΩX + B⁻¹)⁻¹, z = y − ½ − ω(μ + f).
///
/// `prior` is (B⁻¹, B⁻¹b), or `None` for the flat prior.
pub fn sample_beta<R: Rng + ?Sized>(
    omega: &[f64],
    params: &ParamState,
    data: &Dataset,
    prior: Option<&(DMatrix<f64>, DVector<f64>)>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let p = data.design_width();
    let (mut precision, mut linear) = gaussian_block_stats(
        p,
        omega,
        data,
        |i| params.intercept_term(data, i) + params.functional_term(data, i),
        |i, row| row.extend_from_slice(&data.observations()[i].x),
    );
    if let Some((q, r)) = prior {
        precision += q;
        linear += r;
    }
    let draw = draw_block(&precision, &linear, &data.column_names(), rng)?;
    Ok(draw.iter().copied().collect())
}

pub struct GibbsSampler {
    spec: ModelSpec,
    kernels: Vec<DMatrix<f64>>,
    prior: Option<(DMatrix<f64>, DVector<f64>)>,
    bases: Vec<QuadraticBasis>,
}

impl GibbsSampler {
    /// Validate `spec` against `data` and cache the kernel matrices.
    pub fn new(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        spec.validate(data)?;
        let kernels = match spec.functional {
            FunctionalMode::Gp => data
                .grids()
                .iter()
                .zip(&spec.kappa)
                .map(|(grid, &kappa)| build_kernel_matrix(grid, kappa))
                .collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        let bases = data.grids().iter().map(|g| QuadraticBasis::for_grid(g)).collect();
        Ok(Self { spec: spec.clone(), kernels, prior: spec.beta_prior.canonical()?, bases })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kernel(&self, level: usize) -> Option<&DMatrix<f64>> {
        self.kernels.get(level)
    }

    pub fn initial_state(&self, data: &Dataset) -> ChainState {
        ChainState { omega: vec![0.25; data.len()], params: ParamState::initial(&self.spec, data) }
    }

    fn parabolic_names(&self, data: &Dataset) -> Vec<String> {
        let mut names = data.column_names();
        for k in 0..data.num_levels() {
            names.extend(["const", "lin", "quad"].iter().map(|t| format!("f{k}.{t}")));
        }
        names
    }

    /// Fixed effects jointly with the quadratic coefficients, flat prior on the latter.
    fn sample_parabolic_block<R: Rng + ?Sized>(
        &self,
        omega: &[f64],
        params: &ParamState,
        data: &Dataset,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        let p = data.design_width();
        let levels = data.num_levels();
        let width = p + 3 * levels;
        let (mut precision, mut linear) = gaussian_block_stats(
            width,
            omega,
            data,
            |i| params.intercept_term(data, i),
            |i, row| {
                let obs = &data.observations()[i];
                row.extend_from_slice(&obs.x);
                row.resize(width, 0.0);
                let f = self.bases[obs.level].features(obs.age);
                row[p + 3 * obs.level..p + 3 * obs.level + 3].copy_from_slice(&f);
            },
        );
        if let Some((q, r)) = &self.prior {
            let mut block = precision.view_mut((0, 0), (p, p));
            block += q;
            let mut head = linear.rows_mut(0, p);
            head += r;
        }
        let draw = draw_block(&precision, &linear, &self.parabolic_names(data), rng)?;
        let beta = draw.rows(0, p).iter().copied().collect();
        let coefs = (0..levels)
            .map(|k| {
                let d = [draw[p + 3 * k], draw[p + 3 * k + 1], draw[p + 3 * k + 2]];
                self.bases[k].raw_coefficients(d)
            })
            .collect();
        Ok((beta, coefs))
    }

    /// One full scan. Randomness for each step comes from
    /// `RngStream::for_step(seed, iteration, step, ..)`.
    pub fn sweep(
        &self,
        data: &Dataset,
        state: &mut ChainState,
        seed: u64,
        iteration: u64,
    ) -> Result<()> {
        let stream = |step: Step, index: u64| RngStream::for_step(seed, iteration, step, index).rng();

        // 1
        state.omega = sample_omega(&state.params, data, &mut stream(Step::Omega, 0));

        // 2
        if self.spec.functional == FunctionalMode::Gp {
            let omega = &state.omega;
            let params = &state.params;
            let updated: Vec<Vec<f64>> = (0..data.num_levels())
                .into_par_iter()
                .map(|k| {
                    let mut rng = stream(Step::Functional, k as u64);
                    sample_functional_effect(k, &self.kernels[k], omega, params, data, &mut rng)
                })
                .collect::<Result<_>>()?;
            state.params.functional = FunctionalEffects::Gp(updated);
        }

        // 3
        let mut rng = stream(Step::Coefficients, 0);
        if self.spec.functional == FunctionalMode::Parabolic {
            let (beta, coefs) = self.sample_parabolic_block(&state.omega, &state.params, data, &mut rng)?;
            state.params.beta = beta;
            state.params.functional = FunctionalEffects::Parabolic(coefs);
        } else if data.design_width() > 0 {
            state.params.beta =
                sample_beta(&state.omega, &state.params, data, self.prior.as_ref(), &mut rng)?;
        }

        match self.spec.intercepts {
            InterceptMode::None => {}
            InterceptMode::Gaussian => {
                let mu = sample_gaussian_intercepts(
                    &state.omega,
                    &state.params,
                    data,
                    &mut stream(Step::Atoms, 0),
                )?;
                let sigma_inv = sample_sigma_inv(
                    &mu,
                    self.spec.sigma_shape,
                    self.spec.sigma_rate,
                    &mut stream(Step::SigmaInv, 0),
                )?;
                state.params.intercepts = Intercepts::Gaussian { mu, sigma_inv };
            }
            InterceptMode::Dirichlet => self.dirichlet_steps(data, state, &stream)?,
        }
        Ok(())
    }

    fn dirichlet_steps(
        &self,
        data: &Dataset,
        state: &mut ChainState,
        stream: &impl Fn(Step, u64) -> crate::rng::StreamRng,
    ) -> Result<()> {
        let h = self.spec.truncation;
        // 4
        let assignments =
            sample_cluster_assignments(&state.params, data, &mut stream(Step::Allocation, 0))?;
        let Intercepts::Dirichlet { assignments: s, alpha, .. } = &mut state.params.intercepts else {
            return Err(Error::ModeMismatch("state does not hold DP intercepts".into()));
        };
        *s = assignments;
        // 5
        let sticks = sample_stick_weights(s, *alpha, h, &mut stream(Step::Sticks, 0))?;
        if let Intercepts::Dirichlet { sticks: v, .. } = &mut state.params.intercepts {
            *v = sticks;
        }
        // 6
        let atoms = sample_atoms(&state.omega, &state.params, data, &mut stream(Step::Atoms, 0))?;
        // 7
        let sigma_inv = sample_sigma_inv(
            &atoms,
            self.spec.sigma_shape,
            self.spec.sigma_rate,
            &mut stream(Step::SigmaInv, 0),
        )?;
        let Intercepts::Dirichlet { sticks, atoms: theta, sigma_inv: prec, alpha, .. } =
            &mut state.params.intercepts
        else {
            unreachable!()
        };
        *theta = atoms;
        *prec = sigma_inv;
        // 8
        *alpha = sample_alpha(
            sticks,
            self.spec.alpha_shape,
            self.spec.alpha_rate,
            &mut stream(Step::Alpha, 0),
        )?;
        Ok(())
    }

    /// A joint draw from the prior. Requires every block to have a proper prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, data: &Dataset, rng: &mut R) -> Result<ParamState> {
        let beta = match &self.spec.beta_prior {
            BetaPrior::Improper => {
                return Err(Error::invalid("cannot draw from the flat fixed-effect prior"))
            }
            BetaPrior::Gaussian { mean, covariance } => {
                sample_mvn(mean, covariance, rng)?.iter().copied().collect()
            }
        };
        let functional = match self.spec.functional {
            FunctionalMode::Gp => FunctionalEffects::Gp(
                self.kernels
                    .iter()
                    .map(|k| {
                        sample_mvn(&DVector::zeros(k.nrows()), k, rng)
                            .map(|v| v.iter().copied().collect())
                    })
                    .collect::<Result<_>>()?,
            ),
            FunctionalMode::Parabolic => {
                return Err(Error::invalid("cannot draw from the flat quadratic prior"))
            }
            FunctionalMode::None => FunctionalEffects::None,
        };
        let (a, b) = (self.spec.sigma_shape, self.spec.sigma_rate);
        let intercepts = match self.spec.intercepts {
            InterceptMode::None => Intercepts::None,
            InterceptMode::Gaussian => {
                let sigma_inv = sample_gamma(a, b, rng)?;
                let sd = sigma_inv.sqrt().recip();
                let mu = (0..data.num_groups()).map(|_| sample_normal(0.0, sd, rng)).collect();
                Intercepts::Gaussian { mu, sigma_inv }
            }
            InterceptMode::Dirichlet => {
                let h = self.spec.truncation;
                let alpha = sample_gamma(self.spec.alpha_shape, self.spec.alpha_rate, rng)?;
                let mut sticks = Vec::with_capacity(h);
                for _ in 0..h - 1 {
                    sticks.push(clamp_stick(sample_beta_variate(1.0, alpha, rng)?));
                }
                sticks.push(1.0);
                let sigma_inv = sample_gamma(a, b, rng)?;
                let sd = sigma_inv.sqrt().recip();
                let atoms = (0..h).map(|_| sample_normal(0.0, sd, rng)).collect();
                let weights = stick_weights(&sticks)?;
                let assignments = (0..data.num_groups())
                    .map(|_| sample_categorical(&weights, rng))
                    .collect::<Result<_>>()?;
                Intercepts::Dirichlet { assignments, sticks, atoms, sigma_inv, alpha }
            }
        };
        Ok(ParamState { beta, functional, intercepts })
    }
}

/// Run one chain and keep the post burn-in, thinned states.
pub fn run_chain(data: &Dataset, spec: &ModelSpec, config: &ChainConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let sampler = GibbsSampler::new(spec, data)?;
    let start = Instant::now();
    let mut state = sampler.initial_state(data);
    let mut states = Vec::with_capacity(config.kept_draws());
    let mut iterations = Vec::with_capacity(config.kept_draws());
    for t in 0..config.iterations {
        let previous = state.params.clone();
        if let Err(e) = sampler.sweep(data, &mut state, config.seed, t as u64) {
            return Err(Error::ChainAborted {
                iteration: t,
                source: Box::new(e),
                last_state: Box::new(previous),
            });
        }
        if config.keeps(t) {
            states.push(state.params.clone());
            iterations.push(t);
        }
    }
    Ok(PosteriorDraws {
        spec: spec.clone(),
        config: *config,
        layout: DrawLayout::of(data),
        dataset_digest: data.digest(),
        elapsed: start.elapsed(),
        iterations,
        states,
    })
}
