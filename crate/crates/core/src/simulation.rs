//! Synthetic studies: a fixed factorial design with GP-drawn age curves and
//! either Gaussian or DP-clustered group intercepts, plus the error metrics
//! used to compare model variants.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;

use crate::data::{build_dataset, Covariate, Dataset, DatasetSchema, RawRow};
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, ChainConfig, PosteriorDraws};
use crate::gp::build_kernel_matrix;
use crate::model::{FunctionalEffects, FunctionalMode, InterceptMode, Intercepts, ModelSpec, ParamState};
use crate::random::{sample_mvn, sample_normal};
use crate::rng::{RngStream, Step};

pub const NUM_GROUPS: usize = 33;
pub const NUM_LEVELS: usize = 3;
pub const MAX_AGE: usize = 36;
pub const TRUE_BETA: [f64; 2] = [0.3, 0.5];
pub const TRUE_KAPPA: f64 = 0.02;
pub const CLUSTER_CONCENTRATION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Independent N(0, 1) intercepts.
    One,
    /// Intercepts from one realization of DP(2, N(0, 1)).
    Two,
}

impl Scenario {
    pub fn id(self) -> u32 {
        match self {
            Scenario::One => 1,
            Scenario::Two => 2,
        }
    }
}

impl TryFrom<u32> for Scenario {
    type Error = Error;

    fn try_from(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Scenario::One),
            2 => Ok(Scenario::Two),
            other => Err(Error::invalid(format!("unknown scenario {other}, expected 1 or 2"))),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id: u32 = s.trim().parse().map_err(|_| Error::invalid(format!("bad scenario '{s}'")))?;
        Scenario::try_from(id)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    pub scenario: Scenario,
    pub seed: u64,
    pub grid: Vec<f64>,
    /// One curve per level of x₁, evaluated on `grid`.
    pub curves: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub intercepts: Vec<f64>,
}

impl ScenarioTruth {
    /// The truth as a model state with Gaussian intercepts.
    pub fn params(&self) -> ParamState {
        ParamState {
            beta: self.beta.clone(),
            functional: FunctionalEffects::Gp(self.curves.clone()),
            intercepts: Intercepts::Gaussian { mu: self.intercepts.clone(), sigma_inv: 1.0 },
        }
    }

    pub fn distinct_intercepts(&self) -> usize {
        let mut v = self.intercepts.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    }
}

/// Pólya-urn draw of `n` values from DP(α, N(0, 1)).
pub fn chinese_restaurant_intercepts<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let mut values: Vec<f64> = Vec::with_capacity(n);
    for t in 0..n {
        let u: f64 = rng.random::<f64>() * (alpha + t as f64);
        if u < alpha {
            values.push(sample_normal(0.0, 1.0, rng));
        } else {
            let j = ((u - alpha) as usize).min(t - 1);
            values.push(values[j]);
        }
    }
    values
}

/// E[#distinct] = Σ_{t<n} α / (α + t)
pub fn expected_distinct(n: usize, alpha: f64) -> f64 {
    (0..n).map(|t| alpha / (alpha + t as f64)).sum()
}

pub fn generate_truth(scenario: Scenario, seed: u64) -> Result<ScenarioTruth> {
    let mut rng = RngStream::for_step(seed, 0, Step::Simulation, 0).rng();
    let grid: Vec<f64> = (1..=MAX_AGE).map(|a| a as f64).collect();
    let kernel = build_kernel_matrix(&grid, TRUE_KAPPA)?;
    let zero = DVector::zeros(grid.len());
    let curves = (0..NUM_LEVELS)
        .map(|_| sample_mvn(&zero, &kernel, &mut rng).map(|v| v.iter().copied().collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let intercepts = match scenario {
        Scenario::One => (0..NUM_GROUPS).map(|_| sample_normal(0.0, 1.0, &mut rng)).collect(),
        Scenario::Two => chinese_restaurant_intercepts(NUM_GROUPS, CLUSTER_CONCENTRATION, &mut rng),
    };
    Ok(ScenarioTruth { scenario, seed, grid, curves, beta: TRUE_BETA.to_vec(), intercepts })
}

pub fn simulation_schema() -> DatasetSchema {
    DatasetSchema {
        covariates: vec![Covariate::factor("x3", &["b1", "b2"])],
        num_levels: NUM_LEVELS,
        num_groups: Some(NUM_GROUPS),
    }
}

/// One observation per group × x₁ × x₂ × x₃, responses drawn from the truth.
pub fn generate_dataset(truth: &ScenarioTruth) -> Result<Dataset> {
    let mut rows = Vec::with_capacity(NUM_GROUPS * NUM_LEVELS * truth.grid.len() * 3);
    for group in 1..=truth.intercepts.len() {
        for level in 0..truth.curves.len() {
            for &age in &truth.grid {
                for x3 in 0..3 {
                    rows.push(RawRow { y: 0.0, group, age, level, covariates: vec![x3 as f64] });
                }
            }
        }
    }
    let schema = DatasetSchema { num_groups: Some(truth.intercepts.len()), ..simulation_schema() };
    let design = build_dataset(&rows, &schema)?;
    let mut rng = RngStream::for_step(truth.seed, 1, Step::Simulation, 0).rng();
    let y = truth.params().simulate_responses(&design, &mut rng);
    design.with_responses(&y)
}

/// Type-7 empirical quantile.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredError {
    pub mean: f64,
    pub q95: f64,
}

impl SquaredError {
    pub fn between(estimate: &[f64], truth: &[f64]) -> Self {
        let sq: Vec<f64> = estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).collect();
        Self { mean: sq.iter().sum::<f64>() / sq.len() as f64, q95: quantile(&sq, 0.95) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyMetrics {
    /// |posterior mean − truth| per fixed effect.
    pub beta: Vec<f64>,
    pub curves: Vec<SquaredError>,
    pub intercepts: SquaredError,
}

fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut acc = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / n).collect()
}

/// Compare posterior means with the truth.
pub fn evaluate(draws: &PosteriorDraws, truth: &ScenarioTruth) -> Result<StudyMetrics> {
    if draws.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if draws.layout.num_groups != truth.intercepts.len() {
        return Err(Error::ShapeMismatch(format!(
            "draws cover {} groups, truth has {}",
            draws.layout.num_groups,
            truth.intercepts.len()
        )));
    }
    if draws.layout.grids.len() != truth.curves.len()
        || draws.layout.grids.iter().any(|g| g != &truth.grid)
    {
        return Err(Error::ShapeMismatch("draw grids differ from the truth grid".into()));
    }
    if draws.layout.column_names.len() != truth.beta.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} fixed effects drawn, truth has {}",
            draws.layout.column_names.len(),
            truth.beta.len()
        )));
    }
    let beta_mean = column_means(&draws.states.iter().map(|s| s.beta.clone()).collect::<Vec<_>>());
    let beta = beta_mean.iter().zip(&truth.beta).map(|(m, t)| (m - t).abs()).collect();
    let curves = (0..truth.curves.len())
        .map(|k| {
            let est = column_means(&draws.functional_curves(k, &truth.grid)?);
            Ok(SquaredError::between(&est, &truth.curves[k]))
        })
        .collect::<Result<_>>()?;
    let mu = column_means(&draws.intercept_draws());
    Ok(StudyMetrics { beta, curves, intercepts: SquaredError::between(&mu, &truth.intercepts) })
}

/// Rows of the comparison table: header, then β rows (absolute error) and
/// curve/intercept rows (mean and 0.95 quantile of squared error).
pub fn comparison_table(variants: &[(String, StudyMetrics)]) -> Vec<Vec<String>> {
    let mut out = vec![["target", "statistic"]
        .iter()
        .map(|s| s.to_string())
        .chain(variants.iter().map(|(name, _)| name.clone()))
        .collect::<Vec<_>>()];
    let mut push = |target: String, stat: &str, get: &dyn Fn(&StudyMetrics) -> f64| {
        let mut row = vec![target, stat.to_string()];
        row.extend(variants.iter().map(|(_, m)| get(m).to_string()));
        out.push(row);
    };
    let nb = variants.first().map_or(0, |(_, m)| m.beta.len());
    for j in 0..nb {
        push(format!("beta{}", j + 1), "abs_error", &|m| m.beta[j]);
    }
    let nc = variants.first().map_or(0, |(_, m)| m.curves.len());
    for k in 0..nc {
        push(format!("f{k}"), "mean_sq", &|m| m.curves[k].mean);
        push(format!("f{k}"), "q95_sq", &|m| m.curves[k].q95);
    }
    push("mu".into(), "mean_sq", &|m| m.intercepts.mean);
    push("mu".into(), "q95_sq", &|m| m.intercepts.q95);
    out
}

/// A model variant compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub functional: FunctionalMode,
    pub intercepts: InterceptMode,
}

impl Variant {
    pub fn spec(&self, data: &Dataset) -> ModelSpec {
        let mut spec = ModelSpec::for_dataset(data);
        spec.functional = self.functional;
        spec.intercepts = self.intercepts;
        spec
    }
}

/// Both scenario 1 variants use Gaussian intercepts and differ in the age
/// effect; scenario 2 keeps the GP and contrasts the intercept priors.
pub fn variants(scenario: Scenario) -> [Variant; 2] {
    match scenario {
        Scenario::One => [
            Variant {
                name: "parametric",
                functional: FunctionalMode::Parabolic,
                intercepts: InterceptMode::Gaussian,
            },
            Variant {
                name: "nonparametric",
                functional: FunctionalMode::Gp,
                intercepts: InterceptMode::Gaussian,
            },
        ],
        Scenario::Two => [
            Variant {
                name: "gaussian",
                functional: FunctionalMode::Gp,
                intercepts: InterceptMode::Gaussian,
            },
            Variant { name: "dp", functional: FunctionalMode::Gp, intercepts: InterceptMode::Dirichlet },
        ],
    }
}

/// Generate one replication and fit every variant with the same chain seed.
pub fn run_replication(
    scenario: Scenario,
    seed: u64,
    iterations: usize,
    burn_in: usize,
) -> Result<Vec<(String, StudyMetrics)>> {
    let truth = generate_truth(scenario, seed)?;
    let data = generate_dataset(&truth)?;
    let config = ChainConfig { iterations, burn_in, thin: 1, seed };
    variants(scenario)
        .iter()
        .map(|v| {
            let draws = run_chain(&data, &v.spec(&data), &config)?;
            Ok((v.name.to_string(), evaluate(&draws, &truth)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{ChainConfig, DrawLayout};
    use crate::model::ModelSpec;
    use std::time::Duration;

    #[test]
    fn design_size() {
        let truth = generate_truth(Scenario::One, 5).unwrap();
        let data = generate_dataset(&truth).unwrap();
        assert_eq!(data.len(), 10_692);
        for g in 0..NUM_GROUPS {
            assert_eq!(data.group_members(g).len(), 324);
        }
        assert_eq!(data.column_names(), vec!["b1", "b2"]);
        assert_eq!(truth.distinct_intercepts(), NUM_GROUPS);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_truth(Scenario::Two, 11).unwrap();
        let b = generate_truth(Scenario::Two, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_dataset(&a).unwrap().digest(), generate_dataset(&b).unwrap().digest());
        assert_ne!(a, generate_truth(Scenario::Two, 12).unwrap());
    }

    #[test]
    fn predictor_is_model_predictor() {
        let truth = generate_truth(Scenario::One, 2).unwrap();
        let data = generate_dataset(&truth).unwrap();
        let params = truth.params();
        for i in [0, 1, 2, 107, 5000, 10_691] {
            let obs = data.observation(i).unwrap();
            let cell = truth.grid.iter().position(|&a| a == obs.age).unwrap();
            let direct = truth.intercepts[obs.group]
                + truth.curves[obs.level][cell]
                + obs.x[0] * TRUE_BETA[0]
                + obs.x[1] * TRUE_BETA[1];
            assert!((params.linear_predictor(&data, i).unwrap() - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn balanced_outcomes_under_null_truth() {
        let mut truth = generate_truth(Scenario::One, 3).unwrap();
        truth.beta = vec![0.0, 0.0];
        truth.intercepts = vec![0.0; NUM_GROUPS];
        truth.curves = vec![vec![0.0; MAX_AGE]; NUM_LEVELS];
        let data = generate_dataset(&truth).unwrap();
        let n = data.len() as f64;
        let ybar = data.observations().iter().map(|o| o.y as f64).sum::<f64>() / n;
        assert!((ybar - 0.5).abs() < 3.0 * (0.25 / n).sqrt());
    }

    #[test]
    fn crp_distinct_count_matches_expectation() {
        // Σ_{t=0}^{32} 2/(2+t) = 6.2364...
        let expected = expected_distinct(NUM_GROUPS, 2.0);
        assert!((expected - 6.2364).abs() < 1e-4);
        let seeds = 200;
        let total: usize =
            (0..seeds).map(|s| generate_truth(Scenario::Two, s).unwrap().distinct_intercepts()).sum();
        let avg = total as f64 / seeds as f64;
        assert!((avg - expected).abs() < 1.5, "{avg}");
    }

    #[test]
    fn curves_have_unit_scale() {
        let truth = generate_truth(Scenario::One, 9).unwrap();
        assert!(truth.curves.iter().flatten().all(|v| v.abs() < 5.0));
    }

    #[test]
    fn quantile_type7() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 10.0);
        assert!((quantile(&v, 0.95) - 9.55).abs() < 1e-12);
    }

    fn fake_draws(truth: &ScenarioTruth, offset: f64) -> PosteriorDraws {
        let mut state = truth.params();
        if let FunctionalEffects::Gp(f) = &mut state.functional {
            for v in f[0].iter_mut() {
                *v += offset;
            }
        }
        let layout = DrawLayout {
            column_names: vec!["b1".into(), "b2".into()],
            grids: vec![truth.grid.clone(); NUM_LEVELS],
            num_groups: NUM_GROUPS,
        };
        PosteriorDraws {
            spec: ModelSpec::defaults(NUM_LEVELS, NUM_GROUPS),
            config: ChainConfig::defaults(0),
            layout,
            dataset_digest: String::new(),
            elapsed: Duration::ZERO,
            iterations: vec![0, 1],
            states: vec![state.clone(), state],
        }
    }

    #[test]
    fn exact_estimate_has_zero_error() {
        let truth = generate_truth(Scenario::One, 4).unwrap();
        let m = evaluate(&fake_draws(&truth, 0.0), &truth).unwrap();
        assert!(m.beta.iter().all(|&e| e == 0.0));
        assert!(m.curves.iter().all(|c| c.mean == 0.0 && c.q95 == 0.0));
        assert_eq!(m.intercepts, SquaredError { mean: 0.0, q95: 0.0 });
    }

    #[test]
    fn constant_offset_error() {
        let truth = generate_truth(Scenario::One, 4).unwrap();
        let m = evaluate(&fake_draws(&truth, 0.1), &truth).unwrap();
        assert!((m.curves[0].mean - 0.01).abs() < 1e-12);
        assert!((m.curves[0].q95 - 0.01).abs() < 1e-12);
        assert_eq!(m.curves[1].mean, 0.0);
    }

    #[test]
    fn shape_mismatch_reported() {
        let truth = generate_truth(Scenario::One, 4).unwrap();
        let mut draws = fake_draws(&truth, 0.0);
        draws.layout.num_groups = 32;
        assert!(matches!(evaluate(&draws, &truth), Err(Error::ShapeMismatch(_))));
        let mut draws = fake_draws(&truth, 0.0);
        draws.layout.grids[2].pop();
        assert!(matches!(evaluate(&draws, &truth), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn table_layout() {
        let truth = generate_truth(Scenario::One, 4).unwrap();
        let m = evaluate(&fake_draws(&truth, 0.1), &truth).unwrap();
        let t = comparison_table(&[("gp".into(), m.clone()), ("parabolic".into(), m)]);
        assert_eq!(t[0], vec!["target", "statistic", "gp", "parabolic"]);
        assert_eq!(t.len(), 1 + 2 + 3 * 2 + 2);
        assert_eq!(t[1][0], "beta1");
        assert_eq!(t[3][..2], ["f0".to_string(), "mean_sq".to_string()]);
    }

    #[test]
    fn scenario_parsing() {
        assert_eq!("2".parse::<Scenario>().unwrap(), Scenario::Two);
        assert!("3".parse::<Scenario>().is_err());
        assert!(Scenario::try_from(0).is_err());
    }
}
