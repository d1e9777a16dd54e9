//! Flat `key = value` settings files.
//!
//! ```text
//! # model
//! intercepts = dp
//! kappa = 0.02
//! covariates = area:urb, relig:musl|chri, educ:med|high
//! iterations = 5000
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use npglm::{
    BetaPrior, ChainConfig, Covariate, DatasetSchema, FunctionalMode, InterceptMode, ModelSpec,
};

use crate::error::{CliError, CliResult};

const KEYS: &[&str] = &[
    "intercepts",
    "functional",
    "truncation",
    "kappa",
    "sigma_shape",
    "sigma_rate",
    "alpha_shape",
    "alpha_rate",
    "beta_prior",
    "beta_mean",
    "beta_variance",
    "covariates",
    "levels",
    "groups",
    "iterations",
    "burnin",
    "thin",
    "seed",
];

/// Parsed settings; every field is optional so later sources can override.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub intercepts: Option<InterceptMode>,
    pub functional: Option<FunctionalMode>,
    pub truncation: Option<usize>,
    pub kappa: Option<Vec<f64>>,
    pub sigma_shape: Option<f64>,
    pub sigma_rate: Option<f64>,
    pub alpha_shape: Option<f64>,
    pub alpha_rate: Option<f64>,
    pub beta_prior: Option<String>,
    pub beta_mean: Option<f64>,
    pub beta_variance: Option<f64>,
    pub covariates: Option<Vec<Covariate>>,
    pub levels: Option<usize>,
    pub groups: Option<usize>,
    pub iterations: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> CliResult<T> {
    value.parse().map_err(|_| {
        CliError::Usage(format!("settings line {line}: cannot parse {key} = '{value}'"))
    })
}

/// `name:label|label, name` where a bare name is a numeric covariate.
pub fn parse_covariates(text: &str) -> CliResult<Vec<Covariate>> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let cov = match item.split_once(':') {
            Some((name, labels)) => {
                let labels: Vec<&str> = labels.split('|').map(str::trim).collect();
                if labels.iter().any(|l| l.is_empty()) {
                    return Err(CliError::Usage(format!("empty level label in '{item}'")));
                }
                Covariate::factor(name.trim(), &labels)
            }
            None => Covariate::numeric(item),
        };
        if cov.name().is_empty() {
            return Err(CliError::Usage(format!("covariate without a name in '{text}'")));
        }
        out.push(cov);
    }
    Ok(out)
}

pub fn parse_kappa(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("cannot parse length-scale '{v}'")))
        })
        .collect()
}

impl Settings {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(CliError::Usage(format!("settings line {line}: expected key = value")));
            };
            let key = key.trim().to_ascii_lowercase();
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("settings line {line}: unknown key '{key}'")));
            }
            if seen.insert(key.clone(), (value.trim().to_string(), line)).is_some() {
                return Err(CliError::Usage(format!("settings line {line}: '{key}' given twice")));
            }
        }
        let mut s = Settings::default();
        for (key, (value, line)) in &seen {
            let (v, l) = (value.as_str(), *line);
            let mode_err = |e: npglm::Error| CliError::Usage(format!("settings line {l}: {e}"));
            match key.as_str() {
                "intercepts" => s.intercepts = Some(v.parse().map_err(mode_err)?),
                "functional" => s.functional = Some(v.parse().map_err(mode_err)?),
                "truncation" => s.truncation = Some(parse(key, v, l)?),
                "kappa" => s.kappa = Some(parse_kappa(v)?),
                "sigma_shape" => s.sigma_shape = Some(parse(key, v, l)?),
                "sigma_rate" => s.sigma_rate = Some(parse(key, v, l)?),
                "alpha_shape" => s.alpha_shape = Some(parse(key, v, l)?),
                "alpha_rate" => s.alpha_rate = Some(parse(key, v, l)?),
                "beta_prior" => {
                    if v != "improper" && v != "gaussian" {
                        return Err(CliError::Usage(format!(
                            "settings line {l}: beta_prior must be improper or gaussian"
                        )));
                    }
                    s.beta_prior = Some(v.to_string());
                }
                "beta_mean" => s.beta_mean = Some(parse(key, v, l)?),
                "beta_variance" => s.beta_variance = Some(parse(key, v, l)?),
                "covariates" => s.covariates = Some(parse_covariates(v)?),
                "levels" => s.levels = Some(parse(key, v, l)?),
                "groups" => s.groups = Some(parse(key, v, l)?),
                "iterations" => s.iterations = Some(parse(key, v, l)?),
                "burnin" => s.burnin = Some(parse(key, v, l)?),
                "thin" => s.thin = Some(parse(key, v, l)?),
                "seed" => s.seed = Some(parse(key, v, l)?),
                _ => unreachable!(),
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Fields set in `other` replace ours.
    pub fn overlay(mut self, other: &Settings) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            intercepts, functional, truncation, kappa, sigma_shape, sigma_rate, alpha_shape,
            alpha_rate, beta_prior, beta_mean, beta_variance, covariates, levels, groups,
            iterations, burnin, thin, seed
        );
        self
    }

    pub fn schema(&self) -> DatasetSchema {
        let base = DatasetSchema::contraceptive_survey();
        DatasetSchema {
            covariates: self.covariates.clone().unwrap_or(base.covariates),
            num_levels: self.levels.unwrap_or(base.num_levels),
            num_groups: self.groups,
        }
    }

    /// Defaults for `levels` × `groups` with our settings applied.
    pub fn model_spec(&self, levels: usize, groups: usize, width: usize) -> CliResult<ModelSpec> {
        let mut spec = ModelSpec::defaults(levels, groups);
        if let Some(v) = self.intercepts {
            spec.intercepts = v;
        }
        if let Some(v) = self.functional {
            spec.functional = v;
        }
        if let Some(v) = self.truncation {
            spec.truncation = v;
        }
        if let Some(k) = &self.kappa {
            spec.kappa = match k.len() {
                1 => vec![k[0]; levels],
                n if n == levels => k.clone(),
                n => {
                    return Err(CliError::Usage(format!(
                        "{n} length-scales given for {levels} levels"
                    )))
                }
            };
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { spec.$f = v; } )* };
        }
        set!(sigma_shape, sigma_rate, alpha_shape, alpha_rate);
        if self.beta_prior.as_deref() == Some("gaussian") {
            spec.beta_prior = BetaPrior::isotropic(
                width,
                self.beta_mean.unwrap_or(0.0),
                self.beta_variance.unwrap_or(100.0),
            );
        } else if self.beta_mean.is_some() || self.beta_variance.is_some() {
            return Err(CliError::Usage("beta_mean/beta_variance need beta_prior = gaussian".into()));
        }
        Ok(spec)
    }

    pub fn chain_config(&self, default_seed: u64) -> ChainConfig {
        let d = ChainConfig::defaults(self.seed.unwrap_or(default_seed));
        ChainConfig {
            iterations: self.iterations.unwrap_or(d.iterations),
            burn_in: self.burnin.unwrap_or(d.burn_in),
            thin: self.thin.unwrap_or(d.thin),
            seed: d.seed,
        }
    }
}
