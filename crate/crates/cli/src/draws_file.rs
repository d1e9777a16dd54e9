//! Versioned draws file: a magic line, `#key=value` metadata, then one CSV
//! record per kept iteration holding the full parameter state.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use npglm::nalgebra::{DMatrix, DVector};
use npglm::{
    BetaPrior, ChainConfig, DrawLayout, FunctionalEffects, FunctionalMode, InterceptMode,
    Intercepts, ModelSpec, ParamState, PosteriorDraws,
};

use crate::error::{csv_error, CliError, CliResult};
use crate::io::create;

pub const MAGIC: &str = "#npglm-draws v1";

fn join(values: impl IntoIterator<Item = impl ToString>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn metadata(draws: &PosteriorDraws) -> Vec<(String, String)> {
    let s = &draws.spec;
    let c = &draws.config;
    let l = &draws.layout;
    let mut meta = vec![
        ("intercepts".to_string(), s.intercepts.to_string()),
        ("functional".into(), s.functional.to_string()),
        ("truncation".into(), s.truncation.to_string()),
        ("kappa".into(), join(&s.kappa)),
        ("sigma_shape".into(), s.sigma_shape.to_string()),
        ("sigma_rate".into(), s.sigma_rate.to_string()),
        ("alpha_shape".into(), s.alpha_shape.to_string()),
        ("alpha_rate".into(), s.alpha_rate.to_string()),
    ];
    match &s.beta_prior {
        BetaPrior::Improper => meta.push(("beta_prior".into(), "improper".into())),
        BetaPrior::Gaussian { mean, covariance } => {
            meta.push(("beta_prior".into(), "gaussian".into()));
            meta.push(("beta_mean".into(), join(mean.iter())));
            // row-major
            meta.push(("beta_cov".into(), join(covariance.transpose().iter())));
        }
    }
    meta.extend([
        ("iterations".into(), c.iterations.to_string()),
        ("burnin".into(), c.burn_in.to_string()),
        ("thin".into(), c.thin.to_string()),
        ("seed".into(), c.seed.to_string()),
        ("groups".into(), l.num_groups.to_string()),
        ("columns".into(), l.column_names.join(",")),
        ("levels".into(), l.grids.len().to_string()),
    ]);
    for (k, g) in l.grids.iter().enumerate() {
        meta.push((format!("grid{k}"), join(g)));
    }
    meta.push(("dataset_sha256".into(), draws.dataset_digest.clone()));
    meta
}

/// Column names of the body, after the leading `iteration`.
pub fn state_columns(spec: &ModelSpec, layout: &DrawLayout) -> Vec<String> {
    let mut cols: Vec<String> = layout.column_names.iter().map(|n| format!("beta.{n}")).collect();
    match spec.functional {
        FunctionalMode::Gp => {
            for (k, g) in layout.grids.iter().enumerate() {
                cols.extend(g.iter().map(|a| format!("f{k}.age{a}")));
            }
        }
        FunctionalMode::Parabolic => {
            for k in 0..layout.grids.len() {
                cols.extend((0..3).map(|d| format!("f{k}.c{d}")));
            }
        }
        FunctionalMode::None => {}
    }
    match spec.intercepts {
        InterceptMode::Dirichlet => {
            cols.extend((1..=layout.num_groups).map(|i| format!("s.{i}")));
            cols.extend((1..=spec.truncation).map(|h| format!("v.{h}")));
            cols.extend((1..=spec.truncation).map(|h| format!("theta.{h}")));
            cols.push("sigma2.inv".into());
            cols.push("alpha".into());
        }
        InterceptMode::Gaussian => {
            cols.extend((1..=layout.num_groups).map(|i| format!("mu.{i}")));
            cols.push("sigma2.inv".into());
        }
        InterceptMode::None => {}
    }
    cols
}

fn encode_state(state: &ParamState) -> Vec<String> {
    let mut out: Vec<String> = state.beta.iter().map(f64::to_string).collect();
    match &state.functional {
        FunctionalEffects::Gp(f) => out.extend(f.iter().flatten().map(f64::to_string)),
        FunctionalEffects::Parabolic(c) => out.extend(c.iter().flatten().map(f64::to_string)),
        FunctionalEffects::None => {}
    }
    match &state.intercepts {
        Intercepts::Dirichlet { assignments, sticks, atoms, sigma_inv, alpha } => {
            out.extend(assignments.iter().map(|s| (s + 1).to_string()));
            out.extend(sticks.iter().map(f64::to_string));
            out.extend(atoms.iter().map(f64::to_string));
            out.push(sigma_inv.to_string());
            out.push(alpha.to_string());
        }
        Intercepts::Gaussian { mu, sigma_inv } => {
            out.extend(mu.iter().map(f64::to_string));
            out.push(sigma_inv.to_string());
        }
        Intercepts::None => {}
    }
    out
}

pub fn write_draws(path: &Path, draws: &PosteriorDraws) -> CliResult<()> {
    let mut out = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(out, "{MAGIC}").map_err(io)?;
    for (k, v) in metadata(draws) {
        writeln!(out, "#{k}={v}").map_err(io)?;
    }
    let mut header = vec!["iteration".to_string()];
    header.extend(state_columns(&draws.spec, &draws.layout));
    let rows = draws.iterations.iter().zip(&draws.states).map(|(t, s)| {
        let mut row = vec![t.to_string()];
        row.extend(encode_state(s));
        row
    });
    crate::io::write_csv(&mut out, &header, rows).map_err(|e| csv_error(path, e))?;
    out.flush().map_err(io)
}

struct Meta<'a> {
    path: &'a Path,
    map: BTreeMap<String, String>,
}

impl Meta<'_> {
    fn get(&self, key: &str) -> CliResult<&str> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::format(self.path, 0, format!("header lacks '{key}'")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| CliError::format(self.path, 0, format!("bad header value {key}={v}")))
    }

    fn list(&self, key: &str) -> CliResult<Vec<f64>> {
        let v = self.get(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| {
                x.parse()
                    .map_err(|_| CliError::format(self.path, 0, format!("bad number '{x}' in {key}")))
            })
            .collect()
    }

    fn mode<T: std::str::FromStr<Err = npglm::Error>>(&self, key: &str) -> CliResult<T> {
        self.get(key)?.parse().map_err(|e: npglm::Error| CliError::format(self.path, 0, e.to_string()))
    }
}

fn decode_state(
    values: &[f64],
    spec: &ModelSpec,
    layout: &DrawLayout,
) -> Result<ParamState, String> {
    let mut it = values.iter().copied();
    let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
    let beta = take(layout.column_names.len());
    let functional = match spec.functional {
        FunctionalMode::Gp => {
            FunctionalEffects::Gp(layout.grids.iter().map(|g| take(g.len())).collect())
        }
        FunctionalMode::Parabolic => FunctionalEffects::Parabolic(
            (0..layout.grids.len())
                .map(|_| {
                    let c = take(3);
                    [c[0], c[1], c[2]]
                })
                .collect(),
        ),
        FunctionalMode::None => FunctionalEffects::None,
    };
    let g = layout.num_groups;
    let h = spec.truncation;
    let intercepts = match spec.intercepts {
        InterceptMode::Dirichlet => {
            let labels = take(g);
            let assignments = labels
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    if s.fract() == 0.0 && s >= 1.0 && s <= h as f64 {
                        Ok(s as usize - 1)
                    } else {
                        Err(format!("cluster label {s} of group {} outside 1..={h}", i + 1))
                    }
                })
                .collect::<Result<_, _>>()?;
            let sticks = take(h);
            let atoms = take(h);
            let tail = take(2);
            Intercepts::Dirichlet { assignments, sticks, atoms, sigma_inv: tail[0], alpha: tail[1] }
        }
        InterceptMode::Gaussian => {
            let mu = take(g);
            Intercepts::Gaussian { mu, sigma_inv: take(1)[0] }
        }
        InterceptMode::None => Intercepts::None,
    };
    Ok(ParamState { beta, functional, intercepts })
}

/// Read a file produced by [`write_draws`]. Errors name the failing record
/// (0 for the metadata header, otherwise the 1-based draw).
pub fn read_draws(path: &Path) -> CliResult<PosteriorDraws> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(MAGIC) => {}
        Some(l) if l.starts_with("#npglm-draws") => {
            return Err(CliError::format(path, 0, format!("unsupported version '{l}'")))
        }
        _ => return Err(CliError::format(path, 0, "not an npglm draws file")),
    }
    let mut map = BTreeMap::new();
    let mut body_start = 1;
    for line in text.lines().skip(1) {
        let Some(kv) = line.strip_prefix('#') else { break };
        let Some((k, v)) = kv.split_once('=') else {
            return Err(CliError::format(path, 0, format!("malformed header line '{line}'")));
        };
        map.insert(k.to_string(), v.to_string());
        body_start += 1;
    }
    let meta = Meta { path, map };

    let levels: usize = meta.parse("levels")?;
    let kappa = meta.list("kappa")?;
    let beta_prior = match meta.get("beta_prior")? {
        "improper" => BetaPrior::Improper,
        "gaussian" => {
            let mean = meta.list("beta_mean")?;
            let cov = meta.list("beta_cov")?;
            let p = mean.len();
            if cov.len() != p * p {
                return Err(CliError::format(path, 0, "beta_cov has the wrong length"));
            }
            BetaPrior::Gaussian {
                mean: DVector::from_vec(mean),
                covariance: DMatrix::from_row_slice(p, p, &cov),
            }
        }
        other => return Err(CliError::format(path, 0, format!("unknown beta_prior '{other}'"))),
    };
    let spec = ModelSpec {
        beta_prior,
        kappa,
        truncation: meta.parse("truncation")?,
        sigma_shape: meta.parse("sigma_shape")?,
        sigma_rate: meta.parse("sigma_rate")?,
        alpha_shape: meta.parse("alpha_shape")?,
        alpha_rate: meta.parse("alpha_rate")?,
        intercepts: meta.mode("intercepts")?,
        functional: meta.mode("functional")?,
    };
    let config = ChainConfig {
        iterations: meta.parse("iterations")?,
        burn_in: meta.parse("burnin")?,
        thin: meta.parse("thin")?,
        seed: meta.parse("seed")?,
    };
    let columns = meta.get("columns")?;
    let layout = DrawLayout {
        column_names: if columns.is_empty() {
            Vec::new()
        } else {
            columns.split(',').map(str::to_string).collect()
        },
        grids: (0..levels).map(|k| meta.list(&format!("grid{k}"))).collect::<CliResult<_>>()?,
        num_groups: meta.parse("groups")?,
    };
    let dataset_digest = meta.get("dataset_sha256")?.to_string();

    let body: String = text.lines().skip(body_start).map(|l| format!("{l}\n")).collect();
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(body.as_bytes());
    let expected = state_columns(&spec, &layout);
    let header = reader.headers().map_err(|e| CliError::format(path, 0, e.to_string()))?;
    if header.len() != expected.len() + 1
        || header.get(0) != Some("iteration")
        || header.iter().skip(1).zip(&expected).any(|(a, b)| a != b)
    {
        return Err(CliError::format(path, 0, "column header does not match the metadata"));
    }
    let mut iterations = Vec::new();
    let mut states = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let n = i + 1;
        let record = record.map_err(|e| CliError::format(path, n, e.to_string()))?;
        if record.len() != expected.len() + 1 {
            return Err(CliError::format(
                path,
                n,
                format!("expected {} fields, found {}", expected.len() + 1, record.len()),
            ));
        }
        let t: usize = record[0]
            .parse()
            .map_err(|_| CliError::format(path, n, format!("bad iteration '{}'", &record[0])))?;
        let values = record
            .iter()
            .skip(1)
            .zip(&expected)
            .map(|(v, name)| {
                v.parse::<f64>()
                    .map_err(|_| CliError::format(path, n, format!("bad value '{v}' for {name}")))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        let state = decode_state(&values, &spec, &layout).map_err(|m| CliError::format(path, n, m))?;
        iterations.push(t);
        states.push(state);
    }
    Ok(PosteriorDraws {
        spec,
        config,
        layout,
        dataset_digest,
        elapsed: Duration::ZERO,
        iterations,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_draws(intercepts: InterceptMode, functional: FunctionalMode) -> PosteriorDraws {
        let mut spec = ModelSpec::defaults(2, 3);
        spec.intercepts = intercepts;
        spec.functional = functional;
        spec.beta_prior = BetaPrior::Gaussian {
            mean: DVector::from_vec(vec![0.1, -0.2]),
            covariance: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        };
        let layout = DrawLayout {
            column_names: vec!["a".into(), "b".into()],
            grids: vec![vec![1.0, 2.0], vec![5.0]],
            num_groups: 3,
        };
        let functional_state = match functional {
            FunctionalMode::Gp => FunctionalEffects::Gp(vec![vec![0.1, 1.0 / 3.0], vec![-2e-17]]),
            FunctionalMode::Parabolic => {
                FunctionalEffects::Parabolic(vec![[1.0, 2.0, 3.0], [0.1, 0.2, 0.3]])
            }
            FunctionalMode::None => FunctionalEffects::None,
        };
        let intercepts_state = match intercepts {
            InterceptMode::Dirichlet => Intercepts::Dirichlet {
                assignments: vec![0, 2, 0],
                sticks: vec![0.3, 0.7, 1.0],
                atoms: vec![-1.0, 0.5, std::f64::consts::PI],
                sigma_inv: 1.5,
                alpha: 0.9,
            },
            InterceptMode::Gaussian => Intercepts::Gaussian { mu: vec![0.1, 0.2, 0.3], sigma_inv: 2.0 },
            InterceptMode::None => Intercepts::None,
        };
        let state = ParamState {
            beta: vec![0.123456789012345678, -1e300],
            functional: functional_state,
            intercepts: intercepts_state,
        };
        PosteriorDraws {
            spec,
            config: ChainConfig { iterations: 10, burn_in: 8, thin: 1, seed: 42 },
            layout,
            dataset_digest: "abc".into(),
            elapsed: Duration::from_secs(3),
            iterations: vec![8, 9],
            states: vec![state.clone(), state],
        }
    }

    #[test]
    fn round_trip_is_exact_in_every_mode() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("draws.csv");
        for im in [InterceptMode::Dirichlet, InterceptMode::Gaussian, InterceptMode::None] {
            for fm in [FunctionalMode::Gp, FunctionalMode::Parabolic, FunctionalMode::None] {
                let d = sample_draws(im, fm);
                write_draws(&p, &d).unwrap();
                let r = read_draws(&p).unwrap();
                assert_eq!(r.spec, d.spec);
                assert_eq!(r.config, d.config);
                assert_eq!(r.layout, d.layout);
                assert_eq!(r.states, d.states);
                assert_eq!(r.iterations, d.iterations);
                assert_eq!(r.dataset_digest, "abc");
            }
        }
    }

    #[test]
    fn corrupted_record_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("draws.csv");
        write_draws(&p, &sample_draws(InterceptMode::Dirichlet, FunctionalMode::Gp)).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let last = lines.len() - 1;
        let broken = lines[last].replacen("0.9", "zero", 1);
        lines[last] = &broken;
        fs::write(&p, lines.join("\n")).unwrap();
        let err = read_draws(&p).unwrap_err();
        assert!(matches!(err, CliError::Format { record: 2, .. }), "{err}");
        assert!(err.to_string().contains("record 2"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn truncated_record_and_bad_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("draws.csv");
        write_draws(&p, &sample_draws(InterceptMode::Gaussian, FunctionalMode::Gp)).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let cut = text.trim_end().rsplit_once(',').unwrap().0.to_string();
        fs::write(&p, cut).unwrap();
        assert!(matches!(read_draws(&p), Err(CliError::Format { record: 2, .. })));
        fs::write(&p, text.replace(MAGIC, "#npglm-draws v9")).unwrap();
        let err = read_draws(&p).unwrap_err();
        assert!(err.to_string().contains("unsupported version"));
        fs::write(&p, "hello\n").unwrap();
        assert!(matches!(read_draws(&p), Err(CliError::Format { record: 0, .. })));
    }

    #[test]
    fn gaussian_variant_has_no_alpha_column() {
        let d = sample_draws(InterceptMode::Gaussian, FunctionalMode::Gp);
        let cols = state_columns(&d.spec, &d.layout);
        assert!(!cols.contains(&"alpha".to_string()));
        assert!(cols.contains(&"mu.3".to_string()));
    }
}
