//! Observations, covariate encoding and the per-level functional grids.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One covariate column of the raw input.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariate {
    /// Integer-coded factor with levels `0..=labels.len()`. Level 0 is the
    /// baseline and gets no dummy; `labels[l - 1]` names the dummy for level `l`.
    Factor { name: String, labels: Vec<String> },
    /// Real-valued column entering the design as is.
    Numeric { name: String },
}

impl Covariate {
    pub fn factor(name: &str, labels: &[&str]) -> Self {
        Covariate::Factor {
            name: name.to_string(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn numeric(name: &str) -> Self {
        Covariate::Numeric { name: name.to_string() }
    }

    pub fn name(&self) -> &str {
        match self {
            Covariate::Factor { name, .. } | Covariate::Numeric { name } => name,
        }
    }

    /// Number of design columns this covariate contributes.
    pub fn width(&self) -> usize {
        match self {
            Covariate::Factor { labels, .. } => labels.len(),
            Covariate::Numeric { .. } => 1,
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        match self {
            Covariate::Factor { labels, .. } => labels.clone(),
            Covariate::Numeric { name } => vec![name.clone()],
        }
    }
}

/// Declares how raw rows are turned into a design.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSchema {
    pub covariates: Vec<Covariate>,
    /// Number of interaction levels (values of `level` are `0..num_levels`).
    pub num_levels: usize,
    /// Number of groups; inferred from the largest group id when `None`.
    pub num_groups: Option<usize>,
}

impl DatasetSchema {
    /// area (rural/urban), religion (hindu/muslim/christian), education
    /// (low/medium/high), three levels of number of children.
    pub fn contraceptive_survey() -> Self {
        Self {
            covariates: vec![
                Covariate::factor("area", &["urb"]),
                Covariate::factor("relig", &["musl", "chri"]),
                Covariate::factor("educ", &["med", "high"]),
            ],
            num_levels: 3,
            num_groups: None,
        }
    }

    pub fn design_width(&self) -> usize {
        self.covariates.iter().map(Covariate::width).sum()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.covariates.iter().flat_map(Covariate::column_names).collect()
    }
}

/// An input row before encoding. Groups are 1-based, as in the input files.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub y: f64,
    pub group: usize,
    pub age: f64,
    pub level: usize,
    pub covariates: Vec<f64>,
}

/// One encoded observation. `group` is 0-based and `age` is the grid key.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: u8,
    pub group: usize,
    pub age: f64,
    pub level: usize,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    schema: DatasetSchema,
    num_groups: usize,
    grids: Vec<Vec<f64>>,
    grid_index: Vec<usize>,
    group_members: Vec<Vec<usize>>,
    cell_members: Vec<Vec<Vec<usize>>>,
}

/// Functional covariate values are keyed by integer years.
pub fn grid_key(age: f64) -> f64 {
    age.round()
}

fn encode_row(row: &RawRow, schema: &DatasetSchema, line: usize) -> Result<Vec<f64>> {
    if row.covariates.len() != schema.covariates.len() {
        return Err(Error::schema(
            Some(line),
            format!(
                "expected {} covariate values, found {}",
                schema.covariates.len(),
                row.covariates.len()
            ),
        ));
    }
    let mut x = Vec::with_capacity(schema.design_width());
    for (cov, &value) in schema.covariates.iter().zip(&row.covariates) {
        if !value.is_finite() {
            return Err(Error::schema(Some(line), format!("missing value for {}", cov.name())));
        }
        match cov {
            Covariate::Factor { name, labels } => {
                if value.fract() != 0.0 || value < 0.0 || value > labels.len() as f64 {
                    return Err(Error::schema(
                        Some(line),
                        format!("unknown level {value} of factor {name}"),
                    ));
                }
                let level = value as usize;
                x.extend((1..=labels.len()).map(|l| if l == level { 1.0 } else { 0.0 }));
            }
            Covariate::Numeric { .. } => x.push(value),
        }
    }
    Ok(x)
}

/// Validate and encode raw rows. Row numbers in errors are 1-based.
pub fn build_dataset(rows: &[RawRow], schema: &DatasetSchema) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::schema(None, "no observations"));
    }
    if schema.num_levels == 0 {
        return Err(Error::schema(None, "at least one interaction level is required"));
    }
    let max_group = rows.iter().map(|r| r.group).max().unwrap_or(0);
    let num_groups = schema.num_groups.unwrap_or(max_group);

    let mut observations = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let line = i + 1;
        let y = match row.y {
            0.0 => 0,
            1.0 => 1,
            v => return Err(Error::schema(Some(line), format!("response {v} is not binary"))),
        };
        if row.group == 0 || row.group > num_groups {
            return Err(Error::schema(
                Some(line),
                format!("group id {} outside 1..={num_groups}", row.group),
            ));
        }
        if row.level >= schema.num_levels {
            return Err(Error::schema(
                Some(line),
                format!("level {} outside 0..{}", row.level, schema.num_levels),
            ));
        }
        if !row.age.is_finite() {
            return Err(Error::schema(Some(line), "missing functional covariate"));
        }
        let x = encode_row(row, schema, line)?;
        observations.push(Observation {
            y,
            group: row.group - 1,
            age: grid_key(row.age),
            level: row.level,
            x,
        });
    }
    Ok(Dataset::index(observations, schema.clone(), num_groups))
}

impl Dataset {
    /// Build index structures over already-encoded observations.
    fn index(observations: Vec<Observation>, schema: DatasetSchema, num_groups: usize) -> Self {
        let mut grids = vec![Vec::new(); schema.num_levels];
        for obs in &observations {
            grids[obs.level].push(obs.age);
        }
        for grid in &mut grids {
            grid.sort_by(f64::total_cmp);
            grid.dedup();
        }
        let mut grid_index = Vec::with_capacity(observations.len());
        let mut group_members = vec![Vec::new(); num_groups];
        let mut cell_members: Vec<Vec<Vec<usize>>> =
            grids.iter().map(|g| vec![Vec::new(); g.len()]).collect();
        for (i, obs) in observations.iter().enumerate() {
            let cell = grids[obs.level]
                .binary_search_by(|a| a.total_cmp(&obs.age))
                .expect("every age is on its level's grid");
            grid_index.push(cell);
            group_members[obs.group].push(i);
            cell_members[obs.level][cell].push(i);
        }
        Self { observations, schema, num_groups, grids, grid_index, group_members, cell_members }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn observation(&self, index: usize) -> Result<&Observation> {
        self.observations
            .get(index)
            .ok_or(Error::IndexOutOfRange { index, len: self.observations.len() })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn num_levels(&self) -> usize {
        self.schema.num_levels
    }

    /// Number of fixed-effect design columns.
    pub fn design_width(&self) -> usize {
        self.schema.design_width()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.schema.column_names()
    }

    /// Sorted distinct functional-covariate values observed at `level`.
    pub fn grid(&self, level: usize) -> &[f64] {
        &self.grids[level]
    }

    pub fn grids(&self) -> &[Vec<f64>] {
        &self.grids
    }

    /// Position of observation `index` on its level's grid.
    pub fn grid_index(&self, index: usize) -> usize {
        self.grid_index[index]
    }

    pub fn group_members(&self, group: usize) -> &[usize] {
        &self.group_members[group]
    }

    /// Observations sharing `level` and the `cell`-th grid value.
    pub fn cell_members(&self, level: usize, cell: usize) -> &[usize] {
        &self.cell_members[level][cell]
    }

    /// Copy of the dataset with responses replaced; grids are unchanged.
    pub fn with_responses(&self, y: &[u8]) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} responses for {} observations",
                y.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        for (obs, &v) in out.observations.iter_mut().zip(y) {
            if v > 1 {
                return Err(Error::invalid(format!("response {v} is not binary")));
            }
            obs.y = v;
        }
        Ok(out)
    }

    /// Inverse of [`build_dataset`] for the stored schema.
    pub fn to_raw_rows(&self) -> Vec<RawRow> {
        self.observations
            .iter()
            .map(|obs| {
                let mut covariates = Vec::with_capacity(self.schema.covariates.len());
                let mut offset = 0;
                for cov in &self.schema.covariates {
                    let width = cov.width();
                    let cols = &obs.x[offset..offset + width];
                    let value = match cov {
                        Covariate::Factor { .. } => cols
                            .iter()
                            .position(|&v| v == 1.0)
                            .map_or(0.0, |p| (p + 1) as f64),
                        Covariate::Numeric { .. } => cols[0],
                    };
                    covariates.push(value);
                    offset += width;
                }
                RawRow {
                    y: obs.y as f64,
                    group: obs.group + 1,
                    age: obs.age,
                    level: obs.level,
                    covariates,
                }
            })
            .collect()
    }

    /// SHA-256 over a canonical text rendering of the observations.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("groups={};levels={}\n", self.num_groups, self.num_levels()));
        hasher.update(self.column_names().join(","));
        hasher.update("\n");
        for obs in &self.observations {
            let x: Vec<String> = obs.x.iter().map(|v| v.to_string()).collect();
            hasher.update(format!(
                "{},{},{},{},{}\n",
                obs.y,
                obs.group + 1,
                obs.age,
                obs.level,
                x.join(",")
            ));
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(y: f64, group: usize, age: f64, level: usize, cov: [f64; 3]) -> RawRow {
        RawRow { y, group, age, level, covariates: cov.to_vec() }
    }

    fn survey() -> DatasetSchema {
        DatasetSchema::contraceptive_survey()
    }

    #[test]
    fn baseline_levels_are_dropped() {
        let ds = build_dataset(&[row(1.0, 1, 30.0, 0, [0.0, 0.0, 0.0])], &survey()).unwrap();
        assert_eq!(ds.observations()[0].x, vec![0.0; 5]);
    }

    #[test]
    fn indicator_coding() {
        let ds = build_dataset(&[row(0.0, 1, 30.0, 0, [1.0, 2.0, 1.0])], &survey()).unwrap();
        assert_eq!(ds.observations()[0].x, vec![1.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(ds.column_names(), ["urb", "musl", "chri", "med", "high"]);
    }

    #[test]
    fn shared_age_shares_grid_cell() {
        let rows = [
            row(0.0, 1, 25.0, 1, [0.0; 3]),
            row(1.0, 2, 31.0, 1, [0.0; 3]),
            row(1.0, 2, 25.0, 1, [0.0; 3]),
            row(1.0, 2, 25.0, 0, [0.0; 3]),
        ];
        let ds = build_dataset(&rows, &survey()).unwrap();
        assert_eq!(ds.grid(1), &[25.0, 31.0]);
        assert_eq!(ds.grid_index(0), ds.grid_index(2));
        assert_eq!(ds.grid(0), &[25.0]);
        assert!(ds.grid(2).is_empty());
        assert_eq!(ds.cell_members(1, 0), &[0, 2]);
        assert_eq!(ds.group_members(1), &[1, 2, 3]);
    }

    #[test]
    fn ages_are_rounded_to_years() {
        let rows = [row(0.0, 1, 25.4, 0, [0.0; 3]), row(0.0, 1, 24.6, 0, [0.0; 3])];
        let ds = build_dataset(&rows, &survey()).unwrap();
        assert_eq!(ds.grid(0), &[25.0]);
    }

    #[test]
    fn schema_errors() {
        let s = survey();
        assert!(matches!(build_dataset(&[], &s), Err(Error::Schema { row: None, .. })));
        let bad_y = [row(0.0, 1, 20.0, 0, [0.0; 3]), row(2.0, 1, 20.0, 0, [0.0; 3])];
        assert!(matches!(build_dataset(&bad_y, &s), Err(Error::Schema { row: Some(2), .. })));
        let bad_level = [row(0.0, 1, 20.0, 0, [0.0, 3.0, 0.0])];
        assert!(matches!(build_dataset(&bad_level, &s), Err(Error::Schema { row: Some(1), .. })));
        let missing = [row(0.0, 1, 20.0, 0, [f64::NAN, 0.0, 0.0])];
        assert!(build_dataset(&missing, &s).is_err());
        let bad_child = [row(0.0, 1, 20.0, 3, [0.0; 3])];
        assert!(build_dataset(&bad_child, &s).is_err());
        let no_group = [row(0.0, 0, 20.0, 0, [0.0; 3])];
        assert!(build_dataset(&no_group, &s).is_err());
    }

    fn arb_row() -> impl Strategy<Value = RawRow> {
        (0u8..2, 1usize..6, 15u32..50, 0usize..3, 0u8..2, 0u8..3, 0u8..3).prop_map(
            |(y, g, age, lvl, a, r, e)| row(y as f64, g, age as f64, lvl, [a as f64, r as f64, e as f64]),
        )
    }

    proptest! {
        #[test]
        fn raw_rows_round_trip(rows in prop::collection::vec(arb_row(), 1..60)) {
            let ds = build_dataset(&rows, &survey()).unwrap();
            let again = build_dataset(&ds.to_raw_rows(), &survey()).unwrap();
            prop_assert_eq!(&ds, &again);
            prop_assert_eq!(ds.to_raw_rows(), rows);
        }

        #[test]
        fn grids_sorted_unique_and_cover(rows in prop::collection::vec(arb_row(), 1..60)) {
            let ds = build_dataset(&rows, &survey()).unwrap();
            for grid in ds.grids() {
                prop_assert!(grid.windows(2).all(|w| w[0] < w[1]));
            }
            let total: usize = (0..ds.num_groups()).map(|g| ds.group_members(g).len()).sum();
            prop_assert_eq!(total, ds.len());
            for (i, obs) in ds.observations().iter().enumerate() {
                prop_assert_eq!(ds.grid(obs.level)[ds.grid_index(i)], obs.age);
            }
        }
    }
}
