//! Panel data model: long-format CSV ingestion into dense unit-by-time
//! matrices, treatment arm schemes, and arm relabeling.
//!
//! A `PanelDataset` stores one outcome, one integer treatment code, and `k`
//! time-varying covariates per (unit, time) cell, plus `k0` time-invariant
//! baseline covariates per unit. Storage is dense: every unit is observed at
//! every time.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};

/// Measurement-window metadata carried alongside a dataset (durations in
/// days). Purely descriptive: loaders and estimators never consult it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    /// Length of the treatment measurement window.
    pub lambda_w: f64,
    /// Length of the outcome measurement window.
    pub lambda_y: f64,
    /// Gap between the two windows.
    pub gap: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { lambda_w: 1.0, lambda_y: 7.0, gap: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmKind {
    /// Codes {0, 1}: control / treated.
    Binary,
    /// Codes {1, 2, 3}: absent / engaged-without-acting / engaged-and-acted.
    /// Code 1 is the reference arm.
    ThreeArm,
}

/// Treatment coding plus the contrast pair (treated code, control code)
/// estimators should report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmScheme {
    kind: ArmKind,
    contrast: (i64, i64),
}

const BINARY_CODES: [i64; 2] = [0, 1];
const THREE_ARM_CODES: [i64; 3] = [1, 2, 3];

impl ArmScheme {
    pub fn binary() -> Self {
        ArmScheme { kind: ArmKind::Binary, contrast: (1, 0) }
    }

    pub fn three_arm(contrast: (i64, i64)) -> Result<Self> {
        ArmScheme { kind: ArmKind::ThreeArm, contrast: (3, 1) }.with_contrast(contrast)
    }

    pub fn with_contrast(self, contrast: (i64, i64)) -> Result<Self> {
        if contrast.0 == contrast.1 {
            return Err(Error::InvalidInput(format!(
                "contrast arms must differ, got ({}, {})",
                contrast.0, contrast.1
            )));
        }
        for code in [contrast.0, contrast.1] {
            if !self.codes().contains(&code) {
                return Err(Error::InvalidInput(format!(
                    "contrast code {code} is not a member of the arm scheme"
                )));
            }
        }
        Ok(ArmScheme { kind: self.kind, contrast })
    }

    pub fn kind(&self) -> ArmKind {
        self.kind
    }

    pub fn codes(&self) -> &'static [i64] {
        match self.kind {
            ArmKind::Binary => &BINARY_CODES,
            ArmKind::ThreeArm => &THREE_ARM_CODES,
        }
    }

    /// Reference arm: the lowest code. Indicator regressors are built for
    /// every other code.
    pub fn baseline_code(&self) -> i64 {
        self.codes()[0]
    }

    pub fn contrast(&self) -> (i64, i64) {
        self.contrast
    }

    pub fn treated_code(&self) -> i64 {
        self.contrast.0
    }

    pub fn control_code(&self) -> i64 {
        self.contrast.1
    }

    pub fn is_valid_code(&self, code: i64) -> bool {
        self.codes().contains(&code)
    }

    fn from_codes(codes: &BTreeSet<i64>, contrast: (i64, i64)) -> Result<Self> {
        let as_vec: Vec<i64> = codes.iter().copied().collect();
        let kind = if as_vec == BINARY_CODES {
            ArmKind::Binary
        } else if as_vec == THREE_ARM_CODES {
            ArmKind::ThreeArm
        } else {
            return Err(Error::InvalidInput(format!(
                "codes {as_vec:?} form neither a binary {{0,1}} nor a three-arm {{1,2,3}} scheme"
            )));
        };
        ArmScheme { kind, contrast: (0, 0) }.with_contrast(contrast)
    }
}

/// Column-name mapping used by [`load_panel`], plus the arm scheme and
/// window metadata to attach to the loaded dataset. Any panel column not
/// mapped here is read as a time-varying covariate; any baseline column
/// other than the unit id is read as a baseline covariate.
#[derive(Debug, Clone)]
pub struct PanelSchema {
    pub unit_id: String,
    pub time: String,
    pub outcome: String,
    pub treatment: String,
    pub arm_scheme: ArmScheme,
    pub window: WindowConfig,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            unit_id: "unit_id".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            treatment: "treatment".into(),
            arm_scheme: ArmScheme::binary(),
            window: WindowConfig::default(),
        }
    }
}

/// Raw building blocks for [`PanelDataset::from_parts`].
///
/// `outcome` and `treatment` are unit-major `n_units * n_times` vectors;
/// `covariates` is `n_units * n_times * k` with the `k` covariates of a cell
/// contiguous; `baseline` is `n_units * k0`.
#[derive(Debug, Clone)]
pub struct PanelParts {
    pub unit_ids: Vec<String>,
    pub times: Vec<i64>,
    pub outcome: Vec<f64>,
    pub treatment: Vec<i64>,
    pub covariate_names: Vec<String>,
    pub covariates: Vec<f64>,
    pub baseline_names: Vec<String>,
    pub baseline: Vec<f64>,
    pub arm_scheme: ArmScheme,
    pub window: WindowConfig,
}

/// Dense panel of `n_units` units observed at `n_times` ordered times.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    times: Vec<i64>,
    outcome: Vec<f64>,
    treatment: Vec<i64>,
    covariate_names: Vec<String>,
    covariates: Vec<f64>,
    baseline_names: Vec<String>,
    baseline: Vec<f64>,
    arm_scheme: ArmScheme,
    window: WindowConfig,
}

impl PanelDataset {
    pub fn from_parts(parts: PanelParts) -> Result<Self> {
        let n = parts.unit_ids.len();
        let t = parts.times.len();
        let k = parts.covariate_names.len();
        let k0 = parts.baseline_names.len();
        if n == 0 {
            return Err(Error::InvalidInput("panel has no units".into()));
        }
        if t == 0 {
            return Err(Error::InvalidInput("panel has no time points".into()));
        }
        if !parts.times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("times must be strictly increasing".into()));
        }
        if parts.outcome.len() != n * t || parts.treatment.len() != n * t {
            return Err(Error::InvalidInput("outcome/treatment length must be n_units * n_times".into()));
        }
        if parts.covariates.len() != n * t * k {
            return Err(Error::InvalidInput("covariate length must be n_units * n_times * k".into()));
        }
        if parts.baseline.len() != n * k0 {
            return Err(Error::InvalidInput("baseline length must be n_units * k0".into()));
        }
        let mut seen = BTreeSet::new();
        for name in parts.covariate_names.iter().chain(parts.baseline_names.iter()) {
            if !seen.insert(name.clone()) {
                return Err(Error::SchemaMismatch(format!("duplicate covariate column `{name}`")));
            }
        }
        let mut seen_units = BTreeSet::new();
        for u in &parts.unit_ids {
            if !seen_units.insert(u.clone()) {
                return Err(Error::InvalidInput(format!("duplicate unit id `{u}`")));
            }
        }
        for (idx, w) in parts.treatment.iter().enumerate() {
            if !parts.arm_scheme.is_valid_code(*w) {
                return Err(Error::UnknownArmCode {
                    code: *w,
                    unit: parts.unit_ids[idx / t].clone(),
                    time: parts.times[idx % t],
                });
            }
        }
        for v in parts.outcome.iter().chain(parts.covariates.iter()).chain(parts.baseline.iter()) {
            if !v.is_finite() {
                return Err(Error::InvalidInput("non-finite value in panel data".into()));
            }
        }
        Ok(PanelDataset {
            unit_ids: parts.unit_ids,
            times: parts.times,
            outcome: parts.outcome,
            treatment: parts.treatment,
            covariate_names: parts.covariate_names,
            covariates: parts.covariates,
            baseline_names: parts.baseline_names,
            baseline: parts.baseline,
            arm_scheme: parts.arm_scheme,
            window: parts.window,
        })
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_baseline(&self) -> usize {
        self.baseline_names.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn baseline_names(&self) -> &[String] {
        &self.baseline_names
    }

    pub fn arm_scheme(&self) -> ArmScheme {
        self.arm_scheme
    }

    pub fn window(&self) -> WindowConfig {
        self.window
    }

    #[inline]
    fn cell(&self, i: usize, t: usize) -> usize {
        i * self.times.len() + t
    }

    #[inline]
    pub fn outcome(&self, i: usize, t: usize) -> f64 {
        self.outcome[self.cell(i, t)]
    }

    #[inline]
    pub fn treatment(&self, i: usize, t: usize) -> i64 {
        self.treatment[self.cell(i, t)]
    }

    #[inline]
    pub fn covariate(&self, i: usize, t: usize, k: usize) -> f64 {
        self.covariates[self.cell(i, t) * self.covariate_names.len() + k]
    }

    #[inline]
    pub fn baseline(&self, i: usize, k: usize) -> f64 {
        self.baseline[i * self.baseline_names.len() + k]
    }

    /// 1.0 where the cell carries the contrast's treated code, else 0.0.
    #[inline]
    pub fn treated_indicator(&self, i: usize, t: usize) -> f64 {
        if self.treatment(i, t) == self.arm_scheme.treated_code() {
            1.0
        } else {
            0.0
        }
    }

    /// Outcome cross-section at time index `t`.
    pub fn outcome_at(&self, t: usize) -> Vec<f64> {
        (0..self.n_units()).map(|i| self.outcome(i, t)).collect()
    }

    /// Treated/other indicator cross-section at time index `t`.
    pub fn treated_at(&self, t: usize) -> Vec<u8> {
        (0..self.n_units())
            .map(|i| (self.treatment(i, t) == self.arm_scheme.treated_code()) as u8)
            .collect()
    }

    /// Row-major `n_units x k` covariate cross-section at time index `t`.
    pub fn covariates_at(&self, t: usize) -> Vec<f64> {
        let k = self.n_covariates();
        let mut out = Vec::with_capacity(self.n_units() * k);
        for i in 0..self.n_units() {
            for kk in 0..k {
                out.push(self.covariate(i, t, kk));
            }
        }
        out
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn baseline_index(&self, name: &str) -> Option<usize> {
        self.baseline_names.iter().position(|c| c == name)
    }

    /// Unit-major flattened treated indicator over all cells.
    pub fn treated_indicator_matrix(&self) -> Vec<f64> {
        let t = self.n_times();
        (0..self.n_units() * t)
            .map(|c| (self.treatment[c] == self.arm_scheme.treated_code()) as u8 as f64)
            .collect()
    }

    /// Per-unit string labels derived from a baseline column (distinct
    /// values become labels). Intended for coarse subgroup analyses.
    pub fn subgroup_labels_from_baseline(&self, column: &str) -> Result<Vec<String>> {
        let k = self
            .baseline_index(column)
            .ok_or_else(|| Error::SchemaMismatch(format!("no baseline column `{column}`")))?;
        Ok((0..self.n_units())
            .map(|i| format!("{}", self.baseline(i, k)))
            .collect())
    }

    /// Copy of the dataset restricted to `keep` (ascending unit indices).
    pub fn subset_units(&self, keep: &[usize]) -> Result<PanelDataset> {
        if keep.is_empty() {
            return Err(Error::InvalidInput("unit subset is empty".into()));
        }
        if !keep.windows(2).all(|w| w[0] < w[1]) || *keep.last().unwrap() >= self.n_units() {
            return Err(Error::InvalidInput("unit subset must be ascending and in range".into()));
        }
        let t = self.n_times();
        let k = self.n_covariates();
        let k0 = self.n_baseline();
        let mut parts = PanelParts {
            unit_ids: Vec::with_capacity(keep.len()),
            times: self.times.clone(),
            outcome: Vec::with_capacity(keep.len() * t),
            treatment: Vec::with_capacity(keep.len() * t),
            covariate_names: self.covariate_names.clone(),
            covariates: Vec::with_capacity(keep.len() * t * k),
            baseline_names: self.baseline_names.clone(),
            baseline: Vec::with_capacity(keep.len() * k0),
            arm_scheme: self.arm_scheme,
            window: self.window,
        };
        for &i in keep {
            parts.unit_ids.push(self.unit_ids[i].clone());
            let row = self.cell(i, 0);
            parts.outcome.extend_from_slice(&self.outcome[row..row + t]);
            parts.treatment.extend_from_slice(&self.treatment[row..row + t]);
            parts
                .covariates
                .extend_from_slice(&self.covariates[row * k..(row + t) * k]);
            parts
                .baseline
                .extend_from_slice(&self.baseline[i * k0..(i + 1) * k0]);
        }
        PanelDataset::from_parts(parts)
    }

    /// Rewrites treatment codes through `mapping` and derives the implied
    /// arm scheme. The mapping must cover every observed code, and its image
    /// must again form a valid scheme; the contrast pair is carried through
    /// the mapping.
    pub fn relabel_arms(&self, mapping: &BTreeMap<i64, i64>) -> Result<PanelDataset> {
        let observed: BTreeSet<i64> = self.treatment.iter().copied().collect();
        for code in &observed {
            if !mapping.contains_key(code) {
                return Err(Error::PartialMapping(*code));
            }
        }
        let image: BTreeSet<i64> = self
            .arm_scheme
            .codes()
            .iter()
            .filter_map(|c| mapping.get(c).copied())
            .collect();
        let old = self.arm_scheme.contrast();
        let new_contrast = (
            *mapping.get(&old.0).ok_or(Error::PartialMapping(old.0))?,
            *mapping.get(&old.1).ok_or(Error::PartialMapping(old.1))?,
        );
        let scheme = ArmScheme::from_codes(&image, new_contrast)?;
        let treatment = self.treatment.iter().map(|c| mapping[c]).collect();
        PanelDataset::from_parts(PanelParts {
            unit_ids: self.unit_ids.clone(),
            times: self.times.clone(),
            outcome: self.outcome.clone(),
            treatment,
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.clone(),
            baseline_names: self.baseline_names.clone(),
            baseline: self.baseline.clone(),
            arm_scheme: scheme,
            window: self.window,
        })
    }
}

/// Loads a long-format panel CSV plus a baseline CSV into a dense dataset.
///
/// The panel file must provide the four mapped columns; every remaining
/// column is a time-varying covariate. The baseline file must provide the
/// unit-id column; every remaining column is a baseline covariate. Every
/// unit must appear in the baseline file and at every time observed in the
/// panel, exactly once.
pub fn load_panel(
    panel_path: impl AsRef<Path>,
    baseline_path: impl AsRef<Path>,
    schema: &PanelSchema,
) -> Result<PanelDataset> {
    let mut base_reader = csv::Reader::from_path(baseline_path.as_ref())?;
    let base_headers: Vec<String> =
        base_reader.headers()?.iter().map(|h| h.to_string()).collect();
    let base_unit_col = base_headers
        .iter()
        .position(|h| *h == schema.unit_id)
        .ok_or_else(|| {
            Error::SchemaMismatch(format!("baseline file lacks column `{}`", schema.unit_id))
        })?;
    let baseline_names: Vec<String> = base_headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != base_unit_col)
        .map(|(_, h)| h.clone())
        .collect();
    let mut baseline_rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (line, record) in base_reader.records().enumerate() {
        let record = record?;
        let unit = record
            .get(base_unit_col)
            .ok_or_else(|| Error::SchemaMismatch(format!("baseline row {} too short", line + 2)))?
            .to_string();
        let mut vals = Vec::with_capacity(baseline_names.len());
        for (i, field) in record.iter().enumerate() {
            if i == base_unit_col {
                continue;
            }
            vals.push(parse_f64(field, &base_headers[i], line + 2)?);
        }
        if baseline_rows.insert(unit.clone(), vals).is_some() {
            return Err(Error::DuplicateRow { unit, time: i64::MIN });
        }
    }

    let mut reader = csv::Reader::from_path(panel_path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("panel file lacks column `{name}`")))
    };
    let unit_col = col(&schema.unit_id)?;
    let time_col = col(&schema.time)?;
    let outcome_col = col(&schema.outcome)?;
    let treatment_col = col(&schema.treatment)?;
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|i| ![unit_col, time_col, outcome_col, treatment_col].contains(i))
        .collect();
    let covariate_names: Vec<String> =
        covariate_cols.iter().map(|&i| headers[i].clone()).collect();

    struct RawRow {
        unit: String,
        time: i64,
        outcome: f64,
        treatment: i64,
        covariates: Vec<f64>,
    }
    let mut rows: Vec<RawRow> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::SchemaMismatch(format!("panel row {} too short", line + 2)))
        };
        let unit = field(unit_col)?.to_string();
        let time = parse_i64(field(time_col)?, &schema.time, line + 2)?;
        let outcome = parse_f64(field(outcome_col)?, &schema.outcome, line + 2)?;
        let treatment = parse_i64(field(treatment_col)?, &schema.treatment, line + 2)?;
        let mut covariates = Vec::with_capacity(covariate_cols.len());
        for &c in &covariate_cols {
            covariates.push(parse_f64(field(c)?, &headers[c], line + 2)?);
        }
        rows.push(RawRow { unit, time, outcome, treatment, covariates });
    }
    if rows.is_empty() {
        return Err(Error::SchemaMismatch("panel file has no data rows".into()));
    }

    let unit_ids: Vec<String> = rows
        .iter()
        .map(|r| r.unit.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let times: Vec<i64> = rows
        .iter()
        .map(|r| r.time)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for u in &unit_ids {
        if !baseline_rows.contains_key(u) {
            return Err(Error::UnknownUnit(format!("{u} (present in panel, missing from baseline)")));
        }
    }
    let unit_index: BTreeMap<&str, usize> =
        unit_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let time_index: BTreeMap<i64, usize> =
        times.iter().enumerate().map(|(i, t)| (*t, i)).collect();

    let n = unit_ids.len();
    let t = times.len();
    let k = covariate_names.len();
    let mut outcome = vec![0.0; n * t];
    let mut treatment = vec![i64::MIN; n * t];
    let mut covariates = vec![0.0; n * t * k];
    let mut filled = vec![false; n * t];
    for row in rows {
        let i = unit_index[row.unit.as_str()];
        let ti = time_index[&row.time];
        let cell = i * t + ti;
        if filled[cell] {
            return Err(Error::DuplicateRow { unit: row.unit, time: row.time });
        }
        filled[cell] = true;
        if !schema.arm_scheme.is_valid_code(row.treatment) {
            return Err(Error::UnknownArmCode { code: row.treatment, unit: row.unit, time: row.time });
        }
        outcome[cell] = row.outcome;
        treatment[cell] = row.treatment;
        covariates[cell * k..(cell + 1) * k].copy_from_slice(&row.covariates);
    }
    for i in 0..n {
        for ti in 0..t {
            if !filled[i * t + ti] {
                return Err(Error::MissingCell { unit: unit_ids[i].clone(), time: times[ti] });
            }
        }
    }

    let mut baseline = Vec::with_capacity(n * baseline_names.len());
    for u in &unit_ids {
        baseline.extend_from_slice(&baseline_rows[u]);
    }

    PanelDataset::from_parts(PanelParts {
        unit_ids,
        times,
        outcome,
        treatment,
        covariate_names,
        covariates,
        baseline_names,
        baseline,
        arm_scheme: schema.arm_scheme,
        window: schema.window,
    })
}

/// Writes `panel.csv`-style and `baseline.csv`-style files that
/// [`load_panel`] reads back into an equal dataset.
pub fn write_panel(
    ds: &PanelDataset,
    panel_path: impl AsRef<Path>,
    baseline_path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(panel_path.as_ref())?;
    let mut header = vec![
        "unit_id".to_string(),
        "time".to_string(),
        "outcome".to_string(),
        "treatment".to_string(),
    ];
    header.extend(ds.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..ds.n_units() {
        for t in 0..ds.n_times() {
            let mut record = vec![
                ds.unit_ids()[i].clone(),
                ds.times()[t].to_string(),
                format!("{}", ds.outcome(i, t)),
                ds.treatment(i, t).to_string(),
            ];
            for k in 0..ds.n_covariates() {
                record.push(format!("{}", ds.covariate(i, t, k)));
            }
            w.write_record(&record)?;
        }
    }
    w.flush()?;

    let mut b = csv::Writer::from_path(baseline_path.as_ref())?;
    let mut header = vec!["unit_id".to_string()];
    header.extend(ds.baseline_names().iter().cloned());
    b.write_record(&header)?;
    for i in 0..ds.n_units() {
        let mut record = vec![ds.unit_ids()[i].clone()];
        for k in 0..ds.n_baseline() {
            record.push(format!("{}", ds.baseline(i, k)));
        }
        b.write_record(&record)?;
    }
    b.flush()?;
    Ok(())
}

fn parse_f64(field: &str, column: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::SchemaMismatch(format!("column `{column}` line {line}: `{field}` is not a number"))
    })
}

fn parse_i64(field: &str, column: &str, line: usize) -> Result<i64> {
    field.trim().parse::<i64>().map_err(|_| {
        Error::SchemaMismatch(format!("column `{column}` line {line}: `{field}` is not an integer"))
    })
}
