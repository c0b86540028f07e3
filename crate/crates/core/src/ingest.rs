//! Unit-level dataset: loading, validation, target scaling and a seeded
//! synthetic generator.
//!
//! Record order in the input file is the canonical unit index used by every
//! vector and matrix downstream.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` has invalid category `{value}`")]
    BadCategory {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: column `{column}` is not a number: `{value}`")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: target {value} outside [0, 100]")]
    TargetOutOfRange { row: usize, value: f64 },
    #[error("duplicate unit id `{0}`")]
    DuplicateUnitId(String),
    #[error("invalid indicator spec: {0}")]
    InvalidSpec(String),
    #[error("need at least {need} units, got {got}")]
    TooFewUnits { need: usize, got: usize },
}

/// One of the five categorical territorial attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Attribute {
    Alt,
    Pop,
    Sup,
    Clito,
    Degurb,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Alt,
        Attribute::Pop,
        Attribute::Sup,
        Attribute::Clito,
        Attribute::Degurb,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Attribute::Alt => "ALT",
            Attribute::Pop => "POP",
            Attribute::Sup => "SUP",
            Attribute::Clito => "CLITO",
            Attribute::Degurb => "DEGURB",
        }
    }

    /// Admissible codes, in ascending order.
    pub fn codes(self) -> &'static [u8] {
        match self {
            Attribute::Clito => &[0, 1],
            _ => &[1, 2, 3],
        }
    }

    fn position(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl std::str::FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.column().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown attribute `{s}`"))
    }
}

/// Categorical profile (ALT, POP, SUP, CLITO, DEGURB).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Profile(pub [u8; 5]);

impl Profile {
    pub fn get(&self, attr: Attribute) -> u8 {
        self.0[attr.position()]
    }

    pub fn is_valid(&self) -> bool {
        Attribute::ALL
            .iter()
            .all(|a| a.codes().contains(&self.get(*a)))
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e] = self.0;
        write!(f, "{a}-{b}-{c}-{d}-{e}")
    }
}

/// Descriptive centre/periphery label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CenterPeriph {
    CentrHub,
    PeriphArea,
}

impl CenterPeriph {
    pub fn label(self) -> &'static str {
        match self {
            CenterPeriph::CentrHub => "CentrHub",
            CenterPeriph::PeriphArea => "PeriphArea",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "centrhub" | "centralhub" | "c" => Some(CenterPeriph::CentrHub),
            "peripharea" | "peripheralarea" | "p" => Some(CenterPeriph::PeriphArea),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit_id: String,
    pub profile: Profile,
    pub indicators: BTreeMap<String, f64>,
    /// Observed outcome, percent in [0, 100].
    pub target_observed: f64,
    pub center_periph: Option<CenterPeriph>,
}

/// A base indicator: its column name, polarity (+1/-1), and the composite
/// index it feeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub name: String,
    pub polarity: i8,
    pub group: String,
}

impl IndicatorSpec {
    pub fn new(name: &str, polarity: i8, group: &str) -> Self {
        Self {
            name: name.to_owned(),
            polarity,
            group: group.to_owned(),
        }
    }
}

/// Validates polarities, name uniqueness and non-empty groups.
pub fn validate_spec(spec: &[IndicatorSpec]) -> Result<(), IngestError> {
    if spec.is_empty() {
        return Err(IngestError::InvalidSpec("no indicators".into()));
    }
    let mut seen = HashSet::new();
    for ind in spec {
        if ind.polarity != 1 && ind.polarity != -1 {
            return Err(IngestError::InvalidSpec(format!(
                "indicator `{}` has polarity {}",
                ind.name, ind.polarity
            )));
        }
        if ind.group.trim().is_empty() {
            return Err(IngestError::InvalidSpec(format!(
                "indicator `{}` has no group",
                ind.name
            )));
        }
        if !seen.insert(ind.name.as_str()) {
            return Err(IngestError::InvalidSpec(format!(
                "indicator `{}` listed twice",
                ind.name
            )));
        }
    }
    Ok(())
}

/// Distinct group labels in sorted order (MPI1 < MPI2 < ...).
pub fn group_labels(spec: &[IndicatorSpec]) -> Vec<String> {
    let mut groups: Vec<String> = spec.iter().map(|s| s.group.clone()).collect();
    groups.sort();
    groups.dedup();
    groups
}

/// The nineteen base indicators of the six demographic, cultural, economic,
/// employment, attractiveness and mobility composites.
pub fn default_indicator_spec() -> Vec<IndicatorSpec> {
    [
        ("PERC_ANZIANI", -1, "MPI1"),
        ("PERC_GIOVANI", 1, "MPI1"),
        ("PERC_FAMIGLIE_MINORI", 1, "MPI1"),
        ("PERC_FAM_UNIPERSONALI_ANZIANI", -1, "MPI1"),
        ("PERC_NEET", -1, "MPI2"),
        ("PERC_LAUREATI", 1, "MPI2"),
        ("PERC_DIPLOMATI", 1, "MPI2"),
        ("REDDITO_MEDIANO_EQUIVALENTE", 1, "MPI3"),
        ("PERC_WORKINGPOOR", -1, "MPI3"),
        ("PERC_PRECARI", -1, "MPI4"),
        ("PERC_OCCUPATI", 1, "MPI4"),
        ("PERC_FAM_BASSA_INTLAV", -1, "MPI4"),
        ("I_ATTRAZIONE", 1, "MPI5"),
        ("I_AUTOCONTENIMENTO", 1, "MPI5"),
        ("I_COESISTENZA", 1, "MPI5"),
        ("STA", -1, "MPI6"),
        ("D_INT", -1, "MPI6"),
        ("D_EST_USCITA", 1, "MPI6"),
        ("D_EST_ENTRATA", 1, "MPI6"),
    ]
    .into_iter()
    .map(|(n, p, g)| IndicatorSpec::new(n, p, g))
    .collect()
}

/// Domain in which the outcome enters a sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleDomain {
    /// `y ↦ 2y/100 − 1`, into [−1, +1].
    #[default]
    IsingScaled,
    /// Identity on [0, 100].
    RawPercent,
}

impl ScaleDomain {
    /// Percent → model domain.
    pub fn forward<S: Scalar>(self, percent: S) -> S {
        match self {
            ScaleDomain::IsingScaled => S::lit(2.0) * percent / S::lit(100.0) - S::one(),
            ScaleDomain::RawPercent => percent,
        }
    }

    /// Model domain → percent.
    pub fn inverse<S: Scalar>(self, value: S) -> S {
        match self {
            ScaleDomain::IsingScaled => (value + S::one()) * S::lit(50.0),
            ScaleDomain::RawPercent => value,
        }
    }

    /// Closed interval the configuration lives in.
    pub fn bounds<S: Scalar>(self) -> (S, S) {
        match self {
            ScaleDomain::IsingScaled => (-S::one(), S::one()),
            ScaleDomain::RawPercent => (S::zero(), S::lit(100.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<UnitRecord>,
    pub spec: Vec<IndicatorSpec>,
    pub scale_domain: ScaleDomain,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn unit_ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.unit_id.as_str()).collect()
    }

    /// Indicator column in canonical unit order.
    pub fn indicator_column(&self, name: &str) -> Option<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.indicators.get(name).copied())
            .collect()
    }

    /// Observed outcome in percent.
    pub fn target_percent<S: Scalar>(&self) -> Vec<S> {
        self.records
            .iter()
            .map(|r| S::lit(r.target_observed))
            .collect()
    }
}

/// Maps the observed outcome into a sampler domain (the reference
/// configuration).
pub fn scale_target<S: Scalar>(d: &Dataset, domain: ScaleDomain) -> Vec<S> {
    d.records
        .iter()
        .map(|r| domain.forward(S::lit(r.target_observed)))
        .collect()
}

/// Column names and delimiter for reading a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub delimiter: char,
    pub unit_id_column: String,
    pub target_column: String,
    /// Optional centre/periphery label column; missing column is tolerated.
    pub center_periph_column: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: ',',
            unit_id_column: "unit_id".into(),
            target_column: "PERC_STRANIERI".into(),
            center_periph_column: Some("TYPE".into()),
        }
    }
}

/// A loaded dataset plus the 1-based data-row numbers rejected for missing
/// values.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub rejected_rows: Vec<usize>,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    spec: &[IndicatorSpec],
    opts: &LoadOptions,
) -> Result<LoadReport, IngestError> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, spec, opts)
}

/// Reads delimited text with a mandatory header. Rows with any missing
/// required value are rejected; malformed present values are errors.
pub fn read_dataset<R: Read>(
    reader: R,
    spec: &[IndicatorSpec],
    opts: &LoadOptions,
) -> Result<LoadReport, IngestError> {
    validate_spec(spec)?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter as u8)
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_owned()))
    };

    let id_col = find(&opts.unit_id_column)?;
    let attr_cols: Vec<usize> = Attribute::ALL
        .iter()
        .map(|a| find(a.column()))
        .collect::<Result<_, _>>()?;
    let ind_cols: Vec<usize> = spec
        .iter()
        .map(|s| find(&s.name))
        .collect::<Result<_, _>>()?;
    let target_col = find(&opts.target_column)?;
    let cp_col = opts
        .center_periph_column
        .as_deref()
        .and_then(|c| headers.iter().position(|h| h == c));

    let mut records = Vec::new();
    let mut rejected_rows = Vec::new();
    let mut ids = HashSet::new();

    for (k, row) in rdr.records().enumerate() {
        let row_no = k + 1;
        let row = row?;
        let cell = |c: usize| row.get(c).unwrap_or("");

        let required = std::iter::once(id_col)
            .chain(attr_cols.iter().copied())
            .chain(ind_cols.iter().copied())
            .chain(std::iter::once(target_col));
        if required.clone().any(|c| is_missing(cell(c))) {
            rejected_rows.push(row_no);
            continue;
        }

        let mut codes = [0u8; 5];
        for (pos, (&attr, &c)) in Attribute::ALL.iter().zip(&attr_cols).enumerate() {
            let raw = cell(c).trim();
            let code = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= 255.0)
                .map(|v| v as u8)
                .filter(|v| attr.codes().contains(v));
            match code {
                Some(v) => codes[pos] = v,
                None => {
                    return Err(IngestError::BadCategory {
                        row: row_no,
                        column: attr.column().to_owned(),
                        value: raw.to_owned(),
                    })
                }
            }
        }

        let parse_num = |c: usize, column: &str| {
            let raw = cell(c).trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IngestError::BadNumber {
                    row: row_no,
                    column: column.to_owned(),
                    value: raw.to_owned(),
                })
        };

        let mut indicators = BTreeMap::new();
        for (s, &c) in spec.iter().zip(&ind_cols) {
            indicators.insert(s.name.clone(), parse_num(c, &s.name)?);
        }
        let target = parse_num(target_col, &opts.target_column)?;
        if !(0.0..=100.0).contains(&target) {
            return Err(IngestError::TargetOutOfRange {
                row: row_no,
                value: target,
            });
        }

        let unit_id = cell(id_col).trim().to_owned();
        if !ids.insert(unit_id.clone()) {
            return Err(IngestError::DuplicateUnitId(unit_id));
        }
        let center_periph = cp_col.and_then(|c| CenterPeriph::parse(cell(c)));

        records.push(UnitRecord {
            unit_id,
            profile: Profile(codes),
            indicators,
            target_observed: target,
            center_periph,
        });
    }

    Ok(LoadReport {
        dataset: Dataset {
            records,
            spec: spec.to_vec(),
            scale_domain: ScaleDomain::IsingScaled,
        },
        rejected_rows,
    })
}

/// Writes the dataset in the same layout `read_dataset` accepts.
pub fn write_dataset<W: Write>(
    writer: W,
    d: &Dataset,
    opts: &LoadOptions,
) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(opts.delimiter as u8)
        .from_writer(writer);
    let cp_name = opts
        .center_periph_column
        .clone()
        .unwrap_or_else(|| "TYPE".into());
    let mut header: Vec<String> = vec![opts.unit_id_column.clone()];
    header.extend(Attribute::ALL.iter().map(|a| a.column().to_owned()));
    header.extend(d.spec.iter().map(|s| s.name.clone()));
    header.push(opts.target_column.clone());
    header.push(cp_name);
    w.write_record(&header)?;

    for r in &d.records {
        let mut row: Vec<String> = vec![r.unit_id.clone()];
        row.extend(r.profile.0.iter().map(u8::to_string));
        for s in &d.spec {
            row.push(r.indicators[&s.name].to_string());
        }
        row.push(r.target_observed.to_string());
        row.push(r.center_periph.map_or(String::new(), |c| c.label().to_owned()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(
    path: impl AsRef<Path>,
    d: &Dataset,
    opts: &LoadOptions,
) -> Result<(), IngestError> {
    let file = std::fs::File::create(path)?;
    write_dataset(std::io::BufWriter::new(file), d, opts)
}

/// Knobs for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Relative frequencies of the codes of ALT, POP, SUP, CLITO, DEGURB.
    pub category_weights: [Vec<f64>; 5],
    /// Share of each indicator's variance explained by the common latent
    /// factor; 1.0 makes all indicators exact (signed) copies of it.
    pub correlation: f64,
    pub target_mean: f64,
    /// Outcome change per unit of the latent factor.
    pub target_slope: f64,
    /// Standard deviation of the per-profile outcome offset.
    pub profile_effect_sd: f64,
    pub noise_sd: f64,
    /// Probability that a unit is labelled as a central hub.
    pub central_share: f64,
    pub spec: Vec<IndicatorSpec>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            category_weights: [
                vec![0.6, 0.2, 0.2],
                vec![0.55, 0.42, 0.03],
                vec![0.2, 0.65, 0.15],
                vec![0.97, 0.03],
                vec![0.02, 0.35, 0.63],
            ],
            correlation: 0.5,
            target_mean: 8.0,
            target_slope: 2.5,
            profile_effect_sd: 1.5,
            noise_sd: 1.0,
            central_share: 0.8,
            spec: default_indicator_spec(),
        }
    }
}

fn draw_weighted(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Deterministic synthetic dataset: a pure function of its arguments.
pub fn synth_dataset(n_units: usize, seed: u64, params: &SynthParams) -> Result<Dataset, IngestError> {
    if n_units < 2 {
        return Err(IngestError::TooFewUnits {
            need: 2,
            got: n_units,
        });
    }
    validate_spec(&params.spec)?;
    for (attr, w) in Attribute::ALL.iter().zip(&params.category_weights) {
        if w.len() != attr.codes().len() || w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(IngestError::InvalidSpec(format!(
                "category weights for {attr} must be {} non-negative values",
                attr.codes().len()
            )));
        }
    }
    let rho = params.correlation.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Per-profile outcome offsets, drawn in a fixed order over all profiles.
    let mut profile_effect = BTreeMap::new();
    for &a in Attribute::Alt.codes() {
        for &b in Attribute::Pop.codes() {
            for &c in Attribute::Sup.codes() {
                for &d in Attribute::Clito.codes() {
                    for &e in Attribute::Degurb.codes() {
                        let z: f64 = rng.sample(StandardNormal);
                        profile_effect.insert(Profile([a, b, c, d, e]), z * params.profile_effect_sd);
                    }
                }
            }
        }
    }

    let load = rho.sqrt();
    let unique = (1.0 - rho).sqrt();
    let mut records = Vec::with_capacity(n_units);
    for i in 0..n_units {
        let mut codes = [0u8; 5];
        for (pos, attr) in Attribute::ALL.iter().enumerate() {
            let k = draw_weighted(&mut rng, &params.category_weights[pos]);
            codes[pos] = attr.codes()[k];
        }
        let profile = Profile(codes);
        let latent: f64 = rng.sample(StandardNormal);

        let mut indicators = BTreeMap::new();
        for (j, ind) in params.spec.iter().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            let z = f64::from(ind.polarity) * load * latent + unique * eps;
            let location = 20.0 + 2.0 * (j % 7) as f64;
            let scale = 3.0 + 0.5 * (j % 4) as f64;
            indicators.insert(ind.name.clone(), location + scale * z);
        }

        let noise: f64 = rng.sample(StandardNormal);
        let y = params.target_mean
            + params.target_slope * latent
            + profile_effect[&profile]
            + params.noise_sd * noise;
        let center_periph = if rng.random::<f64>() < params.central_share {
            CenterPeriph::CentrHub
        } else {
            CenterPeriph::PeriphArea
        };
        records.push(UnitRecord {
            unit_id: format!("U{:05}", i + 1),
            profile,
            indicators,
            target_observed: y.clamp(0.05, 99.95),
            center_periph: Some(center_periph),
        });
    }

    Ok(Dataset {
        records,
        spec: params.spec.clone(),
        scale_domain: ScaleDomain::IsingScaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_spec() -> Vec<IndicatorSpec> {
        vec![IndicatorSpec::new("A", 1, "MPI1"), IndicatorSpec::new("B", -1, "MPI2")]
    }

    fn opts() -> LoadOptions {
        LoadOptions {
            target_column: "Y".into(),
            ..LoadOptions::default()
        }
    }

    const GOOD: &str = "unit_id,ALT,POP,SUP,CLITO,DEGURB,A,B,Y,TYPE\n\
        u1,1,1,1,0,1,1.5,2,7.5,CentrHub\n\
        u2,2,3,2,1,3,2.5,1,12,PeriphArea\n\
        u3,3,2,1,0,2,0.5,4,0,\n";

    #[test]
    fn loads_well_formed_file() {
        let rep = read_dataset(GOOD.as_bytes(), &small_spec(), &opts()).unwrap();
        assert_eq!(rep.dataset.len(), 3);
        assert!(rep.rejected_rows.is_empty());
        let r = &rep.dataset.records[1];
        assert_eq!(r.profile, Profile([2, 3, 2, 1, 3]));
        assert_eq!(r.center_periph, Some(CenterPeriph::PeriphArea));
        assert_eq!(rep.dataset.records[2].center_periph, None);
        assert_eq!(rep.dataset.unit_ids(), vec!["u1", "u2", "u3"]);
    }

    #[test]
    fn bad_category_names_row() {
        let text = GOOD.replace("u2,2,3", "u2,4,3");
        let err = read_dataset(text.as_bytes(), &small_spec(), &opts()).unwrap_err();
        match err {
            IngestError::BadCategory { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "ALT");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clito_accepts_zero_but_alt_does_not() {
        let text = GOOD.replace("u1,1,1,1,0,1", "u1,0,1,1,0,1");
        assert!(matches!(
            read_dataset(text.as_bytes(), &small_spec(), &opts()),
            Err(IngestError::BadCategory { row: 1, .. })
        ));
    }

    #[test]
    fn blank_indicator_rejects_row() {
        let text = GOOD.replace("u2,2,3,2,1,3,2.5,", "u2,2,3,2,1,3,,");
        // Row-by-row oracle: count rows with an empty required cell.
        let expected: usize = text
            .lines()
            .skip(1)
            .filter(|l| l.split(',').take(9).any(|c| c.trim().is_empty()))
            .count();
        let rep = read_dataset(text.as_bytes(), &small_spec(), &opts()).unwrap();
        assert_eq!(rep.rejected_rows.len(), expected);
        assert_eq!(rep.rejected_rows, vec![2]);
        assert_eq!(rep.dataset.len(), 2);
    }

    #[test]
    fn missing_column_reported() {
        let text = GOOD.replace(",B,", ",C,");
        match read_dataset(text.as_bytes(), &small_spec(), &opts()) {
            Err(IngestError::MissingColumn(c)) => assert_eq!(c, "B"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn target_out_of_range() {
        let text = GOOD.replace(",12,", ",100.5,");
        assert!(matches!(
            read_dataset(text.as_bytes(), &small_spec(), &opts()),
            Err(IngestError::TargetOutOfRange { row: 2, .. })
        ));
    }

    #[test]
    fn duplicate_ids() {
        let text = GOOD.replace("u3,", "u1,");
        match read_dataset(text.as_bytes(), &small_spec(), &opts()) {
            Err(IngestError::DuplicateUnitId(id)) => assert_eq!(id, "u1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semicolon_delimiter() {
        let text = GOOD.replace(',', ";");
        let o = LoadOptions {
            delimiter: ';',
            ..opts()
        };
        assert_eq!(read_dataset(text.as_bytes(), &small_spec(), &o).unwrap().dataset.len(), 3);
    }

    #[test]
    fn polarity_must_be_unit() {
        let spec = vec![IndicatorSpec::new("A", 2, "MPI1")];
        assert!(matches!(validate_spec(&spec), Err(IngestError::InvalidSpec(_))));
    }

    #[test]
    fn ising_scaling_examples() {
        let d = ScaleDomain::IsingScaled;
        assert_eq!(d.forward(0.0f64), -1.0);
        assert_eq!(d.forward(50.0f64), 0.0);
        assert_abs_diff_eq!(d.forward(7.9339f64), -0.841322, epsilon = 1e-12);
        assert_eq!(ScaleDomain::RawPercent.forward(7.9339f64), 7.9339);
    }

    #[test]
    fn synth_is_deterministic() {
        let p = SynthParams::default();
        let a = synth_dataset(10, 1, &p).unwrap();
        let b = synth_dataset(10, 1, &p).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(10, 2, &p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_needs_two_units() {
        assert!(matches!(
            synth_dataset(1, 0, &SynthParams::default()),
            Err(IngestError::TooFewUnits { .. })
        ));
    }

    #[test]
    fn synth_full_correlation_knob() {
        let p = SynthParams {
            correlation: 1.0,
            ..SynthParams::default()
        };
        let d = synth_dataset(1000, 3, &p).unwrap();
        let a = d.indicator_column("PERC_GIOVANI").unwrap();
        let b = d.indicator_column("PERC_FAMIGLIE_MINORI").unwrap();
        let r = crate::stats::pearson(&a, &b).unwrap();
        assert!(r >= 0.99, "r = {r}");
    }
}
