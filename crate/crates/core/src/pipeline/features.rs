//! Per-claim feature vectors computed from the encoded dataset and the raw
//! rows each claim came from.
//!
//! Every output column is standardized with statistics fitted once and then
//! frozen into the manifest, so inference on another corpus reuses them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encode::EncodingManifest;
use super::ingest::RawClaimRow;
use crate::error::{Error, Result};
use crate::model::Dataset;

/// Divisor used when a column has (numerically) zero variance.
const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// `log(1 + rows by the claim's source)`; an anonymous claim counts once.
    ClaimsBySource,
    /// `log(1 + claims on the statement)`.
    ClaimsOnStatement,
    /// 1-based position of the claim within its statement, ordered by
    /// timestamp (untimed claims last) and then file order.
    TemporalRank,
    /// 0/1 column; absent values count as 0.
    Binary { column: String },
    /// One column per distinct value; absent or unseen values are all zeros.
    Categorical { column: String },
    /// Real-valued column; every claim must have a value.
    Numeric { column: String },
}

impl FeatureKind {
    fn column(&self) -> Option<&str> {
        match self {
            FeatureKind::Binary { column } | FeatureKind::Categorical { column } | FeatureKind::Numeric { column } => {
                Some(column)
            }
            _ => None,
        }
    }

    fn label(&self) -> String {
        match self {
            FeatureKind::ClaimsBySource => "claims_by_source".into(),
            FeatureKind::ClaimsOnStatement => "claims_on_statement".into(),
            FeatureKind::TemporalRank => "temporal_rank".into(),
            FeatureKind::Binary { column } | FeatureKind::Numeric { column } => column.clone(),
            FeatureKind::Categorical { column } => column.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub name: String,
    pub features: Vec<FeatureKind>,
}

impl FeatureRecipe {
    /// The corpus statistics every claim file supports.
    pub fn stats() -> Self {
        FeatureRecipe {
            name: "stats".into(),
            features: vec![
                FeatureKind::ClaimsBySource,
                FeatureKind::ClaimsOnStatement,
                FeatureKind::TemporalRank,
            ],
        }
    }

    /// `stats` plus every extra column, typed by its values: 0/1-like columns
    /// are binary, parseable numbers numeric, anything else categorical.
    pub fn auto(rows: &[RawClaimRow]) -> Self {
        let mut values: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for row in rows {
            for (k, v) in &row.extra {
                values.entry(k.as_str()).or_default().push(v.as_str());
            }
        }
        let mut features = Self::stats().features;
        for (column, vals) in values {
            let present: Vec<&str> = vals.into_iter().filter(|v| !v.trim().is_empty()).collect();
            let column = column.to_string();
            features.push(if !present.is_empty() && present.iter().all(|v| parse_flag(v).is_some()) {
                FeatureKind::Binary { column }
            } else if !present.is_empty() && present.iter().all(|v| v.trim().parse::<f64>().is_ok_and(f64::is_finite)) {
                FeatureKind::Numeric { column }
            } else {
                FeatureKind::Categorical { column }
            });
        }
        FeatureRecipe {
            name: "auto".into(),
            features,
        }
    }

    /// Resolves `stats`, `auto`, or a path to a recipe JSON file.
    pub fn resolve(name: &str, rows: &[RawClaimRow]) -> Result<Self> {
        match name {
            "stats" => Ok(Self::stats()),
            "auto" => Ok(Self::auto(rows)),
            path if path.ends_with(".json") => {
                let p = Path::new(path);
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let recipe: FeatureRecipe = serde_json::from_str(&text)?;
                recipe.validate()?;
                Ok(recipe)
            }
            other => Err(Error::Recipe(format!(
                "unknown recipe {other:?} (expected stats, auto, or a .json file)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Recipe(format!("recipe {:?} has no features", self.name)));
        }
        let mut seen = BTreeSet::new();
        for f in &self.features {
            if !seen.insert(f.label()) {
                return Err(Error::Recipe(format!("feature {:?} listed twice", f.label())));
            }
        }
        Ok(())
    }
}

fn parse_flag(v: &str) -> Option<f64> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "t" => Some(1.0),
        "0" | "false" | "no" | "n" | "f" => Some(0.0),
        _ => None,
    }
}

/// Standardization of one output column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenFeature {
    #[serde(flatten)]
    pub kind: FeatureKind,
    /// Levels of a categorical feature, in column order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    pub columns: Vec<ColumnStats>,
}

/// A recipe with its fitted statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenRecipe {
    pub name: String,
    pub features: Vec<FrozenFeature>,
}

impl FrozenRecipe {
    pub fn dim(&self) -> usize {
        self.features.iter().map(|f| f.columns.len()).sum()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.features
            .iter()
            .flat_map(|f| f.columns.iter().map(|c| c.name.clone()))
            .collect()
    }
}

/// Claim-level context shared by all generators.
struct ClaimContext<'a> {
    rows: &'a [RawClaimRow],
    manifest: &'a EncodingManifest,
    /// `origin[b][i]`: the row behind claim `i` of bundle `b`.
    origin: &'a [Vec<usize>],
    rows_by_source: BTreeMap<&'a str, usize>,
    /// `rank[b][i]`: temporal rank of the claim within its statement.
    rank: Vec<Vec<usize>>,
}

impl<'a> ClaimContext<'a> {
    fn new(dataset: &Dataset, rows: &'a [RawClaimRow], manifest: &'a EncodingManifest) -> Result<Self> {
        let origin = &manifest.claim_rows;
        if origin.len() != dataset.bundles().len()
            || origin.iter().zip(dataset.bundles()).any(|(o, b)| o.len() != b.len())
        {
            return Err(Error::InvalidDataset(
                "manifest row origins do not match the dataset (was it encoded from these rows?)".into(),
            ));
        }
        if let Some(&bad) = origin.iter().flatten().find(|&&r| r >= rows.len()) {
            return Err(Error::InvalidDataset(format!(
                "claim refers to row {} but only {} rows were given",
                bad + 1,
                rows.len()
            )));
        }
        let kept: BTreeSet<usize> = origin.iter().flatten().copied().collect();
        let mut rows_by_source = BTreeMap::new();
        for &r in &kept {
            if let Some(s) = rows[r].source.as_deref() {
                *rows_by_source.entry(s).or_insert(0) += 1;
            }
        }
        let rank = origin
            .iter()
            .map(|o| {
                let mut order: Vec<usize> = (0..o.len()).collect();
                order.sort_by_key(|&i| (rows[o[i]].timestamp.unwrap_or(i64::MAX), o[i]));
                let mut rank = vec![0; o.len()];
                for (pos, i) in order.into_iter().enumerate() {
                    rank[i] = pos + 1;
                }
                rank
            })
            .collect();
        Ok(ClaimContext {
            rows,
            manifest,
            origin,
            rows_by_source,
            rank,
        })
    }

    fn row(&self, b: usize, i: usize) -> &'a RawClaimRow {
        &self.rows[self.origin[b][i]]
    }

    fn for_each_claim(&self, mut f: impl FnMut(usize, usize)) {
        for (b, o) in self.origin.iter().enumerate() {
            for i in 0..o.len() {
                f(b, i);
            }
        }
    }
}

/// Raw (unstandardized) values of one feature: one row per claim, in
/// bundle-major order.
fn raw_values(kind: &FeatureKind, ctx: &ClaimContext, dataset: &Dataset, categories: &[String]) -> Result<Vec<Vec<f64>>> {
    if let Some(column) = kind.column() {
        if !ctx.rows.iter().any(|r| r.extra.contains_key(column)) {
            return Err(Error::Recipe(format!("column {column:?} not present in the claims")));
        }
    }
    let mut out = Vec::with_capacity(dataset.n_claims());
    let mut failure = None;
    let mut missing = None;
    ctx.for_each_claim(|b, i| {
        let row = ctx.row(b, i);
        let cell = kind.column().and_then(|c| row.extra.get(c)).map(|v| v.trim()).filter(|v| !v.is_empty());
        let values = match kind {
            FeatureKind::ClaimsBySource => {
                let n = row.source.as_deref().map_or(1, |s| ctx.rows_by_source[s]);
                vec![(n as f64).ln_1p()]
            }
            FeatureKind::ClaimsOnStatement => vec![(dataset.bundles()[b].len() as f64).ln_1p()],
            FeatureKind::TemporalRank => vec![ctx.rank[b][i] as f64],
            FeatureKind::Binary { column } => match cell.map(parse_flag) {
                None => vec![0.0],
                Some(Some(x)) => vec![x],
                Some(None) => {
                    failure.get_or_insert_with(|| format!("column {column:?}: {:?} is not a 0/1 flag", cell.unwrap_or("")));
                    vec![0.0]
                }
            },
            FeatureKind::Numeric { column } => match cell.map(str::parse::<f64>) {
                None => {
                    missing.get_or_insert((b, i));
                    vec![0.0]
                }
                Some(Ok(x)) if x.is_finite() => vec![x],
                Some(_) => {
                    failure.get_or_insert_with(|| format!("column {column:?}: {:?} is not a finite number", cell.unwrap_or("")));
                    vec![0.0]
                }
            },
            FeatureKind::Categorical { .. } => categories.iter().map(|c| f64::from(cell == Some(c.as_str()))).collect(),
        };
        out.push(values);
    });
    if let Some((b, i)) = missing {
        let key = &ctx.manifest.statements[b];
        return Err(Error::MissingFeatures {
            statement: format!("{}/{}={}", key.entity, key.attribute, key.value),
            claim: i,
            expected: 1,
            actual: 0,
        });
    }
    match failure {
        Some(msg) => Err(Error::Recipe(msg)),
        None => Ok(out),
    }
}

fn fit_feature(kind: &FeatureKind, ctx: &ClaimContext, dataset: &Dataset) -> Result<FrozenFeature> {
    let categories: Vec<String> = match kind {
        FeatureKind::Categorical { column } => ctx
            .origin
            .iter()
            .flatten()
            .filter_map(|&r| ctx.rows[r].extra.get(column))
            .map(|v| v.trim())
            .filter(|v| !v.is_empty())
            .map(String::from)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        _ => Vec::new(),
    };
    let raw = raw_values(kind, ctx, dataset, &categories)?;
    let width = raw.first().map_or(0, Vec::len);
    let names: Vec<String> = match kind {
        FeatureKind::Categorical { column } => categories.iter().map(|c| format!("{column}={c}")).collect(),
        _ => vec![kind.label()],
    };
    let n = raw.len().max(1) as f64;
    let columns = (0..width)
        .map(|j| {
            let col = || raw.iter().map(|v| v[j]);
            let mean = col().sum::<f64>() / n;
            let var = col().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            ColumnStats {
                name: names[j].clone(),
                mean,
                scale: if sd > MIN_SCALE { sd } else { 1.0 },
            }
        })
        .collect();
    Ok(FrozenFeature {
        kind: kind.clone(),
        categories,
        columns,
    })
}

fn apply(frozen: &FrozenRecipe, ctx: &ClaimContext, dataset: Dataset) -> Result<Dataset> {
    let mut per_claim: Vec<Vec<f64>> = vec![Vec::with_capacity(frozen.dim()); dataset.n_claims()];
    for feature in &frozen.features {
        let raw = raw_values(&feature.kind, ctx, &dataset, &feature.categories)?;
        for (claim, values) in per_claim.iter_mut().zip(raw) {
            for (x, stats) in values.into_iter().zip(&feature.columns) {
                claim.push((x - stats.mean) / stats.scale);
            }
        }
    }
    let mut it = per_claim.into_iter();
    let nested: Vec<Vec<Vec<f64>>> = dataset
        .bundles()
        .iter()
        .map(|b| it.by_ref().take(b.len()).collect())
        .collect();
    dataset.with_features(frozen.column_names(), nested)
}

/// Fits the recipe on this corpus, stores the frozen statistics in the
/// manifest and returns the dataset with features attached.
pub fn compute_features(
    dataset: Dataset,
    rows: &[RawClaimRow],
    manifest: &mut EncodingManifest,
    recipe: &FeatureRecipe,
) -> Result<Dataset> {
    recipe.validate()?;
    let ctx = ClaimContext::new(&dataset, rows, manifest)?;
    let features = recipe
        .features
        .iter()
        .map(|kind| fit_feature(kind, &ctx, &dataset))
        .collect::<Result<Vec<_>>>()?;
    let frozen = FrozenRecipe {
        name: recipe.name.clone(),
        features,
    };
    if frozen.dim() == 0 {
        return Err(Error::Recipe(format!("recipe {:?} produced no feature columns", recipe.name)));
    }
    let out = apply(&frozen, &ctx, dataset)?;
    manifest.features = Some(frozen);
    Ok(out)
}

/// Computes features with previously frozen statistics.
pub fn apply_frozen(
    dataset: Dataset,
    rows: &[RawClaimRow],
    manifest: &EncodingManifest,
    frozen: &FrozenRecipe,
) -> Result<Dataset> {
    let ctx = ClaimContext::new(&dataset, rows, manifest)?;
    apply(frozen, &ctx, dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::encode::{one_hot_encode, NegativePolicy};

    fn row(e: &str, s: &str, v: &str, extra: &[(&str, &str)]) -> RawClaimRow {
        let mut r = RawClaimRow::new(e, "population", Some(s), v);
        r.extra = extra.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        r
    }

    fn fixture() -> Vec<RawClaimRow> {
        let cats = ["city", "town", "village", "hamlet", "metro"];
        let mut rows = Vec::new();
        for i in 0..10 {
            let mut r = row(
                &format!("e{}", i % 4),
                &format!("s{}", i % 3),
                &format!("{}", 100 + i % 2),
                &[("registered", if i % 2 == 0 { "1" } else { "0" }), ("kind", cats[i % 5])],
            );
            r.timestamp = Some(10 - i as i64);
            rows.push(r);
        }
        rows.push(row("solo", "lonely", "7", &[("registered", "1"), ("kind", "city")]));
        rows
    }

    fn feature_of(d: &Dataset, m: &EncodingManifest, entity: &str, col: usize) -> Vec<f64> {
        d.bundles()
            .iter()
            .filter(|b| m.key(b.statement_id()).unwrap().entity == entity)
            .flat_map(|b| b.claims().iter().map(|c| c.features[col]))
            .collect()
    }

    #[test]
    fn single_claim_source_has_log_two_before_standardization() {
        let rows = fixture();
        let (d, mut m) = one_hot_encode(&rows, NegativePolicy::ImplicitNegatives).unwrap();
        let d = compute_features(d, &rows, &mut m, &FeatureRecipe::stats()).unwrap();
        let stats = &m.features.as_ref().unwrap().features[0].columns[0];
        let x = feature_of(&d, &m, "solo", 0)[0];
        let raw = x * stats.scale + stats.mean;
        assert!((raw - 0.6931471806).abs() < 1e-10);
        assert!((raw - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn constant_column_standardizes_to_zero() {
        let rows: Vec<_> = (0..5).map(|i| row(&format!("e{i}"), &format!("s{i}"), "1", &[("c", "3.5")])).collect();
        let (d, mut m) = one_hot_encode(&rows, NegativePolicy::ImplicitNegatives).unwrap();
        let recipe = FeatureRecipe {
            name: "c".into(),
            features: vec![FeatureKind::Numeric { column: "c".into() }],
        };
        let d = compute_features(d, &rows, &mut m, &recipe).unwrap();
        assert_eq!(m.features.as_ref().unwrap().features[0].columns[0].scale, 1.0);
        for b in d.bundles() {
            assert_eq!(b.claims()[0].features, vec![0.0]);
        }
    }

    #[test]
    fn population_style_recipe_has_nine_features() {
        let rows = fixture();
        let recipe = FeatureRecipe::auto(&rows);
        assert_eq!(
            recipe.features[3..],
            [
                FeatureKind::Categorical { column: "kind".into() },
                FeatureKind::Binary { column: "registered".into() },
            ]
        );
        let (d, mut m) = one_hot_encode(&rows, NegativePolicy::ImplicitNegatives).unwrap();
        let d = compute_features(d, &rows, &mut m, &recipe).unwrap();
        assert_eq!(d.feature_dim(), 9);
        assert_eq!(d.feature_names()[3], "kind=city");
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_variance() {
        let rows = fixture();
        let (d, mut m) = one_hot_encode(&rows, NegativePolicy::ImplicitNegatives).unwrap();
        let d = compute_features(d, &rows, &mut m, &FeatureRecipe::auto(&rows)).unwrap();
        let all: Vec<&Vec<f64>> = d.bundles().iter().flat_map(|b| b.claims().iter().map(|c| &c.features)).collect();
        let n = all.len() as f64;
        for j in 0..d.feature_dim() {
            let mean = all.iter().map(|v| v[j]).sum::<f64>() / n;
            let var = all.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9 || var < 1e-20);
        }
    }

    #[test]
    fn temporal_rank_orders_by_timestamp() {
        let mut rows = vec![row("e", "a", "1", &[]), row("e", "b", "1", &[]), row("e", "c", "1", &[])];
        rows[0].timestamp = Some(30);
        rows[1].timestamp = Some(10);
        let (d, mut m) = one_hot_encode(&rows, NegativePolicy::PositivesOnly).unwrap();
        let recipe = FeatureRecipe {
            name: "rank".into(),
            features: vec![FeatureKind::TemporalRank],
        };
        let d = compute_features(d, &rows, &mut m, &recipe).unwrap();
        let stats = &m.features.as_ref().unwrap().features[0].columns[0];
        let raw: Vec<f64> = d.bundles()[0]
            .claims()
            .iter()
            .map(|c| (c.features[0] * stats.scale + stats.mean).round())
            .collect();
        assert_eq!(raw, vec![2.0, 1.0, 3.0]);
    }

    #[test]
    fn rerun_is_bit_identical_and_frozen_stats_reproduce() {
        let rows = fixture();
        let recipe = FeatureRecipe::auto(&rows);
        let run = || {
            let (d, mut m) = one_hot_encode(&rows, NegativePolicy::ImplicitNegatives).unwrap();
            let d = compute_features(d, &rows, &mut m, &recipe).unwrap();
            (d, m)
        };
        let (d1, m1) = run();
        let (d2, m2) = run();
        assert_eq!(serde_json::to_string(&d1).unwrap(), serde_json::to_string(&d2).unwrap());
        assert_eq!(m1, m2);

        let (plain, m3) = one_hot_encode(&rows, NegativePolicy::ImplicitNegatives).unwrap();
        let frozen = m1.features.clone().unwrap();
        let d3 = apply_frozen(plain, &rows, &m3, &frozen).unwrap();
        assert_eq!(serde_json::to_string(&d3).unwrap(), serde_json::to_string(&d1).unwrap());

        let text = serde_json::to_string(&frozen).unwrap();
        let back: FrozenRecipe = serde_json::from_str(&text).unwrap();
        assert_eq!(back, frozen);
    }

    #[test]
    fn missing_column_and_bad_values_are_recipe_errors() {
        let rows = fixture();
        let (d, mut m) = one_hot_encode(&rows, NegativePolicy::ImplicitNegatives).unwrap();
        let missing = FeatureRecipe {
            name: "x".into(),
            features: vec![FeatureKind::Numeric { column: "nope".into() }],
        };
        assert!(matches!(compute_features(d.clone(), &rows, &mut m, &missing), Err(Error::Recipe(_))));
        let bad = FeatureRecipe {
            name: "x".into(),
            features: vec![FeatureKind::Numeric { column: "kind".into() }],
        };
        assert!(matches!(compute_features(d, &rows, &mut m, &bad), Err(Error::Recipe(_))));
        assert!(matches!(FeatureRecipe::resolve("fancy", &rows), Err(Error::Recipe(_))));
        let dup = FeatureRecipe {
            name: "x".into(),
            features: vec![FeatureKind::TemporalRank, FeatureKind::TemporalRank],
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn recipe_file_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recipe.json");
        let recipe = FeatureRecipe {
            name: "mine".into(),
            features: vec![FeatureKind::ClaimsBySource, FeatureKind::Categorical { column: "kind".into() }],
        };
        std::fs::write(&path, serde_json::to_string(&recipe).unwrap()).unwrap();
        assert_eq!(FeatureRecipe::resolve(path.to_str().unwrap(), &[]).unwrap(), recipe);
    }

    #[test]
    fn numeric_gap_names_the_claim() {
        let rows = vec![
            row("a", "s1", "1", &[("x", "1")]),
            row("b", "s2", "1", &[("x", "3")]),
            row("c", "s3", "1", &[]),
        ];
        let (d, mut m) = one_hot_encode(&rows, NegativePolicy::ImplicitNegatives).unwrap();
        let recipe = FeatureRecipe {
            name: "x".into(),
            features: vec![FeatureKind::Numeric { column: "x".into() }],
        };
        match compute_features(d, &rows, &mut m, &recipe) {
            Err(Error::MissingFeatures { statement, claim, .. }) => {
                assert_eq!((statement.as_str(), claim), ("c/population=1", 0));
            }
            other => panic!("{other:?}"),
        }
    }
}
