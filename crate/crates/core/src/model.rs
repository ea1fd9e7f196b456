//! Statements, claims, datasets and the parameter containers shared by the
//! engines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::logit;
use crate::scalar::Real;

/// Plausibilities at or above this value are decided as true.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatementId(pub usize);

impl fmt::Display for StatementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(pub String);

impl SourceId {
    pub fn new(id: impl Into<String>) -> Self {
        SourceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One source's binary claim about one statement.
///
/// `source_id` is absent for anonymous claims; those can only be handled by
/// the feature-based model. `features` is empty until features are computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub statement_id: StatementId,
    pub source_id: Option<SourceId>,
    pub value: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<f64>,
}

impl ClaimRecord {
    pub fn new(statement_id: StatementId, source_id: Option<SourceId>, value: bool) -> Self {
        ClaimRecord {
            statement_id,
            source_id,
            value,
            features: Vec::new(),
        }
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = features;
        self
    }
}

/// A statement together with every claim made about it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatementBundle {
    statement_id: StatementId,
    claims: Vec<ClaimRecord>,
}

impl StatementBundle {
    /// Fails on an empty claim list, on claims addressed to another statement
    /// and on a source claiming twice.
    pub fn new(statement_id: StatementId, claims: Vec<ClaimRecord>) -> Result<Self> {
        if claims.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "statement {statement_id} has no claims"
            )));
        }
        let mut seen = BTreeSet::new();
        for claim in &claims {
            if claim.statement_id != statement_id {
                return Err(Error::InvalidDataset(format!(
                    "claim for {} placed in bundle {statement_id}",
                    claim.statement_id
                )));
            }
            if let Some(src) = &claim.source_id {
                if !seen.insert(src) {
                    return Err(Error::InvalidDataset(format!(
                        "source {src} claims statement {statement_id} twice"
                    )));
                }
            }
        }
        Ok(StatementBundle {
            statement_id,
            claims,
        })
    }

    pub fn statement_id(&self) -> StatementId {
        self.statement_id
    }

    pub fn claims(&self) -> &[ClaimRecord] {
        &self.claims
    }

    /// `n_f`.
    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn claim_values(&self) -> Vec<bool> {
        self.claims.iter().map(|c| c.value).collect()
    }

    pub(crate) fn claims_mut(&mut self) -> &mut [ClaimRecord] {
        &mut self.claims
    }
}

impl<'de> Deserialize<'de> for StatementBundle {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            statement_id: StatementId,
            claims: Vec<ClaimRecord>,
        }
        let raw = Raw::deserialize(de)?;
        StatementBundle::new(raw.statement_id, raw.claims).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    bundles: Vec<StatementBundle>,
    feature_names: Vec<String>,
}

/// A claim corpus: statements, the index of identified sources and the
/// feature layout shared by every claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DatasetRepr", try_from = "DatasetRepr")]
pub struct Dataset {
    bundles: Vec<StatementBundle>,
    source_index: BTreeMap<SourceId, usize>,
    sources: Vec<SourceId>,
    feature_dim: usize,
    feature_names: Vec<String>,
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr {
            bundles: d.bundles,
            feature_names: d.feature_names,
        }
    }
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(r: DatasetRepr) -> Result<Self> {
        Dataset::new(r.bundles, r.feature_names)
    }
}

impl Dataset {
    /// Builds the source index (sorted by id) and checks the feature layout.
    ///
    /// With no feature names every claim must carry an empty feature vector;
    /// otherwise every claim must have exactly `feature_names.len()` entries.
    pub fn new(bundles: Vec<StatementBundle>, feature_names: Vec<String>) -> Result<Self> {
        let feature_dim = feature_names.len();
        let mut ids = BTreeSet::new();
        let mut statement_ids = BTreeSet::new();
        for bundle in &bundles {
            if !statement_ids.insert(bundle.statement_id) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate statement {}",
                    bundle.statement_id
                )));
            }
            for (i, claim) in bundle.claims.iter().enumerate() {
                if claim.features.len() != feature_dim {
                    return Err(Error::InvalidDataset(format!(
                        "statement {} claim {i}: {} features, dataset declares {feature_dim}",
                        bundle.statement_id,
                        claim.features.len()
                    )));
                }
                if claim.features.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidDataset(format!(
                        "statement {} claim {i}: non-finite feature",
                        bundle.statement_id
                    )));
                }
                if let Some(src) = &claim.source_id {
                    ids.insert(src.clone());
                }
            }
        }
        let sources: Vec<SourceId> = ids.into_iter().collect();
        let source_index = sources
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Dataset {
            bundles,
            source_index,
            sources,
            feature_dim,
            feature_names,
        })
    }

    pub fn bundles(&self) -> &[StatementBundle] {
        &self.bundles
    }

    pub fn source_index(&self) -> &BTreeMap<SourceId, usize> {
        &self.source_index
    }

    pub fn index_of(&self, source: &SourceId) -> Option<usize> {
        self.source_index.get(source).copied()
    }

    /// Identified sources in index order.
    pub fn sources(&self) -> &[SourceId] {
        &self.sources
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_claims(&self) -> usize {
        self.bundles.iter().map(StatementBundle::len).sum()
    }

    /// Number of claims made by each indexed source.
    pub fn claims_per_source(&self) -> Vec<usize> {
        let mut counts = vec![0; self.sources.len()];
        for claim in self.bundles.iter().flat_map(|b| b.claims.iter()) {
            if let Some(i) = claim.source_id.as_ref().and_then(|s| self.index_of(s)) {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Replaces every claim's features. `features[b][i]` belongs to claim `i`
    /// of bundle `b`.
    pub fn with_features(mut self, names: Vec<String>, features: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if features.len() != self.bundles.len() {
            return Err(Error::Dimension {
                expected: self.bundles.len(),
                actual: features.len(),
            });
        }
        for (bundle, feats) in self.bundles.iter_mut().zip(features) {
            if feats.len() != bundle.len() {
                return Err(Error::Dimension {
                    expected: bundle.len(),
                    actual: feats.len(),
                });
            }
            for (claim, x) in bundle.claims_mut().iter_mut().zip(feats) {
                claim.features = x;
            }
        }
        Dataset::new(self.bundles, names)
    }
}

/// Per-source visible bias, weight and hidden-bias share, plus the global
/// hidden bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RbmParameters<T> {
    pub a: Vec<T>,
    pub w: Vec<T>,
    pub b_src: Vec<T>,
    pub b0: T,
}

impl<T: Real> RbmParameters<T> {
    pub fn zeros(n_sources: usize) -> Self {
        RbmParameters {
            a: vec![T::zero(); n_sources],
            w: vec![T::zero(); n_sources],
            b_src: vec![T::zero(); n_sources],
            b0: T::zero(),
        }
    }

    /// Every source starts at the given rates: `a = logit(fpr)`,
    /// `w = logit(tpr) - a`; hidden biases start at zero.
    pub fn from_rates(n_sources: usize, tpr: f64, fpr: f64) -> Result<Self> {
        let theta = RateTarget::new(tpr, fpr)?.theta();
        Ok(RbmParameters {
            a: vec![T::lit(theta[0]); n_sources],
            w: vec![T::lit(theta[1]); n_sources],
            b_src: vec![T::zero(); n_sources],
            b0: T::zero(),
        })
    }

    pub fn n_sources(&self) -> usize {
        self.a.len()
    }

    pub fn is_finite(&self) -> bool {
        self.b0.is_finite()
            && self
                .a
                .iter()
                .chain(&self.w)
                .chain(&self.b_src)
                .all(|x| x.is_finite())
    }

    pub(crate) fn flat(&self) -> impl Iterator<Item = T> + '_ {
        self.a
            .iter()
            .chain(&self.w)
            .chain(&self.b_src)
            .copied()
            .chain(std::iter::once(self.b0))
    }
}

/// Desired initial reliability of a source, `fpr < tpr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTarget {
    pub tpr: f64,
    pub fpr: f64,
}

impl RateTarget {
    pub fn new(tpr: f64, fpr: f64) -> Result<Self> {
        if !(tpr > fpr) {
            return Err(Error::InvalidConfig(format!(
                "target tpr {tpr} must exceed fpr {fpr}"
            )));
        }
        logit(tpr)?;
        logit(fpr)?;
        Ok(RateTarget { tpr, fpr })
    }

    /// `(a, w, b)` reproducing these rates with a zero hidden-bias share.
    pub fn theta(&self) -> [f64; 3] {
        // Both logits were checked in `new`.
        let a = logit(self.fpr).unwrap_or(0.0);
        let w = logit(self.tpr).unwrap_or(0.0) - a;
        [a, w, 0.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub cd_steps: usize,
    /// Use `P(h=1|v)` instead of a sample for the final hidden state of CD.
    pub cd_final_hidden_prob: bool,
    pub rng_seed: u64,
    /// Stop once the mean absolute parameter change over an epoch drops below this.
    pub convergence_tol: f64,
    pub pretrain_tpr: f64,
    pub pretrain_fpr: f64,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    /// L2 penalty on network weights, applied during both training phases.
    pub weight_decay: f64,
    /// Max L2 norm of a single statement's network update.
    pub grad_clip: f64,
    /// Bound on `|a|`, `|w|` and `|b|` in the per-source model.
    pub param_clamp: f64,
}

pub const DEFAULT_SEED: u64 = 0x5eed_1e55;

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.01,
            epochs: 200,
            cd_steps: 1,
            cd_final_hidden_prob: false,
            rng_seed: DEFAULT_SEED,
            convergence_tol: 1e-5,
            pretrain_tpr: 0.7,
            pretrain_fpr: 0.3,
            pretrain_epochs: 400,
            pretrain_learning_rate: 0.1,
            weight_decay: 0.0,
            grad_clip: 10.0,
            param_clamp: 15.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.cd_steps == 0 {
            return bad("cd_steps must be at least 1".into());
        }
        if !(self.convergence_tol > 0.0) {
            return bad("convergence_tol must be positive".into());
        }
        if !(self.pretrain_tpr > 0.5 && self.pretrain_tpr < 1.0) {
            return bad(format!("pretrain_tpr {} must lie in (0.5, 1)", self.pretrain_tpr));
        }
        if !(self.pretrain_fpr > 0.0 && self.pretrain_fpr < 0.5) {
            return bad(format!("pretrain_fpr {} must lie in (0, 0.5)", self.pretrain_fpr));
        }
        if !(self.pretrain_learning_rate > 0.0) {
            return bad("pretrain_learning_rate must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive".into());
        }
        if !(self.param_clamp > 0.0) {
            return bad("param_clamp must be positive".into());
        }
        Ok(())
    }

    pub fn pretrain_target(&self) -> Result<RateTarget> {
        RateTarget::new(self.pretrain_tpr, self.pretrain_fpr)
    }
}

/// Plausibility of a statement and the resulting truth call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEstimate {
    pub statement_id: StatementId,
    pub plausibility: f64,
    pub decision: bool,
}

impl TruthEstimate {
    /// Ties at the threshold resolve to true.
    pub fn new(statement_id: StatementId, plausibility: f64) -> Self {
        TruthEstimate {
            statement_id,
            plausibility,
            decision: plausibility >= DECISION_THRESHOLD,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn claim(f: usize, src: &str, v: bool) -> ClaimRecord {
        ClaimRecord::new(StatementId(f), Some(SourceId::new(src)), v)
    }

    #[test]
    fn bundle_rejects_empty_and_duplicate_sources() {
        assert!(StatementBundle::new(StatementId(0), vec![]).is_err());
        let dup = vec![claim(0, "s1", true), claim(0, "s1", false)];
        assert!(StatementBundle::new(StatementId(0), dup).is_err());
        let foreign = vec![claim(1, "s1", true)];
        assert!(StatementBundle::new(StatementId(0), foreign).is_err());
    }

    #[test]
    fn bundle_allows_several_anonymous_claims() {
        let claims = vec![
            ClaimRecord::new(StatementId(0), None, true),
            ClaimRecord::new(StatementId(0), None, false),
        ];
        let b = StatementBundle::new(StatementId(0), claims).unwrap();
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn dataset_indexes_sources_sorted() {
        let b0 = StatementBundle::new(StatementId(0), vec![claim(0, "zed", true), claim(0, "amy", false)]).unwrap();
        let b1 = StatementBundle::new(StatementId(1), vec![claim(1, "amy", true)]).unwrap();
        let d = Dataset::new(vec![b0, b1], vec![]).unwrap();
        assert_eq!(d.sources(), &[SourceId::new("amy"), SourceId::new("zed")]);
        assert_eq!(d.index_of(&SourceId::new("zed")), Some(1));
        assert_eq!(d.claims_per_source(), vec![2, 1]);
        assert_eq!(d.n_claims(), 3);
    }

    #[test]
    fn dataset_checks_feature_dimension() {
        let b = StatementBundle::new(StatementId(0), vec![claim(0, "a", true).with_features(vec![1.0])]).unwrap();
        assert!(Dataset::new(vec![b.clone()], vec![]).is_err());
        assert!(Dataset::new(vec![b], vec!["x".into()]).is_ok());
    }

    #[test]
    fn dataset_json_round_trip_is_identical() {
        let b0 = StatementBundle::new(
            StatementId(3),
            vec![
                claim(3, "a", true).with_features(vec![0.1, -2.5]),
                ClaimRecord::new(StatementId(3), None, false).with_features(vec![1.0 / 3.0, 7.0]),
            ],
        )
        .unwrap();
        let d = Dataset::new(vec![b0], vec!["x".into(), "y".into()]).unwrap();
        let text = serde_json::to_string(&d).unwrap();
        let back: Dataset = serde_json::from_str(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn deserializing_invalid_bundle_fails() {
        let text = r#"{"bundles":[{"statement_id":0,"claims":[]}],"feature_names":[]}"#;
        assert!(serde_json::from_str::<Dataset>(text).is_err());
    }

    #[test]
    fn decision_tie_goes_to_true() {
        assert!(TruthEstimate::new(StatementId(0), 0.5).decision);
        assert!(!TruthEstimate::new(StatementId(0), 0.4999).decision);
    }

    #[test]
    fn config_validation() {
        TrainingConfig::default().validate().unwrap();
        let mut c = TrainingConfig::default();
        c.pretrain_tpr = 0.4;
        assert!(c.validate().is_err());
        let mut c = TrainingConfig::default();
        c.cd_steps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rate_target_inverts_logistic() {
        let [a, w, b] = RateTarget::new(0.7, 0.3).unwrap().theta();
        assert!((a - -0.847_297_860_387_203_6).abs() < 1e-12);
        assert!((w - 1.694_595_720_774_407_2).abs() < 1e-12);
        assert_eq!(b, 0.0);
        assert!(RateTarget::new(0.3, 0.7).is_err());
    }
}
