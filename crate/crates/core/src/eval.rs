//! Accuracy against ground truth, the majority-vote reference, and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Dataset, SourceId, StatementBundle, StatementId, TruthEstimate};
use crate::pipeline::encode::{EncodingManifest, GroupKey};
use crate::pipeline::truth::GroundTruth;

/// Fraction of positive claims.
pub fn majority_vote(bundle: &StatementBundle) -> Result<TruthEstimate> {
    if bundle.is_empty() {
        return Err(Error::Empty(format!("statement {} has no claims", bundle.statement_id())));
    }
    let ones = bundle.claims().iter().filter(|c| c.value).count();
    Ok(TruthEstimate::new(bundle.statement_id(), ones as f64 / bundle.len() as f64))
}

pub fn majority_estimates(dataset: &Dataset) -> Result<Vec<TruthEstimate>> {
    dataset.bundles().par_iter().map(majority_vote).collect()
}

/// Picks the most plausible value of each group; ties go to the
/// lexicographically smallest value.
pub fn per_attribute_decision(
    estimates: &[TruthEstimate],
    manifest: &EncodingManifest,
) -> Result<BTreeMap<GroupKey, String>> {
    let p: BTreeMap<StatementId, f64> = estimates.iter().map(|e| (e.statement_id, e.plausibility)).collect();
    let mut out = BTreeMap::new();
    for (group, ids) in manifest.groups() {
        let mut best: Option<(f64, StatementId)> = None;
        for id in ids {
            let Some(&pf) = p.get(&id) else {
                return Err(Error::Evaluation(format!(
                    "no estimate for statement {id} of {}/{}",
                    group.entity, group.attribute
                )));
            };
            // Ids within a group follow value order, so the first maximum wins ties.
            if best.is_none_or(|(bp, _)| pf > bp) {
                best = Some((pf, id));
            }
        }
        let (_, id) = best.ok_or_else(|| {
            Error::Evaluation(format!("group {}/{} has no estimates", group.entity, group.attribute))
        })?;
        out.insert(group, manifest.statements[id.0].value.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub name: String,
    pub n_labeled: usize,
    pub n_correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub overall_accuracy: f64,
    pub n_labeled: usize,
    pub n_correct: usize,
    pub strata: Vec<Stratum>,
    pub config_digest: String,
}

pub const CLAIM_BUCKETS: [&str; 4] = ["claims=1", "claims=2", "claims=3-5", "claims=6+"];
pub const SOURCE_BUCKETS: [&str; 2] = ["single-claim source", "established sources only"];

fn claim_bucket(n: usize) -> usize {
    match n {
        0 | 1 => 0,
        2 => 1,
        3..=5 => 2,
        _ => 3,
    }
}

/// One labeled item: how many claims it has, whether a source with a single
/// claim in the corpus took part, and whether the decision was right.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    n_claims: usize,
    singleton_source: bool,
    correct: bool,
}

fn report(method: &str, digest: &str, outcomes: &[Outcome]) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::Evaluation("no labeled statements overlap the estimates".into()));
    }
    let mut claims = [(0, 0); 4];
    let mut sources = [(0, 0); 2];
    for o in outcomes {
        let c = &mut claims[claim_bucket(o.n_claims)];
        c.0 += 1;
        c.1 += usize::from(o.correct);
        let s = &mut sources[usize::from(!o.singleton_source)];
        s.0 += 1;
        s.1 += usize::from(o.correct);
    }
    let stratum = |name: &str, (n, k): (usize, usize)| Stratum {
        name: name.into(),
        n_labeled: n,
        n_correct: k,
        accuracy: (n > 0).then(|| k as f64 / n as f64),
    };
    let n_correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(EvalReport {
        method: method.into(),
        overall_accuracy: n_correct as f64 / outcomes.len() as f64,
        n_labeled: outcomes.len(),
        n_correct,
        strata: CLAIM_BUCKETS
            .iter()
            .zip(claims)
            .chain(SOURCE_BUCKETS.iter().zip(sources))
            .map(|(name, counts)| stratum(name, counts))
            .collect(),
        config_digest: digest.into(),
    })
}

/// Accuracy of group decisions. A group's claim count is the number of
/// positive claims on its statements, and each source's corpus size is its
/// number of positive claims.
pub fn evaluate(
    method: &str,
    digest: &str,
    decisions: &BTreeMap<GroupKey, String>,
    truth: &GroundTruth,
    dataset: &Dataset,
    manifest: &EncodingManifest,
) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Evaluation("no labeled statements".into()));
    }
    let mut per_source: BTreeMap<&SourceId, usize> = BTreeMap::new();
    for claim in dataset.bundles().iter().flat_map(|b| b.claims()).filter(|c| c.value) {
        if let Some(s) = &claim.source_id {
            *per_source.entry(s).or_default() += 1;
        }
    }
    let groups = manifest.groups();
    let mut outcomes = Vec::new();
    for (group, value) in truth.values() {
        let (Some(decided), Some(ids)) = (decisions.get(group), groups.get(group)) else {
            continue;
        };
        let positives = ids
            .iter()
            .filter_map(|id| dataset.bundles().get(id.0))
            .flat_map(|b| b.claims())
            .filter(|c| c.value);
        let mut n_claims = 0;
        let mut singleton_source = false;
        for c in positives {
            n_claims += 1;
            singleton_source |= c.source_id.as_ref().is_none_or(|s| per_source.get(s) == Some(&1));
        }
        outcomes.push(Outcome {
            n_claims,
            singleton_source,
            correct: decided == value,
        });
    }
    report(method, digest, &outcomes)
}

/// Accuracy of binary decisions per statement.
pub fn evaluate_statements(
    method: &str,
    digest: &str,
    estimates: &[TruthEstimate],
    truth: &BTreeMap<StatementId, bool>,
    dataset: &Dataset,
) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Evaluation("no labeled statements".into()));
    }
    let per_source = dataset.claims_per_source();
    let outcomes: Vec<Outcome> = estimates
        .iter()
        .filter_map(|e| {
            let label = *truth.get(&e.statement_id)?;
            let bundle = dataset.bundles().get(e.statement_id.0)?;
            let singleton_source = bundle.claims().iter().any(|c| {
                c.source_id
                    .as_ref()
                    .and_then(|s| dataset.index_of(s))
                    .is_none_or(|i| per_source[i] == 1)
            });
            Some(Outcome {
                n_claims: bundle.len(),
                singleton_source,
                correct: e.decision == label,
            })
        })
        .collect();
    report(method, digest, &outcomes)
}

/// Short SHA-256 hex digest of a serializable configuration.
pub fn config_digest<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

impl EvalReport {
    pub fn stratum(&self, name: &str) -> Option<&Stratum> {
        self.strata.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method   {}", self.method);
        let _ = writeln!(out, "config   {}", self.config_digest);
        let _ = writeln!(
            out,
            "accuracy {:.4} ({}/{})",
            self.overall_accuracy, self.n_correct, self.n_labeled
        );
        let width = self.strata.iter().map(|s| s.name.len()).max().unwrap_or(0).max("stratum".len());
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", "stratum", "labeled", "correct", "accuracy");
        for s in &self.strata {
            let acc = s.accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", s.name, s.n_labeled, s.n_correct, acc);
        }
        out
    }

    /// One line per stratum plus an `overall` line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "stratum", "labeled", "correct", "accuracy"])?;
        let overall = Stratum {
            name: "overall".into(),
            n_labeled: self.n_labeled,
            n_correct: self.n_correct,
            accuracy: Some(self.overall_accuracy),
        };
        for s in std::iter::once(&overall).chain(&self.strata) {
            w.write_record([
                self.method.clone(),
                s.name.clone(),
                s.n_labeled.to_string(),
                s.n_correct.to_string(),
                s.accuracy.map_or_else(String::new, |a| a.to_string()),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Evaluation(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Evaluation(e.to_string()))
    }
}
