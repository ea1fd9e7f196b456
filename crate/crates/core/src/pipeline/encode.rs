//! One-hot encoding of multinomial claims into binary statements.
//!
//! Every distinct `(entity, attribute, value)` becomes a statement. A source
//! asserting value `A` claims 1 on `(entity, attribute, A)` and, under the
//! implicit-negatives policy, 0 on every other observed value of that
//! `(entity, attribute)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::features::FrozenRecipe;
use super::ingest::RawClaimRow;
use crate::error::{Error, Result};
use crate::model::{ClaimRecord, Dataset, SourceId, StatementBundle, StatementId};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePolicy {
    #[default]
    ImplicitNegatives,
    PositivesOnly,
}

impl std::str::FromStr for NegativePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implicit-negatives" => Ok(NegativePolicy::ImplicitNegatives),
            "positives-only" => Ok(NegativePolicy::PositivesOnly),
            other => Err(Error::InvalidConfig(format!("unknown negative-claim policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub entity: String,
    pub attribute: String,
}

impl GroupKey {
    pub fn new(entity: impl Into<String>, attribute: impl Into<String>) -> Self {
        GroupKey {
            entity: entity.into(),
            attribute: attribute.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StatementKey {
    pub entity: String,
    pub attribute: String,
    pub value: String,
}

impl StatementKey {
    pub fn group(&self) -> GroupKey {
        GroupKey::new(&self.entity, &self.attribute)
    }
}

/// How the statements of a dataset were derived from raw rows.
///
/// `statements[i]` is the key of `StatementId(i)`. `claim_rows` (not
/// serialized) maps claim `i` of bundle `b` to the row it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingManifest {
    pub format_version: u32,
    pub policy: NegativePolicy,
    pub statements: Vec<StatementKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FrozenRecipe>,
    #[serde(skip)]
    pub claim_rows: Vec<Vec<usize>>,
}

impl EncodingManifest {
    pub fn key(&self, id: StatementId) -> Option<&StatementKey> {
        self.statements.get(id.0)
    }

    pub fn id_of(&self, key: &StatementKey) -> Option<StatementId> {
        self.statements.binary_search(key).ok().map(StatementId)
    }

    /// Statement ids of every group, values in sorted order.
    pub fn groups(&self) -> BTreeMap<GroupKey, Vec<StatementId>> {
        let mut out: BTreeMap<GroupKey, Vec<StatementId>> = BTreeMap::new();
        for (i, key) in self.statements.iter().enumerate() {
            out.entry(key.group()).or_default().push(StatementId(i));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EncodeOptions {
    pub policy: NegativePolicy,
    /// Drop unresolvable conflicting rows with a warning instead of failing.
    pub lenient: bool,
}

/// Resolves duplicates: identical rows from one source collapse; differing
/// values keep the later timestamp, and without an ordering the later row is
/// rejected. Returns indices of the surviving rows, in file order.
fn resolve_rows(rows: &[RawClaimRow], lenient: bool) -> Result<Vec<usize>> {
    let mut keep: BTreeMap<(GroupKey, &str), usize> = BTreeMap::new();
    let mut anonymous = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let Some(src) = row.source.as_deref() else {
            anonymous.push(i);
            continue;
        };
        let key = (GroupKey::new(&row.entity, &row.attribute), src);
        let Some(&j) = keep.get(&key) else {
            keep.insert(key, i);
            continue;
        };
        let prev = &rows[j];
        if prev.value == row.value {
            if row.timestamp > prev.timestamp {
                keep.insert(key, i);
            }
            continue;
        }
        match (prev.timestamp, row.timestamp) {
            (Some(a), Some(b)) if a != b => {
                if b > a {
                    keep.insert(key, i);
                }
            }
            _ if lenient => {
                log::warn!(
                    "dropping row {} ({src} on {}/{}): conflicts with an earlier claim",
                    i + 1,
                    row.entity,
                    row.attribute
                );
            }
            _ => {
                return Err(Error::ConflictingClaims {
                    source_id: src.to_string(),
                    entity: row.entity.clone(),
                    attribute: row.attribute.clone(),
                    first: prev.value.clone(),
                    second: row.value.clone(),
                })
            }
        }
    }
    let mut kept: Vec<usize> = keep.into_values().chain(anonymous).collect();
    kept.sort_unstable();
    Ok(kept)
}

pub fn one_hot_encode(rows: &[RawClaimRow], policy: NegativePolicy) -> Result<(Dataset, EncodingManifest)> {
    one_hot_encode_with(
        rows,
        EncodeOptions {
            policy,
            lenient: false,
        },
    )
}

pub fn one_hot_encode_with(rows: &[RawClaimRow], opts: EncodeOptions) -> Result<(Dataset, EncodingManifest)> {
    if rows.is_empty() {
        return Err(Error::Empty("no claim rows to encode".into()));
    }
    let kept = resolve_rows(rows, opts.lenient)?;

    let statements: Vec<StatementKey> = kept
        .iter()
        .map(|&i| StatementKey {
            entity: rows[i].entity.clone(),
            attribute: rows[i].attribute.clone(),
            value: rows[i].value.clone(),
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let id_of = |k: &StatementKey| StatementId(statements.binary_search(k).unwrap_or_default());
    let mut group_values: BTreeMap<GroupKey, Vec<StatementId>> = BTreeMap::new();
    for (i, key) in statements.iter().enumerate() {
        group_values.entry(key.group()).or_default().push(StatementId(i));
    }

    let mut claims: Vec<Vec<(ClaimRecord, usize)>> = vec![Vec::new(); statements.len()];
    for &r in &kept {
        let row = &rows[r];
        let source = row.source.as_ref().map(SourceId::new);
        let own = id_of(&StatementKey {
            entity: row.entity.clone(),
            attribute: row.attribute.clone(),
            value: row.value.clone(),
        });
        claims[own.0].push((ClaimRecord::new(own, source.clone(), true), r));
        if opts.policy == NegativePolicy::ImplicitNegatives {
            let group = GroupKey::new(&row.entity, &row.attribute);
            for &other in &group_values[&group] {
                if other != own {
                    claims[other.0].push((ClaimRecord::new(other, source.clone(), false), r));
                }
            }
        }
    }

    let mut bundles = Vec::with_capacity(statements.len());
    let mut claim_rows = Vec::with_capacity(statements.len());
    for (i, list) in claims.into_iter().enumerate() {
        let (records, origins): (Vec<_>, Vec<_>) = list.into_iter().unzip();
        bundles.push(StatementBundle::new(StatementId(i), records)?);
        claim_rows.push(origins);
    }
    let dataset = Dataset::new(bundles, Vec::new())?;
    let manifest = EncodingManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        policy: opts.policy,
        statements,
        features: None,
        claim_rows,
    };
    Ok((dataset, manifest))
}

/// A positive claim recovered from an encoded dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DecodedClaim {
    pub entity: String,
    pub attribute: String,
    pub value: String,
    pub source: Option<String>,
}

/// Positive claims of the dataset, sorted.
pub fn decode(dataset: &Dataset, manifest: &EncodingManifest) -> Result<Vec<DecodedClaim>> {
    let mut out = Vec::new();
    for bundle in dataset.bundles() {
        let key = manifest.key(bundle.statement_id()).ok_or_else(|| {
            Error::InvalidDataset(format!("statement {} not in manifest", bundle.statement_id()))
        })?;
        for claim in bundle.claims().iter().filter(|c| c.value) {
            out.push(DecodedClaim {
                entity: key.entity.clone(),
                attribute: key.attribute.clone(),
                value: key.value.clone(),
                source: claim.source_id.as_ref().map(|s| s.0.clone()),
            });
        }
    }
    out.sort();
    Ok(out)
}
