//! Synthetic corpora with planted truth and feature-linked source
//! reliabilities.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClaimRecord, Dataset, SourceId, StatementBundle, StatementId, DEFAULT_SEED};
use crate::pipeline::ingest::{write_csv, write_jsonl, ClaimFormat, RawClaimRow};

pub const SYNTH_ATTRIBUTE: &str = "holds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub fraction: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// Feature values shared by every claim of the population's sources.
    #[serde(default)]
    pub signature: Vec<f64>,
}

fn default_prior() -> f64 {
    0.5
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_statements: usize,
    pub n_sources: usize,
    /// Probability that a source claims a given statement. Ignored when
    /// `long_tail_exponent` is set.
    pub claim_density: f64,
    pub populations: Vec<Population>,
    /// Claims per source follow a Zipf law with this exponent.
    #[serde(default)]
    pub long_tail_exponent: Option<f64>,
    #[serde(default)]
    pub noise_features: usize,
    #[serde(default = "default_prior")]
    pub truth_prior: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.n_statements == 0 || self.n_sources == 0 {
            return bad("need at least one statement and one source".into());
        }
        if self.long_tail_exponent.is_none() && !(self.claim_density > 0.0 && self.claim_density <= 1.0) {
            return bad(format!("claim_density {} outside (0, 1]", self.claim_density));
        }
        if let Some(s) = self.long_tail_exponent {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("long_tail_exponent {s} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.truth_prior) {
            return bad(format!("truth_prior {} outside [0, 1]", self.truth_prior));
        }
        if self.populations.is_empty() {
            return bad("no populations".into());
        }
        let total: f64 = self.populations.iter().map(|p| p.fraction).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("population fractions sum to {total}, not 1"));
        }
        let dim = self.populations[0].signature.len();
        for (i, p) in self.populations.iter().enumerate() {
            if !(p.fraction >= 0.0) {
                return bad(format!("population {i}: negative fraction"));
            }
            if !(0.0 <= p.fpr && p.fpr <= p.tpr && p.tpr <= 1.0) {
                return bad(format!("population {i}: need 0 <= fpr <= tpr <= 1, got tpr {} fpr {}", p.tpr, p.fpr));
            }
            if p.signature.len() != dim {
                return bad(format!("population {i}: signature length {} differs from {dim}", p.signature.len()));
            }
            if p.signature.iter().any(|x| !x.is_finite()) {
                return bad(format!("population {i}: non-finite signature"));
            }
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        let dim = self.populations.first().map_or(0, |p| p.signature.len());
        (0..dim)
            .map(|j| format!("sig_{j}"))
            .chain((0..self.noise_features).map(|j| format!("noise_{j}")))
            .collect()
    }

    /// Population index of every source: contiguous blocks whose sizes are
    /// the rounded cumulative fractions.
    pub fn population_of_sources(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_sources);
        let mut cumulative = 0.0;
        for (k, p) in self.populations.iter().enumerate() {
            cumulative += p.fraction;
            let end = if k + 1 == self.populations.len() {
                self.n_sources
            } else {
                ((cumulative * self.n_sources as f64).round() as usize).min(self.n_sources)
            };
            out.resize(end.max(out.len()), k);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSource {
    pub source: SourceId,
    pub population: usize,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    pub truth: BTreeMap<StatementId, bool>,
    pub sources: Vec<PlantedSource>,
    /// The corpus as claim-file rows, one per claim.
    pub rows: Vec<RawClaimRow>,
}

pub fn source_name(i: usize) -> String {
    format!("s{i:05}")
}

pub fn statement_name(i: usize) -> String {
    format!("f{i:05}")
}

/// Samples a corpus. Statements nobody claimed are dropped and the rest
/// renumbered in order.
pub fn generate(spec: &ScenarioSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth: Vec<bool> = (0..spec.n_statements).map(|_| rng.random_bool(spec.truth_prior)).collect();
    let membership = spec.population_of_sources();
    let zipf = match spec.long_tail_exponent {
        Some(s) => Some(Zipf::new(spec.n_statements as f64, s).map_err(|e| Error::InvalidScenario(e.to_string()))?),
        None => None,
    };

    // claims[f] = (source, value, features)
    let mut claims: Vec<Vec<(usize, bool, Vec<f64>)>> = vec![Vec::new(); spec.n_statements];
    for (s, &k) in membership.iter().enumerate() {
        let pop = &spec.populations[k];
        let targets: Vec<usize> = match &zipf {
            Some(z) => {
                let count = (z.sample(&mut rng) as usize).clamp(1, spec.n_statements);
                let mut picked = rand::seq::index::sample(&mut rng, spec.n_statements, count).into_vec();
                picked.sort_unstable();
                picked
            }
            None => (0..spec.n_statements).filter(|_| rng.random_bool(spec.claim_density)).collect(),
        };
        for f in targets {
            let rate = if truth[f] { pop.tpr } else { pop.fpr };
            let value = rng.random_bool(rate);
            let mut features = pop.signature.clone();
            features.extend((0..spec.noise_features).map(|_| -> f64 { rng.sample(StandardNormal) }));
            claims[f].push((s, value, features));
        }
    }

    let names = spec.feature_names();
    let mut bundles = Vec::new();
    let mut truth_map = BTreeMap::new();
    let mut rows = Vec::new();
    for (f, list) in claims.into_iter().enumerate().filter(|(_, l)| !l.is_empty()) {
        let id = StatementId(bundles.len());
        truth_map.insert(id, truth[f]);
        let mut records = Vec::with_capacity(list.len());
        for (s, value, features) in list {
            let mut row = RawClaimRow::new(
                &statement_name(id.0),
                SYNTH_ATTRIBUTE,
                Some(&source_name(s)),
                if value { "1" } else { "0" },
            );
            row.timestamp = Some(rows.len() as i64);
            row.extra = names.iter().cloned().zip(features.iter().map(f64::to_string)).collect();
            rows.push(row);
            records.push(ClaimRecord::new(id, Some(SourceId::new(source_name(s))), value).with_features(features));
        }
        bundles.push(StatementBundle::new(id, records)?);
    }
    if bundles.is_empty() {
        return Err(Error::InvalidScenario("scenario produced no claims".into()));
    }
    let dataset = Dataset::new(bundles, names)?;
    let sources = membership
        .iter()
        .enumerate()
        .map(|(s, &k)| PlantedSource {
            source: SourceId::new(source_name(s)),
            population: k,
            tpr: spec.populations[k].tpr,
            fpr: spec.populations[k].fpr,
        })
        .collect();
    Ok(SyntheticCorpus {
        dataset,
        truth: truth_map,
        sources,
        rows,
    })
}

impl SyntheticCorpus {
    /// Truth as claim-file groups: the value each statement's group should
    /// take (`"1"` if true).
    pub fn truth_rows(&self) -> Vec<(String, String, String)> {
        self.truth
            .iter()
            .map(|(id, &t)| (statement_name(id.0), SYNTH_ATTRIBUTE.to_string(), if t { "1" } else { "0" }.to_string()))
            .collect()
    }

    /// Empirical (tpr, fpr) of every source against the planted truth.
    pub fn empirical_rates(&self) -> BTreeMap<SourceId, (f64, f64)> {
        let mut counts: BTreeMap<&SourceId, [usize; 4]> = BTreeMap::new();
        for b in self.dataset.bundles() {
            let t = self.truth[&b.statement_id()];
            for c in b.claims() {
                if let Some(s) = &c.source_id {
                    let e = counts.entry(s).or_default();
                    let base = if t { 0 } else { 2 };
                    e[base] += usize::from(c.value);
                    e[base + 1] += 1;
                }
            }
        }
        counts
            .into_iter()
            .map(|(s, [tp, np, fp, nn])| {
                let rate = |k: usize, n: usize| if n == 0 { f64::NAN } else { k as f64 / n as f64 };
                (s.clone(), (rate(tp, np), rate(fp, nn)))
            })
            .collect()
    }

    /// Writes `claims.csv` (or `claims.jsonl`), `truth.csv` and
    /// `sources.csv` into `dir`.
    pub fn write(&self, dir: &Path, format: ClaimFormat) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let claims = dir.join(match format {
            ClaimFormat::Csv => "claims.csv",
            ClaimFormat::Jsonl => "claims.jsonl",
        });
        let file = BufWriter::new(File::create(&claims).map_err(|e| Error::io(&claims, e))?);
        match format {
            ClaimFormat::Csv => write_csv(&self.rows, file)?,
            ClaimFormat::Jsonl => write_jsonl(&self.rows, file)?,
        }

        let mut w = csv::Writer::from_path(dir.join("truth.csv"))?;
        w.write_record(["entity", "attribute", "value"])?;
        for (e, a, v) in self.truth_rows() {
            w.write_record([e, a, v])?;
        }
        w.flush().map_err(|e| Error::io(&dir.join("truth.csv"), e))?;

        let mut w = csv::Writer::from_path(dir.join("sources.csv"))?;
        w.write_record(["source", "population", "tpr", "fpr"])?;
        for s in &self.sources {
            w.write_record([s.source.0.clone(), s.population.to_string(), s.tpr.to_string(), s.fpr.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&dir.join("sources.csv"), e))?;
        Ok(())
    }
}
