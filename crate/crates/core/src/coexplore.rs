//! Outer co-exploration loop: search hardware for each candidate network with
//! its partial accuracy, prune candidates that miss the PPA targets, then pick
//! the most accurate survivor after full evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::hw::{ArchConfig, SimOptions, TechParams};
use crate::kv::{KvDoc, KvError};
use crate::ppa::{Metric, PpaReport, PpaTargets};
use crate::rl::{search, Environment, QParams, RewardSpec, SearchConfig, SearchError};
use crate::scalar::Scalar;
use crate::space::{SearchBounds, DEFAULT_BUCKETS};
use crate::workload::{SnnModel, SpikeTrace};

#[derive(Clone, Debug)]
pub struct SnnCandidate {
    pub id: String,
    pub model: SnnModel,
    pub input: SpikeTrace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Stage {
    Partial,
    Full,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Partial => "partial",
            Stage::Full => "full",
        }
    }
}

/// Stand-in for training: accuracy per candidate and stage.
#[derive(Clone, Debug, PartialEq)]
pub enum AccuracyProvider<F> {
    Constant(F),
    Table(BTreeMap<(String, Stage), F>),
}

#[derive(Debug, thiserror::Error)]
pub enum CoExploreError {
    #[error("no candidates to explore")]
    NoCandidates,
    #[error("no {} accuracy for candidate `{id}`", stage.name())]
    MissingAccuracy { id: String, stage: Stage },
    #[error("accuracy {value} for candidate `{id}` outside [0, 1]")]
    AccuracyRange { id: String, value: f64 },
    #[error("candidate `{id}`: {source}")]
    Search {
        id: String,
        #[source]
        source: SearchError,
    },
}

impl<F: Scalar> AccuracyProvider<F> {
    pub fn get(&self, id: &str, stage: Stage) -> Result<F, CoExploreError> {
        let v = match self {
            AccuracyProvider::Constant(v) => *v,
            AccuracyProvider::Table(t) => *t.get(&(id.to_string(), stage)).ok_or_else(|| {
                CoExploreError::MissingAccuracy {
                    id: id.to_string(),
                    stage,
                }
            })?,
        };
        if !(v >= F::zero() && v <= F::one()) {
            return Err(CoExploreError::AccuracyRange {
                id: id.to_string(),
                value: v.to_f64_lossy(),
            });
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum PruneStatus {
    Satisfied,
    Violated(Vec<Metric>),
}

/// Checks every target; equality satisfies.
pub fn prune_check<F: Scalar>(ppa: &PpaReport, targets: &PpaTargets<F>) -> PruneStatus {
    let v = targets.violations(ppa);
    if v.is_empty() {
        PruneStatus::Satisfied
    } else {
        PruneStatus::Violated(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PruneReason {
    /// No searched architecture met the targets; lists the misses of the
    /// nearest one.
    Targets(Vec<Metric>),
    /// Nothing inside the bounds can hold the network.
    NoArchitecture,
}

impl PruneReason {
    pub fn describe(&self) -> String {
        match self {
            PruneReason::Targets(m) => m.iter().map(|m| m.name()).collect::<Vec<_>>().join(";"),
            PruneReason::NoArchitecture => "capacity".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome<F> {
    pub id: String,
    pub accuracy_partial: F,
    pub accuracy_full: Option<F>,
    /// Chosen architecture: best feasible one for survivors, nearest miss
    /// for pruned candidates.
    pub arch: Option<ArchConfig>,
    pub report: Option<PpaReport>,
    pub reward: Option<F>,
    pub pruned: Option<PruneReason>,
    pub episodes: usize,
    pub simulations: usize,
}

impl<F> Outcome<F> {
    pub fn survived(&self) -> bool {
        self.pruned.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoExploreResult<F> {
    /// Index into `outcomes` of the winning pair, if any candidate survived.
    pub best: Option<usize>,
    /// When every candidate was pruned: the one closest to its targets.
    pub nearest_miss: Option<usize>,
    pub outcomes: Vec<Outcome<F>>,
    pub episodes_used: usize,
}

impl<F: Scalar> CoExploreResult<F> {
    pub fn winner(&self) -> Option<&Outcome<F>> {
        self.best.map(|i| &self.outcomes[i])
    }

    pub fn disposition_csv(&self) -> String {
        let mut s = String::from(
            "candidate,accuracy_partial,accuracy_full,status,reason,reward,edp_snj,episodes,arch\n",
        );
        for (i, o) in self.outcomes.iter().enumerate() {
            let status = match (&o.pruned, self.best == Some(i)) {
                (Some(_), _) => "pruned",
                (None, true) => "winner",
                (None, false) => "survived",
            };
            s.push_str(&crate::csvline::row([
                o.id.clone(),
                o.accuracy_partial.to_string(),
                o.accuracy_full.map(|a| a.to_string()).unwrap_or_default(),
                status.to_string(),
                o.pruned.as_ref().map(PruneReason::describe).unwrap_or_default(),
                o.reward.map(|r| r.to_string()).unwrap_or_default(),
                o.report.as_ref().map(|r| r.edp::<f64>().to_string()).unwrap_or_default(),
                o.episodes.to_string(),
                o.arch.as_ref().map(ArchConfig::short).unwrap_or_default(),
            ]));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoExploreConfig<F> {
    /// Total episodes over all candidates.
    pub budget: usize,
    pub seed: u64,
    pub params: QParams<F>,
    pub buckets: u32,
    /// Hand episodes a candidate could not use to the candidates after it.
    pub reallocate: bool,
    pub sim: SimOptions,
}

impl<F: Scalar> CoExploreConfig<F> {
    pub fn new(budget: usize, seed: u64) -> Self {
        CoExploreConfig {
            budget,
            seed,
            params: QParams::default(),
            buckets: DEFAULT_BUCKETS,
            reallocate: false,
            sim: SimOptions::default(),
        }
    }
}

/// Per-candidate search seeds. The first candidate searches with the master
/// seed itself so a single-candidate run reproduces a plain search.
pub fn candidate_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..n).map(|i| if i == 0 { master } else { rng.next_u64() }).collect()
}

/// `true` when `a` should win over `b`: higher full accuracy, then lower EDP.
/// Earlier candidates win remaining ties because the scan keeps the first.
fn beats<F: Scalar>(a: &Outcome<F>, b: &Outcome<F>) -> bool {
    let (aa, ba) = (a.accuracy_full.unwrap_or_else(F::zero), b.accuracy_full.unwrap_or_else(F::zero));
    if aa != ba {
        return aa > ba;
    }
    let edp = |o: &Outcome<F>| o.report.as_ref().map(|r| r.edp::<F>()).unwrap_or_else(F::infinity);
    edp(a) < edp(b)
}

pub fn co_explore<F: Scalar>(
    candidates: &[SnnCandidate],
    bounds: &SearchBounds,
    tech: &TechParams,
    spec: &RewardSpec<F>,
    provider: &AccuracyProvider<F>,
    cfg: &CoExploreConfig<F>,
) -> Result<CoExploreResult<F>, CoExploreError> {
    if candidates.is_empty() {
        return Err(CoExploreError::NoCandidates);
    }
    let partial: Vec<F> = candidates
        .iter()
        .map(|c| provider.get(&c.id, Stage::Partial))
        .collect::<Result<_, _>>()?;
    let seeds = candidate_seeds(cfg.seed, candidates.len());
    let n = candidates.len();
    let mut remaining = cfg.budget;
    let mut outcomes = Vec::with_capacity(n);

    for (i, c) in candidates.iter().enumerate() {
        let share = if cfg.reallocate {
            remaining / (n - i)
        } else {
            cfg.budget / n + usize::from(i < cfg.budget % n)
        };
        let mut out = Outcome {
            id: c.id.clone(),
            accuracy_partial: partial[i],
            accuracy_full: None,
            arch: None,
            report: None,
            reward: None,
            pruned: None,
            episodes: 0,
            simulations: 0,
        };
        let initial = match bounds.initial(&c.model) {
            Some(a) if share > 0 => a,
            _ => {
                log::info!("candidate {}: no architecture within bounds holds it", c.id);
                out.pruned = Some(PruneReason::NoArchitecture);
                outcomes.push(out);
                continue;
            }
        };
        let env = Environment {
            model: &c.model,
            input: &c.input,
            tech,
            bounds,
            sim: cfg.sim,
        };
        let scfg = SearchConfig {
            episodes: share,
            seed: seeds[i],
            params: cfg.params,
            buckets: cfg.buckets,
        };
        let res = search(&initial, &env, partial[i], spec, &scfg).map_err(|source| CoExploreError::Search {
            id: c.id.clone(),
            source,
        })?;
        out.episodes = res.history.len();
        out.simulations = res.simulations;
        remaining -= out.episodes;
        match res.best_feasible() {
            Some(h) => {
                out.arch = Some(h.arch.clone());
                out.report = h.report.clone();
                out.reward = h.reward;
                out.accuracy_full = Some(provider.get(&c.id, Stage::Full)?);
            }
            None => {
                let miss = res.nearest_miss();
                out.arch = miss.map(|h| h.arch.clone());
                out.report = miss.and_then(|h| h.report.clone());
                out.reward = miss.and_then(|h| h.reward);
                out.pruned = Some(PruneReason::Targets(
                    miss.map(|h| h.violations.clone()).unwrap_or_else(|| Metric::ALL.to_vec()),
                ));
                log::info!("candidate {} pruned: {}", c.id, out.pruned.as_ref().unwrap().describe());
            }
        }
        outcomes.push(out);
    }

    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate().filter(|(_, o)| o.survived()) {
        if best.is_none_or(|b| beats(o, &outcomes[b])) {
            best = Some(i);
        }
    }
    let nearest_miss = if best.is_none() {
        let mut near: Option<usize> = None;
        for (i, o) in outcomes.iter().enumerate() {
            let misses = |o: &Outcome<F>| match &o.pruned {
                Some(PruneReason::Targets(m)) => m.len(),
                _ => usize::MAX,
            };
            if misses(o) < near.map_or(usize::MAX, |j| misses(&outcomes[j])) {
                near = Some(i);
            }
        }
        near
    } else {
        None
    };
    let episodes_used = outcomes.iter().map(|o| o.episodes).sum();
    Ok(CoExploreResult {
        best,
        nearest_miss,
        outcomes,
        episodes_used,
    })
}

/// Candidate list with its accuracy table.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub candidates: Vec<ManifestEntry>,
    pub constant_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub model: PathBuf,
    /// Input trace file; when absent a random input is drawn.
    pub trace: Option<PathBuf>,
    pub input_seed: u64,
    pub input_rate: f64,
    pub partial: Option<f64>,
    pub full: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Kv(#[from] KvError),
}

const ENTRY_FIELDS: [&str; 6] = ["model", "trace", "input_seed", "input_rate", "partial", "full"];

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut m.candidates {
            c.model = base.join(&c.model);
            c.trace = c.trace.as_ref().map(|t| base.join(t));
        }
        Ok(m)
    }

    /// `candidate.<id>.<field>` keys in file order, plus an optional
    /// `constant_accuracy` that replaces the per-candidate table.
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let doc = KvDoc::parse(text)?;
        let field = |k: &str| -> Option<(String, String)> {
            let rest = k.strip_prefix("candidate.")?;
            let (id, f) = rest.rsplit_once('.')?;
            (!id.is_empty() && ENTRY_FIELDS.contains(&f)).then(|| (id.to_string(), f.to_string()))
        };
        doc.reject_unknown(|k| k == "format_version" || k == "constant_accuracy" || field(k).is_some())?;
        if doc.contains("format_version") {
            doc.check_version(1)?;
        }
        let mut ids: Vec<String> = Vec::new();
        for k in doc.keys() {
            if let Some((id, _)) = field(k) {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        let mut candidates = Vec::new();
        for id in ids {
            let key = |f: &str| format!("candidate.{id}.{f}");
            candidates.push(ManifestEntry {
                model: PathBuf::from(doc.required(&key("model"))?),
                trace: doc.raw(&key("trace")).map(|s| PathBuf::from(s.trim())),
                input_seed: doc.get_opt(&key("input_seed"))?.unwrap_or(0),
                input_rate: doc.get_opt(&key("input_rate"))?.unwrap_or(0.3),
                partial: doc.get_opt(&key("partial"))?,
                full: doc.get_opt(&key("full"))?,
                id,
            });
        }
        if candidates.is_empty() {
            return Err(doc.bad("candidate", "manifest lists no candidates").into());
        }
        Ok(Manifest {
            candidates,
            constant_accuracy: doc.get_opt("constant_accuracy")?,
        })
    }

    pub fn provider<F: Scalar>(&self) -> AccuracyProvider<F> {
        if let Some(c) = self.constant_accuracy {
            return AccuracyProvider::Constant(F::lit(c));
        }
        let mut t = BTreeMap::new();
        for c in &self.candidates {
            if let Some(p) = c.partial {
                t.insert((c.id.clone(), Stage::Partial), F::lit(p));
            }
            if let Some(f) = c.full {
                t.insert((c.id.clone(), Stage::Full), F::lit(f));
            }
        }
        AccuracyProvider::Table(t)
    }
}
