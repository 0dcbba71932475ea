//! Tabular Q-learning over the architecture space with a PPA-weighted reward.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::hw::{simulate, ArchConfig, HwError, RunMode, SimOptions, TechParams, TrafficStats};
use crate::kv::{KvDoc, KvError};
use crate::ppa::{Metric, PpaReport, PpaTargets};
use crate::scalar::Scalar;
use crate::space::{apply_action, encode_state, legal_actions, validate, RlState, SearchAction, SearchBounds};
use crate::time::SimTime;
use crate::workload::{SnnModel, SpikeTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RewardMode {
    /// All three exponents switch together on joint target satisfaction.
    Joint,
    /// Each exponent switches on its own metric's target.
    PerMetric,
}

impl FromStr for RewardMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "joint" => Ok(RewardMode::Joint),
            "per_metric" => Ok(RewardMode::PerMetric),
            o => Err(format!("unknown reward mode `{o}` (expected joint or per_metric)")),
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::Joint => "joint",
            RewardMode::PerMetric => "per_metric",
        })
    }
}

/// Exponents `p` apply while targets are met, `q` once they are missed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RewardSpec<F> {
    pub p: [F; 3],
    pub q: [F; 3],
    pub targets: PpaTargets<F>,
    pub mode: RewardMode,
}

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("cannot read reward spec {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("reward spec: {0}")]
    Kv(#[from] KvError),
    #[error("accuracy {0} outside [0, 1]")]
    Accuracy(f64),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("exponent {0} is not finite")]
    Exponent(&'static str),
}

impl<F: Scalar> RewardSpec<F> {
    /// Accuracy alone while targets hold, inverse-linear penalty otherwise.
    pub fn new(targets: PpaTargets<F>) -> Self {
        RewardSpec {
            p: [F::zero(); 3],
            q: [-F::one(); 3],
            targets,
            mode: RewardMode::Joint,
        }
    }

    pub fn load(path: &Path) -> Result<Self, RewardError> {
        let text = std::fs::read_to_string(path).map_err(|source| RewardError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Keys `p0..p2`, `q0..q2` (default 0 and -1), `t_latency_ns`,
    /// `t_energy_pj`, `t_area_um2` (default `inf`) and `mode`.
    pub fn parse(text: &str) -> Result<Self, RewardError> {
        const KEYS: [&str; 11] = [
            "format_version",
            "p0",
            "p1",
            "p2",
            "q0",
            "q1",
            "q2",
            "t_latency_ns",
            "t_energy_pj",
            "t_area_um2",
            "mode",
        ];
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(|k| KEYS.contains(&k))?;
        if doc.contains("format_version") {
            doc.check_version(1)?;
        }
        let real = |key: &str, default: f64| -> Result<F, KvError> {
            let v = doc.get_opt::<f64>(key)?.unwrap_or(default);
            Ok(F::lit(v))
        };
        let t_latency = match doc.raw("t_latency_ns") {
            None => SimTime::MAX,
            Some(s) if s.trim() == "inf" => SimTime::MAX,
            Some(s) => SimTime::parse_ns(s).ok_or_else(|| doc.bad("t_latency_ns", "expected nanoseconds"))?,
        };
        let spec = RewardSpec {
            p: [real("p0", 0.0)?, real("p1", 0.0)?, real("p2", 0.0)?],
            q: [real("q0", -1.0)?, real("q1", -1.0)?, real("q2", -1.0)?],
            targets: PpaTargets {
                t_latency,
                t_energy_pj: real("t_energy_pj", f64::INFINITY)?,
                t_area_um2: real("t_area_um2", f64::INFINITY)?,
            },
            mode: doc.get_opt("mode")?.unwrap_or(RewardMode::Joint),
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), RewardError> {
        const NAMES: [&str; 6] = ["p0", "p1", "p2", "q0", "q1", "q2"];
        for (i, w) in self.p.iter().chain(self.q.iter()).enumerate() {
            if !w.is_finite() {
                return Err(RewardError::Exponent(NAMES[i]));
            }
        }
        if !self.targets.is_valid() {
            return Err(RewardError::NonPositive("every target"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let t = &self.targets;
        let lat = if t.t_latency == SimTime::MAX {
            "inf".to_string()
        } else {
            t.t_latency.as_ns::<f64>().to_string()
        };
        format!(
            "format_version = 1\np0 = {}\np1 = {}\np2 = {}\nq0 = {}\nq1 = {}\nq2 = {}\n\
             t_latency_ns = {lat}\nt_energy_pj = {}\nt_area_um2 = {}\nmode = {}\n",
            self.p[0], self.p[1], self.p[2], self.q[0], self.q[1], self.q[2], t.t_energy_pj, t.t_area_um2, self.mode
        )
    }

    /// Exponents in force for the given constraint status per metric.
    pub fn exponents(&self, met: [bool; 3]) -> [F; 3] {
        let all = met.iter().all(|m| *m);
        std::array::from_fn(|i| {
            let ok = match self.mode {
                RewardMode::Joint => all,
                RewardMode::PerMetric => met[i],
            };
            if ok {
                self.p[i]
            } else {
                self.q[i]
            }
        })
    }
}

/// Reward from raw metric values (latency, energy, area) and their targets.
// negated comparisons so NaN fails the checks
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn reward_values<F: Scalar>(accu: F, values: [F; 3], targets: [F; 3], spec: &RewardSpec<F>) -> Result<F, RewardError> {
    if !(accu >= F::zero() && accu <= F::one()) {
        return Err(RewardError::Accuracy(accu.to_f64_lossy()));
    }
    const NAMES: [&str; 3] = ["latency", "energy", "area"];
    for i in 0..3 {
        if !(values[i] > F::zero()) {
            return Err(RewardError::NonPositive(NAMES[i]));
        }
        if !(targets[i] > F::zero()) {
            return Err(RewardError::NonPositive("target"));
        }
    }
    let met: [bool; 3] = std::array::from_fn(|i| values[i] <= targets[i]);
    let w = spec.exponents(met);
    let mut r = accu;
    for i in 0..3 {
        r = r * (values[i] / targets[i]).powf(w[i]);
    }
    Ok(r)
}

/// Multi-objective reward of a simulated design point.
pub fn reward<F: Scalar>(accu: F, ppa: &PpaReport, spec: &RewardSpec<F>) -> Result<F, RewardError> {
    let t = &spec.targets;
    let lat = |s: SimTime| <F as Scalar>::from_u128(s.as_ps() as u128);
    let values = [lat(ppa.latency), ppa.energy_pj::<F>(), ppa.area::<F>()];
    reward_values(accu, values, [lat(t.t_latency), t.t_energy_pj, t.t_area_um2], spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QParams<F> {
    pub alpha: F,
    pub gamma: F,
    pub epsilon_start: F,
    pub epsilon_end: F,
}

impl<F: Scalar> Default for QParams<F> {
    fn default() -> Self {
        QParams {
            alpha: F::lit(0.1),
            gamma: F::lit(0.9),
            epsilon_start: F::lit(0.5),
            epsilon_end: F::lit(0.05),
        }
    }
}

impl<F: Scalar> QParams<F> {
    /// Linear anneal from start to end over `budget` episodes.
    pub fn epsilon(&self, episode: usize, budget: usize) -> F {
        if budget <= 1 {
            return self.epsilon_start;
        }
        let frac = F::lit(episode as f64 / (budget - 1) as f64);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Q values keyed by state and action; unseen entries read as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable<F> {
    actions: Vec<SearchAction>,
    values: BTreeMap<(RlState, SearchAction), F>,
}

impl<F: Scalar> QTable<F> {
    pub fn new(actions: Vec<SearchAction>) -> Self {
        QTable {
            actions,
            values: BTreeMap::new(),
        }
    }

    pub fn actions(&self) -> &[SearchAction] {
        &self.actions
    }

    pub fn get(&self, s: RlState, a: SearchAction) -> F {
        self.values.get(&(s, a)).copied().unwrap_or_else(F::zero)
    }

    pub fn set(&mut self, s: RlState, a: SearchAction, v: F) {
        self.values.insert((s, a), v);
    }

    pub fn max_value(&self, s: RlState) -> F {
        self.actions
            .iter()
            .map(|&a| self.get(s, a))
            .reduce(F::max)
            .unwrap_or_else(F::zero)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(RlState, SearchAction), &F)> {
        self.values.iter()
    }
}

/// One-step Q-learning backup.
pub fn q_update<F: Scalar>(table: &mut QTable<F>, s: RlState, a: SearchAction, r: F, next: RlState, params: &QParams<F>) {
    let q = table.get(s, a);
    let target = r + params.gamma * table.max_value(next);
    table.set(s, a, q + params.alpha * (target - q));
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no legal action from the current architecture (search bounds are degenerate)")]
pub struct NoLegalAction;

/// ε-greedy choice among `legal`, which must be in catalogue order. Greedy ties
/// go to the earliest action.
pub fn select_action<F: Scalar, R: Rng>(
    table: &QTable<F>,
    s: RlState,
    legal: &[SearchAction],
    epsilon: F,
    rng: &mut R,
) -> Result<SearchAction, NoLegalAction> {
    if legal.is_empty() {
        return Err(NoLegalAction);
    }
    let explore: f64 = rng.gen();
    if explore < epsilon.to_f64_lossy() {
        return Ok(legal[rng.gen_range(0..legal.len())]);
    }
    let mut best = legal[0];
    let mut best_q = table.get(s, best);
    for &a in &legal[1..] {
        let q = table.get(s, a);
        if q > best_q {
            best = a;
            best_q = q;
        }
    }
    Ok(best)
}

/// Simulation environment shared by every episode of a search.
#[derive(Clone, Copy, Debug)]
pub struct Environment<'a> {
    pub model: &'a SnnModel,
    pub input: &'a SpikeTrace,
    pub tech: &'a TechParams,
    pub bounds: &'a SearchBounds,
    pub sim: SimOptions,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: PpaReport,
    pub traffic: TrafficStats,
}

impl Environment<'_> {
    pub fn evaluate(&self, arch: &ArchConfig) -> Result<Evaluation, HwError> {
        let out = simulate(arch, self.tech, self.model, self.input, RunMode::ClosedLoop, &self.sim)?;
        Ok(Evaluation {
            report: out.report,
            traffic: out.traffic,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SearchConfig<F> {
    pub episodes: usize,
    pub seed: u64,
    pub params: QParams<F>,
    pub buckets: u32,
}

impl<F: Scalar> SearchConfig<F> {
    pub fn new(episodes: usize, seed: u64) -> Self {
        SearchConfig {
            episodes,
            seed,
            params: QParams::default(),
            buckets: crate::space::DEFAULT_BUCKETS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryEntry<F> {
    pub episode: usize,
    pub arch: ArchConfig,
    pub report: Option<PpaReport>,
    pub reward: Option<F>,
    pub violations: Vec<Metric>,
    /// Action taken after this episode's evaluation.
    pub action: Option<SearchAction>,
    pub error: Option<String>,
}

impl<F> HistoryEntry<F> {
    pub fn feasible(&self) -> bool {
        self.report.is_some() && self.violations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchResult<F> {
    pub best_arch: ArchConfig,
    pub best_reward: F,
    pub best_episode: usize,
    pub history: Vec<HistoryEntry<F>>,
    /// Distinct architectures actually simulated.
    pub simulations: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("search budget must be at least one episode")]
    ZeroBudget,
    #[error("initial architecture is invalid: {}", .0.join("; "))]
    InvalidInitial(Vec<String>),
    #[error("initial architecture failed to simulate: {0}")]
    InitialSimulation(HwError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    NoAction(#[from] NoLegalAction),
}

impl<F: Scalar> SearchResult<F> {
    /// Highest-reward entry that meets every target, earliest on ties.
    pub fn best_feasible(&self) -> Option<&HistoryEntry<F>> {
        let mut best: Option<&HistoryEntry<F>> = None;
        for h in self.history.iter().filter(|h| h.feasible()) {
            if best.is_none_or(|b| h.reward > b.reward) {
                best = Some(h);
            }
        }
        best
    }

    /// Entry closest to meeting the targets: fewest violations, then highest reward.
    pub fn nearest_miss(&self) -> Option<&HistoryEntry<F>> {
        let mut best: Option<&HistoryEntry<F>> = None;
        for h in self.history.iter().filter(|h| h.report.is_some()) {
            if best.is_none_or(|b| {
                h.violations.len() < b.violations.len() || (h.violations.len() == b.violations.len() && h.reward > b.reward)
            }) {
                best = Some(h);
            }
        }
        best
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("episode,reward,latency_ns,energy_pj,area_um2,edp_snj,violations,action,arch\n");
        for h in &self.history {
            let (r, l, e, a, edp) = match (&h.report, h.reward) {
                (Some(p), Some(r)) => (
                    format!("{r}"),
                    format!("{}", p.latency_ns::<f64>()),
                    format!("{}", p.energy_pj::<f64>()),
                    p.area_um2.to_string(),
                    format!("{}", p.edp::<f64>()),
                ),
                _ => ("error".into(), String::new(), String::new(), String::new(), String::new()),
            };
            let v: Vec<&str> = h.violations.iter().map(|m| m.name()).collect();
            s.push_str(&crate::csvline::row([
                h.episode.to_string(),
                r,
                l,
                e,
                a,
                edp,
                v.join(";"),
                h.action.map(|a| a.to_string()).unwrap_or_default(),
                h.arch.short(),
            ]));
        }
        s
    }
}

/// Runs `cfg.episodes` episodes from `initial`. Each episode simulates the
/// current architecture (cached per configuration), scores it, backs up the
/// previous step and moves by an ε-greedy action.
pub fn search<F: Scalar>(
    initial: &ArchConfig,
    env: &Environment<'_>,
    accuracy: F,
    spec: &RewardSpec<F>,
    cfg: &SearchConfig<F>,
) -> Result<SearchResult<F>, SearchError> {
    if cfg.episodes == 0 {
        return Err(SearchError::ZeroBudget);
    }
    let v = validate(initial, env.bounds, env.model);
    if !v.is_empty() {
        return Err(SearchError::InvalidInitial(v));
    }
    spec.check()?;
    if !(accuracy >= F::zero() && accuracy <= F::one()) {
        return Err(RewardError::Accuracy(accuracy.to_f64_lossy()).into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut table = QTable::new(SearchAction::catalogue(initial.mapping.layer_sizes().len()));
    let mut cache: HashMap<ArchConfig, Result<Evaluation, String>> = HashMap::new();
    let mut history: Vec<HistoryEntry<F>> = Vec::with_capacity(cfg.episodes);
    let mut arch = initial.clone();
    // (state, action, architecture) of the last successful step
    let mut prev: Option<(RlState, SearchAction, ArchConfig)> = None;
    let mut best: Option<(F, usize)> = None;

    for episode in 0..cfg.episodes {
        let eval = cache
            .entry(arch.clone())
            .or_insert_with(|| env.evaluate(&arch).map_err(|e| e.to_string()))
            .clone();
        let eval = match eval {
            Ok(e) => e,
            Err(msg) => {
                if episode == 0 {
                    return Err(SearchError::InitialSimulation(env.evaluate(&arch).unwrap_err()));
                }
                log::warn!("episode {episode}: {} failed to simulate: {msg}", arch.short());
                let failed = std::mem::replace(&mut arch, prev.as_ref().map(|p| p.2.clone()).unwrap_or(initial.clone()));
                history.push(HistoryEntry {
                    episode,
                    arch: failed,
                    report: None,
                    reward: None,
                    violations: Vec::new(),
                    action: None,
                    error: Some(msg),
                });
                continue;
            }
        };
        let state = encode_state(&eval.traffic, &arch, cfg.buckets);
        let r = reward(accuracy, &eval.report, spec)?;
        if let Some((s, a, _)) = prev.take() {
            q_update(&mut table, s, a, r, state, &cfg.params);
        }
        if best.is_none_or(|(b, _)| r > b) {
            best = Some((r, episode));
        }
        let mut entry = HistoryEntry {
            episode,
            arch: arch.clone(),
            violations: spec.targets.violations(&eval.report),
            report: Some(eval.report),
            reward: Some(r),
            action: None,
            error: None,
        };
        if episode + 1 < cfg.episodes {
            let legal = legal_actions(&arch, env.bounds);
            let actions: Vec<SearchAction> = legal.iter().map(|l| l.0).collect();
            let eps = cfg.params.epsilon(episode, cfg.episodes);
            let a = select_action(&table, state, &actions, eps, &mut rng)?;
            let next = legal.into_iter().find(|l| l.0 == a).map(|l| l.1).expect("chosen from legal list");
            debug_assert_eq!(apply_action(&arch, a, env.bounds).as_ref(), Ok(&next));
            entry.action = Some(a);
            prev = Some((state, a, arch.clone()));
            arch = next;
        }
        history.push(entry);
    }

    let (best_reward, best_episode) = best.expect("first episode always scores");
    Ok(SearchResult {
        best_arch: history[best_episode].arch.clone(),
        best_reward,
        best_episode,
        history,
        simulations: cache.len(),
    })
}
