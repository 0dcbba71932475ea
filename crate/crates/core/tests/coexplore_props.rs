mod common;

use std::collections::BTreeMap;

use common::{fc_chain, rng, tiny_model};
use neuromesh::coexplore::{
    candidate_seeds, co_explore, prune_check, AccuracyProvider, CoExploreConfig, PruneReason, PruneStatus, SnnCandidate,
    Stage,
};
use neuromesh::hw::TechParams;
use neuromesh::ppa::PpaTargets;
use neuromesh::rl::{search, Environment, RewardSpec, SearchConfig};
use neuromesh::space::SearchBounds;
use neuromesh::time::SimTime;
use neuromesh::workload::random_input;
use proptest::prelude::*;
use rand::Rng;

const BOUNDS: &str = "neurons_per_pe = {4,8,16}\nmesh_dims = 1x1..2x2\nfifo_depth_per_port = 1..2\n\
                      arbitration = {round_robin,fixed_priority}\nvirtual_channels = 2\nflit_payload_bits = 16\n";

#[derive(Clone, Debug)]
struct Setup {
    seed: u64,
    n: usize,
    /// Accuracies on a coarse grid so ties happen.
    acc: Vec<(u8, u8)>,
    targets: (u64, f64, f64),
    budget: usize,
    reallocate: bool,
}

fn setup() -> impl Strategy<Value = Setup> {
    (1usize..4).prop_flat_map(|n| {
        (
            any::<u64>(),
            prop::collection::vec((0u8..5, 0u8..5), n),
            (100u64..3000, 40.0f64..1500.0, 5e5f64..3e6),
            0usize..30,
            any::<bool>(),
        )
            .prop_map(move |(seed, acc, targets, budget, reallocate)| Setup { seed, n, acc, targets, budget, reallocate })
    })
}

fn candidates(s: &Setup) -> Vec<SnnCandidate> {
    let mut r = rng(s.seed);
    (0..s.n)
        .map(|i| {
            // an occasional network too large for any configuration in the bounds
            let model = if r.gen_bool(0.1) { fc_chain(&[40, 40, 10], 5, 50, 1) } else { tiny_model(&mut r) };
            let input = random_input(&model, s.seed ^ i as u64, 0.5);
            SnnCandidate { id: format!("c{i}"), model, input }
        })
        .collect()
}

fn provider(s: &Setup) -> AccuracyProvider<f64> {
    let mut t = BTreeMap::new();
    for (i, &(p, f)) in s.acc.iter().enumerate() {
        t.insert((format!("c{i}"), Stage::Partial), 0.5 + p as f64 / 10.0);
        t.insert((format!("c{i}"), Stage::Full), 0.5 + f as f64 / 10.0);
    }
    AccuracyProvider::Table(t)
}

fn reward_spec(s: &Setup) -> RewardSpec<f64> {
    let mut spec = RewardSpec::new(PpaTargets {
        t_latency: SimTime::from_ns(s.targets.0),
        t_energy_pj: s.targets.1,
        t_area_um2: s.targets.2,
    });
    spec.p = [-0.3; 3];
    spec.q = [-1.5; 3];
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pruning_winner_and_budget_invariants(s in setup()) {
        let cands = candidates(&s);
        let bounds = SearchBounds::parse(BOUNDS).unwrap();
        let tech = TechParams::default_180nm();
        let spec = reward_spec(&s);
        let prov = provider(&s);
        let cfg = CoExploreConfig { reallocate: s.reallocate, ..CoExploreConfig::new(s.budget, s.seed) };
        let res = co_explore(&cands, &bounds, &tech, &spec, &prov, &cfg).unwrap();

        // budget accounting
        prop_assert!(res.episodes_used <= s.budget);
        prop_assert_eq!(res.episodes_used, res.outcomes.iter().map(|o| o.episodes).sum::<usize>());
        prop_assert_eq!(res.outcomes.len(), s.n);

        let seeds = candidate_seeds(s.seed, s.n);
        for (i, o) in res.outcomes.iter().enumerate() {
            match &o.pruned {
                None => {
                    // survivors carry a full accuracy and a target-meeting design
                    prop_assert!(o.accuracy_full.is_some());
                    prop_assert_eq!(prune_check(o.report.as_ref().unwrap(), &spec.targets), PruneStatus::Satisfied);
                }
                Some(reason) => {
                    prop_assert!(o.accuracy_full.is_none());
                    prop_assert!(res.best != Some(i));
                    if let Some(rep) = &o.report {
                        prop_assert!(matches!(prune_check(rep, &spec.targets), PruneStatus::Violated(_)));
                    }
                    // soundness: rerunning the candidate's search finds nothing feasible
                    if let PruneReason::Targets(_) = reason {
                        let c = &cands[i];
                        let env = Environment {
                            model: &c.model, input: &c.input, tech: &tech, bounds: &bounds, sim: cfg.sim,
                        };
                        let init = bounds.initial(&c.model).unwrap();
                        let again = search(&init, &env, o.accuracy_partial, &spec, &SearchConfig::new(o.episodes, seeds[i]))
                            .unwrap();
                        prop_assert!(again.history.iter().all(|h| !h.feasible()));
                    }
                }
            }
        }

        // winner dominance
        let survivors: Vec<usize> = (0..s.n).filter(|&i| res.outcomes[i].survived()).collect();
        match res.best {
            None => {
                prop_assert!(survivors.is_empty());
                prop_assert!(res.nearest_miss.is_none_or(|i| res.outcomes[i].pruned.is_some()));
            }
            Some(w) => {
                prop_assert!(res.nearest_miss.is_none());
                let win = &res.outcomes[w];
                let edp = |i: usize| res.outcomes[i].report.as_ref().unwrap().edp::<f64>();
                for &i in &survivors {
                    let o = &res.outcomes[i];
                    prop_assert!(win.accuracy_full >= o.accuracy_full);
                    if o.accuracy_full == win.accuracy_full && i != w {
                        prop_assert!(edp(w) < edp(i) || (edp(w) == edp(i) && w < i));
                    }
                }
            }
        }
    }
}
