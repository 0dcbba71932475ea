mod common;

use common::{fc_chain, rng};
use neuromesh::hw::{SimOptions, TechParams};
use neuromesh::ppa::PpaTargets;
use neuromesh::rl::{q_update, reward_values, search, Environment, QParams, QTable, RewardMode, RewardSpec, SearchConfig};
use neuromesh::space::{RlState, SearchAction, SearchBounds};
use neuromesh::time::SimTime;
use neuromesh::workload::random_input;
use neuromesh::Scalar;
use proptest::prelude::*;
use rand::Rng;

fn spec<F: Scalar>(p: [f64; 3], q: [f64; 3], mode: RewardMode) -> RewardSpec<F> {
    RewardSpec {
        p: p.map(F::lit),
        q: q.map(F::lit),
        targets: PpaTargets::unbounded(),
        mode,
    }
}

fn exps() -> impl Strategy<Value = [f64; 3]> {
    [-3.0f64..=0.0, -3.0f64..=0.0, -3.0f64..=0.0]
}

fn mode() -> impl Strategy<Value = RewardMode> {
    prop_oneof![Just(RewardMode::Joint), Just(RewardMode::PerMetric)]
}

/// Ratios of value to target, kept away from the boundary so a small step
/// never flips the constraint status.
fn ratios() -> impl Strategy<Value = [f64; 3]> {
    let r = prop_oneof![0.05f64..0.95, 1.05f64..20.0];
    [r.clone(), r.clone(), r]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn larger_metrics_never_raise_reward(
        p in exps(), q in exps(), mode in mode(), accu in 0.0f64..=1.0,
        ratio in ratios(), targets in [1.0f64..1e4, 1.0f64..1e4, 1.0f64..1e4],
        which in 0usize..3, grow in 1.0f64..1.04,
    ) {
        let s = spec::<f64>(p, q, mode);
        let values: [f64; 3] = std::array::from_fn(|i| ratio[i] * targets[i]);
        let mut bigger = values;
        bigger[which] *= grow;
        prop_assume!((values[which] <= targets[which]) == (bigger[which] <= targets[which]));
        let before = reward_values(accu, values, targets, &s).unwrap();
        let after = reward_values(accu, bigger, targets, &s).unwrap();
        prop_assert!(after <= before * (1.0 + 1e-12), "{before} -> {after}");
    }

    #[test]
    fn higher_accuracy_never_lowers_reward(
        p in exps(), q in exps(), mode in mode(), a in 0.0f64..=1.0, b in 0.0f64..=1.0,
        ratio in ratios(), targets in [1.0f64..1e4, 1.0f64..1e4, 1.0f64..1e4],
    ) {
        let s = spec::<f32>(p, q, mode);
        let values: [f32; 3] = std::array::from_fn(|i| (ratio[i] * targets[i]) as f32);
        let t = targets.map(|t| t as f32);
        let (lo, hi) = (a.min(b) as f32, a.max(b) as f32);
        prop_assert!(reward_values(lo, values, t, &s).unwrap() <= reward_values(hi, values, t, &s).unwrap());
    }

    #[test]
    fn scaling_energy_and_its_target_together_is_invisible(
        p in exps(), q in exps(), mode in mode(), accu in 0.01f64..=1.0,
        ratio in ratios(), targets in [1.0f64..1e4, 1.0f64..1e4, 1.0f64..1e4], k in 0.001f64..1000.0,
    ) {
        let s = spec::<f64>(p, q, mode);
        let values: [f64; 3] = std::array::from_fn(|i| ratio[i] * targets[i]);
        let (mut v2, mut t2) = (values, targets);
        v2[1] *= k;
        t2[1] *= k;
        prop_assume!((values[1] <= targets[1]) == (v2[1] <= t2[1]));
        let a = reward_values(accu, values, targets, &s).unwrap();
        let b = reward_values(accu, v2, t2, &s).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300), "{a} vs {b}");
    }

    #[test]
    fn q_values_stay_within_discounted_bound(
        seed in any::<u64>(), r_max in 0.01f64..10.0, alpha in 0.01f64..=1.0, gamma in 0.0f64..0.99, steps in 1usize..400,
    ) {
        let mut r = rng(seed);
        let actions = SearchAction::catalogue(3);
        let mut table = QTable::<f64>::new(actions.clone());
        let params = QParams { alpha, gamma, ..QParams::default() };
        let state = |r: &mut rand_chacha::ChaCha8Rng| RlState {
            aer_congestion_bucket: r.gen_range(0..3),
            noc_congestion_bucket: r.gen_range(0..3),
            routing_hops_bucket: r.gen_range(0..3),
        };
        let bound = r_max / (1.0 - gamma);
        for _ in 0..steps {
            let (s, next) = (state(&mut r), state(&mut r));
            let a = actions[r.gen_range(0..actions.len())];
            q_update(&mut table, s, a, r.gen_range(0.0..=r_max), next, &params);
        }
        for (_, &v) in table.entries() {
            prop_assert!((0.0..=bound * (1.0 + 1e-12)).contains(&v), "{v} outside [0, {bound}]");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn best_reward_is_the_history_maximum(seed in any::<u64>(), episodes in 1usize..25, t_energy in 50.0f64..400.0) {
        let m = fc_chain(&[6, 5, 3], 30, 50, 2);
        let input = random_input(&m, seed, 0.5);
        let tech = TechParams::default_180nm();
        let bounds = SearchBounds::parse(
            "neurons_per_pe = {4,8,16}\nmesh_dims = 1x1..2x2\nfifo_depth_per_port = 1..2\n\
             arbitration = {round_robin,fixed_priority}\nvirtual_channels = 2\nflit_payload_bits = 16\n",
        )
        .unwrap();
        let env = Environment { model: &m, input: &input, tech: &tech, bounds: &bounds, sim: SimOptions::default() };
        let mut s = RewardSpec::<f64>::new(PpaTargets { t_latency: SimTime::from_ns(500), t_energy_pj: t_energy, t_area_um2: 2e6 });
        s.p = [-0.5; 3];
        s.q = [-2.0; 3];
        let init = bounds.initial(&m).unwrap();
        let res = search(&init, &env, 0.8, &s, &SearchConfig::new(episodes, seed)).unwrap();
        prop_assert_eq!(res.history.len(), episodes);
        prop_assert!(res.simulations <= episodes);
        let max = res.history.iter().filter_map(|h| h.reward).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(res.best_reward, max);
        prop_assert_eq!(res.history[res.best_episode].reward, Some(max));
        prop_assert_eq!(&res.history[res.best_episode].arch, &res.best_arch);
        if let Some(f) = res.best_feasible() {
            prop_assert!(f.feasible());
            prop_assert!(res.history.iter().filter(|h| h.feasible()).all(|h| h.reward <= f.reward));
        }
    }
}
