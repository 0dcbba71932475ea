//! Acceptance run: one PASS/FAIL line per criterion. Built without the libtest
//! harness so the lines always reach the terminal.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use common::pipeline::*;
use common::*;
use neuromesh::coexplore::{co_explore, AccuracyProvider, CoExploreConfig, SnnCandidate, Stage};
use neuromesh::ctrl::Delays;
use neuromesh::hw::{simulate, ArchConfig, MeshDims, RunMode, SimOptions, TechParams, UnitKind};
use neuromesh::kernel::ComponentPath;
use neuromesh::ppa::{edp, unit_rows, ActivityLedger, EventKind, PpaReport, PpaTargets, UnitInfo, ZJ_PER_FJ, ZJ_PER_PJ};
use neuromesh::rl::{reward_values, search, Environment, RewardMode, RewardSpec, SearchConfig};
use neuromesh::space::{apply_action, enumerate, validate, SearchAction, SearchBounds};
use neuromesh::time::SimTime;
use neuromesh::workload::{lif_generate_trace, random_input, SnnModel, SpikeTrace};
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn tech() -> TechParams {
    TechParams::default_180nm()
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("handshake protocol suite", handshake_suite),
        ("pipeline timing oracle", timing_oracle),
        ("EDP conversion", edp_conversion),
        ("energy conservation", energy_conservation),
        ("functional equivalence", functional_equivalence),
        ("determinism across workers", determinism),
        ("reward function", reward_function),
        ("search optimality oracle", search_oracle),
        ("co-exploration oracle", coexplore_oracle),
        ("architecture-space closure", space_closure),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} ({secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {why} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn run_cases<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), String>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner
        .run(&strategy, |v| test(v).map_err(TestCaseError::fail))
        .map_err(|e| e.to_string())
}

fn handshake_suite() -> Outcome {
    let strategy = (proptest::collection::vec(stage_strategy(), 2..=10), 1u32..=500);
    run_cases(1000, strategy, |(stages, tokens)| {
        let r = run_pipeline(&stages, SINK, tokens, 1).map_err(|e| e.to_string())?;
        check_handshake(&stages, tokens, &r)
    })?;
    Ok("1000 random pipelines (2-10 stages, depth 1-8, 1-500 tokens)".into())
}

fn timing_oracle() -> Outcome {
    let plain = || {
        proptest::collection::vec(stage_strategy(), 1..=10)
            .prop_map(|v| v.into_iter().map(|s| StageSpec { stall: None, depth: 1, ..s }).collect::<Vec<_>>())
    };
    run_cases(500, plain(), |stages: Vec<StageSpec>| {
        let r = run_pipeline(&stages, SINK, 1, 1).map_err(|e| e.to_string())?;
        let sum: u64 = stages.iter().map(|s| s.delays.forward.0).sum();
        let want = SimTime(1 + SOURCE_DELAY.0 + sum);
        ensure!(r.arrivals()[0].0 == want, "arrival {} want {want}", r.arrivals()[0].0);
        Ok(())
    })?;
    run_cases(500, plain(), |stages: Vec<StageSpec>| {
        let r = run_pipeline(&stages, SINK, 60, 1).map_err(|e| e.to_string())?;
        let a = r.arrivals();
        let want = predicted_interval(&stages);
        for w in a[30..].windows(2) {
            let gap = (w[1].0 - w[0].0).0;
            ensure!(gap.abs_diff(want) <= 1, "steady gap {gap} ps, slowest handshake {want} ps");
        }
        Ok(())
    })?;
    let t = tech();
    let kinds = [UnitKind::InputUnit, UnitKind::SwitchAllocator, UnitKind::OutputUnit];
    let chain: Vec<StageSpec> = kinds
        .iter()
        .map(|&k| {
            let u = t.get(k).unwrap();
            StageSpec { delays: Delays { forward: u.forward_latency, backward: u.backward_latency }, depth: 1, stall: None }
        })
        .collect();
    let fwd: u64 = chain.iter().map(|s| s.delays.forward.0).sum();
    let bwd: u64 = chain.iter().map(|s| s.delays.backward.0).sum();
    ensure!((fwd, bwd) == (4_700, 5_900), "router chain budgets {fwd}/{bwd} ps");
    let r = run_pipeline(&chain, SINK, 1, 1).map_err(|e| e.to_string())?;
    let lat = r.arrivals()[0].0 - SimTime(1 + SOURCE_DELAY.0);
    ensure!(lat == SimTime(4_700), "router chain latency {lat}");
    Ok(format!("500 latency + 500 throughput cases exact; router chain {} ns forward, {} ns backward", fwd as f64 / 1e3, bwd as f64 / 1e3))
}

fn edp_conversion() -> Outcome {
    let a: f64 = edp(9.05e6, SimTime::from_ns(29_990));
    let b: f64 = edp(6.47e6, SimTime::from_ns(28_460));
    ensure!((a - 0.27).abs() <= 0.005, "edp(9.05 uJ, 29.99 us) = {a}");
    ensure!((b - 0.184).abs() <= 0.005, "edp(6.47 uJ, 28.46 us) = {b}");
    Ok(format!("{a:.4} and {b:.4} s*nJ"))
}

fn energy_conservation() -> Outcome {
    let t = tech();
    let mut r = rng(4);
    for case in 0..20u64 {
        let m = tiny_model(&mut r);
        let arch = random_arch(&mut r, &m);
        let input = random_input(&m, case, 0.5);
        let out = simulate(&arch, &t, &m, &input, RunMode::ClosedLoop, &SimOptions::default()).map_err(|e| e.to_string())?;
        let rep = &out.report;
        let dyn_sum: u128 = rep.units.iter().map(|u| u.dynamic_zj).sum();
        let leak_sum: u128 = rep.units.iter().map(|u| u.leakage_zj).sum();
        ensure!(rep.energy.total_zj() == dyn_sum + leak_sum, "case {case}: total != unit sum");
        // independent recount straight from the ledger and the tech table
        let mut dynamic = 0u128;
        for (&(actor, ev, _), &n) in out.ledger.counts() {
            let unit = out.ledger.unit_of(actor).ok_or("unbound actor")?;
            if ev == EventKind::energy_event(unit.kind) {
                dynamic += n as u128 * t.get(unit.kind).unwrap().dynamic_energy_fj as u128 * ZJ_PER_FJ;
            }
        }
        let leakage: u128 = out
            .ledger
            .units()
            .iter()
            .map(|u| t.get(u.kind).unwrap().leakage_power_nw as u128 * rep.latency.as_ps() as u128)
            .sum();
        ensure!(
            (rep.energy.dynamic_zj, rep.energy.leakage_zj) == (dynamic, leakage),
            "case {case}: report {:?} vs recount ({dynamic}, {leakage})",
            rep.energy
        );
        let layer_sum: u128 = rep.layers.iter().map(|l| l.energy_zj).sum::<u128>() + rep.interconnect_zj;
        ensure!(layer_sum == dynamic, "case {case}: layer breakdown {layer_sum} != dynamic {dynamic}");
    }
    let unit = UnitInfo { path: ComponentPath::new("sys", "node(0,0)", "router", "in_local"), kind: UnitKind::InputUnit };
    let rows = unit_rows(&ActivityLedger::new(vec![unit]), &t, SimTime::from_ns(1_000)).map_err(|e| e.to_string())?;
    ensure!(rows[0].leakage_zj == 63 * ZJ_PER_PJ, "0.063 mW over 1 us gave {} zJ", rows[0].leakage_zj);
    Ok("20 runs exact to the zJ; 0.063 mW x 1 us = 63 pJ".into())
}

fn functional_equivalence() -> Outcome {
    let t = tech();
    let mut r = rng(5);
    let mut spikes = 0;
    for case in 0..20u64 {
        let m = tiny_model(&mut r);
        ensure!(m.total_neurons() <= 64 && m.timesteps <= 4, "case {case}: model too large");
        let input = random_input(&m, 100 + case, 0.5);
        let expect = lif_generate_trace(&m, &input).map_err(|e| e.to_string())?;
        spikes += expect.len();
        for k in 0..5 {
            let arch = random_arch(&mut r, &m);
            let out = simulate(&arch, &t, &m, &input, RunMode::ClosedLoop, &SimOptions::default())
                .map_err(|e| format!("case {case}.{k} {}: {e}", arch.short()))?;
            ensure!(out.output == expect, "case {case}.{k} {}: spike sets differ", arch.short());
        }
    }
    Ok(format!("20 models x 5 architectures, {spikes} reference spikes matched"))
}

fn determinism() -> Outcome {
    let t = tech();
    let bounds = tiny_bounds();
    for seed in 0..10u64 {
        let mut r = rng(600 + seed);
        let m = tiny_model(&mut r);
        let arch = random_arch(&mut r, &m);
        let input = random_input(&m, seed, 0.5);
        let mut reports = Vec::new();
        for workers in [1, 2, 8] {
            let opts = SimOptions { workers, ..SimOptions::default() };
            let out = simulate(&arch, &t, &m, &input, RunMode::ClosedLoop, &opts).map_err(|e| e.to_string())?;
            reports.push((out.report.to_text(), out.output.to_text()));
        }
        ensure!(reports.windows(2).all(|w| w[0] == w[1]), "seed {seed}: reports or traces differ across workers");

        let search_model = fc_chain(&[6, 6, 3], 25, 50, 2);
        let search_input = random_input(&search_model, seed, 0.5);
        let spec = median_spec(&search_model, &search_input, &bounds);
        let mut histories = Vec::new();
        for workers in [1, 2, 8] {
            let env = Environment {
                model: &search_model,
                input: &search_input,
                tech: &t,
                bounds: &bounds,
                sim: SimOptions { workers, ..SimOptions::default() },
            };
            let init = bounds.initial(&search_model).ok_or("no initial arch")?;
            let res = search(&init, &env, 0.9, &spec, &SearchConfig::new(40, seed)).map_err(|e| e.to_string())?;
            histories.push(res.history_csv());
        }
        ensure!(histories.windows(2).all(|w| w[0] == w[1]), "seed {seed}: search histories differ across workers");
    }
    Ok("10 seeds x workers {1,2,8}: reports, traces and search histories byte-identical".into())
}

fn reward_function() -> Outcome {
    let joint = |p: [f64; 3], q: [f64; 3]| RewardSpec {
        p,
        q,
        targets: PpaTargets { t_latency: SimTime::from_ns(100), t_energy_pj: 50.0, t_area_um2: 1e4 },
        mode: RewardMode::Joint,
    };
    let tgt = [100_000.0, 50.0, 1e4];
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let s = joint([-0.3, -0.7, -1.1], [-2.0, -0.4, -0.9]);
    let r1 = reward_values(0.77, tgt, tgt, &s).map_err(|e| e.to_string())?;
    ensure!(rel(r1, 0.77) <= 1e-12, "all ratios one gave {r1}");
    let s = joint([0.0; 3], [-1.0; 3]);
    let r2 = reward_values(0.9, [50_000.0, 10.0, 9e3], tgt, &s).map_err(|e| e.to_string())?;
    ensure!(rel(r2, 0.9) <= 1e-12, "zero p with targets met gave {r2}");
    let s = joint([0.0; 3], [-1.0, 0.0, 0.0]);
    let r3 = reward_values(0.8, [200_000.0, 50.0, 1e4], tgt, &s).map_err(|e| e.to_string())?;
    ensure!(rel(r3, 0.4) <= 1e-12, "doubled latency gave {r3}");

    let mut r = rng(7);
    let met = |v: &[f64; 3], t: &[f64; 3]| [v[0] <= t[0], v[1] <= t[1], v[2] <= t[2]];
    for i in 0..10_000 {
        let mode = if i % 2 == 0 { RewardMode::Joint } else { RewardMode::PerMetric };
        let mut e = || -r.gen_range(0.0..3.0);
        let spec = RewardSpec { p: [e(), e(), e()], q: [e(), e(), e()], targets: PpaTargets::unbounded(), mode };
        let t: [f64; 3] = [r.gen_range(1.0..1e6), r.gen_range(1.0..1e6), r.gen_range(1.0..1e6)];
        let v: [f64; 3] = std::array::from_fn(|k| t[k] * r.gen_range(0.1..10.0));
        let accu = r.gen_range(0.0..1.0);
        let base = reward_values(accu, v, t, &spec).map_err(|e| e.to_string())?;
        // raising one metric never raises R while the constraint status holds
        let k = r.gen_range(0..3);
        let mut v2 = v;
        v2[k] *= r.gen_range(1.0..3.0);
        if met(&v, &t) == met(&v2, &t) {
            let up = reward_values(accu, v2, t, &spec).map_err(|e| e.to_string())?;
            ensure!(up <= base * (1.0 + 1e-12), "sample {i}: metric {k} up raised R {base} -> {up}");
        }
        let accu2 = r.gen_range(accu..=1.0);
        let better = reward_values(accu2, v, t, &spec).map_err(|e| e.to_string())?;
        ensure!(better >= base * (1.0 - 1e-12), "sample {i}: accuracy up lowered R");
        // ratio form: scale energy and its target together
        let f = 10f64.powf(r.gen_range(-3.0..3.0));
        let (mut v3, mut t3) = (v, t);
        v3[1] *= f;
        t3[1] *= f;
        if met(&v, &t) == met(&v3, &t3) {
            let scaled = reward_values(accu, v3, t3, &spec).map_err(|e| e.to_string())?;
            ensure!(
                (scaled - base).abs() <= 1e-9 * base.abs().max(f64::MIN_POSITIVE),
                "sample {i}: scaling E and T_energy by {f} moved R {base} -> {scaled}"
            );
        }
    }
    Ok(format!("examples {r1}, {r2}, {r3}; 10^4 monotonicity and scale samples"))
}

fn tiny_bounds() -> SearchBounds {
    SearchBounds::parse(
        "neurons_per_pe = {4,8,16,32}\nmesh_dims = 1x1..2x2\nfifo_depth_per_port = 1..2\n\
         virtual_channels = 2\nflit_payload_bits = 16\n",
    )
    .expect("valid bounds")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Penalising spec with targets at the medians of every enumerated config.
fn median_spec(m: &SnnModel, input: &SpikeTrace, bounds: &SearchBounds) -> RewardSpec<f64> {
    let reports = brute_force(m, input, bounds);
    let lat = median(reports.iter().map(|(_, r)| r.latency.as_ps() as f64).collect());
    RewardSpec {
        p: [-0.5; 3],
        q: [-2.0; 3],
        targets: PpaTargets {
            t_latency: SimTime(lat as u64),
            t_energy_pj: median(reports.iter().map(|(_, r)| r.energy_pj()).collect()),
            t_area_um2: median(reports.iter().map(|(_, r)| r.area()).collect()),
        },
        mode: RewardMode::Joint,
    }
}

fn brute_force(m: &SnnModel, input: &SpikeTrace, bounds: &SearchBounds) -> Vec<(ArchConfig, PpaReport)> {
    let t = tech();
    enumerate(bounds, m)
        .expect("enumerable")
        .into_iter()
        .map(|a| {
            let rep = simulate(&a, &t, m, input, RunMode::ClosedLoop, &SimOptions::default()).expect("simulates").report;
            (a, rep)
        })
        .collect()
}

fn search_oracle() -> Outcome {
    let m = fc_chain(&[8, 8, 4], 20, 50, 2);
    let input = random_input(&m, 5, 0.5);
    let bounds = tiny_bounds();
    let all = brute_force(&m, &input, &bounds);
    ensure!(all.len() <= 64, "{} configs", all.len());
    let spec = median_spec(&m, &input, &bounds);
    let accu = 0.9;
    let best = all
        .iter()
        .map(|(_, r)| neuromesh::rl::reward(accu, r, &spec).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let t = tech();
    let env = Environment { model: &m, input: &input, tech: &t, bounds: &bounds, sim: SimOptions::default() };
    let mut hits = 0;
    for seed in 0..20 {
        let res = search(&all[0].0, &env, accu, &spec, &SearchConfig::new(500, seed)).map_err(|e| e.to_string())?;
        if res.best_reward >= best * 0.99 {
            hits += 1;
        }
    }
    ensure!(hits >= 18, "{hits}/20 runs within 1% of the optimum");
    Ok(format!("{} configs; {hits}/20 seeds within 1% of the brute-force optimum", all.len()))
}

fn coexplore_oracle() -> Outcome {
    let bounds = tiny_bounds();
    let t = tech();
    let specs: [(&str, SnnModel, f64, f64); 3] = [
        ("mid", fc_chain(&[8, 8, 4], 20, 50, 2), 0.70, 0.82),
        ("wide", fc_chain(&[12, 10, 6], 15, 40, 3), 0.80, 0.91),
        ("small", fc_chain(&[6, 4], 30, 50, 2), 0.60, 0.75),
    ];
    let candidates: Vec<SnnCandidate> = specs
        .iter()
        .enumerate()
        .map(|(i, (id, m, _, _))| SnnCandidate { id: id.to_string(), model: m.clone(), input: random_input(m, i as u64, 0.5) })
        .collect();
    let mut table = std::collections::BTreeMap::new();
    for (id, _, p, f) in &specs {
        table.insert((id.to_string(), Stage::Partial), *p);
        table.insert((id.to_string(), Stage::Full), *f);
    }
    let provider = AccuracyProvider::Table(table);
    let spaces: Vec<Vec<(ArchConfig, PpaReport)>> =
        candidates.iter().map(|c| brute_force(&c.model, &c.input, &bounds)).collect();
    ensure!(spaces.iter().all(|s| !s.is_empty() && s.len() <= 64), "space sizes");
    // energy target below everything the wide net can reach, area at the median
    let min_e = |s: &[(ArchConfig, PpaReport)]| s.iter().map(|(_, r)| r.energy_pj::<f64>()).fold(f64::INFINITY, f64::min);
    let all_area: Vec<f64> = spaces.iter().flatten().map(|(_, r)| r.area()).collect();
    let targets = PpaTargets {
        t_latency: SimTime::MAX,
        t_energy_pj: min_e(&spaces[1]) * 0.999,
        t_area_um2: median(all_area),
    };
    let spec = RewardSpec { p: [0.0; 3], q: [-1.0; 3], targets, mode: RewardMode::Joint };

    // literal oracle: feasible iff some config meets every target; winner is
    // the highest full accuracy among feasible candidates
    let feasible: Vec<bool> = spaces.iter().map(|s| s.iter().any(|(_, r)| targets.violations(r).is_empty())).collect();
    let oracle = (0..3).filter(|&i| feasible[i]).fold(None::<usize>, |b, i| match b {
        Some(j) if specs[j].3 >= specs[i].3 => Some(j),
        _ => Some(i),
    });
    ensure!(feasible.iter().filter(|f| !**f).count() >= 1, "targets prune nothing: {feasible:?}");

    let mut winners = Vec::new();
    for seed in 0..5 {
        let cfg = CoExploreConfig::new(1_500, seed);
        let res = co_explore(&candidates, &bounds, &t, &spec, &provider, &cfg).map_err(|e| e.to_string())?;
        ensure!(res.episodes_used <= 1_500, "seed {seed}: {} episodes", res.episodes_used);
        for o in &res.outcomes {
            if o.pruned.is_some() {
                if let Some(r) = &o.report {
                    ensure!(!targets.violations(r).is_empty(), "seed {seed}: {} pruned with a feasible best", o.id);
                }
            }
        }
        ensure!(res.best == oracle, "seed {seed}: winner {:?}, oracle {oracle:?}", res.best);
        if let Some(w) = res.winner() {
            let r = w.report.as_ref().ok_or("winner without report")?;
            ensure!(targets.violations(r).is_empty(), "seed {seed}: winner violates targets");
        }
        winners.push(res.winner().map(|w| w.id.clone()).unwrap_or_else(|| "none".into()));
    }
    Ok(format!("feasible {feasible:?}; winner {} in 5/5 seeds, pruning sound", winners[0]))
}

fn space_closure() -> Outcome {
    let bounds = SearchBounds::parse(
        "neurons_per_pe = {2,4,8,16,32}\nmesh_dims = 1x1..3x3\nfifo_depth_per_port = 1..4\n\
         virtual_channels = 2\nflit_payload_bits = 16\n",
    )
    .map_err(|e| e.to_string())?;
    let mut r = rng(10);
    let (mut applied, mut rejected) = (0u64, 0u64);
    let mut seq = 0;
    while seq < 10_000 {
        let m = tiny_model(&mut r);
        let all = enumerate(&bounds, &m).map_err(|e| e.to_string())?;
        let catalogue = SearchAction::catalogue(m.num_layers());
        for _ in 0..100 {
            let mut arch = all.choose(&mut r).ok_or("empty space")?.clone();
            for _ in 0..r.gen_range(1..=30) {
                let a = *catalogue.choose(&mut r).unwrap();
                match apply_action(&arch, a, &bounds) {
                    Ok(next) => {
                        let v = validate(&next, &bounds, &m);
                        ensure!(v.is_empty(), "{a} from {} produced invalid {}: {v:?}", arch.short(), next.short());
                        arch = next;
                        applied += 1;
                    }
                    Err(_) => rejected += 1,
                }
            }
            seq += 1;
        }
    }
    // crafted inputs break the power-of-two rule
    let m = fc_chain(&[4, 4], 10, 50, 1);
    for npp in [0u32, 1, 3, 12, 24] {
        let mut a = arch_for(&m, MeshDims::new(2, 2), 4);
        a.neurons_per_pe = npp;
        let v = a.violations();
        ensure!(v.iter().any(|s| s.contains("power of two")), "npp {npp} accepted: {v:?}");
        let b = SearchBounds::parse(&format!(
            "neurons_per_pe = {{4,{npp}}}\nmesh_dims = 2x2\nfifo_depth_per_port = 1\nvirtual_channels = 1\nflit_payload_bits = 16\n"
        ));
        ensure!(
            b.as_ref().is_err_and(|e| e.to_string().contains("power of two")),
            "bounds with npp {npp} accepted"
        );
    }
    Ok(format!("10^4 sequences, {applied} applied and {rejected} rejected actions, none invalid; power-of-two rejections fire"))
}
