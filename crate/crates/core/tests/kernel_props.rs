use std::sync::{Arc, Mutex};

use neuromesh::kernel::{Actor, ActorId, ComponentPath, Context, Kernel, KernelConfig, RunLimit, SimStats};
use neuromesh::time::SimTime;
use proptest::prelude::*;

#[derive(Debug, thiserror::Error)]
#[error("never")]
struct Never;

type Log = Arc<Mutex<Vec<(u64, String)>>>;

/// Pseudo-random fan-out driven by its own state: each message may spawn up to
/// two more with one less hop of life.
struct Gossip {
    peers: Vec<ActorId>,
    state: u64,
    max_delay: u64,
    history: Vec<(u64, u64)>,
    path: String,
    log: Option<Log>,
}

impl Actor for Gossip {
    type Msg = u64;
    type Error = Never;

    fn handle(&mut self, ctx: &mut Context<'_, u64>, ttl: u64) -> Result<(), Never> {
        self.state = self.state.wrapping_mul(6364136223846793005).wrapping_add(ttl | 1);
        self.history.push((ctx.now().as_ps(), ttl));
        if let Some(log) = &self.log {
            log.lock().unwrap().push((ctx.now().as_ps(), self.path.clone()));
        }
        if ttl > 0 {
            for i in 0..(self.state >> 62) as usize % 3 {
                let target = self.peers[(self.state >> (8 * i)) as usize % self.peers.len()];
                let delay = 1 + (self.state >> (20 + i)) % self.max_delay;
                ctx.send(target, SimTime(delay), ttl - 1);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Net {
    names: Vec<u32>,
    seeds: Vec<u64>,
    ttl: u64,
    max_delay: u64,
    starts: Vec<(usize, u64)>,
}

fn net() -> impl Strategy<Value = Net> {
    (2usize..24).prop_flat_map(|n| {
        (
            Just((0..n as u32).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(any::<u64>(), n),
            1u64..7,
            1u64..5,
            prop::collection::vec((0..n, 0u64..6), 1..6),
        )
            .prop_map(|(names, seeds, ttl, max_delay, starts)| Net { names, seeds, ttl, max_delay, starts })
    })
}

fn run(net: &Net, workers: usize, log: Option<Log>) -> (SimStats, Vec<Vec<(u64, u64)>>) {
    let mut k = Kernel::new(KernelConfig { workers, ..KernelConfig::default() }).unwrap();
    // registration order differs from path order so rank matters
    let ids: Vec<ActorId> = net
        .names
        .iter()
        .zip(&net.seeds)
        .map(|(name, &seed)| {
            let path = ComponentPath::new("sys", format!("node({name:02})"), "pe", "g");
            let actor = Gossip {
                peers: Vec::new(),
                state: seed,
                max_delay: net.max_delay,
                history: Vec::new(),
                path: path.to_string(),
                log: log.clone(),
            };
            k.register(path, actor).unwrap()
        })
        .collect();
    for &id in &ids {
        k.actor_mut(id).peers = ids.clone();
    }
    for &(who, at) in &net.starts {
        k.post(SimTime(at), ids[who], net.ttl).unwrap();
    }
    let stats = k.run(RunLimit::Quiescence).unwrap();
    let hist = ids.iter().map(|&id| k.actor(id).history.clone()).collect();
    (stats, hist)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_posted_event_is_delivered_once(net in net()) {
        let (stats, hist) = run(&net, 1, None);
        prop_assert_eq!(stats.events_processed, stats.events_posted);
        let seen: usize = hist.iter().map(Vec::len).sum();
        prop_assert_eq!(seen as u64, stats.events_processed);
        prop_assert_eq!(stats.per_actor.iter().map(|a| a.handled).sum::<u64>(), stats.events_processed);
    }

    #[test]
    fn no_actor_observes_time_going_backwards(net in net()) {
        let (_, hist) = run(&net, 3, None);
        for h in hist {
            prop_assert!(h.windows(2).all(|w| w[0].0 <= w[1].0));
        }
    }

    #[test]
    fn sequential_delivery_is_ordered_by_time_then_path(net in net()) {
        let log: Log = Arc::default();
        run(&net, 1, Some(log.clone()));
        let log = log.lock().unwrap();
        prop_assert!(log.windows(2).all(|w| w[0] <= w[1]), "{:?}", *log);
    }

    #[test]
    fn worker_count_is_unobservable(net in net(), workers in 2usize..6) {
        let reference = run(&net, 1, None);
        let parallel = run(&net, workers, None);
        prop_assert_eq!(reference, parallel);
    }
}
