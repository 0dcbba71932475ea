//! Deterministic discrete-event kernel.
//!
//! Actors exchange timestamped messages. Delivery follows the total order
//! `(deliver_at, component path, seq)`, where `seq` is a single issue counter.
//! All events that share a timestamp form one batch; each target in the batch
//! handles its own events in `seq` order, so distinct targets are independent and
//! may run on different worker threads. Messages emitted while handling a batch
//! get their `seq` in the order the strict sequential schedule would have issued
//! them, which makes the worker count unobservable.
//!
//! Cross-actor messages must carry a strictly positive delay. An actor may notify
//! itself with zero delay; such notifications are delivered in a follow-up batch
//! at the same timestamp.

mod path;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::error::Error as StdError;

use rayon::prelude::*;
use serde::Serialize;

pub use self::path::{ActorId, ComponentPath};
use crate::time::SimTime;

/// Default number of events allowed at a single timestamp before the run is
/// declared livelocked.
pub const DEFAULT_LIVELOCK_WINDOW: u64 = 10_000_000;

/// Batches with fewer distinct targets than this are handled inline even when a
/// worker pool exists.
const PARALLEL_MIN_GROUPS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("duplicate path {0}")]
    DuplicatePath(String),
    #[error("cannot register {0}: simulation already started")]
    RegistrationClosed(String),
    #[error("unknown actor id {0:?}")]
    UnknownActor(ActorId),
    #[error("causality violation: event for {deliver_at} posted at {now}")]
    Causality { deliver_at: SimTime, now: SimTime },
    #[error("zero-delay message from {from} to {to} at {at}")]
    ZeroDelay {
        from: String,
        to: String,
        at: SimTime,
    },
    #[error("livelock: {events} events at {at} without time progress")]
    Livelock { at: SimTime, events: u64 },
    #[error("actor {path} failed at {at}: {source}")]
    Actor {
        path: String,
        at: SimTime,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Behaviour of a simulated component. Actors are single threaded: the kernel
/// never hands one actor two messages concurrently.
pub trait Actor: Send {
    type Msg: Send;
    type Error: StdError + Send + Sync + 'static;

    fn handle(&mut self, ctx: &mut Context<'_, Self::Msg>, msg: Self::Msg)
        -> Result<(), Self::Error>;
}

/// A scheduled message.
#[derive(Debug, Clone)]
pub struct SimEvent<M> {
    pub deliver_at: SimTime,
    pub target: ActorId,
    pub message: M,
    pub seq: u64,
}

// Heap entries compare on (deliver_at, seq) only; path order is applied per batch.
struct Queued<M>(SimEvent<M>);

impl<M> PartialEq for Queued<M> {
    fn eq(&self, other: &Self) -> bool {
        self.0.deliver_at == other.0.deliver_at && self.0.seq == other.0.seq
    }
}

impl<M> Eq for Queued<M> {}

impl<M> PartialOrd for Queued<M> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Queued<M> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.deliver_at, self.0.seq).cmp(&(other.0.deliver_at, other.0.seq))
    }
}

struct Outgoing<M> {
    delay: SimTime,
    target: ActorId,
    msg: M,
}

/// Handle given to an actor while it processes one message.
pub struct Context<'a, M> {
    now: SimTime,
    me: ActorId,
    out: &'a mut Vec<Outgoing<M>>,
}

impl<M> Context<'_, M> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn me(&self) -> ActorId {
        self.me
    }

    /// Schedules `msg` for `target` after `delay`. A zero delay is only legal when
    /// `target` is the sending actor; the kernel rejects anything else.
    pub fn send(&mut self, target: ActorId, delay: SimTime, msg: M) {
        self.out.push(Outgoing { delay, target, msg });
    }

    pub fn notify_self(&mut self, delay: SimTime, msg: M) {
        let me = self.me;
        self.send(me, delay, msg);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLimit {
    /// Run until no events remain.
    Quiescence,
    /// Stop before delivering any event later than the given time.
    Until(SimTime),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelConfig {
    pub workers: usize,
    pub livelock_window: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            workers: 1,
            livelock_window: DEFAULT_LIVELOCK_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActorCount {
    pub path: String,
    pub handled: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimStats {
    pub final_time: SimTime,
    pub events_processed: u64,
    pub events_posted: u64,
    pub truncated: bool,
    pub per_actor: Vec<ActorCount>,
}

struct GroupOutcome<A: Actor> {
    target: ActorId,
    actor: A,
    out: Vec<Outgoing<A::Msg>>,
    handled: u64,
    error: Option<A::Error>,
}

pub struct Kernel<A: Actor> {
    actors: Vec<Option<A>>,
    paths: Vec<ComponentPath>,
    by_path: HashMap<ComponentPath, ActorId>,
    rank: Vec<u32>,
    queue: BinaryHeap<Reverse<Queued<A::Msg>>>,
    now: SimTime,
    next_seq: u64,
    started: bool,
    config: KernelConfig,
    pool: Option<rayon::ThreadPool>,
    handled: Vec<u64>,
    posted: u64,
    processed: u64,
    stalled: u64,
    truncated: bool,
}

impl<A: Actor> Kernel<A> {
    pub fn new(config: KernelConfig) -> Result<Self, SimError> {
        let workers = config.workers.max(1);
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| SimError::Pool(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Kernel {
            actors: Vec::new(),
            paths: Vec::new(),
            by_path: HashMap::new(),
            rank: Vec::new(),
            queue: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            started: false,
            config: KernelConfig { workers, ..config },
            pool,
            handled: Vec::new(),
            posted: 0,
            processed: 0,
            stalled: 0,
            truncated: false,
        })
    }

    pub fn config(&self) -> KernelConfig {
        self.config
    }

    pub fn register(&mut self, path: ComponentPath, actor: A) -> Result<ActorId, SimError> {
        if self.started {
            return Err(SimError::RegistrationClosed(path.to_string()));
        }
        if self.by_path.contains_key(&path) {
            return Err(SimError::DuplicatePath(path.to_string()));
        }
        let id = ActorId(self.actors.len() as u32);
        self.by_path.insert(path.clone(), id);
        self.paths.push(path);
        self.actors.push(Some(actor));
        self.handled.push(0);
        Ok(id)
    }

    pub fn lookup(&self, path: &ComponentPath) -> Option<ActorId> {
        self.by_path.get(path).copied()
    }

    pub fn path(&self, id: ActorId) -> &ComponentPath {
        &self.paths[id.index()]
    }

    pub fn actor_count(&self) -> usize {
        self.actors.len()
    }

    pub fn actor(&self, id: ActorId) -> &A {
        self.actors[id.index()]
            .as_ref()
            .expect("actor is only absent while its batch runs")
    }

    pub fn actor_mut(&mut self, id: ActorId) -> &mut A {
        self.actors[id.index()]
            .as_mut()
            .expect("actor is only absent while its batch runs")
    }

    /// Actors with their paths, in registration order.
    pub fn actors(&self) -> impl Iterator<Item = (ActorId, &ComponentPath, &A)> {
        self.actors.iter().enumerate().map(|(i, a)| {
            (
                ActorId(i as u32),
                &self.paths[i],
                a.as_ref().expect("actor present between runs"),
            )
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueues an event from outside the actor system. Returns its `seq`.
    pub fn post(&mut self, deliver_at: SimTime, target: ActorId, message: A::Msg) -> Result<u64, SimError> {
        if deliver_at < self.now {
            return Err(SimError::Causality {
                deliver_at,
                now: self.now,
            });
        }
        if target.index() >= self.actors.len() {
            return Err(SimError::UnknownActor(target));
        }
        Ok(self.enqueue(deliver_at, target, message))
    }

    fn enqueue(&mut self, deliver_at: SimTime, target: ActorId, message: A::Msg) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.posted += 1;
        self.queue.push(Reverse(Queued(SimEvent {
            deliver_at,
            target,
            message,
            seq,
        })));
        seq
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        let mut order: Vec<usize> = (0..self.paths.len()).collect();
        order.sort_by(|&a, &b| self.paths[a].cmp(&self.paths[b]));
        self.rank = vec![0; order.len()];
        for (r, &i) in order.iter().enumerate() {
            self.rank[i] = r as u32;
        }
    }

    pub fn run(&mut self, limit: RunLimit) -> Result<SimStats, SimError> {
        self.start();
        self.truncated = false;
        while let Some(Reverse(Queued(head))) = self.queue.peek() {
            let t = head.deliver_at;
            if let RunLimit::Until(limit) = limit {
                if t > limit {
                    self.truncated = true;
                    break;
                }
            }
            if t > self.now {
                self.now = t;
                self.stalled = 0;
            }
            let mut batch = Vec::new();
            while let Some(Reverse(Queued(ev))) = self.queue.peek() {
                if ev.deliver_at != t {
                    break;
                }
                let Reverse(Queued(ev)) = self.queue.pop().expect("peeked");
                batch.push(ev);
            }
            self.stalled += batch.len() as u64;
            if self.stalled > self.config.livelock_window {
                return Err(SimError::Livelock {
                    at: t,
                    events: self.stalled,
                });
            }
            self.process_batch(t, batch)?;
        }
        Ok(self.stats())
    }

    fn process_batch(&mut self, t: SimTime, mut batch: Vec<SimEvent<A::Msg>>) -> Result<(), SimError> {
        let rank = &self.rank;
        batch.sort_by_key(|ev| (rank[ev.target.index()], ev.seq));

        let mut groups: Vec<(ActorId, A, Vec<A::Msg>)> = Vec::new();
        for ev in batch {
            match groups.last_mut() {
                Some((target, _, msgs)) if *target == ev.target => msgs.push(ev.message),
                _ => {
                    let actor = self.actors[ev.target.index()]
                        .take()
                        .expect("actor present between batches");
                    groups.push((ev.target, actor, vec![ev.message]));
                }
            }
        }

        let run_group = |(target, mut actor, msgs): (ActorId, A, Vec<A::Msg>)| {
            let mut out = Vec::new();
            let mut handled = 0;
            let mut error = None;
            for msg in msgs {
                let mut ctx = Context {
                    now: t,
                    me: target,
                    out: &mut out,
                };
                handled += 1;
                if let Err(e) = actor.handle(&mut ctx, msg) {
                    error = Some(e);
                    break;
                }
            }
            GroupOutcome {
                target,
                actor,
                out,
                handled,
                error,
            }
        };

        let outcomes: Vec<GroupOutcome<A>> = match &self.pool {
            Some(pool) if groups.len() >= PARALLEL_MIN_GROUPS => {
                pool.install(|| groups.into_par_iter().map(run_group).collect())
            }
            _ => groups.into_iter().map(run_group).collect(),
        };

        let mut failure = None;
        let mut emitted = Vec::new();
        for outcome in outcomes {
            let idx = outcome.target.index();
            self.actors[idx] = Some(outcome.actor);
            self.handled[idx] += outcome.handled;
            self.processed += outcome.handled;
            if failure.is_some() {
                continue;
            }
            if let Some(e) = outcome.error {
                failure = Some(SimError::Actor {
                    path: self.paths[idx].to_string(),
                    at: t,
                    source: Box::new(e),
                });
                continue;
            }
            for o in outcome.out {
                if o.target.index() >= self.actors.len() {
                    failure = Some(SimError::UnknownActor(o.target));
                    break;
                }
                if o.delay == SimTime::ZERO && o.target != outcome.target {
                    failure = Some(SimError::ZeroDelay {
                        from: self.paths[idx].to_string(),
                        to: self.paths[o.target.index()].to_string(),
                        at: t,
                    });
                    break;
                }
                emitted.push((t + o.delay, o.target, o.msg));
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
        for (at, target, msg) in emitted {
            self.enqueue(at, target, msg);
        }
        Ok(())
    }

    pub fn stats(&self) -> SimStats {
        SimStats {
            final_time: self.now,
            events_processed: self.processed,
            events_posted: self.posted,
            truncated: self.truncated,
            per_actor: self
                .paths
                .iter()
                .zip(&self.handled)
                .map(|(p, &h)| ActorCount {
                    path: p.to_string(),
                    handled: h,
                })
                .collect(),
        }
    }
}
