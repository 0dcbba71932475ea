//! Linear handshake pipelines built from bare controllers: a greedy source,
//! `n` stages and a sink, all driven by the kernel.

use neuromesh::ctrl::{
    dispatch, AsyncCtrl, Channel, Coupling, CtrlError, CtrlMsg, Datapath, Delays, HandshakeMessage, Readiness,
    Routed,
};
use neuromesh::kernel::{Actor, ActorId, ComponentPath, Context, Kernel, KernelConfig, RunLimit, SimStats};
use neuromesh::time::SimTime;

/// Source request delay; the kernel forbids zero-delay sends between actors.
pub const SOURCE_DELAY: SimTime = SimTime(1);

#[derive(Clone, Copy, Debug)]
pub struct StageSpec {
    pub delays: Delays,
    pub depth: u32,
    /// Coupled stages stall each token this long before reporting ready.
    pub stall: Option<SimTime>,
}

/// Identity datapath that can hold tokens for a fixed stall.
pub struct Stall {
    pub stall: Option<SimTime>,
    started: Option<SimTime>,
}

impl Datapath<u32> for Stall {
    fn main(&mut self, now: SimTime, _: Option<Channel>, p: u32) -> Result<Routed<u32>, CtrlError> {
        self.started = Some(now);
        Ok(Routed::Forward { output: 0, payload: p })
    }

    fn is_ready(&mut self, now: SimTime) -> Readiness {
        match (self.stall, self.started) {
            (Some(s), Some(t0)) if now < t0 + s => Readiness::NotReady { retry_after: t0 + s - now },
            _ => Readiness::Ready,
        }
    }
}

/// Records arrivals and retires.
#[derive(Default)]
pub struct Recorder {
    pub seen: Vec<(SimTime, u32)>,
}

impl Datapath<u32> for Recorder {
    fn main(&mut self, now: SimTime, _: Option<Channel>, p: u32) -> Result<Routed<u32>, CtrlError> {
        self.seen.push((now, p));
        Ok(Routed::Retire)
    }
}

pub enum Node {
    Source {
        out: Option<Channel>,
        queue: std::collections::VecDeque<u32>,
        in_flight: bool,
        sent: Vec<SimTime>,
    },
    Stage(AsyncCtrl<u32>, Stall),
    Sink(AsyncCtrl<u32>, Recorder),
}

#[derive(Debug, thiserror::Error)]
pub enum PipeError {
    #[error(transparent)]
    Ctrl(#[from] CtrlError),
    #[error("source: {0}")]
    Source(&'static str),
}

impl Actor for Node {
    type Msg = CtrlMsg<u32>;
    type Error = PipeError;

    fn handle(&mut self, ctx: &mut Context<'_, Self::Msg>, msg: Self::Msg) -> Result<(), PipeError> {
        match self {
            Node::Source { out, queue, in_flight, sent } => {
                let out = out.ok_or(PipeError::Source("not wired"))?;
                match msg {
                    CtrlMsg::Poll => {}
                    CtrlMsg::Handshake(HandshakeMessage::Ack { .. }) if *in_flight => *in_flight = false,
                    _ => return Err(PipeError::Source("unexpected message")),
                }
                if let Some(p) = queue.pop_front() {
                    *in_flight = true;
                    sent.push(ctx.now());
                    let now = ctx.now();
                    ctx.send(
                        out.down,
                        SOURCE_DELAY,
                        CtrlMsg::Handshake(HandshakeMessage::Req { channel: out, payload: p, issue_time: now }),
                    );
                }
                Ok(())
            }
            Node::Stage(c, dp) => Ok(dispatch(c, dp, ctx, msg, |m| m)?),
            Node::Sink(c, dp) => Ok(dispatch(c, dp, ctx, msg, |m| m)?),
        }
    }
}

pub struct PipeRun {
    pub kernel: Kernel<Node>,
    pub stats: SimStats,
    pub stages: Vec<ActorId>,
    pub sink: ActorId,
    pub source: ActorId,
}

impl PipeRun {
    pub fn arrivals(&self) -> &[(SimTime, u32)] {
        match self.kernel.actor(self.sink) {
            Node::Sink(_, r) => &r.seen,
            _ => unreachable!(),
        }
    }

    pub fn ctrl(&self, id: ActorId) -> &AsyncCtrl<u32> {
        match self.kernel.actor(id) {
            Node::Stage(c, _) | Node::Sink(c, _) => c,
            Node::Source { .. } => panic!("source has no controller"),
        }
    }
}

/// Builds source -> stages -> sink and pushes `tokens` payloads 0..tokens.
pub fn run_pipeline(
    stages: &[StageSpec],
    sink: Delays,
    tokens: u32,
    workers: usize,
) -> Result<PipeRun, neuromesh::kernel::SimError> {
    let mut k = Kernel::new(KernelConfig { workers, ..KernelConfig::default() })?;
    let path = |i: usize| ComponentPath::new("sys", "pipe", "stage", format!("s{i}"));
    let source = k.register(
        ComponentPath::new("sys", "pipe", "source", "src"),
        Node::Source { out: None, queue: (0..tokens).collect(), in_flight: false, sent: Vec::new() },
    )?;
    let mut ids = vec![source];
    for (i, s) in stages.iter().enumerate() {
        let coupling = if s.stall.is_some() { Coupling::Coupled } else { Coupling::Decoupled };
        ids.push(k.register(
            path(i),
            Node::Stage(AsyncCtrl::new(s.delays, coupling), Stall { stall: s.stall, started: None }),
        )?);
    }
    let sink_id = k.register(
        ComponentPath::new("sys", "pipe", "sink", "snk"),
        Node::Sink(AsyncCtrl::new(sink, Coupling::Decoupled), Recorder::default()),
    )?;
    ids.push(sink_id);
    let link = |i: usize| Channel { id: i as u32, up: ids[i], down: ids[i + 1] };
    if let Node::Source { out, .. } = k.actor_mut(source) {
        *out = Some(link(0));
    }
    for (i, s) in stages.iter().enumerate() {
        let init = HandshakeMessage::Init { outputs: vec![link(i + 1)], buffer_depth: s.depth };
        k.post(SimTime::ZERO, ids[i + 1], CtrlMsg::Handshake(init))?;
    }
    let init = HandshakeMessage::Init { outputs: vec![], buffer_depth: 1 };
    k.post(SimTime::ZERO, sink_id, CtrlMsg::Handshake(init))?;
    // Source starts after the inits are delivered.
    k.post(SimTime(1), source, CtrlMsg::Poll)?;
    let stats = k.run(RunLimit::Quiescence)?;
    let stages = ids[1..=stages.len()].to_vec();
    Ok(PipeRun { kernel: k, stats, stages, sink: sink_id, source })
}

pub const SINK: Delays = Delays::ps(700, 300);

pub fn stage_strategy() -> impl proptest::strategy::Strategy<Value = StageSpec> {
    use proptest::prelude::*;
    (100u64..4_000, 100u64..4_000, 1u32..=8, prop::option::weighted(0.25, 1u64..3_000)).prop_map(
        |(f, b, depth, stall)| StageSpec { delays: Delays::ps(f, b), depth, stall: stall.map(SimTime) },
    )
}

/// Steady-state interval of a depth-one chain: each stage stays busy from
/// accepting a token until the next stage acknowledges it.
pub fn predicted_interval(stages: &[StageSpec]) -> u64 {
    let mut worst = SOURCE_DELAY.0 + stages[0].delays.backward.0;
    for (i, s) in stages.iter().enumerate() {
        let next_b = stages.get(i + 1).map_or(SINK.backward, |n| n.delays.backward).0;
        worst = worst.max(s.delays.forward.0 + next_b);
    }
    worst
}

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Conservation, req/ack pairing, fire-once and stash drain after a run.
pub fn check_handshake(stages: &[StageSpec], tokens: u32, r: &PipeRun) -> Result<(), String> {
    let n = u64::from(tokens);
    let got: Vec<u32> = r.arrivals().iter().map(|&(_, p)| p).collect();
    check!(got == (0..tokens).collect::<Vec<_>>(), "sink saw {} of {tokens} tokens or out of order", got.len());
    for (i, (&id, s)) in r.stages.iter().zip(stages).enumerate() {
        let c = r.ctrl(id);
        let k = c.counters();
        check!(
            [k.reqs_received, k.acks_emitted, k.reqs_emitted, k.acks_received] == [n; 4],
            "stage {i}: req/ack counts {k:?} for {n} tokens"
        );
        check!(k.fires == n && k.reqs_accepted == n, "stage {i}: {} fires for {n} tokens", k.fires);
        check!(k.max_in_flight <= s.depth, "stage {i}: {} in flight at depth {}", k.max_in_flight, s.depth);
        check!(
            c.stash().is_empty() && !c.is_holding() && c.buffer_depth() == c.initial_depth(),
            "stage {i}: not drained (stash {}, depth {}/{})",
            c.stash().len(),
            c.buffer_depth(),
            c.initial_depth()
        );
        check!(c.fsm() == neuromesh::ctrl::Fsm::Forward, "stage {i}: ended in {:?}", c.fsm());
    }
    let sink = r.ctrl(r.sink).counters();
    check!(sink.retired == n && sink.acks_emitted == n, "sink retired {} acked {}", sink.retired, sink.acks_emitted);
    check!(!r.stats.truncated, "run truncated");
    Ok(())
}
