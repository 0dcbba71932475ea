//! FSM-based asynchronous pipeline controller.
//!
//! A controller sits between an upstream and one or more downstream channels.
//! It starts in `Init`, moves to `Forward` on `initMsg`, and falls into
//! `Backward` whenever its buffer depth (free token slots) reaches zero. In
//! `Backward` incoming requests are stashed; an acknowledgment from downstream
//! frees a slot and the next stashed request is replayed at the ack's time.
//!
//! The datapath is separate from the controller. A decoupled datapath runs on
//! `fire` and the controller immediately schedules the upstream ack (after the
//! backward delay) and the downstream request (after the forward delay). A
//! coupled datapath holds the request until it reports ready; both emissions
//! are then scheduled from the ready instant.

use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use crate::kernel::{ActorId, Context};
use crate::time::SimTime;

/// Point-to-point link. Requests travel `up -> down`, acks `down -> up`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Channel {
    pub id: u32,
    pub up: ActorId,
    pub down: ActorId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MsgKind {
    Init,
    Req,
    Ack,
}

impl fmt::Display for MsgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MsgKind::Init => "initMsg",
            MsgKind::Req => "reqMsg",
            MsgKind::Ack => "ackMsg",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HandshakeMessage<P> {
    Init {
        outputs: Vec<Channel>,
        buffer_depth: u32,
    },
    Req {
        channel: Channel,
        payload: P,
        issue_time: SimTime,
    },
    Ack {
        channel: Channel,
        issue_time: SimTime,
    },
}

impl<P> HandshakeMessage<P> {
    pub fn kind(&self) -> MsgKind {
        match self {
            HandshakeMessage::Init { .. } => MsgKind::Init,
            HandshakeMessage::Req { .. } => MsgKind::Req,
            HandshakeMessage::Ack { .. } => MsgKind::Ack,
        }
    }
}

/// Everything a controller actor can receive.
#[derive(Clone, Debug, PartialEq)]
pub enum CtrlMsg<P> {
    Handshake(HandshakeMessage<P>),
    /// Self-notification asking a coupled controller to re-check its datapath.
    Poll,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Fsm {
    Init,
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Coupling {
    Decoupled,
    Coupled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Delays {
    pub forward: SimTime,
    pub backward: SimTime,
}

impl Delays {
    pub const fn ps(forward: u64, backward: u64) -> Self {
        Delays {
            forward: SimTime(forward),
            backward: SimTime(backward),
        }
    }
}

/// What the datapath did with an accepted token.
#[derive(Clone, Debug, PartialEq)]
pub enum Routed<P> {
    /// Send `payload` downstream on `outputs[output]`.
    Forward { output: usize, payload: P },
    /// The token ends here (sink).
    Retire,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Readiness {
    Ready,
    NotReady { retry_after: SimTime },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CtrlError {
    #[error("protocol error: initMsg received twice")]
    DoubleInit,
    #[error("config error: initMsg carries zero buffer depth")]
    ZeroDepth,
    #[error("protocol error: {0} before initMsg")]
    NotInitialized(MsgKind),
    #[error("protocol error: ackMsg on channel {0} with no outstanding reqMsg")]
    UnexpectedAck(u32),
    #[error("protocol error: ready signal with no held reqMsg")]
    NothingHeld,
    #[error("datapath chose output {output} but only {available} outputs exist")]
    BadOutput { output: usize, available: usize },
    #[error("{0}")]
    Datapath(String),
}

/// A deferred request. `channel` is `None` for tokens generated inside the unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Stashed<P> {
    pub channel: Option<Channel>,
    pub payload: P,
}

/// Unit-specific processing attached to a controller.
pub trait Datapath<P> {
    /// Processes one accepted token. Runs exactly once per accepted request.
    /// `from` is the upstream channel, `None` for tokens raised inside the unit.
    fn main(&mut self, now: SimTime, from: Option<Channel>, payload: P) -> Result<Routed<P>, CtrlError>;

    /// Coupled datapaths report when the held result may be released.
    fn is_ready(&mut self, _now: SimTime) -> Readiness {
        Readiness::Ready
    }

    /// Index into the stash of the request to replay next. Oldest first unless
    /// the unit arbitrates.
    fn select_stashed(&mut self, _stash: &VecDeque<Stashed<P>>) -> usize {
        0
    }
}

/// Pass-through datapath that always uses output 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl<P> Datapath<P> for Identity {
    fn main(&mut self, _now: SimTime, _from: Option<Channel>, payload: P) -> Result<Routed<P>, CtrlError> {
        Ok(Routed::Forward { output: 0, payload })
    }
}

/// Terminal datapath.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sink;

impl<P> Datapath<P> for Sink {
    fn main(&mut self, _now: SimTime, _from: Option<Channel>, _payload: P) -> Result<Routed<P>, CtrlError> {
        Ok(Routed::Retire)
    }
}

/// FIFO register file: the request payload is pushed, the head is returned.
#[derive(Clone, Debug, Default)]
pub struct Fifo<P> {
    slots: VecDeque<P>,
}

impl<P> Fifo<P> {
    pub fn new() -> Self {
        Fifo {
            slots: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn cycle(&mut self, input: P) -> P {
        self.slots.push_back(input);
        self.slots.pop_front().expect("just pushed")
    }
}

impl<P> Datapath<P> for Fifo<P> {
    fn main(&mut self, _now: SimTime, _from: Option<Channel>, payload: P) -> Result<Routed<P>, CtrlError> {
        Ok(Routed::Forward {
            output: 0,
            payload: self.cycle(payload),
        })
    }
}

/// Scheduling requests produced by a controller transition.
#[derive(Clone, Debug, PartialEq)]
pub enum Emission<P> {
    Req {
        channel: Channel,
        payload: P,
        delay: SimTime,
    },
    Ack {
        channel: Channel,
        delay: SimTime,
    },
    Poll {
        delay: SimTime,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CtrlCounters {
    pub reqs_received: u64,
    pub reqs_accepted: u64,
    pub acks_emitted: u64,
    pub reqs_emitted: u64,
    pub acks_received: u64,
    pub fires: u64,
    pub retired: u64,
    pub stashed: u64,
    pub max_in_flight: u32,
}

#[derive(Clone, Debug)]
struct Held<P> {
    upstream: Option<Channel>,
    routed: Routed<P>,
}

#[derive(Clone, Debug)]
pub struct AsyncCtrl<P> {
    fsm: Fsm,
    buffer_depth: u32,
    initial_depth: u32,
    stash: VecDeque<Stashed<P>>,
    outputs: Vec<Channel>,
    outstanding: Vec<u32>,
    delays: Delays,
    coupling: Coupling,
    held: Option<Held<P>>,
    counters: CtrlCounters,
}

impl<P> AsyncCtrl<P> {
    pub fn new(delays: Delays, coupling: Coupling) -> Self {
        AsyncCtrl {
            fsm: Fsm::Init,
            buffer_depth: 0,
            initial_depth: 0,
            stash: VecDeque::new(),
            outputs: Vec::new(),
            outstanding: Vec::new(),
            delays,
            coupling,
            held: None,
            counters: CtrlCounters::default(),
        }
    }

    pub fn fsm(&self) -> Fsm {
        self.fsm
    }

    pub fn buffer_depth(&self) -> u32 {
        self.buffer_depth
    }

    pub fn initial_depth(&self) -> u32 {
        self.initial_depth
    }

    pub fn stash(&self) -> &VecDeque<Stashed<P>> {
        &self.stash
    }

    pub fn outputs(&self) -> &[Channel] {
        &self.outputs
    }

    pub fn delays(&self) -> Delays {
        self.delays
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn counters(&self) -> &CtrlCounters {
        &self.counters
    }

    pub fn is_holding(&self) -> bool {
        self.held.is_some()
    }

    /// Tokens sent downstream and not yet acknowledged.
    pub fn in_flight(&self) -> u32 {
        self.outstanding.iter().sum()
    }

    pub fn on_init(&mut self, outputs: Vec<Channel>, buffer_depth: u32) -> Result<(), CtrlError> {
        if self.fsm != Fsm::Init {
            return Err(CtrlError::DoubleInit);
        }
        if buffer_depth == 0 {
            return Err(CtrlError::ZeroDepth);
        }
        self.outstanding = vec![0; outputs.len()];
        self.outputs = outputs;
        self.buffer_depth = buffer_depth;
        self.initial_depth = buffer_depth;
        self.fsm = Fsm::Forward;
        Ok(())
    }

    pub fn on_req<D: Datapath<P>>(
        &mut self,
        now: SimTime,
        upstream: Option<Channel>,
        payload: P,
        dp: &mut D,
        out: &mut Vec<Emission<P>>,
    ) -> Result<(), CtrlError> {
        if self.fsm == Fsm::Init {
            return Err(CtrlError::NotInitialized(MsgKind::Req));
        }
        self.counters.reqs_received += 1;
        if self.can_accept() && self.stash.is_empty() {
            self.accept(now, upstream, payload, dp, out)?;
        } else {
            self.counters.stashed += 1;
            self.stash.push_back(Stashed {
                channel: upstream,
                payload,
            });
        }
        self.settle();
        Ok(())
    }

    pub fn on_ack<D: Datapath<P>>(
        &mut self,
        now: SimTime,
        channel: Channel,
        dp: &mut D,
        out: &mut Vec<Emission<P>>,
    ) -> Result<(), CtrlError> {
        if self.fsm == Fsm::Init {
            return Err(CtrlError::NotInitialized(MsgKind::Ack));
        }
        let idx = self
            .outputs
            .iter()
            .position(|c| c.id == channel.id)
            .filter(|&i| self.outstanding[i] > 0)
            .ok_or(CtrlError::UnexpectedAck(channel.id))?;
        self.outstanding[idx] -= 1;
        self.buffer_depth += 1;
        self.counters.acks_received += 1;
        self.settle();
        self.drain(now, dp, out)
    }

    /// Re-checks a coupled datapath; releases the held request when ready.
    pub fn on_poll<D: Datapath<P>>(
        &mut self,
        now: SimTime,
        dp: &mut D,
        out: &mut Vec<Emission<P>>,
    ) -> Result<(), CtrlError> {
        if self.held.is_none() {
            return Err(CtrlError::NothingHeld);
        }
        match dp.is_ready(now) {
            Readiness::Ready => self.coupled_ready(now, dp, out),
            Readiness::NotReady { retry_after } => {
                out.push(Emission::Poll { delay: retry_after });
                Ok(())
            }
        }
    }

    /// Handles `isDatapathReady`: emits the held ack and request from `now`.
    pub fn coupled_ready<D: Datapath<P>>(
        &mut self,
        now: SimTime,
        dp: &mut D,
        out: &mut Vec<Emission<P>>,
    ) -> Result<(), CtrlError> {
        let held = self.held.take().ok_or(CtrlError::NothingHeld)?;
        self.release(held.upstream, held.routed, out);
        self.settle();
        self.drain(now, dp, out)
    }

    fn can_accept(&self) -> bool {
        self.buffer_depth > 0 && self.held.is_none()
    }

    fn drain<D: Datapath<P>>(
        &mut self,
        now: SimTime,
        dp: &mut D,
        out: &mut Vec<Emission<P>>,
    ) -> Result<(), CtrlError> {
        while self.can_accept() && !self.stash.is_empty() {
            let pick = dp.select_stashed(&self.stash).min(self.stash.len() - 1);
            let next = self.stash.remove(pick).expect("index in range");
            self.accept(now, next.channel, next.payload, dp, out)?;
            self.settle();
        }
        Ok(())
    }

    /// `fire`: the datapath runs exactly once per accepted request.
    fn accept<D: Datapath<P>>(
        &mut self,
        now: SimTime,
        upstream: Option<Channel>,
        payload: P,
        dp: &mut D,
        out: &mut Vec<Emission<P>>,
    ) -> Result<(), CtrlError> {
        self.counters.reqs_accepted += 1;
        self.counters.fires += 1;
        let routed = dp.main(now, upstream, payload)?;
        if let Routed::Forward { output, .. } = &routed {
            if *output >= self.outputs.len() {
                return Err(CtrlError::BadOutput {
                    output: *output,
                    available: self.outputs.len(),
                });
            }
            self.buffer_depth -= 1;
        }
        match self.coupling {
            Coupling::Decoupled => self.release(upstream, routed, out),
            Coupling::Coupled => match dp.is_ready(now) {
                Readiness::Ready => self.release(upstream, routed, out),
                Readiness::NotReady { retry_after } => {
                    self.held = Some(Held { upstream, routed });
                    out.push(Emission::Poll { delay: retry_after });
                }
            },
        }
        Ok(())
    }

    fn release(&mut self, upstream: Option<Channel>, routed: Routed<P>, out: &mut Vec<Emission<P>>) {
        if let Some(channel) = upstream {
            self.counters.acks_emitted += 1;
            out.push(Emission::Ack {
                channel,
                delay: self.delays.backward,
            });
        }
        match routed {
            Routed::Forward { output, payload } => {
                self.outstanding[output] += 1;
                self.counters.reqs_emitted += 1;
                self.counters.max_in_flight = self.counters.max_in_flight.max(self.in_flight());
                out.push(Emission::Req {
                    channel: self.outputs[output],
                    payload,
                    delay: self.delays.forward,
                });
            }
            Routed::Retire => self.counters.retired += 1,
        }
    }

    fn settle(&mut self) {
        if self.fsm != Fsm::Init {
            self.fsm = if self.buffer_depth == 0 {
                Fsm::Backward
            } else {
                Fsm::Forward
            };
        }
    }
}

/// Feeds one message into `ctrl` and turns the resulting emissions into kernel
/// sends. `wrap` lifts controller messages into the actor's message type.
pub fn dispatch<P, D, M>(
    ctrl: &mut AsyncCtrl<P>,
    dp: &mut D,
    ctx: &mut Context<'_, M>,
    msg: CtrlMsg<P>,
    wrap: impl Fn(CtrlMsg<P>) -> M,
) -> Result<(), CtrlError>
where
    D: Datapath<P>,
{
    let now = ctx.now();
    let mut out = Vec::new();
    match msg {
        CtrlMsg::Handshake(HandshakeMessage::Init {
            outputs,
            buffer_depth,
        }) => ctrl.on_init(outputs, buffer_depth)?,
        CtrlMsg::Handshake(HandshakeMessage::Req {
            channel, payload, ..
        }) => ctrl.on_req(now, Some(channel), payload, dp, &mut out)?,
        CtrlMsg::Handshake(HandshakeMessage::Ack { channel, .. }) => {
            ctrl.on_ack(now, channel, dp, &mut out)?
        }
        CtrlMsg::Poll => ctrl.on_poll(now, dp, &mut out)?,
    }
    emit(ctx, out, wrap);
    Ok(())
}

pub fn emit<P, M>(ctx: &mut Context<'_, M>, out: Vec<Emission<P>>, wrap: impl Fn(CtrlMsg<P>) -> M) {
    let now = ctx.now();
    for e in out {
        match e {
            Emission::Req {
                channel,
                payload,
                delay,
            } => ctx.send(
                channel.down,
                delay,
                wrap(CtrlMsg::Handshake(HandshakeMessage::Req {
                    channel,
                    payload,
                    issue_time: now,
                })),
            ),
            Emission::Ack { channel, delay } => ctx.send(
                channel.up,
                delay,
                wrap(CtrlMsg::Handshake(HandshakeMessage::Ack {
                    channel,
                    issue_time: now,
                })),
            ),
            Emission::Poll { delay } => ctx.notify_self(delay, wrap(CtrlMsg::Poll)),
        }
    }
}
