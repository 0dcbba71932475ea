//! Hardware units as handshake-controller actors.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use crate::ctrl::{
    dispatch, AsyncCtrl, Channel, CtrlError, CtrlMsg, Datapath, HandshakeMessage, Routed, Stashed,
};
use crate::kernel::{Actor, ActorId, Context};
use crate::ppa::EventKind;
use crate::time::SimTime;
use crate::workload::{lif_update, NeuronParams, SpikeRecord};

use super::aer::{AerCodec, AerEvent, Flit};
use super::config::Arbitration;
use super::geom::{xy_next, Coord};
use super::tech::UnitKind;

/// Data carried by request messages.
#[derive(Clone, Debug, PartialEq)]
pub enum Token {
    /// Neuron to LUT: a spike bound for one destination PE.
    Spike {
        event: AerEvent,
        dst: Coord,
        layer: u16,
    },
    Flit(Flit),
    /// Resolved synapses on the receiving PE: `(slot, weight)`.
    Synapses {
        layer: u16,
        targets: Arc<[(u32, i8)]>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum HwMsg {
    Ctrl(CtrlMsg<Token>),
    /// Barrier step: update (or force) the neurons of `layer` and emit spikes.
    Evaluate {
        timestep: u32,
        layer: u16,
        forced: Option<Arc<[u32]>>,
    },
    EvalDone,
}

#[derive(Debug, thiserror::Error)]
pub enum UnitError {
    #[error(transparent)]
    Ctrl(#[from] CtrlError),
    #[error("{0}")]
    Unexpected(String),
}

pub(crate) type Activity = BTreeMap<(EventKind, Option<u16>), u64>;

pub struct Unit {
    pub(crate) kind: UnitKind,
    pub(crate) ctrl: AsyncCtrl<Token>,
    pub(crate) dp: UnitDp,
    pub(crate) activity: Activity,
}

pub(crate) enum UnitDp {
    InPort {
        here: Coord,
        vcs: u32,
        route: [Option<usize>; 5],
    },
    SaLane {
        ports: Vec<(ActorId, usize)>,
        policy: Arbitration,
        last: Option<usize>,
    },
    Pass,
    LutTx {
        codec: Arc<AerCodec>,
    },
    LutRx {
        codec: Arc<AerCodec>,
        lut: HashMap<u32, Arc<[(u32, i8)]>>,
    },
    Sram,
    Neuron(Box<NeuronCore>),
}

pub(crate) struct NeuronCore {
    pub(crate) codec: Arc<AerCodec>,
    /// `(layer, neuron)` per slot.
    pub(crate) slots: Vec<(u16, u32)>,
    pub(crate) slot_of: HashMap<(u16, u32), u32>,
    pub(crate) layer_slots: Vec<Vec<u32>>,
    pub(crate) params: Vec<Option<NeuronParams>>,
    pub(crate) membrane: Vec<i16>,
    pub(crate) acc: Vec<i64>,
    /// Destination PEs of each slot's fan-out.
    pub(crate) dests: Vec<Vec<Coord>>,
    pub(crate) egress: Channel,
    pub(crate) egress_outstanding: u64,
    pub(crate) fired: Vec<SpikeRecord>,
    pub(crate) delay: SimTime,
}

impl NeuronCore {
    fn evaluate(
        &mut self,
        ctx: &mut Context<'_, HwMsg>,
        timestep: u32,
        layer: u16,
        forced: Option<&[u32]>,
    ) -> Result<(), UnitError> {
        let l = layer as usize;
        let mut firing: Vec<u32> = Vec::new();
        match forced {
            Some(list) => {
                firing.extend(list.iter().filter_map(|n| self.slot_of.get(&(layer, *n)).copied()));
                firing.sort_unstable();
                for &s in &self.layer_slots[l] {
                    self.acc[s as usize] = 0;
                }
            }
            None => {
                for &s in &self.layer_slots[l] {
                    let si = s as usize;
                    let input = std::mem::take(&mut self.acc[si]);
                    let fire = match self.params[l] {
                        Some(p) => {
                            let (v, f) = lif_update(self.membrane[si], input, p);
                            self.membrane[si] = v;
                            f
                        }
                        None => input > 0,
                    };
                    if fire {
                        firing.push(s);
                    }
                }
            }
        }
        let now = ctx.now();
        for s in firing {
            let (lay, n) = self.slots[s as usize];
            self.fired.push(SpikeRecord::new(timestep, lay, n));
            let gid = self.codec.global_id(lay, n);
            for &dst in &self.dests[s as usize] {
                self.egress_outstanding += 1;
                ctx.send(
                    self.egress.down,
                    self.delay,
                    HwMsg::Ctrl(CtrlMsg::Handshake(HandshakeMessage::Req {
                        channel: self.egress,
                        payload: Token::Spike {
                            event: AerEvent {
                                source_neuron: gid,
                                timestep,
                            },
                            dst,
                            layer: lay,
                        },
                        issue_time: now,
                    })),
                );
            }
        }
        ctx.notify_self(self.delay, HwMsg::EvalDone);
        Ok(())
    }
}

struct Bound<'a> {
    dp: &'a mut UnitDp,
    act: &'a mut Activity,
}

impl Bound<'_> {
    fn record(&mut self, ev: EventKind, layer: Option<u16>, n: u64) {
        *self.act.entry((ev, layer)).or_default() += n;
    }
}

fn unexpected(unit: &str, t: &Token) -> CtrlError {
    CtrlError::Datapath(format!("{unit} cannot process {t:?}"))
}

fn port_of(ports: &[(ActorId, usize)], ch: Option<Channel>) -> usize {
    ch.and_then(|c| ports.iter().find(|p| p.0 == c.up).map(|p| p.1))
        .unwrap_or(usize::MAX)
}

impl Datapath<Token> for Bound<'_> {
    fn main(&mut self, _now: SimTime, from: Option<Channel>, payload: Token) -> Result<Routed<Token>, CtrlError> {
        let fwd = |payload| Ok(Routed::Forward { output: 0, payload });
        match (&mut *self.dp, payload) {
            (UnitDp::InPort { here, vcs, route }, Token::Flit(f)) => {
                if f.vc >= *vcs {
                    return Err(CtrlError::Datapath(format!(
                        "VC index {} out of range for {} virtual channels",
                        f.vc, vcs
                    )));
                }
                let dir = xy_next(*here, f.dst);
                let output = route[dir.index()].ok_or_else(|| {
                    CtrlError::Datapath(format!("router {here} has no {} output towards {}", dir.name(), f.dst))
                })?;
                self.record(EventKind::Fire, None, 1);
                Ok(Routed::Forward {
                    output,
                    payload: Token::Flit(f),
                })
            }
            (UnitDp::SaLane { ports, last, .. }, t @ Token::Flit(_)) => {
                *last = Some(port_of(ports, from));
                self.record(EventKind::Fire, None, 1);
                fwd(t)
            }
            (UnitDp::Pass, t @ Token::Flit(_)) => {
                self.record(EventKind::Fire, None, 1);
                fwd(t)
            }
            (UnitDp::LutTx { codec }, Token::Spike { event, dst, layer }) => {
                let flit = codec
                    .encode(event, dst)
                    .map_err(|e| CtrlError::Datapath(e.to_string()))?;
                self.record(EventKind::Lookup, Some(layer), 1);
                fwd(Token::Flit(flit))
            }
            (UnitDp::LutRx { codec, lut }, Token::Flit(f)) => {
                let ev = codec.decode(&f).map_err(|e| CtrlError::Datapath(e.to_string()))?;
                let (layer, n) = codec.split(ev.source_neuron);
                let targets = lut.get(&ev.source_neuron).cloned().ok_or_else(|| {
                    CtrlError::Datapath(format!(
                        "mapping error: spike of layer {layer} neuron {n} has no targets on this PE"
                    ))
                })?;
                self.record(EventKind::Lookup, Some(layer), 1);
                fwd(Token::Synapses { layer, targets })
            }
            (UnitDp::Sram, Token::Synapses { layer, targets }) => {
                self.record(EventKind::WeightFetch, Some(layer), targets.len() as u64);
                fwd(Token::Synapses { layer, targets })
            }
            (UnitDp::Neuron(core), Token::Synapses { layer, targets }) => {
                for &(slot, w) in targets.iter() {
                    core.acc[slot as usize] += w as i64;
                }
                *self.act.entry((EventKind::Integrate, Some(layer))).or_default() += targets.len() as u64;
                Ok(Routed::Retire)
            }
            (dp, t) => Err(unexpected(dp_name(dp), &t)),
        }
    }

    fn select_stashed(&mut self, stash: &VecDeque<Stashed<Token>>) -> usize {
        let UnitDp::SaLane { ports, policy, last } = &*self.dp else {
            return 0;
        };
        let key = |s: &Stashed<Token>| {
            let p = port_of(ports, s.channel);
            match (policy, last) {
                (Arbitration::RoundRobin, Some(g)) => (p + 5 - (g + 1) % 5) % 5,
                _ => p,
            }
        };
        (0..stash.len()).min_by_key(|&i| (key(&stash[i]), i)).unwrap_or(0)
    }
}

fn dp_name(dp: &UnitDp) -> &'static str {
    match dp {
        UnitDp::InPort { .. } => "input unit",
        UnitDp::SaLane { .. } => "switch allocator",
        UnitDp::Pass => "pass-through unit",
        UnitDp::LutTx { .. } => "egress LUT",
        UnitDp::LutRx { .. } => "ingress LUT",
        UnitDp::Sram => "weight SRAM",
        UnitDp::Neuron(_) => "neuron array",
    }
}

impl Unit {
    pub(crate) fn new(kind: UnitKind, ctrl: AsyncCtrl<Token>, dp: UnitDp) -> Self {
        Unit {
            kind,
            ctrl,
            dp,
            activity: Activity::new(),
        }
    }

    pub fn kind(&self) -> UnitKind {
        self.kind
    }

    pub fn ctrl(&self) -> &AsyncCtrl<Token> {
        &self.ctrl
    }

    pub(crate) fn neuron(&self) -> Option<&NeuronCore> {
        match &self.dp {
            UnitDp::Neuron(n) => Some(n),
            _ => None,
        }
    }
}

impl Actor for Unit {
    type Msg = HwMsg;
    type Error = UnitError;

    fn handle(&mut self, ctx: &mut Context<'_, HwMsg>, msg: HwMsg) -> Result<(), UnitError> {
        match msg {
            HwMsg::Ctrl(CtrlMsg::Handshake(HandshakeMessage::Ack { channel, .. }))
                if matches!(&self.dp, UnitDp::Neuron(n) if n.egress.id == channel.id) =>
            {
                let UnitDp::Neuron(core) = &mut self.dp else { unreachable!() };
                if core.egress_outstanding == 0 {
                    return Err(CtrlError::UnexpectedAck(channel.id).into());
                }
                core.egress_outstanding -= 1;
                Ok(())
            }
            HwMsg::Ctrl(m) => {
                let mut b = Bound {
                    dp: &mut self.dp,
                    act: &mut self.activity,
                };
                dispatch(&mut self.ctrl, &mut b, ctx, m, HwMsg::Ctrl)?;
                Ok(())
            }
            HwMsg::Evaluate {
                timestep,
                layer,
                forced,
            } => match &mut self.dp {
                UnitDp::Neuron(core) => core.evaluate(ctx, timestep, layer, forced.as_deref()),
                other => Err(UnitError::Unexpected(format!(
                    "{} received an evaluate command",
                    dp_name(other)
                ))),
            },
            HwMsg::EvalDone => Ok(()),
        }
    }
}
