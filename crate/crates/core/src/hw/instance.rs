//! Builds the actor graph for one architecture point and drives a sample
//! through it layer by layer.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::Serialize;

use crate::ctrl::{AsyncCtrl, Channel, Coupling, CtrlMsg, Delays, HandshakeMessage};
use crate::kernel::{ActorId, ComponentPath, Kernel, KernelConfig, RunLimit, SimError, SimStats};
use crate::ppa::{ActivityLedger, EventKind, Phase, PpaError, PpaReport};
use crate::time::SimTime;
use crate::workload::{SnnModel, SpikeRecord, SpikeTrace, TraceError};

use super::aer::AerCodec;
use super::config::ArchConfig;
use super::geom::{Coord, Dir, MeshDims};
use super::tech::{TechError, TechParams, UnitKind};
use super::units::{HwMsg, NeuronCore, Unit, UnitDp};
use super::{unit_inventory, UNITS_PER_NODE};

/// Queue depth of the PE pipeline stages (LUTs, SRAM, neuron array).
pub const PE_STAGE_DEPTH: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum HwError {
    #[error("invalid architecture: {}", .0.join("; "))]
    InvalidArch(Vec<String>),
    #[error("architecture mapping does not cover the model's layer sizes {0:?}")]
    ModelMismatch(Vec<u32>),
    #[error(transparent)]
    Tech(#[from] TechError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Ppa(#[from] PpaError),
    #[error("simulation ended with undelivered traffic: {0}")]
    Undelivered(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimOptions {
    pub workers: usize,
    /// Stop before any event later than this; the run is then marked truncated.
    pub time_limit: Option<SimTime>,
    pub livelock_window: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        let k = KernelConfig::default();
        SimOptions {
            workers: k.workers,
            time_limit: None,
            livelock_window: k.livelock_window,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum RunMode<'a> {
    /// Only the input layer is driven; later layers compute their own spikes.
    ClosedLoop,
    /// Every layer fires exactly as recorded in the trace.
    Replay(&'a SpikeTrace),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TrafficStats {
    /// Flits injected by each PE's egress LUT.
    pub injected: u64,
    /// Flits accepted by each PE's ingress LUT, in scan order.
    pub pe_rx: Vec<u64>,
    /// Flits carried by each directed inter-router link, `(from, dir, flits)`.
    pub links: Vec<(Coord, Dir, u64)>,
}

impl TrafficStats {
    pub fn hop_total(&self) -> u64 {
        self.links.iter().map(|l| l.2).sum()
    }

    pub fn max_link(&self) -> u64 {
        self.links.iter().map(|l| l.2).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub output: SpikeTrace,
    pub ledger: ActivityLedger,
    pub phases: Vec<Phase>,
    pub stats: SimStats,
    pub traffic: TrafficStats,
    pub report: PpaReport,
    pub latency: SimTime,
    pub truncated: bool,
}

#[derive(Clone, Copy, Default)]
struct NodeIds {
    inp: [Option<ActorId>; 5],
    sa: [Option<ActorId>; 5],
    out: [Option<ActorId>; 5],
    nic_rx: Option<ActorId>,
    nic_tx: Option<ActorId>,
    lut_rx: Option<ActorId>,
    lut_tx: Option<ActorId>,
    sram: Option<ActorId>,
    neuron: Option<ActorId>,
}

struct Spec {
    path: ComponentPath,
    kind: UnitKind,
    unit_index: usize,
    coupling: Coupling,
    depth: u32,
    outputs: Vec<Channel>,
    dp: Option<UnitDp>,
}

pub struct HardwareInstance {
    kernel: Kernel<Unit>,
    ledger: ActivityLedger,
    tech: TechParams,
    mesh: MeshDims,
    model_hash: String,
    timesteps: u32,
    layer_sizes: Vec<u32>,
    /// Neuron actors holding at least one neuron of each layer.
    layer_actors: Vec<Vec<ActorId>>,
    nodes: Vec<NodeIds>,
}

fn connected(c: Coord, mesh: MeshDims) -> Vec<Dir> {
    Dir::ALL
        .into_iter()
        .filter(|d| *d == Dir::Local || d.step(c, mesh).is_some())
        .collect()
}

fn id(n: usize) -> ActorId {
    ActorId(n as u32)
}

impl HardwareInstance {
    pub fn build(arch: &ArchConfig, tech: &TechParams, model: &SnnModel, opts: &SimOptions) -> Result<Self, HwError> {
        let v = arch.violations();
        if !v.is_empty() {
            return Err(HwError::InvalidArch(v));
        }
        if !arch.mapping.covers(model) {
            return Err(HwError::ModelMismatch(model.layer_sizes()));
        }
        for k in UnitKind::ALL {
            tech.get(k)?;
        }
        let mesh = arch.mesh_dims;
        let num_layers = model.num_layers();
        let codec = Arc::new(AerCodec::new(
            &arch.mapping,
            arch.neurons_per_pe,
            mesh,
            arch.virtual_channels,
        ));

        // Slot tables per PE, then the synapse LUTs and fan-out destinations.
        let pe_slots = arch.mapping.pe_slots();
        let nodes_n = mesh.nodes() as usize;
        let mut slot_lists: Vec<Vec<(u16, u32)>> = vec![Vec::new(); nodes_n];
        let mut slot_of: Vec<HashMap<(u16, u32), u32>> = vec![HashMap::new(); nodes_n];
        for (pe, list) in &pe_slots {
            let i = mesh.scan_index(*pe);
            slot_of[i] = list.iter().enumerate().map(|(s, k)| (*k, s as u32)).collect();
            slot_lists[i] = list.clone();
        }
        let mut luts: Vec<HashMap<u32, Vec<(u32, i8)>>> = vec![HashMap::new(); nodes_n];
        let mut dests: Vec<Vec<Vec<Coord>>> = slot_lists.iter().map(|s| vec![Vec::new(); s.len()]).collect();
        for l in 0..num_layers - 1 {
            let next = (l + 1) as u16;
            for (n, targets) in model.fanout(l).into_iter().enumerate() {
                let gid = codec.global_id(l as u16, n as u32);
                let mut pes = BTreeSet::new();
                for (tgt, w) in targets {
                    let pe = arch.mapping.pe_of(l + 1, tgt).expect("mapping covers model");
                    let pi = mesh.scan_index(pe);
                    let slot = slot_of[pi][&(next, tgt)];
                    luts[pi].entry(gid).or_default().push((slot, w));
                    pes.insert(pi);
                }
                let src = arch.mapping.pe_of(l, n as u32).expect("mapping covers model");
                let si = mesh.scan_index(src);
                let s = slot_of[si][&(l as u16, n as u32)] as usize;
                dests[si][s] = pes.into_iter().map(|i| mesh.coord(i)).collect();
            }
        }

        // First pass: fix actor ids in registration order.
        let mut nodes = vec![NodeIds::default(); nodes_n];
        let mut next = 0usize;
        let mut take = || {
            next += 1;
            Some(id(next - 1))
        };
        for (i, c) in mesh.coords().enumerate() {
            let ports = connected(c, mesh);
            let n = &mut nodes[i];
            for d in &ports {
                n.inp[d.index()] = take();
            }
            for d in &ports {
                n.sa[d.index()] = take();
            }
            for d in &ports {
                n.out[d.index()] = take();
            }
            n.nic_rx = take();
            n.nic_tx = take();
            n.lut_rx = take();
            n.lut_tx = take();
            n.sram = take();
            n.neuron = take();
        }

        // Second pass: channels and datapaths.
        let mut chan_id = 0u32;
        let mut chan = |up: ActorId, down: ActorId| {
            chan_id += 1;
            Channel {
                id: chan_id - 1,
                up,
                down,
            }
        };
        let fifo = arch.fifo_depth_per_port;
        let mut specs: Vec<Spec> = Vec::new();
        let mut egress_channels = Vec::new();
        for (i, c) in mesh.coords().enumerate() {
            let node = format!("node({},{})", c.x, c.y);
            let ports = connected(c, mesh);
            let ids = nodes[i];
            let base = i * UNITS_PER_NODE;
            let spec = |module: &str, unit: String, kind, unit_index, coupling, depth, outputs, dp| Spec {
                path: ComponentPath::new("sys", node.clone(), module, unit),
                kind,
                unit_index,
                coupling,
                depth,
                outputs,
                dp: Some(dp),
            };
            for &d in &ports {
                let mut route = [None; 5];
                let mut outs = Vec::new();
                for &o in &ports {
                    if o == d && o != Dir::Local {
                        continue;
                    }
                    route[o.index()] = Some(outs.len());
                    outs.push(chan(ids.inp[d.index()].unwrap(), ids.sa[o.index()].unwrap()));
                }
                specs.push(spec(
                    "router",
                    format!("in_{}", d.name()),
                    UnitKind::InputUnit,
                    base + d.index(),
                    Coupling::Decoupled,
                    fifo,
                    outs,
                    UnitDp::InPort {
                        here: c,
                        vcs: arch.virtual_channels,
                        route,
                    },
                ));
            }
            for &o in &ports {
                let feeders = ports
                    .iter()
                    .filter(|d| !(**d == o && o != Dir::Local))
                    .map(|d| (ids.inp[d.index()].unwrap(), d.index()))
                    .collect();
                specs.push(spec(
                    "router",
                    format!("sa_{}", o.name()),
                    UnitKind::SwitchAllocator,
                    base + 10,
                    Coupling::Coupled,
                    1,
                    vec![chan(ids.sa[o.index()].unwrap(), ids.out[o.index()].unwrap())],
                    UnitDp::SaLane {
                        ports: feeders,
                        policy: arch.arbitration,
                        last: None,
                    },
                ));
            }
            for &o in &ports {
                let down = match o.step(c, mesh) {
                    Some(nb) => nodes[mesh.scan_index(nb)].inp[o.opposite().index()].unwrap(),
                    None => ids.nic_rx.unwrap(),
                };
                specs.push(spec(
                    "router",
                    format!("out_{}", o.name()),
                    UnitKind::OutputUnit,
                    base + 5 + o.index(),
                    Coupling::Decoupled,
                    fifo,
                    vec![chan(ids.out[o.index()].unwrap(), down)],
                    UnitDp::Pass,
                ));
            }
            specs.push(spec(
                "nic",
                "rx".into(),
                UnitKind::Nic,
                base + 11,
                Coupling::Decoupled,
                fifo,
                vec![chan(ids.nic_rx.unwrap(), ids.lut_rx.unwrap())],
                UnitDp::Pass,
            ));
            specs.push(spec(
                "nic",
                "tx".into(),
                UnitKind::Nic,
                base + 11,
                Coupling::Decoupled,
                fifo,
                vec![chan(ids.nic_tx.unwrap(), ids.inp[Dir::Local.index()].unwrap())],
                UnitDp::Pass,
            ));
            let lut: HashMap<u32, Arc<[(u32, i8)]>> =
                std::mem::take(&mut luts[i]).into_iter().map(|(k, v)| (k, v.into())).collect();
            specs.push(spec(
                "pe",
                "lut_rx".into(),
                UnitKind::PeLut,
                base + 12,
                Coupling::Decoupled,
                PE_STAGE_DEPTH,
                vec![chan(ids.lut_rx.unwrap(), ids.sram.unwrap())],
                UnitDp::LutRx {
                    codec: codec.clone(),
                    lut,
                },
            ));
            specs.push(spec(
                "pe",
                "lut_tx".into(),
                UnitKind::PeLut,
                base + 12,
                Coupling::Decoupled,
                PE_STAGE_DEPTH,
                vec![chan(ids.lut_tx.unwrap(), ids.nic_tx.unwrap())],
                UnitDp::LutTx { codec: codec.clone() },
            ));
            specs.push(spec(
                "pe",
                "sram".into(),
                UnitKind::PeSram,
                base + 13,
                Coupling::Decoupled,
                PE_STAGE_DEPTH,
                vec![chan(ids.sram.unwrap(), ids.neuron.unwrap())],
                UnitDp::Sram,
            ));
            let egress = chan(ids.neuron.unwrap(), ids.lut_tx.unwrap());
            egress_channels.push(egress);
            let slots = std::mem::take(&mut slot_lists[i]);
            let mut layer_slots = vec![Vec::new(); num_layers];
            for (s, (l, _)) in slots.iter().enumerate() {
                layer_slots[*l as usize].push(s as u32);
            }
            let core = NeuronCore {
                codec: codec.clone(),
                slot_of: std::mem::take(&mut slot_of[i]),
                layer_slots,
                params: (0..num_layers).map(|l| model.neuron_params(l)).collect(),
                membrane: vec![0; slots.len()],
                acc: vec![0; slots.len()],
                dests: std::mem::take(&mut dests[i]),
                slots,
                egress,
                egress_outstanding: 0,
                fired: Vec::new(),
                delay: tech.get(UnitKind::PeNeuron)?.forward_latency,
            };
            specs.push(spec(
                "pe",
                "neuron".into(),
                UnitKind::PeNeuron,
                base + 14,
                Coupling::Decoupled,
                PE_STAGE_DEPTH,
                Vec::new(),
                UnitDp::Neuron(Box::new(core)),
            ));
        }

        let mut kernel = Kernel::new(KernelConfig {
            workers: opts.workers,
            livelock_window: opts.livelock_window,
        })?;
        let mut ledger = ActivityLedger::new(unit_inventory(mesh));
        let mut inits = Vec::with_capacity(specs.len());
        for (n, mut s) in specs.into_iter().enumerate() {
            let t = tech.get(s.kind)?;
            let ctrl = AsyncCtrl::new(
                Delays {
                    forward: t.forward_latency,
                    backward: t.backward_latency,
                },
                s.coupling,
            );
            let dp = s.dp.take().expect("datapath set");
            let a = kernel.register(s.path, Unit::new(s.kind, ctrl, dp))?;
            debug_assert_eq!(a, id(n));
            ledger.register(a, s.unit_index);
            inits.push((a, s.outputs, s.depth));
        }
        for (a, outputs, depth) in inits {
            kernel.post(
                SimTime::ZERO,
                a,
                HwMsg::Ctrl(CtrlMsg::Handshake(HandshakeMessage::Init {
                    outputs,
                    buffer_depth: depth,
                })),
            )?;
        }

        let mut layer_actors = vec![Vec::new(); num_layers];
        for (pe, list) in &pe_slots {
            let a = nodes[mesh.scan_index(*pe)].neuron.unwrap();
            let layers: BTreeSet<u16> = list.iter().map(|k| k.0).collect();
            for l in layers {
                layer_actors[l as usize].push(a);
            }
        }

        Ok(HardwareInstance {
            kernel,
            ledger,
            tech: tech.clone(),
            mesh,
            model_hash: model.hash(),
            timesteps: model.timesteps,
            layer_sizes: model.layer_sizes(),
            layer_actors,
            nodes,
        })
    }

    pub fn kernel(&self) -> &Kernel<Unit> {
        &self.kernel
    }

    pub fn actor_count(&self) -> usize {
        self.kernel.actor_count()
    }

    fn check_trace(&self, t: &SpikeTrace) -> Result<(), TraceError> {
        if t.model_hash != self.model_hash {
            return Err(TraceError::HashMismatch {
                expected: self.model_hash.clone(),
                found: t.model_hash.clone(),
            });
        }
        if t.layer_sizes != self.layer_sizes || t.timesteps != self.timesteps {
            return Err(TraceError::ShapeMismatch {
                expected: self.layer_sizes.clone(),
                expected_t: self.timesteps,
                found: t.layer_sizes.clone(),
                found_t: t.timesteps,
            });
        }
        Ok(())
    }

    /// Runs one sample. `input` supplies the input-layer spikes; in replay mode
    /// the replay trace drives every layer instead.
    pub fn run(mut self, input: &SpikeTrace, mode: RunMode<'_>, opts: &SimOptions) -> Result<SimOutcome, HwError> {
        self.check_trace(input)?;
        if let RunMode::Replay(r) = mode {
            self.check_trace(r)?;
        }
        let limit = match opts.time_limit {
            Some(t) => RunLimit::Until(t),
            None => RunLimit::Quiescence,
        };
        let mut stats = self.kernel.run(limit)?;
        let mut truncated = stats.truncated;
        let mut phases = Vec::new();
        'outer: for t in 0..self.timesteps {
            for l in 0..self.layer_sizes.len() {
                if truncated {
                    break 'outer;
                }
                let source = match mode {
                    RunMode::Replay(r) => Some(r),
                    RunMode::ClosedLoop if l == 0 => Some(input),
                    RunMode::ClosedLoop => None,
                };
                let forced: Option<Arc<[u32]>> =
                    source.map(|s| s.slice(t, l as u16).iter().map(|r| r.neuron).collect());
                let start = self.kernel.now();
                for &a in &self.layer_actors[l] {
                    self.kernel.post(
                        start,
                        a,
                        HwMsg::Evaluate {
                            timestep: t,
                            layer: l as u16,
                            forced: forced.clone(),
                        },
                    )?;
                }
                stats = self.kernel.run(limit)?;
                truncated = stats.truncated;
                phases.push(Phase {
                    timestep: t,
                    layer: l as u16,
                    start,
                    end: self.kernel.now(),
                });
            }
        }
        if !truncated {
            self.check_drained()?;
        }
        let latency = self.kernel.now();

        let mut records: Vec<SpikeRecord> = Vec::new();
        let mut ledger = self.ledger.clone();
        for (a, _, unit) in self.kernel.actors() {
            for (&(ev, layer), &n) in &unit.activity {
                ledger.add(a, ev, layer, n)?;
            }
            if let Some(core) = unit.neuron() {
                records.extend_from_slice(&core.fired);
            }
        }
        let output = SpikeTrace::from_records(
            self.model_hash.clone(),
            self.timesteps,
            self.layer_sizes.clone(),
            records,
        )?;
        let traffic = self.traffic(&ledger);
        let report = PpaReport::from_run(
            &ledger,
            &self.tech,
            &phases,
            self.layer_sizes.len(),
            latency,
            truncated,
            stats.events_processed,
        )?;
        Ok(SimOutcome {
            output,
            ledger,
            phases,
            stats,
            traffic,
            report,
            latency,
            truncated,
        })
    }

    fn check_drained(&self) -> Result<(), HwError> {
        for (_, path, unit) in self.kernel.actors() {
            let c = unit.ctrl();
            let egress = unit.neuron().map_or(0, |n| n.egress_outstanding);
            if !c.stash().is_empty() || c.is_holding() || c.in_flight() > 0 || egress > 0 {
                return Err(HwError::Undelivered(format!(
                    "{path} still has {} stashed, {} in flight",
                    c.stash().len(),
                    c.in_flight() as u64 + egress
                )));
            }
        }
        Ok(())
    }

    fn traffic(&self, ledger: &ActivityLedger) -> TrafficStats {
        let mut t = TrafficStats::default();
        for (i, n) in self.nodes.iter().enumerate() {
            let c = self.mesh.coord(i);
            t.injected += ledger.count(n.lut_tx.unwrap(), EventKind::Lookup);
            t.pe_rx.push(ledger.count(n.lut_rx.unwrap(), EventKind::Lookup));
            for d in [Dir::N, Dir::E, Dir::S, Dir::W] {
                if let Some(a) = n.out[d.index()] {
                    t.links.push((c, d, ledger.count(a, EventKind::Fire)));
                }
            }
        }
        t
    }
}

/// Builds the instance for `arch` and runs one sample through it.
pub fn simulate(
    arch: &ArchConfig,
    tech: &TechParams,
    model: &SnnModel,
    input: &SpikeTrace,
    mode: RunMode<'_>,
    opts: &SimOptions,
) -> Result<SimOutcome, HwError> {
    HardwareInstance::build(arch, tech, model, opts)?.run(input, mode, opts)
}
