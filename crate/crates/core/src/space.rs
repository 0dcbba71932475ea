//! Hardware search space: bounds, the five architecture actions, exhaustive
//! enumeration and the RL state encoding.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::hw::{ArchConfig, Arbitration, Coord, MeshDims, TrafficStats};
use crate::kv::{KvDoc, KvError};
use crate::workload::{MappingTable, SnnModel};

/// Refuse to enumerate more configurations than this.
pub const ENUMERATION_LIMIT: u64 = 100_000;
pub const DEFAULT_BUCKETS: u32 = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SearchBounds {
    /// Allowed PE capacities, ascending powers of two.
    pub neurons_per_pe: Vec<u32>,
    /// Allowed mesh shapes, ascending.
    pub mesh_dims: Vec<MeshDims>,
    pub fifo_depth: Vec<u32>,
    pub arbitration: Vec<Arbitration>,
    pub virtual_channels: u32,
    pub flit_payload_bits: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum BoundsError {
    #[error("cannot read bounds file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bounds file: {0}")]
    Kv(#[from] KvError),
    #[error("degenerate bounds: {0}")]
    Degenerate(String),
    #[error("bounds span {count} configurations, more than the enumeration limit of {limit}")]
    TooLarge { count: u64, limit: u64 },
}

/// Parses `a..b` (inclusive) or `{a,b,c}` or a single value.
fn parse_set<T: FromStr + Ord + Copy>(
    text: &str,
    range: impl Fn(T, T) -> Result<Vec<T>, String>,
) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    let p = |s: &str| s.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", s.trim()));
    let t = text.trim();
    let mut v = if let Some(inner) = t.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
        inner
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(p)
            .collect::<Result<Vec<T>, _>>()?
    } else if let Some((a, b)) = t.split_once("..") {
        let (a, b) = (p(a)?, p(b)?);
        if b < a {
            return Err(format!("range `{t}` is empty"));
        }
        range(a, b)?
    } else {
        vec![p(t)?]
    };
    v.sort();
    v.dedup();
    Ok(v)
}

impl SearchBounds {
    pub fn load(path: &Path) -> Result<Self, BoundsError> {
        let text = std::fs::read_to_string(path).map_err(|source| BoundsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, BoundsError> {
        const KEYS: [&str; 7] = [
            "format_version",
            "mesh_dims",
            "neurons_per_pe",
            "fifo_depth_per_port",
            "virtual_channels",
            "arbitration",
            "flit_payload_bits",
        ];
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(|k| KEYS.contains(&k))?;
        if doc.contains("format_version") {
            doc.check_version(1)?;
        }
        let set = |key: &str| -> Result<&str, KvError> { doc.required(key) };
        let npp = parse_set::<u32>(set("neurons_per_pe")?, |a, b| {
            Ok((0..32).map(|i| 1u32 << i).filter(|v| (a..=b).contains(v)).collect())
        })
        .map_err(|e| doc.bad("neurons_per_pe", e))?;
        let mesh = parse_set::<MeshDims>(set("mesh_dims")?, |a, b| {
            Ok((a.x..=b.x)
                .flat_map(|x| (a.y..=b.y).map(move |y| MeshDims::new(x, y)))
                .collect())
        })
        .map_err(|e| doc.bad("mesh_dims", e))?;
        let fifo = parse_set::<u32>(set("fifo_depth_per_port")?, |a, b| Ok((a..=b).collect()))
            .map_err(|e| doc.bad("fifo_depth_per_port", e))?;
        let arb = match doc.raw("arbitration") {
            None => Arbitration::ALL.to_vec(),
            Some(s) => parse_set::<Arbitration>(s, |_, _| Err("arbitration takes a set, not a range".into()))
                .map_err(|e| doc.bad("arbitration", e))?,
        };
        let b = SearchBounds {
            neurons_per_pe: npp,
            mesh_dims: mesh,
            fifo_depth: fifo,
            arbitration: arb,
            virtual_channels: doc.get("virtual_channels")?,
            flit_payload_bits: doc.get("flit_payload_bits")?,
        };
        b.check()?;
        Ok(b)
    }

    /// Non-empty sets and power-of-two capacities.
    pub fn check(&self) -> Result<(), BoundsError> {
        let d = |m: &str| Err(BoundsError::Degenerate(m.to_string()));
        if self.neurons_per_pe.is_empty() {
            return d("neurons_per_pe set is empty");
        }
        if let Some(n) = self.neurons_per_pe.iter().find(|n| **n < 2 || !n.is_power_of_two()) {
            return Err(BoundsError::Degenerate(format!("neurons_per_pe {n} is not a power of two (2^n, n >= 1)")));
        }
        if self.mesh_dims.is_empty() {
            return d("mesh_dims set is empty");
        }
        if self.fifo_depth.is_empty() || self.fifo_depth.contains(&0) {
            return d("fifo_depth_per_port set must be non-empty and positive");
        }
        if self.arbitration.is_empty() {
            return d("arbitration set is empty");
        }
        if self.virtual_channels == 0 {
            return d("virtual_channels must be at least 1");
        }
        Ok(())
    }

    /// Closed-form size of the parameter product.
    pub fn raw_count(&self) -> u64 {
        [
            self.neurons_per_pe.len(),
            self.mesh_dims.len(),
            self.fifo_depth.len(),
            self.arbitration.len(),
        ]
        .iter()
        .map(|&n| n as u64)
        .product()
    }

    /// First valid configuration in enumeration order: smallest capacity and
    /// mesh that hold the model, canonically mapped.
    pub fn initial(&self, model: &SnnModel) -> Option<ArchConfig> {
        let sizes = model.layer_sizes();
        for &npp in &self.neurons_per_pe {
            for &mesh in &self.mesh_dims {
                let Ok(mapping) = MappingTable::canonical(&sizes, npp, mesh) else {
                    continue;
                };
                let arch = ArchConfig {
                    mesh_dims: mesh,
                    neurons_per_pe: npp,
                    fifo_depth_per_port: *self.fifo_depth.first()?,
                    virtual_channels: self.virtual_channels,
                    arbitration: *self.arbitration.first()?,
                    flit_payload_bits: self.flit_payload_bits,
                    mapping,
                };
                if validate(&arch, self, model).is_empty() {
                    return Some(arch);
                }
            }
        }
        None
    }

    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| format!("{{{}}}", v.join(","));
        format!(
            "format_version = 1\nneurons_per_pe = {}\nmesh_dims = {}\nfifo_depth_per_port = {}\n\
             arbitration = {}\nvirtual_channels = {}\nflit_payload_bits = {}\n",
            join(self.neurons_per_pe.iter().map(u32::to_string).collect()),
            join(self.mesh_dims.iter().map(MeshDims::to_string).collect()),
            join(self.fifo_depth.iter().map(u32::to_string).collect()),
            join(self.arbitration.iter().map(Arbitration::to_string).collect()),
            self.virtual_channels,
            self.flit_payload_bits
        )
    }
}

/// Every broken rule of `arch` under `bounds` for `model`; empty when valid.
pub fn validate(arch: &ArchConfig, bounds: &SearchBounds, model: &SnnModel) -> Vec<String> {
    let mut v = arch.violations();
    let sizes = model.layer_sizes();
    let mapped = arch.mapping.layer_sizes();
    if mapped != sizes.as_slice() {
        for (l, &want) in sizes.iter().enumerate() {
            let have = mapped.get(l).copied().unwrap_or(0);
            if have < want {
                v.push(format!("uncovered neuron: layer {l} neurons {have}..{want} are not mapped"));
            } else if have > want {
                v.push(format!("mapping for layer {l} has {have} neurons but the model has {want}"));
            }
        }
        if mapped.len() > sizes.len() {
            v.push(format!("mapping has {} layers but the model has {}", mapped.len(), sizes.len()));
        }
    }
    if !bounds.neurons_per_pe.contains(&arch.neurons_per_pe) {
        v.push(format!("neurons_per_pe {} outside bounds {:?}", arch.neurons_per_pe, bounds.neurons_per_pe));
    }
    if !bounds.mesh_dims.contains(&arch.mesh_dims) {
        v.push(format!("mesh_dims {} outside bounds", arch.mesh_dims));
    }
    if !bounds.fifo_depth.contains(&arch.fifo_depth_per_port) {
        v.push(format!("fifo_depth_per_port {} outside bounds {:?}", arch.fifo_depth_per_port, bounds.fifo_depth));
    }
    if !bounds.arbitration.contains(&arch.arbitration) {
        v.push(format!("arbitration {} not allowed by bounds", arch.arbitration));
    }
    if arch.virtual_channels != bounds.virtual_channels {
        v.push(format!("virtual_channels {} differs from bounds {}", arch.virtual_channels, bounds.virtual_channels));
    }
    if arch.flit_payload_bits != bounds.flit_payload_bits {
        v.push(format!(
            "flit_payload_bits {} differs from bounds {}",
            arch.flit_payload_bits, bounds.flit_payload_bits
        ));
    }
    v
}

/// All valid canonically mapped configurations, in ascending
/// (neurons_per_pe, mesh, fifo depth, arbitration) order.
pub fn enumerate(bounds: &SearchBounds, model: &SnnModel) -> Result<Vec<ArchConfig>, BoundsError> {
    let count = bounds.raw_count();
    if count > ENUMERATION_LIMIT {
        return Err(BoundsError::TooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let sizes = model.layer_sizes();
    let mut out = Vec::new();
    for &npp in &bounds.neurons_per_pe {
        for &mesh in &bounds.mesh_dims {
            let Ok(mapping) = MappingTable::canonical(&sizes, npp, mesh) else {
                continue;
            };
            for &fifo in &bounds.fifo_depth {
                for &arb in &bounds.arbitration {
                    let arch = ArchConfig {
                        mesh_dims: mesh,
                        neurons_per_pe: npp,
                        fifo_depth_per_port: fifo,
                        virtual_channels: bounds.virtual_channels,
                        arbitration: arb,
                        flit_payload_bits: bounds.flit_payload_bits,
                        mapping: mapping.clone(),
                    };
                    if validate(&arch, bounds, model).is_empty() {
                        out.push(arch);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PartitionAxis {
    NeuronsPerPe,
    MeshX,
    MeshY,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ActionKind {
    Partitioning,
    Mapping,
    Balancing,
    Arbitrating,
    Altering,
}

/// One architecture move. `dir` fields are `+1` or `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum SearchAction {
    /// Step PE capacity to the neighbouring allowed value, or grow/shrink the
    /// mesh by one column or row, then remap canonically.
    Partitioning { axis: PartitionAxis, dir: i8 },
    /// Shift every neuron of `layer` one PE along the scan order.
    Mapping { layer: u16, dir: i8 },
    /// Greedy neuron moves until PE loads differ by at most one.
    Balancing,
    Arbitrating,
    Altering { delta: i32 },
}

impl SearchAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            SearchAction::Partitioning { .. } => ActionKind::Partitioning,
            SearchAction::Mapping { .. } => ActionKind::Mapping,
            SearchAction::Balancing => ActionKind::Balancing,
            SearchAction::Arbitrating => ActionKind::Arbitrating,
            SearchAction::Altering { .. } => ActionKind::Altering,
        }
    }

    /// The full action list for a model with `num_layers` layers, in the
    /// fixed kind order used for tie-breaking.
    pub fn catalogue(num_layers: usize) -> Vec<SearchAction> {
        let mut v = Vec::new();
        for axis in [PartitionAxis::NeuronsPerPe, PartitionAxis::MeshX, PartitionAxis::MeshY] {
            for dir in [1, -1] {
                v.push(SearchAction::Partitioning { axis, dir });
            }
        }
        for layer in 0..num_layers as u16 {
            for dir in [1, -1] {
                v.push(SearchAction::Mapping { layer, dir });
            }
        }
        v.push(SearchAction::Balancing);
        v.push(SearchAction::Arbitrating);
        v.push(SearchAction::Altering { delta: 1 });
        v.push(SearchAction::Altering { delta: -1 });
        v
    }
}

impl fmt::Display for SearchAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = |d: i64| if d >= 0 { format!("+{d}") } else { d.to_string() };
        match self {
            SearchAction::Partitioning { axis, dir } => {
                let a = match axis {
                    PartitionAxis::NeuronsPerPe => "npp",
                    PartitionAxis::MeshX => "mesh_x",
                    PartitionAxis::MeshY => "mesh_y",
                };
                write!(f, "partitioning({a},{})", sign(*dir as i64))
            }
            SearchAction::Mapping { layer, dir } => write!(f, "mapping(layer{layer},{})", sign(*dir as i64)),
            SearchAction::Balancing => f.write_str("balancing"),
            SearchAction::Arbitrating => f.write_str("arbitrating"),
            SearchAction::Altering { delta } => write!(f, "altering({})", sign(*delta as i64)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionError {
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("action applied to an invalid architecture: {}", .0.join("; "))]
    InvalidArch(Vec<String>),
}

fn neighbour<T: PartialEq + Copy>(set: &[T], cur: T, dir: i8) -> Option<T> {
    let i = set.iter().position(|v| *v == cur)?;
    let j = i as isize + dir.signum() as isize;
    (0..set.len() as isize).contains(&j).then(|| set[j as usize])
}

/// Applies `action`; on error the input is untouched.
pub fn apply_action(arch: &ArchConfig, action: SearchAction, bounds: &SearchBounds) -> Result<ArchConfig, ActionError> {
    let oob = |m: String| Err(ActionError::OutOfBounds(m));
    let mut next = arch.clone();
    match action {
        SearchAction::Partitioning { axis, dir } => {
            match axis {
                PartitionAxis::NeuronsPerPe => match neighbour(&bounds.neurons_per_pe, arch.neurons_per_pe, dir) {
                    Some(n) => next.neurons_per_pe = n,
                    None => return oob(format!("no neurons_per_pe step {dir:+} from {}", arch.neurons_per_pe)),
                },
                PartitionAxis::MeshX | PartitionAxis::MeshY => {
                    let m = arch.mesh_dims;
                    let step = |v: u32| v.checked_add_signed(dir as i32).filter(|v| *v > 0);
                    let cand = match axis {
                        PartitionAxis::MeshX => step(m.x).map(|x| MeshDims::new(x, m.y)),
                        _ => step(m.y).map(|y| MeshDims::new(m.x, y)),
                    };
                    match cand.filter(|c| bounds.mesh_dims.contains(c)) {
                        Some(c) => next.mesh_dims = c,
                        None => return oob(format!("mesh {m} cannot step {dir:+} along {axis:?}")),
                    }
                }
            }
            next.mapping = MappingTable::canonical(arch.mapping.layer_sizes(), next.neurons_per_pe, next.mesh_dims)
                .map_err(|e| ActionError::OutOfBounds(e.to_string()))?;
        }
        SearchAction::Mapping { layer, dir } => {
            let l = layer as usize;
            let mesh = arch.mesh_dims;
            let n = mesh.nodes() as usize;
            if l >= arch.mapping.layer_sizes().len() {
                return oob(format!("layer {layer} does not exist"));
            }
            if n < 2 {
                return oob("a single PE leaves nowhere to move a layer".into());
            }
            let n = n as isize;
            let shift = |c: Coord| mesh.coord((mesh.scan_index(c) as isize + dir as isize).rem_euclid(n) as usize);
            for (i, pe) in (0..arch.mapping.layer_sizes()[l]).filter_map(|i| arch.mapping.pe_of(l, i).map(|p| (i, p))) {
                next.mapping.move_neuron(l, i, shift(pe));
            }
            if let Some((i, load)) = next
                .mapping
                .loads(mesh)
                .into_iter()
                .enumerate()
                .find(|(_, load)| *load > arch.neurons_per_pe)
            {
                return oob(format!("moving layer {layer} would put {load} neurons on PE {}", mesh.coord(i)));
            }
        }
        SearchAction::Balancing => balance(&mut next.mapping, arch.mesh_dims),
        SearchAction::Arbitrating => {
            let t = arch.arbitration.toggled();
            if !bounds.arbitration.contains(&t) {
                return oob(format!("arbitration {t} not allowed"));
            }
            next.arbitration = t;
        }
        SearchAction::Altering { delta } => match arch.fifo_depth_per_port.checked_add_signed(delta) {
            Some(d) if bounds.fifo_depth.contains(&d) => next.fifo_depth_per_port = d,
            _ => return oob(format!("fifo depth {} {delta:+} outside bounds", arch.fifo_depth_per_port)),
        },
    }
    Ok(next)
}

/// Moves the last neuron of the fullest PE to the emptiest until loads are
/// within one of each other.
fn balance(mapping: &mut MappingTable, mesh: MeshDims) {
    loop {
        let loads = mapping.loads(mesh);
        let (imax, &max) = loads.iter().enumerate().max_by_key(|(i, l)| (**l, std::cmp::Reverse(*i))).unwrap();
        let (imin, &min) = loads.iter().enumerate().min_by_key(|(i, l)| (**l, *i)).unwrap();
        if max - min <= 1 {
            return;
        }
        let (l, n) = mapping.last_neuron_on(mesh.coord(imax)).expect("loaded PE holds a neuron");
        mapping.move_neuron(l, n, mesh.coord(imin));
    }
}

/// Actions of the catalogue that are applicable to `arch` and change it.
pub fn legal_actions(arch: &ArchConfig, bounds: &SearchBounds) -> Vec<(SearchAction, ArchConfig)> {
    SearchAction::catalogue(arch.mapping.layer_sizes().len())
        .into_iter()
        .filter_map(|a| apply_action(arch, a, bounds).ok().map(|next| (a, next)))
        .filter(|(_, next)| next != arch)
        .collect()
}

/// Quantised congestion view of a finished simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RlState {
    pub aer_congestion_bucket: u32,
    pub noc_congestion_bucket: u32,
    pub routing_hops_bucket: u32,
}

fn bucket(num: u64, den: u64, buckets: u32) -> u32 {
    if den == 0 || buckets == 0 {
        return 0;
    }
    let b = (num as u128 * buckets as u128 / den as u128) as u32;
    b.min(buckets - 1)
}

/// AER congestion: busiest PE's share of received flits. NoC congestion:
/// busiest link's share of all flits. Hops: total link traversals over the
/// worst case of every flit crossing the mesh diameter.
pub fn encode_state(traffic: &TrafficStats, arch: &ArchConfig, buckets: u32) -> RlState {
    let total = traffic.injected;
    let max_rx = traffic.pe_rx.iter().copied().max().unwrap_or(0);
    RlState {
        aer_congestion_bucket: bucket(max_rx, total, buckets),
        noc_congestion_bucket: bucket(traffic.max_link(), total, buckets),
        routing_hops_bucket: bucket(
            traffic.hop_total(),
            total * arch.mesh_dims.diameter() as u64,
            buckets,
        ),
    }
}
