use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::kv::{KvDoc, KvError};
use crate::workload::{MappingError, MappingTable, SnnModel};

use super::aer::address_bits;
use super::geom::MeshDims;

pub const ARCH_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Arbitration {
    RoundRobin,
    FixedPriority,
}

impl Arbitration {
    pub const ALL: [Arbitration; 2] = [Arbitration::RoundRobin, Arbitration::FixedPriority];

    pub fn toggled(self) -> Self {
        match self {
            Arbitration::RoundRobin => Arbitration::FixedPriority,
            Arbitration::FixedPriority => Arbitration::RoundRobin,
        }
    }
}

impl fmt::Display for Arbitration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arbitration::RoundRobin => "round_robin",
            Arbitration::FixedPriority => "fixed_priority",
        })
    }
}

impl FromStr for Arbitration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "round_robin" => Ok(Arbitration::RoundRobin),
            "fixed_priority" => Ok(Arbitration::FixedPriority),
            other => Err(format!(
                "unknown arbitration `{other}` (expected round_robin or fixed_priority)"
            )),
        }
    }
}

/// One point of the hardware design space.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ArchConfig {
    pub mesh_dims: MeshDims,
    pub neurons_per_pe: u32,
    pub fifo_depth_per_port: u32,
    pub virtual_channels: u32,
    pub arbitration: Arbitration,
    pub flit_payload_bits: u32,
    pub mapping: MappingTable,
}

/// Parsed architecture file. The mapping may be left out, in which case the
/// canonical fill for the model is used.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub mesh_dims: MeshDims,
    pub neurons_per_pe: u32,
    pub fifo_depth_per_port: u32,
    pub virtual_channels: u32,
    pub arbitration: Arbitration,
    pub flit_payload_bits: u32,
    pub mapping: Option<MappingTable>,
}

#[derive(Debug, thiserror::Error)]
pub enum ArchError {
    #[error("cannot read architecture file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("architecture file: {0}")]
    Kv(#[from] KvError),
    #[error("architecture mapping: {0}")]
    Mapping(#[from] MappingError),
    #[error("architecture mapping covers layer sizes {found:?} but the model has {expected:?}")]
    ModelMismatch { expected: Vec<u32>, found: Vec<u32> },
}

const SCALAR_KEYS: [&str; 7] = [
    "format_version",
    "mesh_dims",
    "neurons_per_pe",
    "fifo_depth_per_port",
    "virtual_channels",
    "arbitration",
    "flit_payload_bits",
];

impl ArchSpec {
    pub fn load(path: &Path) -> Result<Self, ArchError> {
        let text = std::fs::read_to_string(path).map_err(|source| ArchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ArchError> {
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(|k| {
            SCALAR_KEYS.contains(&k)
                || k == "mapping.layer_sizes"
                || k.strip_prefix("mapping.layer").is_some_and(|n| n.parse::<usize>().is_ok())
        })?;
        if doc.contains("format_version") {
            doc.check_version(ARCH_FORMAT_VERSION)?;
        }
        let mapping = if doc.contains("mapping.layer_sizes") {
            let sizes: Result<Vec<u32>, _> = doc
                .required("mapping.layer_sizes")?
                .split(';')
                .map(|s| s.trim().parse::<u32>())
                .collect();
            let sizes = sizes.map_err(|e| doc.bad("mapping.layer_sizes", e))?;
            let mut ranges = Vec::with_capacity(sizes.len());
            for l in 0..sizes.len() {
                let key = format!("mapping.layer{l}");
                let spec = doc.required(&key)?;
                ranges.push(MappingTable::parse_layer_spec(spec).map_err(|e| doc.bad(&key, e))?);
            }
            if let Some(extra) = doc.keys().find(|k| {
                k.strip_prefix("mapping.layer")
                    .and_then(|n| n.parse::<usize>().ok())
                    .is_some_and(|n| n >= sizes.len())
            }) {
                return Err(doc.bad(extra, "layer index beyond mapping.layer_sizes").into());
            }
            Some(MappingTable::from_ranges(sizes, &ranges)?)
        } else {
            if let Some(k) = doc.keys().find(|k| k.starts_with("mapping.")) {
                return Err(doc.bad(k, "mapping ranges need mapping.layer_sizes").into());
            }
            None
        };
        Ok(ArchSpec {
            mesh_dims: doc.get("mesh_dims")?,
            neurons_per_pe: doc.get("neurons_per_pe")?,
            fifo_depth_per_port: doc.get("fifo_depth_per_port")?,
            virtual_channels: doc.get("virtual_channels")?,
            arbitration: doc.get("arbitration")?,
            flit_payload_bits: doc.get("flit_payload_bits")?,
            mapping,
        })
    }

    /// Attaches the mapping, building the canonical one when the file has none.
    pub fn resolve(&self, model: &SnnModel) -> Result<ArchConfig, ArchError> {
        let mapping = match &self.mapping {
            Some(m) if !m.covers(model) => {
                return Err(ArchError::ModelMismatch {
                    expected: model.layer_sizes(),
                    found: m.layer_sizes().to_vec(),
                })
            }
            Some(m) => m.clone(),
            None => MappingTable::canonical(&model.layer_sizes(), self.neurons_per_pe, self.mesh_dims)?,
        };
        Ok(ArchConfig {
            mesh_dims: self.mesh_dims,
            neurons_per_pe: self.neurons_per_pe,
            fifo_depth_per_port: self.fifo_depth_per_port,
            virtual_channels: self.virtual_channels,
            arbitration: self.arbitration,
            flit_payload_bits: self.flit_payload_bits,
            mapping,
        })
    }
}

impl ArchConfig {
    /// Structural rules that hold independently of any search bounds.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let npp = self.neurons_per_pe;
        if npp < 2 || !npp.is_power_of_two() {
            v.push(format!("neurons_per_pe {npp} is not a power of two (2^n, n >= 1)"));
        }
        if self.fifo_depth_per_port == 0 {
            v.push("fifo_depth_per_port must be at least 1".into());
        }
        if self.virtual_channels == 0 {
            v.push("virtual_channels must be at least 1".into());
        }
        if self.mesh_dims.x == 0 || self.mesh_dims.y == 0 {
            v.push("mesh_dims must be positive".into());
        }
        if npp.is_power_of_two() && self.mesh_dims.nodes() > 0 {
            let need = address_bits(npp, self.mesh_dims);
            if self.flit_payload_bits < need {
                v.push(format!(
                    "flit_payload_bits {} cannot hold the {need}-bit AER address",
                    self.flit_payload_bits
                ));
            }
        }
        v.extend(self.mapping.violations(npp, self.mesh_dims));
        v
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "format_version = {ARCH_FORMAT_VERSION}\n\
             mesh_dims = {}\n\
             neurons_per_pe = {}\n\
             fifo_depth_per_port = {}\n\
             virtual_channels = {}\n\
             arbitration = {}\n\
             flit_payload_bits = {}\n",
            self.mesh_dims,
            self.neurons_per_pe,
            self.fifo_depth_per_port,
            self.virtual_channels,
            self.arbitration,
            self.flit_payload_bits
        );
        let sizes: Vec<String> = self.mapping.layer_sizes().iter().map(u32::to_string).collect();
        s.push_str(&format!("mapping.layer_sizes = {}\n", sizes.join(";")));
        for l in 0..sizes.len() {
            s.push_str(&format!("mapping.layer{l} = {}\n", self.mapping.layer_spec(l)));
        }
        s
    }

    /// One-line summary without the mapping.
    pub fn short(&self) -> String {
        format!(
            "mesh={} npp={} fifo={} vc={} arb={}",
            self.mesh_dims, self.neurons_per_pe, self.fifo_depth_per_port, self.virtual_channels, self.arbitration
        )
    }
}
