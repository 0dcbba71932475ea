use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::hw::geom::{Coord, MeshDims};

use super::model::SnnModel;

/// Contiguous neurons `start..start + len` of one layer placed on `pe`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MapRange {
    pub start: u32,
    pub len: u32,
    pub pe: Coord,
}

/// Layer-to-PE assignment, one PE per neuron.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MappingTable {
    layer_sizes: Vec<u32>,
    assign: Vec<Vec<Coord>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MappingError {
    #[error("insufficient capacity: model needs {required} neurons, arch provides {available}")]
    Capacity { required: u64, available: u64 },
    #[error("mapping: {0}")]
    Malformed(String),
}

impl MappingTable {
    /// Row-major fill: layers placed back to back across PEs in scan order,
    /// splitting at `neurons_per_pe` boundaries.
    pub fn canonical(
        layer_sizes: &[u32],
        neurons_per_pe: u32,
        mesh: MeshDims,
    ) -> Result<Self, MappingError> {
        let required: u64 = layer_sizes.iter().map(|&s| s as u64).sum();
        let available = neurons_per_pe as u64 * mesh.nodes() as u64;
        if required > available {
            return Err(MappingError::Capacity {
                required,
                available,
            });
        }
        let mut slot = 0u64;
        let assign = layer_sizes
            .iter()
            .map(|&size| {
                (0..size)
                    .map(|_| {
                        let pe = mesh.coord((slot / neurons_per_pe as u64) as usize);
                        slot += 1;
                        pe
                    })
                    .collect()
            })
            .collect();
        Ok(MappingTable {
            layer_sizes: layer_sizes.to_vec(),
            assign,
        })
    }

    /// Builds a table from explicit ranges. Coverage is checked by `violations`.
    pub fn from_ranges(layer_sizes: Vec<u32>, ranges: &[Vec<MapRange>]) -> Result<Self, MappingError> {
        if ranges.len() != layer_sizes.len() {
            return Err(MappingError::Malformed(format!(
                "{} layers mapped but model has {}",
                ranges.len(),
                layer_sizes.len()
            )));
        }
        let mut assign = Vec::with_capacity(ranges.len());
        for (l, (rs, &size)) in ranges.iter().zip(&layer_sizes).enumerate() {
            let mut a: Vec<Option<Coord>> = vec![None; size as usize];
            for r in rs {
                let end = r.start.checked_add(r.len).filter(|&e| e <= size).ok_or_else(|| {
                    MappingError::Malformed(format!(
                        "layer {l}: range {}..{} exceeds layer size {size}",
                        r.start,
                        r.start as u64 + r.len as u64
                    ))
                })?;
                for n in r.start..end {
                    if a[n as usize].replace(r.pe).is_some() {
                        return Err(MappingError::Malformed(format!(
                            "layer {l}: neuron {n} mapped twice"
                        )));
                    }
                }
            }
            if let Some(n) = a.iter().position(Option::is_none) {
                return Err(MappingError::Malformed(format!(
                    "layer {l}: uncovered neuron {n}"
                )));
            }
            assign.push(a.into_iter().map(Option::unwrap).collect());
        }
        Ok(MappingTable {
            layer_sizes,
            assign,
        })
    }

    pub fn layer_sizes(&self) -> &[u32] {
        &self.layer_sizes
    }

    pub fn pe_of(&self, layer: usize, neuron: u32) -> Option<Coord> {
        self.assign.get(layer)?.get(neuron as usize).copied()
    }

    /// Ranges of one layer, merged where neighbouring neurons share a PE.
    pub fn ranges(&self, layer: usize) -> Vec<MapRange> {
        let mut out: Vec<MapRange> = Vec::new();
        for (n, &pe) in self.assign[layer].iter().enumerate() {
            match out.last_mut() {
                Some(r) if r.pe == pe && r.start + r.len == n as u32 => r.len += 1,
                _ => out.push(MapRange {
                    start: n as u32,
                    len: 1,
                    pe,
                }),
            }
        }
        out
    }

    /// Neurons held by each PE, ordered by layer then neuron id. The position
    /// in the list is the neuron's local slot on that PE.
    pub fn pe_slots(&self) -> BTreeMap<Coord, Vec<(u16, u32)>> {
        let mut m: BTreeMap<Coord, Vec<(u16, u32)>> = BTreeMap::new();
        for (l, a) in self.assign.iter().enumerate() {
            for (n, &pe) in a.iter().enumerate() {
                m.entry(pe).or_default().push((l as u16, n as u32));
            }
        }
        m
    }

    /// Mapped-neuron count of every PE, in scan order.
    pub fn loads(&self, mesh: MeshDims) -> Vec<u32> {
        let mut loads = vec![0u32; mesh.nodes() as usize];
        for a in &self.assign {
            for &pe in a {
                if mesh.contains(pe) {
                    loads[mesh.scan_index(pe)] += 1;
                }
            }
        }
        loads
    }

    /// PEs holding neurons of `layer`, in scan order.
    pub fn layer_pes(&self, layer: usize, mesh: MeshDims) -> Vec<Coord> {
        let mut pes: Vec<Coord> = self.assign[layer].clone();
        pes.sort_by_key(|&c| mesh.scan_index(c));
        pes.dedup();
        pes
    }

    /// Every broken rule for the given capacity and mesh; empty when valid.
    pub fn violations(&self, neurons_per_pe: u32, mesh: MeshDims) -> Vec<String> {
        let mut v = Vec::new();
        for (l, a) in self.assign.iter().enumerate() {
            if a.len() != self.layer_sizes[l] as usize {
                v.push(format!("uncovered neuron: layer {l} maps {} of {} neurons", a.len(), self.layer_sizes[l]));
            }
            if let Some(pe) = a.iter().find(|pe| !mesh.contains(**pe)) {
                v.push(format!("layer {l} mapped to PE {pe} outside the {mesh} mesh"));
            }
        }
        let mut over: BTreeMap<Coord, u32> = BTreeMap::new();
        for a in &self.assign {
            for &pe in a {
                *over.entry(pe).or_default() += 1;
            }
        }
        for (pe, n) in over {
            if n > neurons_per_pe {
                v.push(format!("PE {pe} holds {n} neurons but capacity is {neurons_per_pe}"));
            }
        }
        v
    }

    pub fn covers(&self, model: &SnnModel) -> bool {
        self.layer_sizes == model.layer_sizes()
    }

    /// Moves the whole contents of PE `k` to `perm[k]` for every listed PE.
    pub fn permute_pes(&mut self, perm: &BTreeMap<Coord, Coord>) {
        for a in &mut self.assign {
            for pe in a.iter_mut() {
                if let Some(&to) = perm.get(pe) {
                    *pe = to;
                }
            }
        }
    }

    /// Relocates a single neuron.
    pub fn move_neuron(&mut self, layer: usize, neuron: u32, to: Coord) {
        self.assign[layer][neuron as usize] = to;
    }

    /// Last neuron (highest layer, then highest id) held by `pe`.
    pub fn last_neuron_on(&self, pe: Coord) -> Option<(usize, u32)> {
        self.assign.iter().enumerate().rev().find_map(|(l, a)| {
            a.iter().rposition(|&p| p == pe).map(|n| (l, n as u32))
        })
    }

    /// `start..end@x,y` tokens of one layer, space separated.
    pub fn layer_spec(&self, layer: usize) -> String {
        self.ranges(layer)
            .iter()
            .map(|r| format!("{}..{}@{},{}", r.start, r.start + r.len, r.pe.x, r.pe.y))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_layer_spec(spec: &str) -> Result<Vec<MapRange>, String> {
        spec.split_whitespace()
            .map(|tok| {
                let (range, pe) = tok
                    .split_once('@')
                    .ok_or_else(|| format!("mapping range {tok:?} is not `start..end@x,y`"))?;
                let (a, b) = range
                    .split_once("..")
                    .ok_or_else(|| format!("mapping range {tok:?} is not `start..end@x,y`"))?;
                let a: u32 = a.parse().map_err(|e| format!("{tok:?}: {e}"))?;
                let b: u32 = b.parse().map_err(|e| format!("{tok:?}: {e}"))?;
                if b <= a {
                    return Err(format!("mapping range {tok:?} is empty"));
                }
                Ok(MapRange {
                    start: a,
                    len: b - a,
                    pe: pe.parse()?,
                })
            })
            .collect()
    }
}

impl fmt::Display for MappingTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in 0..self.assign.len() {
            writeln!(f, "layer {l}: {}", self.layer_spec(l))?;
        }
        Ok(())
    }
}

/// Canonical mapping of a model onto a mesh.
pub fn map_model(model: &SnnModel, neurons_per_pe: u32, mesh: MeshDims) -> Result<MappingTable, MappingError> {
    MappingTable::canonical(&model.layer_sizes(), neurons_per_pe, mesh)
}
