//! Address-event representation. A spike is named by the PE that hosts its
//! source neuron and the neuron's slot on that PE:
//! `address = pe_scan_index << log2(neurons_per_pe) | slot`.

use serde::Serialize;

use crate::workload::MappingTable;

use super::geom::{Coord, MeshDims};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct AerEvent {
    /// Network-wide neuron id: layer offset plus index within the layer.
    pub source_neuron: u32,
    pub timestep: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Flit {
    pub dst: Coord,
    pub vc: u32,
    pub address: u32,
    pub timestep: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AerError {
    #[error("neuron id {id} outside the address range (0..{total})")]
    NeuronOutOfRange { id: u32, total: u32 },
    #[error("AER address {address:#x} names no mapped neuron")]
    BadAddress { address: u32 },
    #[error("destination {0} outside the mesh")]
    BadDestination(Coord),
}

fn ceil_log2(n: u32) -> u32 {
    if n <= 1 {
        0
    } else {
        32 - (n - 1).leading_zeros()
    }
}

/// Width of an AER address: neuron-slot bits plus PE coordinate bits.
pub fn address_bits(neurons_per_pe: u32, mesh: MeshDims) -> u32 {
    ceil_log2(neurons_per_pe) + ceil_log2(mesh.nodes())
}

/// Destination-parity virtual channel.
pub fn vc_for(dst: Coord, virtual_channels: u32) -> u32 {
    (dst.x + dst.y) % virtual_channels.max(1)
}

#[derive(Clone, Debug)]
pub struct AerCodec {
    mesh: MeshDims,
    slot_bits: u32,
    virtual_channels: u32,
    layer_offsets: Vec<u32>,
    /// Per global id: `(pe scan index, slot)`.
    location: Vec<(u32, u32)>,
    /// Per PE scan index: global ids by slot.
    slots: Vec<Vec<u32>>,
}

impl AerCodec {
    pub fn new(mapping: &MappingTable, neurons_per_pe: u32, mesh: MeshDims, virtual_channels: u32) -> Self {
        let mut layer_offsets = Vec::new();
        let mut acc = 0u32;
        for &s in mapping.layer_sizes() {
            layer_offsets.push(acc);
            acc += s;
        }
        let mut location = vec![(0, 0); acc as usize];
        let mut slots = vec![Vec::new(); mesh.nodes() as usize];
        for (pe, list) in mapping.pe_slots() {
            let idx = mesh.scan_index(pe);
            for (slot, &(l, n)) in list.iter().enumerate() {
                let gid = layer_offsets[l as usize] + n;
                location[gid as usize] = (idx as u32, slot as u32);
                slots[idx].push(gid);
            }
        }
        AerCodec {
            mesh,
            slot_bits: ceil_log2(neurons_per_pe),
            virtual_channels,
            layer_offsets,
            location,
            slots,
        }
    }

    pub fn address_bits(&self) -> u32 {
        self.slot_bits + ceil_log2(self.mesh.nodes())
    }

    pub fn total_neurons(&self) -> u32 {
        self.location.len() as u32
    }

    pub fn global_id(&self, layer: u16, neuron: u32) -> u32 {
        self.layer_offsets[layer as usize] + neuron
    }

    /// `(layer, index)` of a global id.
    pub fn split(&self, gid: u32) -> (u16, u32) {
        let l = self.layer_offsets.partition_point(|&o| o <= gid) - 1;
        (l as u16, gid - self.layer_offsets[l])
    }

    pub fn encode(&self, ev: AerEvent, dst: Coord) -> Result<Flit, AerError> {
        let &(pe, slot) = self
            .location
            .get(ev.source_neuron as usize)
            .ok_or(AerError::NeuronOutOfRange {
                id: ev.source_neuron,
                total: self.total_neurons(),
            })?;
        if !self.mesh.contains(dst) {
            return Err(AerError::BadDestination(dst));
        }
        Ok(Flit {
            dst,
            vc: vc_for(dst, self.virtual_channels),
            address: (pe << self.slot_bits) | slot,
            timestep: ev.timestep,
        })
    }

    pub fn decode(&self, flit: &Flit) -> Result<AerEvent, AerError> {
        let pe = (flit.address >> self.slot_bits) as usize;
        let slot = (flit.address & ((1u32 << self.slot_bits) - 1)) as usize;
        let gid = self
            .slots
            .get(pe)
            .and_then(|s| s.get(slot))
            .ok_or(AerError::BadAddress {
                address: flit.address,
            })?;
        Ok(AerEvent {
            source_neuron: *gid,
            timestep: flit.timestep,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codec(sizes: &[u32], npp: u32, mesh: MeshDims) -> AerCodec {
        let m = MappingTable::canonical(sizes, npp, mesh).unwrap();
        AerCodec::new(&m, npp, mesh, 4)
    }

    #[test]
    fn round_trip_every_id_on_2x2_with_4_per_pe() {
        let mesh = MeshDims::new(2, 2);
        let c = codec(&[10, 6], 4, mesh);
        for gid in 0..16 {
            for dst in mesh.coords() {
                let ev = AerEvent {
                    source_neuron: gid,
                    timestep: 3,
                };
                let f = c.encode(ev, dst).unwrap();
                assert!(f.address < 1 << c.address_bits());
                assert_eq!(c.decode(&f).unwrap(), ev);
            }
        }
    }

    #[test]
    fn eight_per_pe_uses_three_slot_bits() {
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(address_bits(8, MeshDims::new(1, 1)), 3);
        assert_eq!(address_bits(8, MeshDims::new(2, 2)), 5);
        let c = codec(&[8], 8, MeshDims::new(1, 1));
        let addrs: Vec<u32> = (0..8)
            .map(|i| {
                c.encode(AerEvent { source_neuron: i, timestep: 0 }, Coord::new(0, 0))
                    .unwrap()
                    .address
            })
            .collect();
        assert_eq!(addrs, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn out_of_range_id_rejected() {
        let c = codec(&[8], 8, MeshDims::new(1, 1));
        assert_eq!(
            c.encode(AerEvent { source_neuron: 8, timestep: 0 }, Coord::new(0, 0)),
            Err(AerError::NeuronOutOfRange { id: 8, total: 8 })
        );
    }

    #[test]
    fn split_recovers_layer() {
        let c = codec(&[3, 5, 2], 4, MeshDims::new(2, 2));
        assert_eq!(c.split(0), (0, 0));
        assert_eq!(c.split(3), (1, 0));
        assert_eq!(c.split(9), (2, 1));
        assert_eq!(c.global_id(2, 1), 9);
    }
}
