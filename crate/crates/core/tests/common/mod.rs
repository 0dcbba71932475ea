#![allow(dead_code)]

pub mod pipeline;

use neuromesh::hw::{ArchConfig, Arbitration, MeshDims};
use neuromesh::workload::{Dims, Layer, LayerKind, MappingTable, NeuronParams, SnnModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn lif(threshold: i16) -> NeuronParams {
    NeuronParams {
        leak_q8: 230,
        threshold,
        reset: 0,
    }
}

fn weights(r: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| r.gen_range(-20i8..=60)).collect()
}

/// Random model with at most 64 neurons in total.
pub fn tiny_model(r: &mut ChaCha8Rng) -> SnnModel {
    let timesteps = r.gen_range(1..=4);
    loop {
        let input = if r.gen_bool(0.5) {
            Dims::new(1, r.gen_range(2..=4), r.gen_range(2..=4))
        } else {
            Dims::new(r.gen_range(4..=12), 1, 1)
        };
        let mut layers = Vec::new();
        let mut prev = input;
        let depth = r.gen_range(1..=3);
        for li in 1..=depth {
            let choice = r.gen_range(0..3);
            let kind = if choice == 1 && prev.h >= 2 && prev.w >= 2 {
                let oc = r.gen_range(1..=2);
                LayerKind::Conv {
                    in_channels: prev.c,
                    out_channels: oc,
                    kernel: 2,
                    stride: 1,
                    padding: r.gen_range(0..=1),
                    weights: weights(r, (oc * prev.c * 4) as usize),
                }
            } else if choice == 2 && prev.h >= 2 && prev.w >= 2 {
                LayerKind::MaxPool { kernel: 2, stride: 2 }
            } else {
                let outputs = r.gen_range(2..=10);
                LayerKind::Fc {
                    inputs: prev.size(),
                    outputs,
                    weights: weights(r, (outputs * prev.size()) as usize),
                }
            };
            let neuron = match kind {
                LayerKind::MaxPool { .. } => None,
                _ => Some(lif(r.gen_range(30..=90))),
            };
            let layer = Layer::new(li, prev, kind, neuron).expect("valid layer");
            prev = layer.output;
            layers.push(layer);
        }
        let m = SnnModel::new(timesteps, input, layers).expect("valid model");
        if m.total_neurons() <= 64 {
            return m;
        }
    }
}

/// Random valid architecture for `model`, with a possibly shuffled mapping.
pub fn random_arch(r: &mut ChaCha8Rng, model: &SnnModel) -> ArchConfig {
    loop {
        let mesh = MeshDims::new(r.gen_range(1..=3), r.gen_range(1..=3));
        let npp = 1u32 << r.gen_range(1..=5);
        let Ok(mut mapping) = MappingTable::canonical(&model.layer_sizes(), npp, mesh) else {
            continue;
        };
        // Scatter a few neurons to exercise non-contiguous placement.
        for _ in 0..r.gen_range(0..6) {
            let l = r.gen_range(0..model.num_layers());
            let n = r.gen_range(0..model.layer_sizes()[l]);
            let to = mesh.coord(r.gen_range(0..mesh.nodes() as usize));
            if mapping.loads(mesh)[mesh.scan_index(to)] < npp {
                mapping.move_neuron(l, n, to);
            }
        }
        let arch = ArchConfig {
            mesh_dims: mesh,
            neurons_per_pe: npp,
            fifo_depth_per_port: r.gen_range(1..=4),
            virtual_channels: r.gen_range(1..=4),
            arbitration: Arbitration::ALL[r.gen_range(0..2)],
            flit_payload_bits: 16,
            mapping,
        };
        if arch.violations().is_empty() {
            return arch;
        }
    }
}

pub fn fc_chain(sizes: &[u32], w: i8, threshold: i16, timesteps: u32) -> SnnModel {
    let mut layers = Vec::new();
    let mut prev = Dims::new(sizes[0], 1, 1);
    for (i, &s) in sizes[1..].iter().enumerate() {
        let kind = LayerKind::Fc {
            inputs: prev.size(),
            outputs: s,
            weights: vec![w; (s * prev.size()) as usize],
        };
        let l = Layer::new(i + 1, prev, kind, Some(lif(threshold))).unwrap();
        prev = l.output;
        layers.push(l);
    }
    SnnModel::new(timesteps, Dims::new(sizes[0], 1, 1), layers).unwrap()
}

pub fn arch_for(model: &SnnModel, mesh: MeshDims, npp: u32) -> ArchConfig {
    ArchConfig {
        mesh_dims: mesh,
        neurons_per_pe: npp,
        fifo_depth_per_port: 4,
        virtual_channels: 2,
        arbitration: Arbitration::RoundRobin,
        flit_payload_bits: 16,
        mapping: MappingTable::canonical(&model.layer_sizes(), npp, mesh).unwrap(),
    }
}
