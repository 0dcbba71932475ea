mod common;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use common::fc_chain;
use neuromesh::hw::{Arbitration, ArchConfig, Coord, Dir, MeshDims, TrafficStats};
use neuromesh::space::{apply_action, encode_state, enumerate, legal_actions, validate, SearchAction, SearchBounds};
use neuromesh::workload::SnnModel;
use proptest::prelude::*;

#[derive(Clone, Debug)]
struct Case {
    sizes: Vec<u32>,
    npp: Vec<u32>,
    mesh_max: (u32, u32),
    fifo: (u32, u32),
    arbs: Vec<Arbitration>,
    vc: u32,
}

impl Case {
    fn model(&self) -> SnnModel {
        fc_chain(&self.sizes, 10, 40, 1)
    }

    fn bounds(&self) -> SearchBounds {
        let set = |v: Vec<String>| format!("{{{}}}", v.join(","));
        SearchBounds::parse(&format!(
            "neurons_per_pe = {}\nmesh_dims = 1x1..{}x{}\nfifo_depth_per_port = {}..{}\narbitration = {}\n\
             virtual_channels = {}\nflit_payload_bits = 32\n",
            set(self.npp.iter().map(u32::to_string).collect()),
            self.mesh_max.0,
            self.mesh_max.1,
            self.fifo.0,
            self.fifo.1,
            set(self.arbs.iter().map(Arbitration::to_string).collect()),
            self.vc
        ))
        .unwrap()
    }
}

fn case(max_mesh: u32) -> impl Strategy<Value = Case> {
    (
        prop::collection::vec(1u32..10, 2..4),
        prop::sample::subsequence(vec![2u32, 4, 8, 16, 32, 64], 1..=4),
        (1..=max_mesh, 1..=max_mesh),
        (1u32..4, 0u32..3),
        prop::sample::subsequence(Arbitration::ALL.to_vec(), 1..=2),
        1u32..4,
    )
        .prop_map(|(sizes, npp, mesh_max, (lo, span), arbs, vc)| Case {
            sizes,
            npp,
            mesh_max,
            fifo: (lo, lo + span),
            arbs,
            vc,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn actions_keep_architectures_valid(c in case(3), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..60)) {
        let (b, m) = (c.bounds(), c.model());
        let Some(mut arch) = b.initial(&m) else { return Ok(()) };
        let catalogue = SearchAction::catalogue(m.num_layers());
        for pick in picks {
            let action = *pick.get(&catalogue);
            match apply_action(&arch, action, &b) {
                Ok(next) => {
                    prop_assert!(validate(&next, &b, &m).is_empty(), "{action} gave {:?}", validate(&next, &b, &m));
                    prop_assert_eq!(&apply_action(&arch, action, &b).unwrap(), &next);
                    arch = next;
                }
                Err(_) => prop_assert!(apply_action(&arch, action, &b).is_err()),
            }
        }
    }

    #[test]
    fn enumeration_is_complete_and_duplicate_free(c in case(4)) {
        let (b, m) = (c.bounds(), c.model());
        let all = enumerate(&b, &m).unwrap();
        let distinct: BTreeSet<String> = all.iter().map(ArchConfig::to_text).collect();
        prop_assert_eq!(distinct.len(), all.len());
        for a in &all {
            prop_assert!(validate(a, &b, &m).is_empty());
        }
        let total: u64 = c.sizes.iter().map(|&s| s as u64).sum();
        let meshes = (1..=c.mesh_max.0).flat_map(|x| (1..=c.mesh_max.1).map(move |y| (x * y) as u64));
        let fitting: u64 = meshes
            .map(|nodes| c.npp.iter().filter(|&&n| n as u64 * nodes >= total).count() as u64)
            .sum();
        let expected = fitting * (c.fifo.1 - c.fifo.0 + 1) as u64 * c.arbs.len() as u64;
        prop_assert_eq!(all.len() as u64, expected);
        let first = b.initial(&m);
        prop_assert_eq!(first.as_ref(), all.first());
    }

    #[test]
    fn state_buckets_stay_in_range(
        rx in prop::collection::vec(0u64..1000, 1..9),
        links in prop::collection::vec(0u64..1000, 0..12),
        extra in 0u64..1000,
        buckets in 1u32..16,
        mx in 1u32..4,
        my in 1u32..4,
    ) {
        let injected = rx.iter().sum::<u64>() + extra;
        let t = TrafficStats {
            injected,
            pe_rx: rx,
            links: links.into_iter().map(|f| (Coord::new(0, 0), Dir::E, f)).collect(),
        };
        let m = fc_chain(&[1, 1], 1, 1, 1);
        let mesh = MeshDims::new(mx, my);
        let arch = ArchConfig {
            mesh_dims: mesh,
            neurons_per_pe: 2,
            fifo_depth_per_port: 1,
            virtual_channels: 1,
            arbitration: Arbitration::RoundRobin,
            flit_payload_bits: 16,
            mapping: neuromesh::workload::MappingTable::canonical(&m.layer_sizes(), 2, mesh).unwrap(),
        };
        let s = encode_state(&t, &arch, buckets);
        prop_assert!(s.aer_congestion_bucket < buckets);
        prop_assert!(s.noc_congestion_bucket < buckets);
        prop_assert!(s.routing_hops_bucket < buckets);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Breadth-first search restricted to enumerated configurations: from
    /// each one, single actions reach every other.
    #[test]
    fn every_configuration_is_reachable(c in case(3)) {
        let (b, m) = (c.bounds(), c.model());
        let all = enumerate(&b, &m).unwrap();
        let index: BTreeMap<&ArchConfig, usize> = all.iter().enumerate().map(|(i, a)| (a, i)).collect();
        let edges: Vec<Vec<usize>> = all
            .iter()
            .map(|a| legal_actions(a, &b).iter().filter_map(|(_, n)| index.get(n).copied()).collect())
            .collect();
        let mut diameter = 0;
        for from in 0..all.len() {
            let mut dist = vec![usize::MAX; all.len()];
            dist[from] = 0;
            let mut queue = VecDeque::from([from]);
            while let Some(u) = queue.pop_front() {
                for &v in &edges[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            for (to, &d) in dist.iter().enumerate() {
                prop_assert!(d != usize::MAX, "{} cannot reach {}", all[from].short(), all[to].short());
                diameter = diameter.max(d);
            }
        }
        // one step per npp value, mesh column, mesh row and fifo depth, plus the policy toggle
        let bound = c.npp.len() + (c.mesh_max.0 + c.mesh_max.1) as usize + (c.fifo.1 - c.fifo.0) as usize + 1;
        prop_assert!(diameter <= bound, "diameter {diameter} > {bound}");
    }
}
