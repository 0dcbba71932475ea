//! Mesh-of-routers hardware model: geometry, architecture points, unit
//! technology, AER codec and the actor graph that simulates them.

pub mod aer;
pub mod config;
pub mod geom;
pub mod instance;
pub mod tech;
pub mod units;

pub use aer::{address_bits, vc_for, AerCodec, AerError, AerEvent, Flit};
pub use config::{ArchConfig, ArchError, ArchSpec, Arbitration, ARCH_FORMAT_VERSION};
pub use geom::{route_xy, xy_next, Coord, Dir, MeshDims, OutOfMesh};
pub use instance::{simulate, HardwareInstance, HwError, RunMode, SimOptions, SimOutcome, TrafficStats, PE_STAGE_DEPTH};
pub use tech::{TechError, TechParams, UnitKind, UnitTech, DEFAULT_TECH};
pub use units::{HwMsg, Token, Unit, UnitError};

use crate::kernel::ComponentPath;
use crate::ppa::UnitInfo;

/// Hardware units instantiated per mesh node.
pub const UNITS_PER_NODE: usize = 15;

/// Every unit of the mesh in a fixed order: per node (scan order) five input
/// units, five output units, the switch allocator, the NIC and the three PE
/// blocks. Ports facing the mesh edge are tied off but still instantiated.
pub fn unit_inventory(mesh: MeshDims) -> Vec<UnitInfo> {
    let mut v = Vec::with_capacity(mesh.nodes() as usize * UNITS_PER_NODE);
    for c in mesh.coords() {
        let node = format!("node({},{})", c.x, c.y);
        let mut push = |module: &str, unit: &str, kind| {
            v.push(UnitInfo {
                path: ComponentPath::new("sys", node.clone(), module, unit),
                kind,
            })
        };
        for d in Dir::ALL {
            push("router", &format!("in_{}", d.name()), UnitKind::InputUnit);
        }
        for d in Dir::ALL {
            push("router", &format!("out_{}", d.name()), UnitKind::OutputUnit);
        }
        push("router", "switch_allocator", UnitKind::SwitchAllocator);
        push("nic", "interface", UnitKind::Nic);
        push("pe", "lut", UnitKind::PeLut);
        push("pe", "sram", UnitKind::PeSram);
        push("pe", "neuron", UnitKind::PeNeuron);
    }
    v
}
