//! Spiking network descriptions, spike traces, the reference LIF pass and
//! the network-to-mesh mapping.

pub mod lif;
pub mod mapping;
pub mod model;
pub mod space;
pub mod trace;

pub use lif::{generate_trace, lif_generate_trace, lif_update};
pub use mapping::{map_model, MapRange, MappingError, MappingTable};
pub use model::{Dims, Layer, LayerKind, ModelError, NeuronParams, SnnModel};
pub use space::{OpTemplate, SnnSearchSpace};
pub use trace::{random_input, SpikeRecord, SpikeTrace, TraceError};
