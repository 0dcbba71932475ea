pub mod coexplore;
pub mod ctrl;
mod csvline;
pub mod hw;
pub mod kernel;
pub mod kv;
pub mod ppa;
pub mod rl;
pub mod scalar;
pub mod space;
pub mod time;
pub mod workload;

pub use scalar::Scalar;

/// Double-precision instantiations; what the CLI uses.
pub type RewardSpecF64 = rl::RewardSpec<f64>;
pub type PpaTargetsF64 = ppa::PpaTargets<f64>;
pub type QTableF64 = rl::QTable<f64>;
pub type SearchResultF64 = rl::SearchResult<f64>;
pub type CoExploreResultF64 = coexplore::CoExploreResult<f64>;

/// Single-precision instantiations.
pub type RewardSpecF32 = rl::RewardSpec<f32>;
pub type PpaTargetsF32 = ppa::PpaTargets<f32>;
pub type QTableF32 = rl::QTable<f32>;
pub type SearchResultF32 = rl::SearchResult<f32>;
pub type CoExploreResultF32 = coexplore::CoExploreResult<f32>;
