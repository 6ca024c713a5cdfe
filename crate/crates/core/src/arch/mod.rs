//! Network units, the three variant topologies and parameter handling.

pub mod config;
pub mod embed;
pub mod net;
pub mod params;
pub mod units;

pub use config::{DilateResUnitConfig, LevelConfig, NetConfig, Variant};
pub use embed::embed_v3_into_v1;
pub use net::{MixNet, UnitTrace, Wired};
pub use params::{Manifest, ParamInfo, ParamSource, ParamStore};
