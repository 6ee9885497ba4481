pub mod analysis;
pub mod model;
pub mod netsim;
pub mod protocol;
pub mod qon;
pub mod rng;
pub mod scenario;
pub mod workload;
