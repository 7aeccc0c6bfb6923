pub mod region;
pub mod codecs;
pub mod workloads;
pub mod backend;
pub mod campaign;
pub mod stats;
pub mod hrm;
pub mod explorer;
