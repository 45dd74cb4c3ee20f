pub mod config;
pub mod dvs;
pub mod experiment;
pub mod loc;
pub mod npu;
pub mod trace;
pub mod traffic;
