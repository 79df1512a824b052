pub mod backpressure;
pub mod channel;
pub mod cli;
pub mod engine;
pub mod gf;
pub mod protocol;
pub mod rlnc;
