//! Oblivious-execution toolchain: an IR with an interpreter, an
//! if-conversion pass, static and dynamic verifiers, a cycle-level
//! microarchitecture simulator, a benchmark kernel catalog, and a
//! timing side-channel attack harness.

pub mod attack;
pub mod ir;
pub mod ifconv;
pub mod kernels;
pub mod microsim;
pub mod verifier;
