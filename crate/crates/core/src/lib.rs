//! Spiking-network training engine.
//!
//! The crate is `no_std` (it needs `alloc`) and covers the numerical side of
//! training leaky integrate-and-fire networks:
//!
//! * [`tensor`] and [`kernels`]: dense row-major arrays and the conv / pool /
//!   matmul kernels with their backward counterparts.
//! * [`neuron`]: LIF, PLIF and ALIF dynamics with the triangle surrogate.
//! * [`network`]: declarative layer descriptions, per-layer cached-state
//!   footprints and time-unrolled execution.
//! * [`partition`] and [`aux`]: greedy minimal partitioning under a per-scope
//!   memory budget and the budgeted construction of auxiliary heads.
//! * [`train`]: BPTT, temporally truncated online learning and the
//!   partitioned (spatially and temporally decoupled) regime.
//! * [`ledger`]: byte-level accounting of cached activations.
//! * [`analysis`]: linear CKA and linear probing on firing rates.
//! * [`oracle`]: a scalar reverse-mode tape used to check the hand-written
//!   recursions.
#![no_std]
// `!(x > 0.0)` is deliberate: it rejects NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod aux;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod ledger;
pub mod network;
pub mod neuron;
pub mod oracle;
pub mod partition;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
