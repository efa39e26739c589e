//! Hybrid quantum-classical autoencoder for SMILES strings.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`corpus`] tokenizes SMILES lines into id sequences.
//! 2. [`embedding`] maps each token to the Kronecker product of a few small
//!    trainable factors and projects the result to the model width.
//! 3. [`qae`] loads the pooled embedding into a simulated register
//!    ([`qsim`]), runs a layered variational ansatz and measures the latent
//!    qubits. Quantum gradients come from the parameter-shift rule.
//! 4. [`decoder`] is a stacked LSTM with multi-head attention over the
//!    per-token embeddings that reconstructs the string.
//!
//! [`objective`] combines fidelity, cross-entropy, edit-distance similarity
//! and trash-qubit terms, and [`trainer`] drives the whole loop with Adam and
//! a cosine learning-rate schedule.

pub mod corpus;
pub mod decoder;
pub mod embedding;
pub mod nn;
pub mod objective;
pub mod qae;
pub mod qsim;
pub mod trainer;

mod error;

pub use error::{Error, Result};
