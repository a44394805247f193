//! Encrypted linear-model inference over BFV.
//!
//! A client encrypts quantized feature vectors, a key-less server
//! evaluates per-class linear scores with ciphertext-plaintext
//! arithmetic, and the client decrypts, calibrates and thresholds.

pub mod bench;
pub mod fixture;
pub mod he;
pub mod model;
pub mod quantizer;
pub mod ring;
pub mod scoring;
pub mod service;
pub mod toy;
