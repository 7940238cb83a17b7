//! Deterministic multi-party simulator for privacy-preserving federated
//! random forests.
//!
//! The crate models three kinds of parties -- a payment network (PNS) that
//! holds labeled transactions and the HE secret key, a set of banks that hold
//! account flags, and an aggregator -- and lets them train and query a random
//! decision forest without any party seeing another party's plaintext data.
//! Encrypted work runs on a simulated-exact homomorphic backend ([`he`]),
//! red-leaf counts travel through a cuckoo-hashed private intersection-sum
//! ([`pisum`]), counts are protected with a bounded-sensitivity Laplace
//! mechanism ([`dp`]), and every cross-party message goes through an
//! auditable in-process bus ([`simnet`]).

pub mod analysis;
pub mod audit;
pub mod config;
pub mod data;
pub mod datagen;
pub mod dp;
pub mod forest;
pub mod he;
pub mod model;
pub mod pisum;
pub mod protocol;
pub mod seedstream;
pub mod simnet;

pub use config::RunConfig;
pub use data::{AccountRecord, FeatureMap, FeatureValue, Transaction, TxRecord};
pub use forest::{Forest, Leaf, LeafId, LeafKind, Tree};
pub use he::{Ciphertext, HeContext, HeParams, KeyPair};
pub use protocol::{FedRun, Prediction};
pub use simnet::{Party, Transcript};

