//! Deterministic simulator and cost harness for content-privacy enforcement
//! in decentralized online social networks.
//!
//! Three enforcement models (encryption, LKH key tree, allocation) run on
//! an in-memory substrate with per-principal crypto and traffic ledgers.
//! Every model is checked against a membership-timeline oracle.

pub mod crypto;
pub mod group;
pub mod models;
pub mod netsim;
pub mod replay;
pub mod bench;
