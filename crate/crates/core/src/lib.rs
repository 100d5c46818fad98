//! Cross-topology evolutionary architecture search for small sequential
//! networks: a training engine, function-preserving morphisms, and the
//! bracket-based search loop that drives them.

pub mod data;
pub mod evolution;
pub mod linalg;
pub mod morph;
pub mod net;
pub mod rng;
pub mod topology;
