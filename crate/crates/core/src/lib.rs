//! S-money quantum token laboratory: protocol engine, photonic channel
//! simulator, security-bound calculator and an exact small-N unforgeability
//! oracle.

pub mod analysis;
pub mod bounds;
pub mod config;
pub mod photonics;
pub mod qmath;
pub mod spacetime;
pub mod bits;
pub mod oracle;
pub mod protocol;
