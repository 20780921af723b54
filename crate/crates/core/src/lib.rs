pub mod config;
pub mod ensemble;
pub mod error;
pub mod hamiltonians;
pub mod output;
pub mod photocurrent;
pub mod propagator;
pub mod readout;
pub mod selfcheck;
pub mod sequences;
pub mod spin;
