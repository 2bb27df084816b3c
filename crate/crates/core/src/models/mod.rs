//! Built-in physical systems and their trial manifolds.

pub mod cylinder;
pub mod lipkin;
pub mod oscillator;
pub mod rotor;
pub mod spin;
