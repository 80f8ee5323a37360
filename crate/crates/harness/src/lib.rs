//! Experiment harness for the pinching-antenna optimizers: seeded scenario
//! generation, sweep orchestration with crash-safe CSV persistence, SVG
//! report emission, and a fast self-check suite, all behind one CLI.

pub mod checks;
pub mod experiment;
pub mod plots;
pub mod scenario;
