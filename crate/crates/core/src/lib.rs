pub mod adbm;
pub mod assignment;
pub mod decoupling;
pub mod error;
pub mod losses;
pub mod rng;
pub mod space;
pub mod vecops;
pub mod metrics;
pub mod nn;
pub mod synthdata;
pub mod trainer;
pub mod ablation;
pub mod cli;
