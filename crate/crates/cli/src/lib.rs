//! Library surface of the pipeline driver: the profile registry, shared by
//! the `gbx` binary and the acceptance suite.

pub mod profiles;
