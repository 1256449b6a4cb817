pub mod error;
pub mod estimate;
pub mod io;
pub mod snapshot;
pub mod synth;
pub mod bench;
pub mod app;
