//! Dataset containers, importers and CSV artefacts.

pub mod container;
pub mod csv;
pub mod ntu;

pub use container::{load_dataset, read_dataset, save_dataset, write_dataset};
