//! File formats, the captioning oracle, mock captioners, sweeps and the CLI.

pub mod cli;
pub mod formats;
pub mod image_io;
pub mod mock;
pub mod oracle;
pub mod sweep;
