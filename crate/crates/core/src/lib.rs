pub mod cli;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod image;
pub mod losses;
pub mod measures;
pub mod optimizer;
