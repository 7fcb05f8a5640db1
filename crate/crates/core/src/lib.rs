pub mod assignment;
pub mod bethe;
pub(crate) mod birkhoff;
pub mod diagnostics;
pub mod entropy;
pub mod error;
pub mod exact;
pub mod generate;
pub mod io;
pub mod matrix;
pub mod poly;
pub mod report;
pub mod suite;
pub use birkhoff::PolytopeSolution;
