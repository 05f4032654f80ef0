pub mod bap;
pub mod certificate;
pub mod config;
pub mod cover;
pub mod error;
pub mod extension;
pub mod free_norm;
pub mod gluing;
pub mod lp;
pub mod metric;
pub mod pipeline;

pub use certificate::{Certificate, CertificateSet, Witness};
pub use error::{Error, Result};
pub use metric::{DistMatrix, FiniteMetricSpace, Subset};
