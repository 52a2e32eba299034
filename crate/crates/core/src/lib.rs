//! Multilevel functional principal component analysis.
//!
//! Repeatedly observed curves `Y_ij(t)` are split into a subject-level and a
//! visit-level Karhunen-Loeve expansion. The crate covers moment estimation of
//! the covariance surfaces, optional penalized smoothing, eigenanalysis,
//! principal component scores, simulation and bootstrap tools, logistic
//! regression on scores, and band-power preprocessing of raw signals.

pub mod error;
pub mod grid;
pub mod ingest;
pub mod moments;
pub mod eigen;
pub mod fit;
pub mod glm;
pub mod rng;
pub mod scores;
pub mod sim;
pub mod smooth;

pub use error::{MfpcaError, Result};
pub use grid::{center, inner_product, Curve, MultilevelSample, SampledGrid};
pub use moments::{estimate_means, estimate_raw_cov, MeanEstimate, RawCov};
