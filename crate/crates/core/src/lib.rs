//! Collaborative mean estimation among agents that exchange differentially private
//! running means and decide, per peer, whether the peer shares their distribution.

// Negated comparisons are how domain checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod noise;
pub mod privacy;
pub mod stats;
pub mod varest;
pub mod protocol;
pub mod analytics;
pub mod oracle;
pub mod validate;

pub use error::{Error, Result};
pub use noise::{DataDistribution, NoiseKind, PrivacyParams, SeedTree, SimRng, StreamTag};
pub use privacy::{MechanismKind, Release, ReleaseChannel};
pub use stats::{PeerStatistic, WeightScheme};
