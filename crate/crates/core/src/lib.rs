//! Personalizing multi-objective reward weights: gridworld navigation with
//! five sub-rewards, a weight-conditioned policy, and weight inference from
//! demonstrations, preferences and language.

pub mod env;
pub mod error;
pub mod infer;
pub mod lang;
pub mod metrics;
pub mod objectives;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod study;
pub mod trajectory;
pub mod weights;

pub use error::{Error, Result};
pub use objectives::TaskKind;
pub use rng::RngSeed;

pub type WeightVector = weights::Weights<f64>;
pub type WeightVectorF32 = weights::Weights<f32>;
pub type SubRewardVector = weights::SubRewards<f64>;
pub type SubRewardVectorF32 = weights::SubRewards<f32>;
