pub mod layers;
pub mod ops;
pub mod params;

pub use params::{seeded_rng, Init, ParamStore};
