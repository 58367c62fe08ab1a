pub mod neural;
pub mod motion;
pub mod physics;
pub mod trainer;
pub mod adapt;
pub mod analysis;
pub mod experiment;
