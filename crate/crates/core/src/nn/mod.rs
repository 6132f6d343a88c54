//! Minimal CPU layers with hand-written backward passes.

pub mod conv;
pub mod linalg;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod params;
pub mod resize;

pub use conv::Conv2d;
pub use linear::{Linear, ProjectionHead};
pub use norm::GroupNorm;
pub use optim::Adam;
pub use params::{Grads, Param, ParamId, ParamStore};
pub use resize::Bilinear;
