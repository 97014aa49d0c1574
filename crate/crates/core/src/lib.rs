//! Numerical study of orbital instability of ground states of the
//! generalized Benjamin-Bona-Mahony equation at the critical speed.

pub mod dynamics;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod ground_state;
pub mod modulation;
pub mod spectral;
pub mod structure;

pub use error::{Error, Result};
pub use grid::{Boundary, Field, Grid};
pub use ground_state::{critical_speed, GroundState};
