//! Boundary-control reconstruction of a potential `q` in the 1-D wave
//! equation `u_tt − u_xx + q u = 0` from the boundary response.

pub mod connect;
pub mod error;
pub mod factor;
pub mod forward;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod potential;
pub mod recover;
pub mod wavemodel;

pub use error::{Error, Result};
pub use grid::{Kernel2D, Quadrature, Support, TimeGrid};
pub use potential::{Control, Potential, PotentialShape};
