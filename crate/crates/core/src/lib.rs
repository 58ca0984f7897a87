//! Joint transmit beamforming and receive power splitting for multi-user
//! MISO downlinks with simultaneous wireless information and power transfer.
//!
//! Three solvers share one contract: minimise the total transmit power
//! subject to a per-user SINR target and a per-user harvested-power target.
//!
//! * [`sdr::solve_jbps_optimal`] - globally optimal, with a KKT certificate.
//! * [`zf::solve_zf`] - zero-forcing beams, closed form.
//! * [`sinr::solve_sinr_opt`] - SINR-optimal beams with a common scaling.
//!
//! [`feasibility::is_feasible`] decides feasibility in closed form, and
//! [`harness`] runs seeded Monte-Carlo sweeps over the three methods.

pub mod channel;
pub mod cli;
pub mod error;
pub mod feasibility;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod model;
pub mod sdr;
pub mod sinr;
pub mod zf;

pub use error::{Error, Result};
pub use model::{JbpsSolution, Method, SystemInstance, Targets};
