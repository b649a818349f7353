//! Digital-twin navigation stack.
//!
//! A ground-truth 2D world ([`worldsim`]) and its LIDAR ([`lidarsim`]) play the
//! physical robot. The twin rebuilds obstacles from scans ([`perception`]),
//! drives the robot with a TD3 policy ([`td3`]), and pauses the physical side
//! to retrain locally when the robot enters the danger zone ([`twinlink`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod lidarsim;
pub mod perception;
pub mod td3;
pub mod twinlink;
pub mod worldsim;

pub use error::{Error, Result};
pub use exec::Exec;
