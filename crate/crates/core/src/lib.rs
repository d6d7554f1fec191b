//! Flow-level simulation of a control/traffic-decoupled cellular network
//! with traffic base-station sleeping, and a learning harness for selecting
//! sleeping remote radio heads from observable channels.

pub mod error;
pub mod fmt;
pub mod powermodel;
pub mod radio;
pub mod rng;
pub mod rrhlearn;
pub mod simengine;
pub mod topology;

pub use error::{Error, Result};
