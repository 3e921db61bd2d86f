//! Long-term hydrothermal generation scheduling over a reservoir cascade,
//! with state-dependent environmental outflow rules in two formulations,
//! trained by SDDP-family decomposition and evaluated by Monte-Carlo
//! simulation.

pub mod cli;
pub mod ec;
pub mod io;
pub mod lp;
pub mod model;
pub mod sddp;
pub mod twostage;
