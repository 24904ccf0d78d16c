//! Time grid, jump-measure specification and simulation of the driving noises.

mod bundle;
mod grid;
mod jumps;
mod simulate;

pub use bundle::{AgentPath, PathBundle};
pub use grid::TimeGrid;
pub use jumps::{
    compensator_integral, Intensity, IntensityForm, JumpEvent, JumpSpec, JumpState, MarkAtom,
    Owner, Split,
};
pub use simulate::{draw_cell_events, simulate_brownian, simulate_jump_measure, BrownianPaths, JumpParts};
