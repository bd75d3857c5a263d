//! Synthetic worlds and sensor streams for experiments.

mod stream;
mod world;

pub use stream::{
    interpolate, random_heading, read_frames, simulate_trajectory, write_frames, Condition, OccluderSchedule, SimConfig,
    SimFrame,
};
pub use world::{build_world, perturb_world, Face, Layout, Side, StockingPlan, WorldSpec};
