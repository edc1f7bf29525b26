//! Gridworld houses with object-goal and flee navigation.

mod config;
pub mod house;
pub mod sim;

pub use config::EnvConfig;
pub use house::{generate_house, Cell, HouseFile, HouseLayout, HouseObject, PitchTag, Room, Tile, CATALOG};
pub use sim::{
    count_unreachable, line_of_sight, pitch_index, reachable_categories, Action, Env, EnvState, Orientation, Outcome,
    Pitch, Pose, StepInfo, StepOutcome, TaskSpec, ACTIONS,
};
