//! Game environment, frame rendering and the preprocessing pipeline.

mod frames;
mod snake;

pub use frames::{preprocess, StackedState};
pub use snake::{Direction, SnakeState, ACTION_COUNT};
