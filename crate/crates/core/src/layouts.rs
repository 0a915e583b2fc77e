//! Bundled maze layouts.

use crate::error::{Error, Result};
use crate::maze::{parse_layout_with_id, GridMaze};

const MAZE_MEDIUM: &str = include_str!("../layouts/maze-medium.txt");
const MAZE_GIANT: &str = include_str!("../layouts/maze-giant.txt");

/// Names accepted by [`bundled`].
pub const BUNDLED: [&str; 4] = ["chain-50", "corridor-300", "maze-medium", "maze-giant"];

/// Loads a bundled layout by name.
pub fn bundled(name: &str) -> Result<GridMaze> {
    match name {
        "chain-50" => parse_layout_with_id(&".".repeat(50), name),
        "corridor-300" => parse_layout_with_id(&".".repeat(300), name),
        "maze-medium" => parse_layout_with_id(MAZE_MEDIUM, name),
        "maze-giant" => parse_layout_with_id(MAZE_GIANT, name),
        other => Err(Error::UnknownLayout(other.to_string())),
    }
}
