//! Discrete gridworld mazes with exact shortest-path oracles.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Largest grid (width·height) accepted by [`GridMaze::new`].
pub const MAX_GRID_CELLS: usize = 10_000;

/// A grid position `(x, y)`; `x` is the column, `y` the row (row 0 is the first
/// line of a layout).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellState {
    pub x: u32,
    pub y: u32,
}

impl CellState {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for CellState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// The five primitive actions. North decreases `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MoveAction {
    North,
    East,
    South,
    West,
    Stay,
}

impl MoveAction {
    pub const ALL: [MoveAction; 5] = [
        MoveAction::North,
        MoveAction::East,
        MoveAction::South,
        MoveAction::West,
        MoveAction::Stay,
    ];
    /// Tie-break order for shortest-path descent.
    pub const MOVES: [MoveAction; 4] = [
        MoveAction::North,
        MoveAction::East,
        MoveAction::South,
        MoveAction::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn offset(self) -> (i64, i64) {
        match self {
            MoveAction::North => (0, -1),
            MoveAction::East => (1, 0),
            MoveAction::South => (0, 1),
            MoveAction::West => (-1, 0),
            MoveAction::Stay => (0, 0),
        }
    }

    /// Single-letter code used by the dataset file format (`X` is Stay).
    pub fn code(self) -> char {
        match self {
            MoveAction::North => 'N',
            MoveAction::East => 'E',
            MoveAction::South => 'S',
            MoveAction::West => 'W',
            MoveAction::Stay => 'X',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'N' => Some(MoveAction::North),
            'E' => Some(MoveAction::East),
            'S' => Some(MoveAction::South),
            'W' => Some(MoveAction::West),
            'X' => Some(MoveAction::Stay),
            _ => None,
        }
    }
}

/// An immutable rectangular maze.
///
/// Free cells are numbered densely in row-major order; learners index tables
/// by that number (see [`GridMaze::index_of`]).
#[derive(Clone, Debug)]
pub struct GridMaze {
    width: u32,
    height: u32,
    walls: Vec<bool>,
    slip_prob: f64,
    layout_id: String,
    cells: Vec<CellState>,
    index: Vec<Option<u32>>,
    // neighbor cell index per free cell and direction (N, E, S, W); self when blocked
    neighbors: Vec<[u32; 4]>,
}

impl GridMaze {
    /// Builds a maze from a row-major wall mask, checking every invariant.
    pub fn new(
        width: u32,
        height: u32,
        walls: Vec<bool>,
        slip_prob: f64,
        layout_id: impl Into<String>,
    ) -> Result<Self> {
        let area = width as usize * height as usize;
        if width == 0 || height == 0 {
            return Err(Error::Layout("empty layout".into()));
        }
        if area > MAX_GRID_CELLS {
            return Err(Error::Layout(format!(
                "{width}x{height} grid exceeds the {MAX_GRID_CELLS}-cell bound"
            )));
        }
        if walls.len() != area {
            return Err(Error::Layout(format!(
                "wall mask has {} entries, expected {area}",
                walls.len()
            )));
        }
        if !(0.0..1.0).contains(&slip_prob) {
            return Err(Error::Layout(format!("slip_prob {slip_prob} not in [0,1)")));
        }
        let mut cells = Vec::new();
        let mut index = vec![None; area];
        for y in 0..height {
            for x in 0..width {
                let p = (y * width + x) as usize;
                if !walls[p] {
                    index[p] = Some(cells.len() as u32);
                    cells.push(CellState::new(x, y));
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Layout("layout has no free cells".into()));
        }
        let mut maze = Self {
            width,
            height,
            walls,
            slip_prob,
            layout_id: layout_id.into(),
            cells,
            index,
            neighbors: Vec::new(),
        };
        maze.neighbors = (0..maze.cells.len())
            .map(|i| {
                let c = maze.cells[i];
                let mut out = [i as u32; 4];
                for (slot, a) in MoveAction::MOVES.iter().enumerate() {
                    if let Some(n) = maze.offset_cell(c, *a) {
                        out[slot] = n;
                    }
                }
                out
            })
            .collect();

        let reach = maze.bfs(0);
        if let Some(lost) = reach.iter().position(|d| *d == u32::MAX) {
            return Err(Error::Disconnected {
                cell: maze.cells[lost],
                origin: maze.cells[0],
            });
        }
        Ok(maze)
    }

    fn offset_cell(&self, c: CellState, a: MoveAction) -> Option<u32> {
        let (dx, dy) = a.offset();
        let nx = c.x as i64 + dx;
        let ny = c.y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            return None;
        }
        self.index[(ny as usize) * self.width as usize + nx as usize]
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn slip_prob(&self) -> f64 {
        self.slip_prob
    }

    pub fn layout_id(&self) -> &str {
        &self.layout_id
    }

    /// Returns a copy with a different slip probability.
    pub fn with_slip(&self, slip_prob: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&slip_prob) {
            return Err(Error::Layout(format!("slip_prob {slip_prob} not in [0,1)")));
        }
        let mut m = self.clone();
        m.slip_prob = slip_prob;
        Ok(m)
    }

    pub fn is_wall(&self, x: u32, y: u32) -> bool {
        x >= self.width || y >= self.height || self.walls[(y * self.width + x) as usize]
    }

    /// Number of free cells.
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Free cells in index order.
    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn cell(&self, idx: usize) -> CellState {
        self.cells[idx]
    }

    pub fn index_of(&self, s: CellState) -> Option<usize> {
        if s.x >= self.width || s.y >= self.height {
            return None;
        }
        self.index[(s.y * self.width + s.x) as usize].map(|i| i as usize)
    }

    /// Like [`index_of`](Self::index_of) but reports an invalid state as an error.
    pub fn require(&self, s: CellState) -> Result<usize> {
        self.index_of(s).ok_or(Error::InvalidState {
            state: s,
            layout: self.layout_id.clone(),
        })
    }

    /// Deterministic successor index of `idx` under `a` (no slip).
    #[inline]
    pub fn move_index(&self, idx: usize, a: MoveAction) -> usize {
        match a {
            MoveAction::Stay => idx,
            _ => self.neighbors[idx][a.index()] as usize,
        }
    }

    /// Neighbor indices in N, E, S, W order; blocked directions map to `idx`.
    pub fn neighbors(&self, idx: usize) -> &[u32; 4] {
        &self.neighbors[idx]
    }

    /// Executes `a` from cell index `idx`, replacing it by a uniformly random
    /// action with probability `slip_prob`. Returns the successor and the
    /// action that was actually executed. Draws nothing from `rng` when
    /// `slip_prob` is zero.
    pub fn step_index<R: Rng + ?Sized>(
        &self,
        idx: usize,
        a: MoveAction,
        rng: &mut R,
    ) -> (usize, MoveAction) {
        let executed = if self.slip_prob > 0.0 && rng.gen::<f64>() < self.slip_prob {
            MoveAction::ALL[rng.gen_range(0..5)]
        } else {
            a
        };
        (self.move_index(idx, executed), executed)
    }

    /// Applies an action to a state; blocked moves and Stay leave the state unchanged.
    pub fn step<R: Rng + ?Sized>(
        &self,
        s: CellState,
        a: MoveAction,
        rng: &mut R,
    ) -> Result<CellState> {
        let idx = self.require(s)?;
        Ok(self.cells[self.step_index(idx, a, rng).0])
    }

    /// Breadth-first distances from `origin` to every free cell (`u32::MAX` if unreachable).
    pub fn bfs(&self, origin: usize) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.cells.len()];
        let mut queue = VecDeque::with_capacity(self.cells.len());
        dist[origin] = 0;
        queue.push_back(origin);
        while let Some(i) = queue.pop_front() {
            let d = dist[i] + 1;
            for &n in &self.neighbors[i] {
                let n = n as usize;
                if dist[n] == u32::MAX {
                    dist[n] = d;
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Minimum number of single-cell moves between two states.
    pub fn shortest_distance(&self, s: CellState, g: CellState) -> Result<u32> {
        let si = self.require(s)?;
        let gi = self.require(g)?;
        Ok(self.bfs(gi)[si])
    }

    /// Neighbor of `s` that strictly decreases the distance to `g`, first in N, E, S, W order.
    pub fn oracle_subgoal(&self, s: CellState, g: CellState) -> Result<CellState> {
        let si = self.require(s)?;
        let gi = self.require(g)?;
        if si == gi {
            return Err(Error::AtGoal(s));
        }
        let field = self.bfs(gi);
        Ok(self.cells[descend(self, &field, si)])
    }

    /// Renders the layout in the text format accepted by [`parse_layout`].
    pub fn render_layout(&self) -> String {
        let mut out = String::with_capacity((self.width as usize + 1) * self.height as usize);
        for y in 0..self.height {
            if y > 0 {
                out.push('\n');
            }
            for x in 0..self.width {
                out.push(if self.is_wall(x, y) { '#' } else { '.' });
            }
        }
        out
    }

    /// Largest shortest-path distance between any two free cells.
    pub fn diameter(&self) -> u32 {
        (0..self.cells.len())
            .map(|i| self.bfs(i).into_iter().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Default evaluation episode cap: twice the longest shortest path.
    pub fn episode_cap(&self) -> usize {
        (2 * self.diameter()).max(1) as usize
    }
}

/// First neighbor (N, E, S, W) of `from` whose entry in `field` is smaller.
/// `field` must be a distance field toward some goal and `from` must not be the goal.
pub fn descend(maze: &GridMaze, field: &[u32], from: usize) -> usize {
    let here = field[from];
    maze.neighbors(from)
        .iter()
        .map(|n| *n as usize)
        .find(|n| field[*n] < here)
        .expect("distance field has a descent direction away from the goal")
}

/// Parses a layout of `#` (wall) and `.` (free) rows.
pub fn parse_layout(text: &str) -> Result<GridMaze> {
    parse_layout_with_id(text, "custom")
}

/// [`parse_layout`] with an explicit layout label.
pub fn parse_layout_with_id(text: &str, layout_id: &str) -> Result<GridMaze> {
    let rows: Vec<&str> = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .collect::<Vec<_>>();
    let rows: Vec<&str> = match rows.iter().rposition(|r| !r.is_empty()) {
        Some(last) => rows[..=last].to_vec(),
        None => return Err(Error::Layout("empty layout".into())),
    };
    let width = rows[0].chars().count();
    let mut walls = Vec::with_capacity(width * rows.len());
    for (y, row) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(Error::Layout(format!(
                "row {y} has {} columns, expected {width}",
                row.chars().count()
            )));
        }
        for (x, c) in row.chars().enumerate() {
            match c {
                '#' => walls.push(true),
                '.' => walls.push(false),
                other => {
                    return Err(Error::Layout(format!(
                        "unexpected character {other:?} at ({x},{y})"
                    )))
                }
            }
        }
    }
    GridMaze::new(width as u32, rows.len() as u32, walls, 0.0, layout_id)
}

/// All-pairs shortest distances, stored goal-major.
#[derive(Clone, Debug)]
pub struct DistanceTable {
    n: usize,
    dist: Vec<u32>,
}

impl DistanceTable {
    pub fn new(maze: &GridMaze) -> Self {
        let n = maze.num_cells();
        let mut dist = Vec::with_capacity(n * n);
        for g in 0..n {
            dist.extend(maze.bfs(g));
        }
        Self { n, dist }
    }

    #[inline]
    pub fn get(&self, s: usize, g: usize) -> u32 {
        self.dist[g * self.n + s]
    }

    /// Distance field toward `g`, indexed by cell.
    pub fn field(&self, g: usize) -> &[u32] {
        &self.dist[g * self.n..(g + 1) * self.n]
    }

    pub fn num_cells(&self) -> usize {
        self.n
    }

    /// Cell reached after `k` oracle descents from `s` toward `g` (stops at `g`).
    pub fn advance(&self, maze: &GridMaze, s: usize, g: usize, k: usize) -> usize {
        let field = self.field(g);
        let mut cur = s;
        for _ in 0..k {
            if cur == g {
                break;
            }
            cur = descend(maze, field, cur);
        }
        cur
    }

    /// Oracle shortest path `s, …, g` (inclusive).
    pub fn path(&self, maze: &GridMaze, s: usize, g: usize) -> Vec<usize> {
        let field = self.field(g);
        let mut out = vec![s];
        let mut cur = s;
        while cur != g {
            cur = descend(maze, field, cur);
            out.push(cur);
        }
        out
    }
}
