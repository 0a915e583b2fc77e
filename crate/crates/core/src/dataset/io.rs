use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use super::{BehaviorTag, OfflineDataset, Trajectory};
use crate::error::{Error, Result};
use crate::maze::{CellState, GridMaze, MoveAction};

const MAGIC: &str = "OTAGCRL-DATASET";
const VERSION: &str = "v1";

/// The first line of a dataset file. `extras` are optional `key=value`
/// tokens after the fixed fields (regime, seed, config hash).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub layout_id: String,
    pub width: u32,
    pub height: u32,
    pub extras: Vec<(String, String)>,
}

impl DatasetHeader {
    pub fn for_maze(maze: &GridMaze) -> Self {
        Self {
            layout_id: maze.layout_id().to_string(),
            width: maze.width(),
            height: maze.height(),
            extras: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extras.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.extras
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn render(&self) -> String {
        let mut line = format!(
            "{MAGIC} {VERSION} {} {} {}",
            self.layout_id, self.width, self.height
        );
        for (k, v) in &self.extras {
            line.push_str(&format!(" {k}={v}"));
        }
        line
    }

    fn parse(line: &str, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 5 || tokens[0] != MAGIC {
            return Err(bad(format!(
                "expected `{MAGIC} {VERSION} <layout> <w> <h>`"
            )));
        }
        if tokens[1] != VERSION {
            return Err(bad(format!("unsupported version {}", tokens[1])));
        }
        let dim = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| bad(format!("bad dimension {s:?}")))
        };
        let mut extras = Vec::new();
        for tok in &tokens[5..] {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| bad(format!("header token {tok:?} is not key=value")))?;
            extras.push((k.to_string(), v.to_string()));
        }
        Ok(Self {
            layout_id: tokens[2].to_string(),
            width: dim(tokens[3])?,
            height: dim(tokens[4])?,
            extras,
        })
    }
}

/// Writes the header and one line per trajectory. The final state of each
/// trajectory carries the placeholder action `X`.
pub fn write_dataset<W: Write>(
    dataset: &OfflineDataset,
    header: &DatasetHeader,
    mut out: W,
) -> std::io::Result<()> {
    let maze = dataset.maze();
    writeln!(out, "{}", header.render())?;
    let mut line = String::new();
    for tr in dataset.trajectories() {
        line.clear();
        for (t, s) in tr.states.iter().enumerate() {
            let c = maze.cell(*s as usize);
            let a = tr.actions.get(t).copied().unwrap_or(MoveAction::Stay);
            if t > 0 {
                line.push(',');
            }
            line.push_str(&format!("{}:{}:{}", c.x, c.y, a.code()));
        }
        let g = maze.cell(tr.intended_goal as usize);
        line.push_str(&format!("|{}:{}", g.x, g.y));
        writeln!(out, "{line}")?;
    }
    out.flush()
}

/// Saves to `path`, adding a `regime=` entry when all trajectories share one.
pub fn save_dataset(
    dataset: &OfflineDataset,
    extras: &[(String, String)],
    path: &Path,
) -> Result<()> {
    let mut header = DatasetHeader::for_maze(dataset.maze());
    if let Some(tag) = uniform_regime(dataset) {
        if !extras.iter().any(|(k, _)| k == "regime") {
            header = header.with("regime", tag);
        }
    }
    header.extras.extend(extras.iter().cloned());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(dataset, &header, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn uniform_regime(dataset: &OfflineDataset) -> Option<BehaviorTag> {
    let first = dataset.trajectories().first()?.behavior;
    dataset
        .trajectories()
        .iter()
        .all(|t| t.behavior == first)
        .then_some(first)
}

/// Loads a dataset recorded on `maze`. The header must name the same layout
/// and dimensions.
pub fn load_dataset(path: &Path, maze: Arc<GridMaze>) -> Result<(OfflineDataset, DatasetHeader)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), path, maze)
}

pub(crate) fn read_dataset<R: BufRead>(
    reader: R,
    path: &Path,
    maze: Arc<GridMaze>,
) -> Result<(OfflineDataset, DatasetHeader)> {
    let mut lines = reader.lines();
    let first = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "empty file".into(),
            })
        }
    };
    let header = DatasetHeader::parse(first.trim_end(), path)?;
    if header.layout_id != maze.layout_id()
        || header.width != maze.width()
        || header.height != maze.height()
    {
        return Err(Error::LayoutMismatch {
            expected: format!("{} {}x{}", maze.layout_id(), maze.width(), maze.height()),
            found: format!("{} {}x{}", header.layout_id, header.width, header.height),
        });
    }
    let behavior = match header.get("regime") {
        Some(r) => r.parse()?,
        None => BehaviorTag::Navigate,
    };
    let mut trajectories = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let tr = parse_trajectory(line, &maze, behavior).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg,
        })?;
        trajectories.push(tr);
    }
    Ok((OfflineDataset::new(maze, trajectories)?, header))
}

fn parse_cell(maze: &GridMaze, x: &str, y: &str) -> std::result::Result<u32, String> {
    let x: u32 = x.parse().map_err(|_| format!("bad coordinate {x:?}"))?;
    let y: u32 = y.parse().map_err(|_| format!("bad coordinate {y:?}"))?;
    maze.index_of(CellState { x, y })
        .map(|i| i as u32)
        .ok_or_else(|| format!("({x},{y}) is not a free cell"))
}

fn parse_trajectory(
    line: &str,
    maze: &GridMaze,
    behavior: BehaviorTag,
) -> std::result::Result<Trajectory, String> {
    let (body, goal) = line
        .split_once('|')
        .ok_or_else(|| "missing `|gx:gy` terminator".to_string())?;
    let (gx, gy) = goal
        .split_once(':')
        .ok_or_else(|| format!("bad goal {goal:?}"))?;
    let intended_goal = parse_cell(maze, gx, gy)?;
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for triplet in body.split(',') {
        let parts: Vec<&str> = triplet.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("bad triplet {triplet:?}"));
        }
        states.push(parse_cell(maze, parts[0], parts[1])?);
        let mut code = parts[2].chars();
        let a = match (code.next(), code.next()) {
            (Some(c), None) => MoveAction::from_code(c),
            _ => None,
        }
        .ok_or_else(|| format!("bad action {:?}", parts[2]))?;
        actions.push(a);
    }
    if states.len() < 2 {
        return Err("trajectory needs at least one transition".into());
    }
    // the final state's action is a placeholder
    actions.pop();
    let tr = Trajectory {
        states,
        actions,
        behavior,
        intended_goal,
    };
    for (t, a) in tr.actions.iter().enumerate() {
        if maze.move_index(tr.states[t] as usize, *a) as u32 != tr.states[t + 1] {
            return Err(format!("step {t} is not consistent with the maze"));
        }
    }
    Ok(tr)
}
