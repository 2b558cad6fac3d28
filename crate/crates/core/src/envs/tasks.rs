use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{Cell, GridLayout};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub goal: Cell,
    pub phase: Phase,
    /// Position in the combined train-then-test task list; used for one-hot
    /// task encodings.
    pub id: usize,
}

/// A layout with disjoint train and test goal sets.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSuite {
    pub layout: GridLayout,
    pub train: Vec<TaskSpec>,
    pub test: Vec<TaskSpec>,
}

impl TaskSuite {
    pub fn new(layout: GridLayout, train: Vec<Cell>, test: Vec<Cell>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Layout("no training goals".into()));
        }
        for g in train.iter().chain(&test) {
            if layout.is_wall(*g) {
                return Err(Error::Layout(format!("goal {g} is not an open cell")));
            }
        }
        let ts: BTreeSet<_> = train.iter().collect();
        if ts.len() != train.len() {
            return Err(Error::Layout("duplicate training goal".into()));
        }
        let es: BTreeSet<_> = test.iter().collect();
        if es.len() != test.len() {
            return Err(Error::Layout("duplicate test goal".into()));
        }
        if let Some(g) = ts.intersection(&es).next() {
            return Err(Error::Layout(format!(
                "goal {g} is in both the train and test sets"
            )));
        }
        let n = train.len();
        Ok(TaskSuite {
            train: train
                .into_iter()
                .enumerate()
                .map(|(id, goal)| TaskSpec {
                    goal,
                    phase: Phase::Train,
                    id,
                })
                .collect(),
            test: test
                .into_iter()
                .enumerate()
                .map(|(i, goal)| TaskSpec {
                    goal,
                    phase: Phase::Test,
                    id: n + i,
                })
                .collect(),
            layout,
        })
    }

    pub fn task_count(&self) -> usize {
        self.train.len() + self.test.len()
    }

    /// Parses `#` wall, `.` open, `T` training goal, `E` test goal. Blank
    /// lines are skipped; all rows must have the same width.
    pub fn parse(text: &str) -> Result<Self> {
        let (layout, train, test) = parse_grid(text)?;
        TaskSuite::new(layout, train, test)
    }

    pub fn to_text(&self) -> String {
        let marks: Vec<(Cell, char)> = self
            .train
            .iter()
            .map(|t| (t.goal, 'T'))
            .chain(self.test.iter().map(|t| (t.goal, 'E')))
            .collect();
        self.layout.render(&marks)
    }
}

fn parse_grid(text: &str) -> Result<(GridLayout, Vec<Cell>, Vec<Cell>)> {
    let rows: Vec<&str> = text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .collect();
    let height = rows.len();
    let width = rows.first().map_or(0, |r| r.chars().count());
    let mut walls = Vec::with_capacity(width * height);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (y, row) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(Error::Layout(format!(
                "row {y} has width {} instead of {width}",
                row.chars().count()
            )));
        }
        for (x, ch) in row.chars().enumerate() {
            walls.push(match ch {
                '#' => true,
                '.' => false,
                'T' => {
                    train.push(Cell::new(x, y));
                    false
                }
                'E' => {
                    test.push(Cell::new(x, y));
                    false
                }
                other => {
                    return Err(Error::Layout(format!(
                        "unknown character `{other}` at ({x}, {y})"
                    )))
                }
            });
        }
    }
    Ok((GridLayout::new(width, height, walls)?, train, test))
}

const FOUR_ROOMS: &str = "\
#############
#.....#.....#
#.....#.....#
#...........#
#.....#.....#
#.....#.....#
##.####.....#
#.....###.###
#.....#.....#
#.....#.....#
#...........#
#.....#.....#
#############
";

/// Goal sets for [`four_rooms`]; `None` keeps the default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalConfig {
    #[serde(default)]
    pub train: Option<Vec<Cell>>,
    #[serde(default)]
    pub test: Option<Vec<Cell>>,
}

/// Training goals: corner clusters of the upper-left, upper-right and
/// lower-right rooms.
pub fn default_train_goals() -> Vec<Cell> {
    [
        (1, 1),
        (2, 1),
        (1, 2),
        (2, 2),
        (10, 1),
        (11, 1),
        (10, 2),
        (11, 2),
        (10, 10),
        (11, 10),
        (10, 11),
        (11, 11),
    ]
    .into_iter()
    .map(|(x, y)| Cell::new(x, y))
    .collect()
}

/// Test goals: three in the lower-left room and one held-out cell in each of
/// the others.
pub fn default_test_goals() -> Vec<Cell> {
    [(2, 10), (4, 8), (1, 11), (4, 4), (9, 4), (8, 9)]
        .into_iter()
        .map(|(x, y)| Cell::new(x, y))
        .collect()
}

pub fn four_rooms_layout() -> GridLayout {
    parse_grid(FOUR_ROOMS).expect("built-in layout is valid").0
}

/// The 13x13 four-rooms domain.
pub fn four_rooms(goals: &GoalConfig) -> Result<TaskSuite> {
    TaskSuite::new(
        four_rooms_layout(),
        goals.train.clone().unwrap_or_else(default_train_goals),
        goals.test.clone().unwrap_or_else(default_test_goals),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Simple,
    Hard,
}

/// Canvas size shared by both difficulties so one network fits both.
pub const PROCEDURAL_SIZE: usize = 21;
const SIMPLE_SIZE: usize = 13;

/// One generated layout with a goal cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ProceduralInstance {
    pub layout: GridLayout,
    pub goal: Cell,
}

/// Simple: up to four rooms in a 13x13 area (padded with walls to the
/// shared canvas). Hard: a 21x21 maze with a few loops.
pub fn procedural_rooms(difficulty: Difficulty, seed: u64) -> Result<ProceduralInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = match difficulty {
        Difficulty::Simple => simple_rooms(&mut rng)?.padded(PROCEDURAL_SIZE, PROCEDURAL_SIZE)?,
        Difficulty::Hard => maze(&mut rng, PROCEDURAL_SIZE)?,
    };
    let open = layout.open_cells();
    let goal = *open
        .choose(&mut rng)
        .ok_or_else(|| Error::Layout("generated layout has no open cells".into()))?;
    if layout
        .distances(goal)
        .iter()
        .filter(|d| d.is_some())
        .count()
        != open.len()
    {
        return Err(Error::Layout("generated goal is unreachable".into()));
    }
    Ok(ProceduralInstance { layout, goal })
}

fn simple_rooms(rng: &mut ChaCha8Rng) -> Result<GridLayout> {
    let n = SIMPLE_SIZE;
    let mut walls = vec![false; n * n];
    for i in 0..n {
        walls[i] = true;
        walls[(n - 1) * n + i] = true;
        walls[i * n] = true;
        walls[i * n + n - 1] = true;
    }
    let split_x = rng.gen_bool(0.75).then(|| rng.gen_range(4..n - 4));
    let split_y = rng.gen_bool(0.75).then(|| rng.gen_range(4..n - 4));
    if let Some(sx) = split_x {
        for y in 1..n - 1 {
            walls[y * n + sx] = true;
        }
    }
    if let Some(sy) = split_y {
        for x in 1..n - 1 {
            walls[sy * n + x] = true;
        }
    }
    // One door in every wall segment keeps all rooms connected.
    let mut door = |walls: &mut Vec<bool>, lo: usize, hi: usize, place: &dyn Fn(usize) -> usize| {
        if hi > lo {
            let k = rng.gen_range(lo..hi);
            walls[place(k)] = false;
        }
    };
    if let Some(sx) = split_x {
        let sy = split_y.unwrap_or(n - 1);
        door(&mut walls, 1, sy.min(n - 1), &|y| y * n + sx);
        if split_y.is_some() {
            door(&mut walls, sy + 1, n - 1, &|y| y * n + sx);
        }
    }
    if let Some(sy) = split_y {
        let sx = split_x.unwrap_or(n - 1);
        door(&mut walls, 1, sx.min(n - 1), &|x| sy * n + x);
        if split_x.is_some() {
            door(&mut walls, sx + 1, n - 1, &|x| sy * n + x);
        }
    }
    GridLayout::new(n, n, walls)
}

fn maze(rng: &mut ChaCha8Rng, size: usize) -> Result<GridLayout> {
    let cells = (size - 1) / 2;
    let mut walls = vec![true; size * size];
    let at = |cx: usize, cy: usize| (2 * cy + 1) * size + 2 * cx + 1;
    let mut visited = vec![false; cells * cells];
    let mut stack = vec![(rng.gen_range(0..cells), rng.gen_range(0..cells))];
    visited[stack[0].1 * cells + stack[0].0] = true;
    walls[at(stack[0].0, stack[0].1)] = false;
    while let Some(&(cx, cy)) = stack.last() {
        let mut next = Vec::with_capacity(4);
        if cx > 0 && !visited[cy * cells + cx - 1] {
            next.push((cx - 1, cy));
        }
        if cx + 1 < cells && !visited[cy * cells + cx + 1] {
            next.push((cx + 1, cy));
        }
        if cy > 0 && !visited[(cy - 1) * cells + cx] {
            next.push((cx, cy - 1));
        }
        if cy + 1 < cells && !visited[(cy + 1) * cells + cx] {
            next.push((cx, cy + 1));
        }
        match next.choose(rng) {
            Some(&(nx, ny)) => {
                visited[ny * cells + nx] = true;
                walls[at(nx, ny)] = false;
                walls[(cy + ny + 1) * size + cx + nx + 1] = false;
                stack.push((nx, ny));
            }
            None => {
                stack.pop();
            }
        }
    }
    // Knock out a few interior walls to create loops.
    for _ in 0..cells {
        let x = rng.gen_range(1..size - 1);
        let y = rng.gen_range(1..size - 1);
        if (x + y) % 2 == 1 {
            walls[y * size + x] = false;
        }
    }
    GridLayout::new(size, size, walls)
}
