use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// The four cardinal moves; `y` grows downwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    North,
    East,
    South,
    West,
}

pub const NUM_ACTIONS: usize = 4;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] =
        [Action::North, Action::East, Action::South, Action::West];

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Env(format!("action index {i} out of range")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::North => (0, -1),
            Action::East => (1, 0),
            Action::South => (0, 1),
            Action::West => (-1, 0),
        }
    }

    pub fn arrow(self) -> char {
        match self {
            Action::North => '^',
            Action::East => '>',
            Action::South => 'v',
            Action::West => '<',
        }
    }
}

/// Walls on a rectangular grid. Border cells are walls and every open cell
/// reaches every other one.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridLayout {
    width: usize,
    height: usize,
    walls: Vec<bool>,
}

impl GridLayout {
    pub fn new(width: usize, height: usize, walls: Vec<bool>) -> Result<Self> {
        if width < 3 || height < 3 || walls.len() != width * height {
            return Err(Error::Layout(format!(
                "{width}x{height} grid with {} cells",
                walls.len()
            )));
        }
        let layout = GridLayout {
            width,
            height,
            walls,
        };
        for x in 0..width {
            for y in [0, height - 1] {
                if !layout.is_wall(Cell::new(x, y)) {
                    return Err(Error::Layout(format!(
                        "border cell {} is open",
                        Cell::new(x, y)
                    )));
                }
            }
        }
        for y in 0..height {
            for x in [0, width - 1] {
                if !layout.is_wall(Cell::new(x, y)) {
                    return Err(Error::Layout(format!(
                        "border cell {} is open",
                        Cell::new(x, y)
                    )));
                }
            }
        }
        let open = layout.open_cells();
        let Some(&first) = open.first() else {
            return Err(Error::Layout("no open cells".into()));
        };
        let reached = layout
            .distances(first)
            .iter()
            .filter(|d| d.is_some())
            .count();
        if reached != open.len() {
            return Err(Error::Layout(format!(
                "{} of {} open cells are unreachable",
                open.len() - reached,
                open.len()
            )));
        }
        Ok(layout)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.walls[self.index(c)]
    }

    pub fn is_open(&self, c: Cell) -> bool {
        !self.is_wall(c)
    }

    pub fn walls(&self) -> &[bool] {
        &self.walls
    }

    pub fn open_cells(&self) -> Vec<Cell> {
        (0..self.walls.len())
            .filter(|&i| !self.walls[i])
            .map(|i| self.cell(i))
            .collect()
    }

    /// Cell reached by `a` from `c`; blocked moves stay put.
    pub fn move_from(&self, c: Cell, a: Action) -> Cell {
        let (dx, dy) = a.delta();
        let nx = c.x as isize + dx;
        let ny = c.y as isize + dy;
        if nx < 0 || ny < 0 {
            return c;
        }
        let n = Cell::new(nx as usize, ny as usize);
        if self.is_open(n) {
            n
        } else {
            c
        }
    }

    /// Open cells walled in on both sides along one axis.
    pub fn doorways(&self) -> Vec<Cell> {
        self.open_cells()
            .into_iter()
            .filter(|c| {
                let side = |dx: isize, dy: isize| {
                    let x = c.x as isize + dx;
                    let y = c.y as isize + dy;
                    x < 0 || y < 0 || self.is_wall(Cell::new(x as usize, y as usize))
                };
                (side(-1, 0) && side(1, 0)) || (side(0, -1) && side(0, 1))
            })
            .collect()
    }

    /// Breadth-first step counts from `from`; `None` for walls and
    /// unreachable cells.
    pub fn distances(&self, from: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.walls.len()];
        if self.is_wall(from) {
            return dist;
        }
        let mut queue = VecDeque::from([from]);
        dist[self.index(from)] = Some(0);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)].unwrap_or(0);
            for a in Action::ALL {
                let n = self.move_from(c, a);
                let i = self.index(n);
                if dist[i].is_none() {
                    dist[i] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Connected regions of open cells once doorways are closed, as a room
    /// id per cell (`None` for walls and doorways).
    pub fn rooms(&self) -> Vec<Option<usize>> {
        let doors = self.doorways();
        let mut blocked = self.walls.clone();
        for d in &doors {
            blocked[self.index(*d)] = true;
        }
        let mut room = vec![None; self.walls.len()];
        let mut next = 0;
        for start in 0..self.walls.len() {
            if blocked[start] || room[start].is_some() {
                continue;
            }
            let mut queue = VecDeque::from([start]);
            room[start] = Some(next);
            while let Some(i) = queue.pop_front() {
                let c = self.cell(i);
                for a in Action::ALL {
                    let n = self.index(self.move_from(c, a));
                    if !blocked[n] && room[n].is_none() {
                        room[n] = Some(next);
                        queue.push_back(n);
                    }
                }
            }
            next += 1;
        }
        room
    }

    /// Copy of this layout placed at the top-left of a larger wall-filled
    /// canvas.
    pub fn padded(&self, width: usize, height: usize) -> Result<GridLayout> {
        if width < self.width || height < self.height {
            return Err(Error::Layout(format!(
                "cannot pad {}x{} into {width}x{height}",
                self.width, self.height
            )));
        }
        let mut walls = vec![true; width * height];
        for y in 0..self.height {
            for x in 0..self.width {
                walls[y * width + x] = self.walls[self.index(Cell::new(x, y))];
            }
        }
        GridLayout::new(width, height, walls)
    }

    pub fn render(&self, marks: &[(Cell, char)]) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x, y);
                let ch = marks
                    .iter()
                    .find(|(m, _)| *m == c)
                    .map(|(_, ch)| *ch)
                    .unwrap_or(if self.is_wall(c) { '#' } else { '.' });
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}
