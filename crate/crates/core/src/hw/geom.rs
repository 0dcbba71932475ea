use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// PE/router position. `x` grows east, `y` grows north.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub x: u32,
    pub y: u32,
}

impl Coord {
    pub const fn new(x: u32, y: u32) -> Self {
        Coord { x, y }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

impl FromStr for Coord {
    type Err = String;

    /// Accepts `x,y` or `(x,y)`.
    fn from_str(s: &str) -> Result<Self, String> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (x, y) = inner
            .split_once(',')
            .ok_or_else(|| format!("coordinate {s:?} is not `x,y`"))?;
        let p = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("coordinate {s:?}: {e}"));
        Ok(Coord::new(p(x)?, p(y)?))
    }
}

/// Mesh size, written `XxY` (columns along x, rows along y).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MeshDims {
    pub x: u32,
    pub y: u32,
}

impl MeshDims {
    pub const fn new(x: u32, y: u32) -> Self {
        MeshDims { x, y }
    }

    pub fn nodes(&self) -> u32 {
        self.x * self.y
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x < self.x && c.y < self.y
    }

    /// Scan order index: `(0,0), (0,1), .., (1,0), ..`.
    pub fn scan_index(&self, c: Coord) -> usize {
        (c.x * self.y + c.y) as usize
    }

    pub fn coord(&self, index: usize) -> Coord {
        let i = index as u32;
        Coord::new(i / self.y, i % self.y)
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.nodes() as usize).map(|i| self.coord(i))
    }

    /// Longest XY route in hops.
    pub fn diameter(&self) -> u32 {
        self.x.saturating_sub(1) + self.y.saturating_sub(1)
    }

    /// Bidirectional links between neighbouring routers, counted per direction.
    pub fn directed_links(&self) -> u32 {
        2 * (self.x.saturating_sub(1) * self.y + self.y.saturating_sub(1) * self.x)
    }
}

impl fmt::Display for MeshDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.x, self.y)
    }
}

impl FromStr for MeshDims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (x, y) = s
            .trim()
            .split_once('x')
            .ok_or_else(|| format!("mesh dims {s:?} are not `XxY`"))?;
        let p = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("mesh dims {s:?}: {e}"));
        let d = MeshDims::new(p(x)?, p(y)?);
        if d.x == 0 || d.y == 0 {
            return Err(format!("mesh dims {s:?} must be positive"));
        }
        Ok(d)
    }
}

/// Router port. Indices 0..4 are N, E, S, W, Local.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dir {
    N,
    E,
    S,
    W,
    Local,
}

impl Dir {
    pub const ALL: [Dir; 5] = [Dir::N, Dir::E, Dir::S, Dir::W, Dir::Local];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Dir {
        match self {
            Dir::N => Dir::S,
            Dir::S => Dir::N,
            Dir::E => Dir::W,
            Dir::W => Dir::E,
            Dir::Local => Dir::Local,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dir::N => "north",
            Dir::E => "east",
            Dir::S => "south",
            Dir::W => "west",
            Dir::Local => "local",
        }
    }

    /// Neighbour in this direction, if it lies in the mesh.
    pub fn step(self, c: Coord, mesh: MeshDims) -> Option<Coord> {
        let n = match self {
            Dir::N => Coord::new(c.x, c.y.checked_add(1)?),
            Dir::S => Coord::new(c.x, c.y.checked_sub(1)?),
            Dir::E => Coord::new(c.x.checked_add(1)?, c.y),
            Dir::W => Coord::new(c.x.checked_sub(1)?, c.y),
            Dir::Local => return None,
        };
        mesh.contains(n).then_some(n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("coordinate {coord} lies outside the {mesh} mesh")]
pub struct OutOfMesh {
    pub coord: Coord,
    pub mesh: MeshDims,
}

/// Next output port at `here` for a packet headed to `dst` under XY routing.
pub fn xy_next(here: Coord, dst: Coord) -> Dir {
    if dst.x > here.x {
        Dir::E
    } else if dst.x < here.x {
        Dir::W
    } else if dst.y > here.y {
        Dir::N
    } else if dst.y < here.y {
        Dir::S
    } else {
        Dir::Local
    }
}

/// Dimension-ordered route: every X hop, then every Y hop.
pub fn route_xy(src: Coord, dst: Coord, mesh: MeshDims) -> Result<Vec<Dir>, OutOfMesh> {
    for c in [src, dst] {
        if !mesh.contains(c) {
            return Err(OutOfMesh { coord: c, mesh });
        }
    }
    let mut hops = Vec::new();
    let mut here = src;
    loop {
        let d = xy_next(here, dst);
        if d == Dir::Local {
            return Ok(hops);
        }
        hops.push(d);
        here = d.step(here, mesh).expect("XY step stays inside the mesh");
    }
}
