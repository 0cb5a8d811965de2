//! Dense 3D voxel map with Free / Occupied / Unknown labels.
//!
//! Voxel `(i, j, k)` covers the half-open box `(origin + idx·res, origin + (idx+1)·res]`
//! along each axis, except that the lower faces of the grid volume belong to index 0.
//! A point exactly on an interior face therefore resolves to the lower-index voxel.
//!
//! Straight-line queries use an exact grid walk (Amanatides & Woo style) rather than
//! point sampling, so thin corner clips are never tunnelled through.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use thiserror::Error;

pub type Point = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Free,
    Occupied,
    Unknown,
}

/// Result of a point query; `OutOfBounds` is a value, not a fault.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoxelState {
    Free,
    Occupied,
    Unknown,
    OutOfBounds,
}

impl From<Label> for VoxelState {
    fn from(l: Label) -> Self {
        match l {
            Label::Free => VoxelState::Free,
            Label::Occupied => VoxelState::Occupied,
            Label::Unknown => VoxelState::Unknown,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl VoxelIndex {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }
}

impl fmt::Display for VoxelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.i, self.j, self.k)
    }
}

/// A voxel index together with its center position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelRef {
    pub index: VoxelIndex,
    pub center: Point,
}

/// Which labels stop a straight-line query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSet {
    pub occupied: bool,
    pub unknown: bool,
}

impl BlockSet {
    pub const OCCUPIED: BlockSet = BlockSet { occupied: true, unknown: false };
    /// The binary grid view: Occupied and Unknown are both obstacles.
    pub const OCCUPIED_OR_UNKNOWN: BlockSet = BlockSet { occupied: true, unknown: true };

    #[inline]
    pub fn blocks(&self, label: Label) -> bool {
        match label {
            Label::Free => false,
            Label::Occupied => self.occupied,
            Label::Unknown => self.unknown,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("grid dimensions and resolution must be strictly positive")]
    InvalidGeometry,
    #[error("point ({x}, {y}, {z}) lies outside the grid", x = .0.x, y = .0.y, z = .0.z)]
    OutOfBounds(Point),
    #[error("world file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelWorld {
    origin: Point,
    resolution: f64,
    dims: [usize; 3],
    /// Flat storage in lexicographic `(i, j, k)` order.
    labels: Vec<Label>,
}

impl VoxelWorld {
    /// A grid with every voxel set to `fill`.
    pub fn new(origin: Point, resolution: f64, dims: [usize; 3], fill: Label) -> Result<Self, WorldError> {
        if !(resolution > 0.0 && resolution.is_finite()) || dims.contains(&0) {
            return Err(WorldError::InvalidGeometry);
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(WorldError::InvalidGeometry);
        }
        Ok(Self { origin, resolution, dims, labels: vec![fill; dims[0] * dims[1] * dims[2]] })
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Upper corner of the grid volume.
    pub fn max_corner(&self) -> Point {
        self.origin
            + Point::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.resolution
    }

    #[inline]
    pub fn flat(&self, idx: VoxelIndex) -> usize {
        (idx.i * self.dims[1] + idx.j) * self.dims[2] + idx.k
    }

    #[inline]
    pub fn unflat(&self, n: usize) -> VoxelIndex {
        let k = n % self.dims[2];
        let rest = n / self.dims[2];
        VoxelIndex::new(rest / self.dims[1], rest % self.dims[1], k)
    }

    #[inline]
    pub fn contains_index(&self, i: isize, j: isize, k: isize) -> bool {
        i >= 0
            && j >= 0
            && k >= 0
            && (i as usize) < self.dims[0]
            && (j as usize) < self.dims[1]
            && (k as usize) < self.dims[2]
    }

    #[inline]
    pub fn label(&self, idx: VoxelIndex) -> Label {
        self.labels[self.flat(idx)]
    }

    #[inline]
    pub fn label_flat(&self, n: usize) -> Label {
        self.labels[n]
    }

    /// Single-writer update; the last write wins.
    #[inline]
    pub fn set(&mut self, idx: VoxelIndex, label: Label) {
        let n = self.flat(idx);
        self.labels[n] = label;
    }

    pub fn center(&self, idx: VoxelIndex) -> Point {
        self.origin
            + Point::new(idx.i as f64 + 0.5, idx.j as f64 + 0.5, idx.k as f64 + 0.5) * self.resolution
    }

    pub fn voxel_ref(&self, idx: VoxelIndex) -> VoxelRef {
        VoxelRef { index: idx, center: self.center(idx) }
    }

    /// Continuous grid coordinates (voxel units, relative to the origin).
    #[inline]
    fn grid_coords(&self, p: &Point) -> Point {
        (p - self.origin) / self.resolution
    }

    #[inline]
    fn axis_index(u: f64, n: usize) -> Option<usize> {
        if !(u >= 0.0 && u <= n as f64) {
            return None;
        }
        // Faces resolve to the lower-index voxel; the grid's lower face maps to 0.
        let c = u.ceil() as isize - 1;
        Some(c.max(0) as usize)
    }

    /// Index of the voxel containing `p`, or `None` outside the grid volume.
    pub fn locate(&self, p: &Point) -> Option<VoxelIndex> {
        let u = self.grid_coords(p);
        Some(VoxelIndex::new(
            Self::axis_index(u.x, self.dims[0])?,
            Self::axis_index(u.y, self.dims[1])?,
            Self::axis_index(u.z, self.dims[2])?,
        ))
    }

    pub fn in_bounds(&self, p: &Point) -> bool {
        self.locate(p).is_some()
    }

    pub fn voxel_state(&self, p: &Point) -> VoxelState {
        match self.locate(p) {
            Some(idx) => self.label(idx).into(),
            None => VoxelState::OutOfBounds,
        }
    }

    pub fn is_free(&self, p: &Point) -> bool {
        self.voxel_state(p) == VoxelState::Free
    }

    /// Visit every voxel the segment `a → b` intersects, in order from `a`.
    ///
    /// When the segment crosses an edge or corner exactly, all voxels sharing that
    /// edge or corner are visited. The visitor returns `false` to stop early; the
    /// function then returns `Ok(false)`.
    pub fn walk<F>(&self, a: &Point, b: &Point, mut visit: F) -> Result<bool, WorldError>
    where
        F: FnMut(VoxelIndex) -> bool,
    {
        let start = self.locate(a).ok_or(WorldError::OutOfBounds(*a))?;
        let end = self.locate(b).ok_or(WorldError::OutOfBounds(*b))?;
        let ua = self.grid_coords(a);
        let ub = self.grid_coords(b);

        let mut cur = [start.i as isize, start.j as isize, start.k as isize];
        let target = [end.i as isize, end.j as isize, end.k as isize];
        let mut step = [0isize; 3];
        let mut remaining = [0usize; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for ax in 0..3 {
            let d = ub[ax] - ua[ax];
            let diff = target[ax] - cur[ax];
            remaining[ax] = diff.unsigned_abs();
            if diff == 0 {
                continue;
            }
            step[ax] = diff.signum();
            // Moving up we leave cell c at coordinate c+1; moving down at c.
            let boundary = if step[ax] > 0 { cur[ax] + 1 } else { cur[ax] } as f64;
            if d != 0.0 {
                t_max[ax] = ((boundary - ua[ax]) / d).max(0.0);
                t_delta[ax] = (1.0 / d).abs();
            } else {
                t_max[ax] = 0.0;
            }
        }

        let as_index = |c: [isize; 3]| VoxelIndex::new(c[0] as usize, c[1] as usize, c[2] as usize);
        if !visit(as_index(cur)) {
            return Ok(false);
        }

        const TIE_EPS: f64 = 1e-12;
        while remaining.iter().any(|&r| r > 0) {
            let mut t_min = f64::INFINITY;
            for ax in 0..3 {
                if remaining[ax] > 0 && t_max[ax] < t_min {
                    t_min = t_max[ax];
                }
            }
            let mut tied = [false; 3];
            let mut n_tied = 0;
            for ax in 0..3 {
                if remaining[ax] > 0 && t_max[ax] <= t_min + TIE_EPS {
                    tied[ax] = true;
                    n_tied += 1;
                }
            }
            if n_tied > 1 {
                // Edge or corner crossing: visit every intermediate cell sharing it.
                let axes: Vec<usize> = (0..3).filter(|&ax| tied[ax]).collect();
                for mask in 1..(1u32 << axes.len()) - 1 {
                    let mut c = cur;
                    for (bit, &ax) in axes.iter().enumerate() {
                        if mask & (1 << bit) != 0 {
                            c[ax] += step[ax];
                        }
                    }
                    if !visit(as_index(c)) {
                        return Ok(false);
                    }
                }
            }
            for ax in 0..3 {
                if tied[ax] {
                    cur[ax] += step[ax];
                    remaining[ax] -= 1;
                    t_max[ax] += t_delta[ax];
                }
            }
            if !visit(as_index(cur)) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// True iff the segment traverses no voxel whose label is in `blocking`.
    pub fn segment_free(&self, a: &Point, b: &Point, blocking: BlockSet) -> Result<bool, WorldError> {
        self.walk(a, b, |idx| !blocking.blocks(self.label(idx)))
    }

    /// Like [`segment_free`](Self::segment_free) but `except` never blocks.
    pub fn segment_free_except(
        &self,
        a: &Point,
        b: &Point,
        blocking: BlockSet,
        except: VoxelIndex,
    ) -> Result<bool, WorldError> {
        self.walk(a, b, |idx| idx == except || !blocking.blocks(self.label(idx)))
    }

    pub fn indices(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        (0..self.labels.len()).map(|n| self.unflat(n))
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// All Unknown voxels in lexicographic index order.
    pub fn unknown_voxels(&self) -> Vec<VoxelRef> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == Label::Unknown)
            .map(|(n, _)| self.voxel_ref(self.unflat(n)))
            .collect()
    }

    pub fn occupied_voxels(&self) -> Vec<VoxelRef> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == Label::Occupied)
            .map(|(n, _)| self.voxel_ref(self.unflat(n)))
            .collect()
    }

    /// Inclusive index range of voxels within `radius` (box) of `p` along each axis,
    /// clamped to the grid.
    pub fn index_box(&self, p: &Point, radius: Point) -> ([usize; 3], [usize; 3]) {
        let lo = self.grid_coords(&(p - radius));
        let hi = self.grid_coords(&(p + radius));
        let mut min = [0usize; 3];
        let mut max = [0usize; 3];
        for ax in 0..3 {
            let n = self.dims[ax] as f64;
            min[ax] = lo[ax].floor().clamp(0.0, n - 1.0) as usize;
            max[ax] = hi[ax].floor().clamp(0.0, n - 1.0) as usize;
        }
        (min, max)
    }

    /// Parse the line-oriented world format.
    ///
    /// ```text
    /// dims nx ny nz
    /// res g_res
    /// origin x y z
    /// occ i j k
    /// unk i j k
    /// ```
    ///
    /// Voxels not listed are Free. Blank lines and `#` comments are ignored.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, WorldError> {
        let mut dims: Option<[usize; 3]> = None;
        let mut res: Option<f64> = None;
        let mut origin = Point::zeros();
        let mut cells: Vec<(usize, Label, [usize; 3])> = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let perr = |msg: &str| WorldError::Parse { line: lineno, msg: msg.to_string() };
            let text = line.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let mut parts = text.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            match key {
                "dims" | "occ" | "unk" | "free" => {
                    if rest.len() != 3 {
                        return Err(perr("expected three integers"));
                    }
                    let mut v = [0usize; 3];
                    for (slot, s) in v.iter_mut().zip(&rest) {
                        *slot = s.parse().map_err(|_| perr("invalid integer"))?;
                    }
                    match key {
                        "dims" => dims = Some(v),
                        "occ" => cells.push((lineno, Label::Occupied, v)),
                        "unk" => cells.push((lineno, Label::Unknown, v)),
                        _ => cells.push((lineno, Label::Free, v)),
                    }
                }
                "res" => {
                    if rest.len() != 1 {
                        return Err(perr("expected one number"));
                    }
                    res = Some(rest[0].parse().map_err(|_| perr("invalid number"))?);
                }
                "origin" => {
                    if rest.len() != 3 {
                        return Err(perr("expected three numbers"));
                    }
                    for (ax, s) in rest.iter().enumerate() {
                        origin[ax] = s.parse().map_err(|_| perr("invalid number"))?;
                    }
                }
                other => return Err(perr(&format!("unknown directive `{other}`"))),
            }
        }
        let dims = dims.ok_or(WorldError::Parse { line: 0, msg: "missing `dims`".into() })?;
        let res = res.ok_or(WorldError::Parse { line: 0, msg: "missing `res`".into() })?;
        let mut world = VoxelWorld::new(origin, res, dims, Label::Free)?;
        for (lineno, label, [i, j, k]) in cells {
            if !world.contains_index(i as isize, j as isize, k as isize) {
                return Err(WorldError::Parse { line: lineno, msg: "voxel index outside dims".into() });
            }
            world.set(VoxelIndex::new(i, j, k), label);
        }
        Ok(world)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), WorldError> {
        writeln!(w, "dims {} {} {}", self.dims[0], self.dims[1], self.dims[2])?;
        writeln!(w, "res {}", self.resolution)?;
        writeln!(w, "origin {} {} {}", self.origin.x, self.origin.y, self.origin.z)?;
        for (n, &l) in self.labels.iter().enumerate() {
            let tag = match l {
                Label::Free => continue,
                Label::Occupied => "occ",
                Label::Unknown => "unk",
            };
            let idx = self.unflat(n);
            writeln!(w, "{tag} {} {} {}", idx.i, idx.j, idx.k)?;
        }
        Ok(())
    }
}
