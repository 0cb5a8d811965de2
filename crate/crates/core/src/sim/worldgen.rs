//! Synthetic cave-like ground truth: rooms carved out of rock, joined by narrow
//! corridors, one large void, and a few dead-end nooks.

use std::collections::VecDeque;

use rand::Rng as _;
use thiserror::Error;

use crate::seed;
use crate::world::{Label, Point, VoxelIndex, VoxelWorld};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldSpec {
    pub dims: [usize; 3],
    pub resolution: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self { dims: [27, 27, 4], resolution: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedWorld {
    pub truth: VoxelWorld,
    /// Center of the start voxel.
    pub start: Point,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldGenError {
    #[error("world needs at least 5 voxels horizontally and 3 vertically, got {0:?}")]
    TooSmall([usize; 3]),
    #[error("resolution must be positive and finite")]
    BadResolution,
    #[error("no valid world after {0} attempts")]
    GenerationFailed(usize),
}

const MAX_ATTEMPTS: usize = 32;
const FREE_FRACTION: (f64, f64) = (0.2, 0.8);
const MIN_NOOKS: usize = 2;

/// Axis-aligned inclusive voxel box.
#[derive(Clone, Copy, Debug)]
struct Block {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl Block {
    fn center(&self) -> [usize; 3] {
        [(self.lo[0] + self.hi[0]) / 2, (self.lo[1] + self.hi[1]) / 2, (self.lo[2] + self.hi[2]) / 2]
    }

}

fn carve(w: &mut VoxelWorld, b: &Block) {
    for i in b.lo[0]..=b.hi[0] {
        for j in b.lo[1]..=b.hi[1] {
            for k in b.lo[2]..=b.hi[2] {
                w.set(VoxelIndex::new(i, j, k), Label::Free);
            }
        }
    }
}

pub fn generate_world(spec: &WorldSpec, seed: u64) -> Result<GeneratedWorld, WorldGenError> {
    if spec.dims[0] < 5 || spec.dims[1] < 5 || spec.dims[2] < 3 {
        return Err(WorldGenError::TooSmall(spec.dims));
    }
    if !(spec.resolution > 0.0 && spec.resolution.is_finite()) {
        return Err(WorldGenError::BadResolution);
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seed::stream(seed, &format!("world/{attempt}"));
        let (truth, start, nooks) = if spec.dims[0] < 9 || spec.dims[1] < 9 {
            let (w, s) = single_room(spec);
            (w, s, MIN_NOOKS)
        } else {
            caves(spec, &mut rng)
        };
        if nooks >= MIN_NOOKS && accept(&truth, start) {
            return Ok(GeneratedWorld { start: truth.center(start), truth });
        }
        log::debug!("world attempt {attempt} rejected");
    }
    Err(WorldGenError::GenerationFailed(MAX_ATTEMPTS))
}

fn solid(spec: &WorldSpec) -> VoxelWorld {
    VoxelWorld::new(Point::zeros(), spec.resolution, spec.dims, Label::Occupied).expect("validated geometry")
}

fn single_room(spec: &WorldSpec) -> (VoxelWorld, VoxelIndex) {
    let [nx, ny, nz] = spec.dims;
    let mut w = solid(spec);
    let room = Block { lo: [1, 1, 0], hi: [nx - 2, ny - 2, nz - 1] };
    carve(&mut w, &room);
    let c = room.center();
    (w, VoxelIndex::new(c[0], c[1], c[2]))
}

/// Returns the world, the start voxel and the number of nooks carved.
fn caves(spec: &WorldSpec, rng: &mut seed::Rng) -> (VoxelWorld, VoxelIndex, usize) {
    let [nx, ny, nz] = spec.dims;
    let mut w = solid(spec);

    // Split the plan into a grid of blocks, one room per block.
    let bx = ((nx - 1) / 8).max(1);
    let by = ((ny - 1) / 8).max(1);
    let edges = |n: usize, b: usize| -> Vec<usize> { (0..=b).map(|q| 1 + q * (n - 2) / b).collect() };
    let (ex, ey) = (edges(nx, bx), edges(ny, by));
    let block = |a: usize, b: usize| Block { lo: [ex[a], ey[b], 0], hi: [ex[a + 1] - 1, ey[b + 1] - 1, nz - 1] };

    // The void fills two neighbouring blocks at full height.
    let horizontal = bx > 1 && (by == 1 || rng.random_bool(0.5));
    let (va, vb) = if horizontal { (rng.random_range(0..bx - 1), rng.random_range(0..by)) } else { (rng.random_range(0..bx), rng.random_range(0..by.saturating_sub(1).max(1))) };
    let second = if horizontal { (va + 1, vb) } else { (va, (vb + 1).min(by - 1)) };

    let mut rooms: Vec<Block> = Vec::new();
    let mut room_of = vec![usize::MAX; bx * by];
    {
        let (b0, b1) = (block(va, vb), block(second.0, second.1));
        let hull = Block { lo: [b0.lo[0].min(b1.lo[0]), b0.lo[1].min(b1.lo[1]), 0], hi: [b0.hi[0].max(b1.hi[0]), b0.hi[1].max(b1.hi[1]), nz - 1] };
        rooms.push(shrink(&hull, 1, rng));
        room_of[va * by + vb] = 0;
        room_of[second.0 * by + second.1] = 0;
    }
    for a in 0..bx {
        for b in 0..by {
            if room_of[a * by + b] != usize::MAX {
                continue;
            }
            let r = shrink(&block(a, b), 1, rng);
            room_of[a * by + b] = rooms.len();
            rooms.push(r);
        }
    }
    for r in &rooms {
        carve(&mut w, r);
    }

    // Random spanning tree over block adjacency, plus a loop or two.
    let mut links: Vec<(usize, usize)> = Vec::new();
    let neighbours = |c: usize| -> Vec<usize> {
        let (a, b) = (c / by, c % by);
        let mut out = Vec::new();
        if a > 0 { out.push(c - by); }
        if a + 1 < bx { out.push(c + by); }
        if b > 0 { out.push(c - 1); }
        if b + 1 < by { out.push(c + 1); }
        out
    };
    let mut in_tree = vec![false; bx * by];
    in_tree[va * by + vb] = true;
    let mut frontier: Vec<(usize, usize)> = neighbours(va * by + vb).into_iter().map(|n| (va * by + vb, n)).collect();
    while !frontier.is_empty() {
        let (from, to) = frontier.swap_remove(rng.random_range(0..frontier.len()));
        if in_tree[to] {
            continue;
        }
        in_tree[to] = true;
        links.push((from, to));
        frontier.extend(neighbours(to).into_iter().filter(|&n| !in_tree[n]).map(|n| (to, n)));
    }
    for _ in 0..2 {
        let c = rng.random_range(0..bx * by);
        let ns = neighbours(c);
        if let Some(&n) = ns.get(rng.random_range(0..ns.len().max(1))) {
            links.push((c, n));
        }
    }
    for (c, n) in links {
        let (ra, rb) = (room_of[c], room_of[n]);
        if ra != rb {
            corridor(&mut w, &rooms[ra], &rooms[rb], rng);
        }
    }

    // Dead-end nooks poking out of rooms into the rock.
    let mut nooks = 0;
    let mut tries = 0;
    while nooks < 3 && tries < 200 {
        tries += 1;
        let r = rooms[rng.random_range(0..rooms.len())];
        if nook(&mut w, &r, rng) {
            nooks += 1;
        }
    }

    let c = rooms[0].center();
    (w, VoxelIndex::new(c[0], c[1], nz / 2), nooks)
}

/// A random sub-box of `b` at least 3 voxels wide, keeping `margin` voxels of rock to
/// the block border.
fn shrink(b: &Block, margin: usize, rng: &mut seed::Rng) -> Block {
    let mut out = *b;
    for a in 0..2 {
        let span = b.hi[a] + 1 - b.lo[a];
        let room = span.saturating_sub(2 * margin).max(3).min(span);
        let size = rng.random_range(room.min(4).min(room)..=room);
        let slack = span - size;
        let lo = b.lo[a] + if slack >= 2 * margin { margin + rng.random_range(0..=slack - 2 * margin) } else { slack / 2 };
        out.lo[a] = lo;
        out.hi[a] = lo + size - 1;
    }
    out
}

/// Full-height corridor between two rooms, one or two voxels wide: straight where the
/// rooms face each other, L-shaped otherwise.
fn corridor(w: &mut VoxelWorld, a: &Block, b: &Block, rng: &mut seed::Rng) {
    let width = rng.random_range(1..=2usize);
    let ks = 0..w.dims()[2];
    let pick = |lo: usize, hi: usize, rng: &mut seed::Rng| rng.random_range(lo..=hi.saturating_sub(width - 1).max(lo));
    // Facing rows along x or y.
    let overlap = |ax: usize| (a.lo[ax].max(b.lo[ax]), a.hi[ax].min(b.hi[ax]));
    let (oy, ox) = (overlap(1), overlap(0));
    let path: Vec<[usize; 2]> = if oy.0 <= oy.1 && (a.hi[0] < b.lo[0] || b.hi[0] < a.lo[0]) {
        let j = pick(oy.0, oy.1, rng);
        vec![[a.center()[0], j], [b.center()[0], j]]
    } else if ox.0 <= ox.1 && (a.hi[1] < b.lo[1] || b.hi[1] < a.lo[1]) {
        let i = pick(ox.0, ox.1, rng);
        vec![[i, a.center()[1]], [i, b.center()[1]]]
    } else {
        let (ca, cb) = (a.center(), b.center());
        let corner = if rng.random_bool(0.5) { [cb[0], ca[1]] } else { [ca[0], cb[1]] };
        vec![[ca[0], ca[1]], corner, [cb[0], cb[1]]]
    };
    let [nx, ny, _] = w.dims();
    for leg in path.windows(2) {
        let (p, q) = (leg[0], leg[1]);
        let (i0, i1) = (p[0].min(q[0]), p[0].max(q[0]));
        let (j0, j1) = (p[1].min(q[1]), p[1].max(q[1]));
        for i in i0..=i1 {
            for j in j0..=j1 {
                for d in 0..width {
                    let (ii, jj) = if i0 == i1 { (i + d, j) } else { (i, j + d) };
                    if ii >= 1 && jj >= 1 && ii < nx - 1 && jj < ny - 1 {
                        for kk in ks.clone() {
                            w.set(VoxelIndex::new(ii, jj, kk), Label::Free);
                        }
                    }
                }
            }
        }
    }
}

/// A one-voxel-wide, full-height dead end of length 2 to 4 leaving a room wall; returns
/// false if it would break into existing free space.
fn nook(w: &mut VoxelWorld, r: &Block, rng: &mut seed::Rng) -> bool {
    let [nx, ny, _] = w.dims();
    let [_, _, nz] = w.dims();
    let len = rng.random_range(2..=4usize) as isize;
    let (start, dir): ([isize; 2], [isize; 2]) = match rng.random_range(0..4) {
        0 => ([r.lo[0] as isize - 1, rng.random_range(r.lo[1]..=r.hi[1]) as isize], [-1, 0]),
        1 => ([r.hi[0] as isize + 1, rng.random_range(r.lo[1]..=r.hi[1]) as isize], [1, 0]),
        2 => ([rng.random_range(r.lo[0]..=r.hi[0]) as isize, r.lo[1] as isize - 1], [0, -1]),
        _ => ([rng.random_range(r.lo[0]..=r.hi[0]) as isize, r.hi[1] as isize + 1], [0, 1]),
    };
    let cells: Vec<[isize; 2]> = (0..len).map(|s| [start[0] + dir[0] * s, start[1] + dir[1] * s]).collect();
    let inside = |c: &[isize; 2]| c[0] >= 1 && c[1] >= 1 && c[0] < nx as isize - 1 && c[1] < ny as isize - 1;
    // Every cell, its sides and the cell past the end must be rock in every layer, so the
    // nook stays a dead end.
    let rock = |i: isize, j: isize| {
        !w.contains_index(i, j, 0) || (0..nz).all(|k| w.label(VoxelIndex::new(i as usize, j as usize, k)) != Label::Free)
    };
    let sides = [[dir[1], dir[0]], [-dir[1], -dir[0]]];
    for c in &cells {
        if !inside(c) || !rock(c[0], c[1]) || !sides.iter().all(|d| rock(c[0] + d[0], c[1] + d[1])) {
            return false;
        }
    }
    let end = cells.last().unwrap();
    if !rock(end[0] + dir[0], end[1] + dir[1]) {
        return false;
    }
    for c in &cells {
        for k in 0..nz {
            w.set(VoxelIndex::new(c[0] as usize, c[1] as usize, k), Label::Free);
        }
    }
    true
}

/// Free voxels reachable from `start` through face-adjacent free voxels.
pub fn flood_fill(w: &VoxelWorld, start: VoxelIndex) -> Vec<bool> {
    let mut seen = vec![false; w.len()];
    if w.label(start) != Label::Free {
        return seen;
    }
    let mut queue = VecDeque::from([start]);
    seen[w.flat(start)] = true;
    while let Some(v) = queue.pop_front() {
        for d in [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]] {
            let (i, j, k) = (v.i as isize + d[0], v.j as isize + d[1], v.k as isize + d[2]);
            if !w.contains_index(i, j, k) {
                continue;
            }
            let n = VoxelIndex::new(i as usize, j as usize, k as usize);
            let f = w.flat(n);
            if !seen[f] && w.label_flat(f) == Label::Free {
                seen[f] = true;
                queue.push_back(n);
            }
        }
    }
    seen
}

fn accept(w: &VoxelWorld, start: VoxelIndex) -> bool {
    let free = w.count(Label::Free);
    let frac = free as f64 / w.len() as f64;
    let reached = flood_fill(w, start).iter().filter(|&&b| b).count();
    reached == free && (FREE_FRACTION.0..=FREE_FRACTION.1).contains(&frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_fraction(w: &VoxelWorld) -> f64 {
        w.count(Label::Free) as f64 / w.len() as f64
    }

    #[test]
    fn default_world_is_connected() {
        for s in 1..=10 {
            let g = generate_world(&WorldSpec::default(), s).unwrap();
            let start = g.truth.locate(&g.start).unwrap();
            let reach = flood_fill(&g.truth, start);
            for idx in g.truth.indices() {
                if g.truth.label(idx) == Label::Free {
                    assert!(reach[g.truth.flat(idx)], "seed {s}: {idx} unreachable");
                }
            }
            let f = free_fraction(&g.truth);
            assert!((0.2..=0.8).contains(&f), "seed {s}: free fraction {f}");
        }
    }

    #[test]
    fn degenerate_world_is_one_room() {
        let g = generate_world(&WorldSpec { dims: [5, 5, 5], resolution: 1.0 }, 1).unwrap();
        assert_eq!(g.truth.count(Label::Free), 3 * 3 * 5);
        assert!(g.truth.is_free(&g.start));
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate_world(&WorldSpec::default(), 4).unwrap();
        let b = generate_world(&WorldSpec::default(), 4).unwrap();
        assert_eq!(a, b);
        let c = generate_world(&WorldSpec::default(), 5).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn rejects_small_dims() {
        assert_eq!(generate_world(&WorldSpec { dims: [4, 9, 9], resolution: 1.0 }, 1), Err(WorldGenError::TooSmall([4, 9, 9])));
        assert_eq!(generate_world(&WorldSpec { dims: [9, 9, 2], resolution: 1.0 }, 1), Err(WorldGenError::TooSmall([9, 9, 2])));
    }

    #[test]
    fn has_dead_ends() {
        // Features are full height, so a dead end is a free column with exactly one
        // free horizontal neighbour.
        for s in 1..=10 {
            let g = generate_world(&WorldSpec::default(), s).unwrap();
            let w = &g.truth;
            let [nx, ny, _] = w.dims();
            let free = |i: isize, j: isize| w.contains_index(i, j, 0) && w.label(VoxelIndex::new(i as usize, j as usize, 0)) == Label::Free;
            let mut dead = 0;
            for i in 0..nx as isize {
                for j in 0..ny as isize {
                    if free(i, j) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().filter(|d| free(i + d.0, j + d.1)).count() == 1 {
                        dead += 1;
                    }
                }
            }
            assert!(dead >= 2, "seed {s}: {dead} dead ends");
        }
    }
}
