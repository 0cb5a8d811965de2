//! Multi-goal RRT* over the binary occupancy view of a [`VoxelWorld`].
//!
//! One tree is grown from the vehicle position for a fixed iteration budget. Every
//! goal is then matched against the finished tree, the cheapest path to each goal
//! is extracted, shortcut, and resampled at a fixed spacing.

use rand::Rng as _;
use thiserror::Error;

use crate::seed::Rng;
use crate::world::{BlockSet, Point, VoxelWorld};

/// Obstacles for the tree: anything not known to be free.
const TREE_BLOCKING: BlockSet = BlockSet::OCCUPIED_OR_UNKNOWN;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RrtError {
    #[error("start position is not in a free voxel")]
    StartBlocked,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeNode {
    pub position: Point,
    pub parent: Option<usize>,
    /// Path length from the root.
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RrtParams {
    pub iterations: usize,
    /// A node within this distance of a goal (with a clear segment) reaches it.
    pub goal_radius: f64,
    /// Maximum edge length when steering towards a sample.
    pub step_max: f64,
    /// Rewiring radius scale; the radius is `min(gamma·(ln n / n)^(1/3), step_max)`.
    pub gamma: f64,
}

impl RrtParams {
    /// Defaults scaled to the grid: goal radius one voxel, steering step two voxels,
    /// and a rewiring radius that starts near three voxels before the cap applies.
    pub fn for_resolution(resolution: f64, iterations: usize) -> Self {
        let gamma = 3.0 * resolution / (2f64.ln() / 2.0).cbrt();
        Self { iterations, goal_radius: resolution, step_max: 2.0 * resolution, gamma }
    }

    pub fn rewire_radius(&self, n: usize) -> f64 {
        let n = n.max(2) as f64;
        (self.gamma * (n.ln() / n).cbrt()).min(self.step_max)
    }
}

/// Uniform bucket grid over the world volume for neighbour queries.
#[derive(Clone, Debug)]
struct CellGrid {
    origin: Point,
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<u32>>,
}

impl CellGrid {
    fn new(world: &VoxelWorld, cell: f64) -> Self {
        let ext = world.max_corner() - world.origin();
        let dims = [0, 1, 2].map(|ax| ((ext[ax] / cell).ceil() as usize).max(1));
        Self { origin: world.origin(), cell, dims, buckets: vec![Vec::new(); dims[0] * dims[1] * dims[2]] }
    }

    fn cell_of(&self, p: &Point) -> [isize; 3] {
        [0, 1, 2].map(|ax| {
            let c = ((p[ax] - self.origin[ax]) / self.cell).floor() as isize;
            c.clamp(0, self.dims[ax] as isize - 1)
        })
    }

    fn bucket(&self, c: [isize; 3]) -> Option<&Vec<u32>> {
        if (0..3).any(|ax| c[ax] < 0 || c[ax] >= self.dims[ax] as isize) {
            return None;
        }
        let [i, j, k] = c.map(|v| v as usize);
        Some(&self.buckets[(i * self.dims[1] + j) * self.dims[2] + k])
    }

    fn insert(&mut self, p: &Point, id: u32) {
        let [i, j, k] = self.cell_of(p).map(|v| v as usize);
        self.buckets[(i * self.dims[1] + j) * self.dims[2] + k].push(id);
    }

    fn nearest(&self, p: &Point, nodes: &[TreeNode]) -> Option<usize> {
        let c = self.cell_of(p);
        let max_r = *self.dims.iter().max().unwrap() as isize;
        let mut best: Option<(f64, usize)> = None;
        for r in 0..=max_r {
            for di in -r..=r {
                for dj in -r..=r {
                    for dk in -r..=r {
                        if di.abs().max(dj.abs()).max(dk.abs()) != r {
                            continue;
                        }
                        let Some(b) = self.bucket([c[0] + di, c[1] + dj, c[2] + dk]) else { continue };
                        for &id in b {
                            let id = id as usize;
                            let d = (nodes[id].position - p).norm_squared();
                            if best.is_none_or(|(bd, bi)| d < bd || (d == bd && id < bi)) {
                                best = Some((d, id));
                            }
                        }
                    }
                }
            }
            if let Some((bd, _)) = best {
                let reach = r as f64 * self.cell;
                if bd.sqrt() <= reach {
                    break;
                }
            }
        }
        best.map(|(_, id)| id)
    }

    /// Ids within `radius` of `p`, ascending.
    fn within(&self, p: &Point, radius: f64, nodes: &[TreeNode], out: &mut Vec<usize>) {
        out.clear();
        let lo = self.cell_of(&(p - Point::repeat(radius)));
        let hi = self.cell_of(&(p + Point::repeat(radius)));
        let r2 = radius * radius;
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    if let Some(b) = self.bucket([i, j, k]) {
                        out.extend(
                            b.iter().map(|&id| id as usize).filter(|&id| (nodes[id].position - p).norm_squared() <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

#[derive(Clone, Debug)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
    grid: CellGrid,
}

impl Tree {
    fn new(world: &VoxelWorld, root: Point, cell: f64) -> Self {
        let mut grid = CellGrid::new(world, cell);
        grid.insert(&root, 0);
        Self { nodes: vec![TreeNode { position: root, parent: None, cost: 0.0 }], children: vec![Vec::new()], grid }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn add(&mut self, position: Point, parent: usize) -> usize {
        let id = self.nodes.len();
        let cost = self.nodes[parent].cost + (position - self.nodes[parent].position).norm();
        self.nodes.push(TreeNode { position, parent: Some(parent), cost });
        self.children.push(Vec::new());
        self.children[parent].push(id);
        self.grid.insert(&position, id as u32);
        id
    }

    fn reparent(&mut self, id: usize, new_parent: usize) {
        if let Some(old) = self.nodes[id].parent {
            self.children[old].retain(|&c| c != id);
        }
        self.children[new_parent].push(id);
        self.nodes[id].parent = Some(new_parent);
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            let p = self.nodes[n].parent.expect("non-root");
            self.nodes[n].cost = self.nodes[p].cost + (self.nodes[n].position - self.nodes[p].position).norm();
            stack.extend(self.children[n].iter().copied());
        }
    }

    /// Node positions from the root to `id`.
    pub fn chain_to(&self, id: usize) -> Vec<Point> {
        let mut out = Vec::new();
        let mut cur = Some(id);
        while let Some(n) = cur {
            out.push(self.nodes[n].position);
            cur = self.nodes[n].parent;
        }
        out.reverse();
        out
    }
}

#[derive(Clone, Debug)]
pub struct GrowResult {
    pub tree: Tree,
    /// Per goal: the cheapest node that reaches it, if any.
    pub best: Vec<Option<usize>>,
}

impl GrowResult {
    /// Root-to-goal vertex chain for goal `g`, with the goal itself as last vertex.
    pub fn goal_chain(&self, g: usize, goal: &Point) -> Option<Vec<Point>> {
        let id = self.best[g]?;
        let mut chain = self.tree.chain_to(id);
        if chain.last() != Some(goal) {
            chain.push(*goal);
        }
        Some(chain)
    }
}

/// Grow one RRT* tree from `start` and match every goal against it.
pub fn grow_tree(
    world: &VoxelWorld,
    start: Point,
    goals: &[Point],
    params: &RrtParams,
    rng: &mut Rng,
) -> Result<GrowResult, RrtError> {
    if !world.is_free(&start) {
        return Err(RrtError::StartBlocked);
    }
    let free = |a: &Point, b: &Point| world.segment_free(a, b, TREE_BLOCKING).unwrap_or(false);
    let lo = world.origin();
    let extent = world.max_corner() - lo;
    let mut tree = Tree::new(world, start, params.step_max.max(params.goal_radius));
    let mut near = Vec::new();

    for _ in 0..params.iterations {
        let sample = lo + Point::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()).component_mul(&extent);
        if !world.is_free(&sample) {
            continue;
        }
        let nearest = tree.grid.nearest(&sample, &tree.nodes).expect("tree has a root");
        let from = tree.nodes[nearest].position;
        let d = (sample - from).norm();
        if d <= 1e-9 {
            continue;
        }
        let new = if d > params.step_max { from + (sample - from) * (params.step_max / d) } else { sample };
        if !world.is_free(&new) || !free(&from, &new) {
            continue;
        }

        let radius = params.rewire_radius(tree.len());
        tree.grid.within(&new, radius, &tree.nodes, &mut near);
        if !near.contains(&nearest) {
            near.push(nearest);
        }
        // Choose the cheapest collision-free parent.
        let mut ranked: Vec<(f64, usize)> =
            near.iter().map(|&id| (tree.nodes[id].cost + (tree.nodes[id].position - new).norm(), id)).collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let parent = ranked
            .iter()
            .map(|&(_, id)| id)
            .find(|&id| id == nearest || free(&tree.nodes[id].position, &new))
            .unwrap_or(nearest);
        let new_id = tree.add(new, parent);

        // Rewire neighbours through the new node when that shortens them.
        let new_cost = tree.nodes[new_id].cost;
        for &id in &near {
            if id == parent || id == 0 {
                continue;
            }
            let via = new_cost + (tree.nodes[id].position - new).norm();
            if via + 1e-12 < tree.nodes[id].cost && !is_ancestor(&tree, id, new_id) && free(&new, &tree.nodes[id].position)
            {
                tree.reparent(id, new_id);
            }
        }
    }

    let mut best = Vec::with_capacity(goals.len());
    for goal in goals {
        tree.grid.within(goal, params.goal_radius, &tree.nodes, &mut near);
        let mut pick: Option<usize> = None;
        for &id in &near {
            if pick.is_some_and(|p| tree.nodes[p].cost <= tree.nodes[id].cost) {
                continue;
            }
            if world.is_free(goal) && free(&tree.nodes[id].position, goal) {
                pick = Some(id);
            }
        }
        best.push(pick);
    }
    Ok(GrowResult { tree, best })
}

fn is_ancestor(tree: &Tree, candidate: usize, of: usize) -> bool {
    let mut cur = Some(of);
    while let Some(n) = cur {
        if n == candidate {
            return true;
        }
        cur = tree.nodes[n].parent;
    }
    false
}

/// Path length of a vertex chain.
pub fn chain_length(chain: &[Point]) -> f64 {
    chain.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Shortcut a collision-free chain whose last vertex is the goal.
///
/// First the goal is attached to the earliest vertex that sees it and the rest is
/// dropped; then a single forward pass removes every vertex whose neighbours can be
/// joined directly.
pub fn improve_path(chain: &[Point], world: &VoxelWorld) -> Vec<Point> {
    if chain.len() <= 2 {
        return chain.to_vec();
    }
    let free = |a: &Point, b: &Point| world.segment_free(a, b, TREE_BLOCKING).unwrap_or(false);
    let goal = *chain.last().unwrap();
    let first_clear = (0..chain.len() - 1).find(|&i| free(&chain[i], &goal)).unwrap_or(chain.len() - 2);
    let mut cut: Vec<Point> = chain[..=first_clear].to_vec();
    cut.push(goal);

    let mut out = vec![cut[0]];
    for k in 1..cut.len() - 1 {
        if !free(out.last().unwrap(), &cut[k + 1]) {
            out.push(cut[k]);
        }
    }
    out.push(goal);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Point>,
    /// Maximum distance between consecutive points.
    pub spacing: f64,
    pub goal_index: Option<usize>,
}

impl Trajectory {
    pub fn length(&self) -> f64 {
        chain_length(&self.points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Resample a chain so consecutive points are at most `spacing` apart. Each segment is
/// split into `ceil(len / spacing)` equal parts; endpoints are kept.
pub fn interpolate(chain: &[Point], spacing: f64) -> Trajectory {
    assert!(spacing > 0.0, "interpolation spacing must be positive");
    let mut points = Vec::new();
    if let Some(&first) = chain.first() {
        points.push(first);
    }
    for w in chain.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b - a).norm();
        if len == 0.0 {
            continue;
        }
        let parts = (len / spacing).ceil().max(1.0) as usize;
        for m in 1..parts {
            points.push(a + (b - a) * (m as f64 / parts as f64));
        }
        points.push(b);
    }
    Trajectory { points, spacing, goal_index: None }
}
