//! Simplified 3D lidar model: full 360° coverage in the horizontal plane, a narrow
//! vertical cone of half-angle `fov/2`, and a vertical array offset `array/2`.

use crate::world::{BlockSet, Label, Point, VoxelRef, VoxelWorld, WorldError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorModel {
    /// Horizontal range in meters.
    pub range: f64,
    /// Full vertical field of view in radians.
    pub fov: f64,
    /// Height of the sensor array in meters.
    pub array: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { range: 6.0, fov: 32f64.to_radians(), array: 0.1 }
    }
}

impl SensorModel {
    pub fn new(range: f64, fov: f64, array: f64) -> Option<Self> {
        let ok = range > 0.0
            && range.is_finite()
            && fov > 0.0
            && fov < std::f64::consts::PI
            && array >= 0.0
            && array.is_finite();
        ok.then_some(Self { range, fov, array })
    }

    pub fn with_range(self, range: f64) -> Self {
        Self { range, ..self }
    }

    /// Both visibility inequalities, boundaries inclusive. Roll and pitch are
    /// taken as zero.
    #[inline]
    pub fn in_view(&self, viewpoint: &Point, target: &Point) -> bool {
        let d = viewpoint - target;
        let horizontal = (d.x * d.x + d.y * d.y).sqrt();
        self.range >= horizontal && d.z.abs() <= horizontal * (self.fov / 2.0).tan() + self.array / 2.0
    }

    /// Maximum vertical offset visible anywhere within range.
    pub fn max_vertical_reach(&self) -> f64 {
        self.range * (self.fov / 2.0).tan() + self.array / 2.0
    }

    /// Unknown voxels whose centers are in view from `viewpoint` with a clear line of
    /// sight through the `world`. Occupied and other Unknown voxels block; the target
    /// never blocks itself. Returned in lexicographic index order.
    pub fn visible_unknowns(&self, viewpoint: &Point, world: &VoxelWorld) -> Result<Vec<VoxelRef>, WorldError> {
        let mut out = Vec::new();
        self.for_each_visible(viewpoint, world, Label::Unknown, BlockSet::OCCUPIED_OR_UNKNOWN, |v| out.push(v))?;
        Ok(out)
    }

    /// Visit voxels labelled `want` that are in view from `viewpoint` and whose line of
    /// sight passes no `blocking` voxel other than the target itself.
    pub fn for_each_visible<F>(
        &self,
        viewpoint: &Point,
        world: &VoxelWorld,
        want: Label,
        blocking: BlockSet,
        mut f: F,
    ) -> Result<(), WorldError>
    where
        F: FnMut(VoxelRef),
    {
        if !world.in_bounds(viewpoint) {
            return Err(WorldError::OutOfBounds(*viewpoint));
        }
        let reach = Point::new(self.range, self.range, self.max_vertical_reach());
        let (lo, hi) = world.index_box(viewpoint, reach);
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let idx = crate::world::VoxelIndex::new(i, j, k);
                    if world.label(idx) != want {
                        continue;
                    }
                    let center = world.center(idx);
                    if !self.in_view(viewpoint, &center) {
                        continue;
                    }
                    if world.segment_free_except(viewpoint, &center, blocking, idx)? {
                        f(VoxelRef { index: idx, center });
                    }
                }
            }
        }
        Ok(())
    }
}
