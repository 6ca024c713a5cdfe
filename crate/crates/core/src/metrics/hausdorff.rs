//! 95th-percentile Hausdorff distance between binary volumes.
//!
//! Only surface voxels take part: a foreground voxel is on the surface when
//! at least one of its six face neighbours is background or lies outside the
//! grid. Directed distances go from every surface voxel of one mask to the
//! nearest surface voxel of the other, in mm. The percentile is nearest-rank:
//! the value at sorted position `ceil(0.95 n) - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// How the two directed distance sets are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HdMode {
    /// `max(P95(A -> B), P95(B -> A))`.
    #[default]
    Max,
    /// P95 of the union of both directed sets.
    Pooled,
}

pub type Point = [usize; 3];

fn check(mask: &[bool], dims: [usize; 3]) -> Result<()> {
    if mask.len() != dims.iter().product::<usize>() {
        return Err(shape_err!("mask of {} voxels for dims {dims:?}", mask.len()));
    }
    Ok(())
}

/// Surface voxels in ascending index order.
pub fn surface(mask: &[bool], dims: [usize; 3]) -> Result<Vec<Point>> {
    check(mask, dims)?;
    let [nx, ny, nz] = dims;
    let at = |x: usize, y: usize, z: usize| mask[(x * ny + y) * nz + z];
    let mut out = Vec::new();
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                if !at(x, y, z) {
                    continue;
                }
                let boundary = x == 0
                    || y == 0
                    || z == 0
                    || x + 1 == nx
                    || y + 1 == ny
                    || z + 1 == nz
                    || !at(x - 1, y, z)
                    || !at(x + 1, y, z)
                    || !at(x, y - 1, z)
                    || !at(x, y + 1, z)
                    || !at(x, y, z - 1)
                    || !at(x, y, z + 1);
                if boundary {
                    out.push([x, y, z]);
                }
            }
        }
    }
    Ok(out)
}

/// Euclidean distance in mm. Every distance in this module goes through
/// this one function so that search strategies agree bit for bit.
#[inline]
pub fn distance(a: Point, b: Point, spacing: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        let d = a[k].abs_diff(b[k]) as f64 * spacing[k];
        s += d * d;
    }
    s.sqrt()
}

/// Nearest-rank percentile of unsorted values, `q` in (0, 1].
pub fn percentile_nearest_rank(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let rank = (q * values.len() as f64).ceil().max(1.0) as usize;
    Some(values[rank.min(values.len()) - 1])
}

/// Uniform bucket grid over a point set for exact nearest-neighbour queries.
struct BucketGrid {
    cell: usize,
    cells: [usize; 3],
    buckets: Vec<Vec<Point>>,
    min_spacing: f64,
    spacing: [f64; 3],
}

impl BucketGrid {
    const CELL: usize = 4;

    fn new(points: &[Point], dims: [usize; 3], spacing: [f64; 3]) -> Self {
        let cell = Self::CELL;
        let cells = dims.map(|d| d.div_ceil(cell));
        let mut buckets = vec![Vec::new(); cells.iter().product()];
        for &p in points {
            let c = p.map(|v| v / cell);
            buckets[(c[0] * cells[1] + c[1]) * cells[2] + c[2]].push(p);
        }
        let min_spacing = spacing.iter().copied().fold(f64::INFINITY, f64::min);
        BucketGrid { cell, cells, buckets, min_spacing, spacing }
    }

    /// Distance to the nearest stored point.
    fn nearest(&self, q: Point) -> f64 {
        let qc = q.map(|v| (v / self.cell) as isize);
        let max_ring = self.cells.iter().copied().max().unwrap_or(1) as isize;
        let mut best = f64::INFINITY;
        for r in 0..=max_ring {
            if r > 0 {
                // Any point in ring r is at least (r - 1) * cell + 1 voxels
                // away along some axis.
                let bound = ((r as usize - 1) * self.cell + 1) as f64 * self.min_spacing;
                if best <= bound {
                    break;
                }
            }
            self.visit_ring(qc, r, |p| {
                let d = distance(q, p, self.spacing);
                if d < best {
                    best = d;
                }
            });
        }
        best
    }

    fn visit_ring(&self, c: [isize; 3], r: isize, mut f: impl FnMut(Point)) {
        let lim = self.cells.map(|n| n as isize);
        for dx in -r..=r {
            let x = c[0] + dx;
            if x < 0 || x >= lim[0] {
                continue;
            }
            for dy in -r..=r {
                let y = c[1] + dy;
                if y < 0 || y >= lim[1] {
                    continue;
                }
                let on_shell = dx.abs() == r || dy.abs() == r;
                let step = if on_shell || r == 0 { 1 } else { 2 * r as usize };
                let mut dz = -r;
                while dz <= r {
                    let z = c[2] + dz;
                    if z >= 0 && z < lim[2] {
                        let idx = ((x * lim[1] + y) * lim[2] + z) as usize;
                        for &p in &self.buckets[idx] {
                            f(p);
                        }
                    }
                    if step == 1 {
                        dz += 1;
                    } else {
                        dz += step as isize;
                    }
                }
            }
        }
    }
}

/// Distance from each point of `from` to the nearest point of `to`.
pub fn directed_distances(from: &[Point], to: &[Point], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let grid = BucketGrid::new(to, dims, spacing);
    from.iter().map(|&p| grid.nearest(p)).collect()
}

/// HD95 in mm. Errors with [`Error::Undefined`] when either mask is empty.
pub fn hd95(pred: &[bool], truth: &[bool], dims: [usize; 3], spacing: [f64; 3], mode: HdMode) -> Result<f64> {
    let a = surface(pred, dims)?;
    let b = surface(truth, dims)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Undefined(format!(
            "HD95 needs two nonempty masks (prediction has {} surface voxels, reference {})",
            a.len(),
            b.len()
        )));
    }
    let mut ab = directed_distances(&a, &b, dims, spacing);
    let mut ba = directed_distances(&b, &a, dims, spacing);
    Ok(match mode {
        HdMode::Max => {
            let x = percentile_nearest_rank(&mut ab, 0.95).expect("nonempty");
            let y = percentile_nearest_rank(&mut ba, 0.95).expect("nonempty");
            x.max(y)
        }
        HdMode::Pooled => {
            ab.append(&mut ba);
            percentile_nearest_rank(&mut ab, 0.95).expect("nonempty")
        }
    })
}
