//! Skeleton to grayscale grid.
//!
//! Joints are projected onto the image plane by dropping z. Each axis is
//! min-max normalized over the whole sequence and mapped into the central
//! `[0.1, 0.9]` band of the grid, so uniform scaling or translation of a
//! sequence leaves its rasters unchanged. Bones are drawn at 0.5, joints at
//! 1.0, background 0.

use super::{SkeletonError, SkeletonFrame, JOINT_COUNT};
use crate::tensor::Tensor;

pub const JOINT_INTENSITY: f64 = 1.0;
pub const BONE_INTENSITY: f64 = 0.5;
const MARGIN: f64 = 0.1;

/// The 24 bones of the 25-joint body model, as zero-based joint pairs.
pub const BONE_EDGES: [(usize, usize); 24] = [
    (0, 1),
    (1, 20),
    (20, 2),
    (2, 3),
    (20, 4),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 21),
    (7, 22),
    (20, 8),
    (8, 9),
    (9, 10),
    (10, 11),
    (11, 23),
    (11, 24),
    (0, 12),
    (12, 13),
    (13, 14),
    (14, 15),
    (0, 16),
    (16, 17),
    (17, 18),
    (18, 19),
];

/// Normalization box over the image plane (x right, y up).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl RasterBox {
    /// Extent of every joint with positive confidence; `None` if there is none.
    pub fn from_frames<'a>(frames: impl IntoIterator<Item = &'a SkeletonFrame>) -> Option<Self> {
        let mut b: Option<RasterBox> = None;
        for f in frames {
            for j in 0..JOINT_COUNT {
                if f.confidence[j] <= 0.0 {
                    continue;
                }
                let p = [f.joints[j][0], f.joints[j][1]];
                let bb = b.get_or_insert(RasterBox { min: p, max: p });
                for a in 0..2 {
                    bb.min[a] = bb.min[a].min(p[a]);
                    bb.max[a] = bb.max[a].max(p[a]);
                }
            }
        }
        b
    }

    /// All joints coincide.
    pub fn is_degenerate(&self) -> bool {
        self.min == self.max
    }

    /// Grid cell `(column, row)` for an image-plane point.
    pub fn to_pixel(&self, p: [f64; 2], grid: usize) -> (usize, usize) {
        let span = (grid - 1) as f64;
        let mut cell = [0usize; 2];
        for a in 0..2 {
            let extent = self.max[a] - self.min[a];
            let u = if extent > 0.0 { ((p[a] - self.min[a]) / extent).clamp(0.0, 1.0) } else { 0.5 };
            cell[a] = (span * (MARGIN + (1.0 - 2.0 * MARGIN) * u)).round() as usize;
        }
        (cell[0], grid - 1 - cell[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterOutput {
    pub frames: Vec<Tensor>,
    pub bbox: RasterBox,
    /// The box collapsed to a point; every frame is a single center pixel.
    pub degenerate: bool,
}

fn check_grid(grid: usize) -> Result<(), SkeletonError> {
    if grid < 2 {
        return Err(SkeletonError::Raster(format!("grid must be at least 2, got {grid}")));
    }
    Ok(())
}

/// Renders one frame against a precomputed box.
pub fn rasterize_frame(
    frame: &SkeletonFrame,
    grid: usize,
    bone_edges: &[(usize, usize)],
    bbox: &RasterBox,
) -> Result<Tensor, SkeletonError> {
    check_grid(grid)?;
    if frame.confidence.iter().all(|&c| c <= 0.0) {
        return Err(SkeletonError::Raster(format!(
            "frame at t={} has no joint with positive confidence",
            frame.timestamp
        )));
    }
    let mut img = vec![0.0; grid * grid];
    let visible = |j: usize| frame.confidence[j] > 0.0;
    let pixel = |j: usize| bbox.to_pixel([frame.joints[j][0], frame.joints[j][1]], grid);
    for &(a, b) in bone_edges {
        if a >= JOINT_COUNT || b >= JOINT_COUNT {
            return Err(SkeletonError::Raster(format!("bone ({a}, {b}) references a missing joint")));
        }
        if visible(a) && visible(b) {
            draw_line(&mut img, grid, pixel(a), pixel(b), BONE_INTENSITY);
        }
    }
    for j in (0..JOINT_COUNT).filter(|&j| visible(j)) {
        let (x, y) = pixel(j);
        let v = &mut img[y * grid + x];
        *v = v.max(JOINT_INTENSITY);
    }
    Ok(Tensor::new(vec![1, grid, grid], img)?)
}

/// Renders a sequence with one shared normalization box.
pub fn rasterize_frames(
    frames: &[SkeletonFrame],
    grid: usize,
    bone_edges: &[(usize, usize)],
) -> Result<RasterOutput, SkeletonError> {
    check_grid(grid)?;
    let bbox = RasterBox::from_frames(frames)
        .ok_or_else(|| SkeletonError::Raster("no joint with positive confidence".into()))?;
    let degenerate = bbox.is_degenerate();
    if degenerate {
        log::warn!("degenerate skeleton bounding box; rendering center pixels only");
    }
    let frames = frames
        .iter()
        .map(|f| rasterize_frame(f, grid, bone_edges, &bbox))
        .collect::<Result<_, _>>()?;
    Ok(RasterOutput { frames, bbox, degenerate })
}

/// Bresenham segment, combining with existing pixels by max.
fn draw_line(img: &mut [f64], grid: usize, from: (usize, usize), to: (usize, usize), value: f64) {
    let (mut x, mut y) = (from.0 as i64, from.1 as i64);
    let (x1, y1) = (to.0 as i64, to.1 as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        let v = &mut img[y as usize * grid + x as usize];
        *v = v.max(value);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
