//! Contour-to-mask rasterization.
//!
//! In-plane coordinates are CT pixel indices; a pixel's centre sits at its
//! integer index, so outline pixels lie exactly on the polygon boundary. The
//! outline is drawn at the first pixel outside the nodule, which is why
//! boundary pixels are excluded from inclusion regions.

use log::warn;

use super::{AnnotationContour, IngestError};
use crate::data_model::{GridKind, VoxelGrid, DEFAULT_BOX_DIMS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSpec {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
}

impl BoxSpec {
    pub fn with_spacing(spacing: [f32; 3]) -> Self {
        Self {
            dims: DEFAULT_BOX_DIMS,
            spacing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Inside,
    Boundary,
    Outside,
}

fn on_segment(p: (i64, i64), a: (i64, i64), b: (i64, i64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    cross == 0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

/// Exact point classification against a closed integer polygon.
fn classify(p: (i64, i64), poly: &[(i64, i64)]) -> Side {
    let n = poly.len();
    if n == 0 {
        return Side::Outside;
    }
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if on_segment(p, a, b) {
            return Side::Boundary;
        }
        if (a.1 > p.1) != (b.1 > p.1) {
            // p.x < a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y)
            let dy = b.1 - a.1;
            let lhs = (p.0 - a.0) * dy;
            let rhs = (p.1 - a.1) * (b.0 - a.0);
            let crosses = if dy > 0 { lhs < rhs } else { lhs > rhs };
            if crosses {
                inside = !inside;
            }
        }
    }
    if inside {
        Side::Inside
    } else {
        Side::Outside
    }
}

/// Centre of the inclusion contours: mean edge point in-plane, and the
/// contour z-position nearest the mean z.
pub fn contour_centroid(contours: &[AnnotationContour]) -> Option<[f64; 3]> {
    let incl: Vec<&AnnotationContour> = contours.iter().filter(|c| c.inclusion).collect();
    let n_pts: usize = incl.iter().map(|c| c.edge_points.len()).sum();
    if n_pts == 0 {
        return None;
    }
    let (sx, sy) = incl
        .iter()
        .flat_map(|c| c.edge_points.iter())
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64, sy + y as f64));
    let mean_z = incl.iter().map(|c| c.z_position).sum::<f64>() / incl.len() as f64;
    let z = incl
        .iter()
        .map(|c| c.z_position)
        .min_by(|a, b| (a - mean_z).abs().total_cmp(&(b - mean_z).abs()))?;
    Some([sx / n_pts as f64, sy / n_pts as f64, z])
}

/// Smallest positive gap between distinct contour z-positions.
pub fn infer_slice_spacing(contours: &[AnnotationContour]) -> Option<f64> {
    let mut zs: Vec<f64> = contours.iter().map(|c| c.z_position).collect();
    zs.sort_by(f64::total_cmp);
    zs.windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 1e-6)
        .min_by(f64::total_cmp)
}

/// Rasterizes contours into a binary mask box.
///
/// `center` is `(x pixel, y pixel, z mm)`. Box voxel `(i, j, k)` covers CT
/// pixel `(round(cx) - nx/2 + i, round(cy) - ny/2 + j)` on the slice at
/// `cz + (k - nz/2) * sz`.
pub fn rasterize_mask(
    contours: &[AnnotationContour],
    spec: &BoxSpec,
    center: [f64; 3],
) -> Result<VoxelGrid, IngestError> {
    if !contours.iter().any(|c| c.inclusion && !c.edge_points.is_empty()) {
        return Err(IngestError::NoInclusionContour);
    }
    let [nx, ny, nz] = spec.dims;
    let sz = spec.spacing[2] as f64;
    let x0 = center[0].round() as i64 - (nx / 2) as i64;
    let y0 = center[1].round() as i64 - (ny / 2) as i64;

    let mut slices: Vec<Vec<&AnnotationContour>> = vec![Vec::new(); nz];
    for c in contours {
        let offset = ((c.z_position - center[2]) / sz).round() as i64 + (nz / 2) as i64;
        if offset < 0 || offset >= nz as i64 {
            warn!(
                "dropping contour at z = {} mm: no slice of the box matches",
                c.z_position
            );
            continue;
        }
        slices[offset as usize].push(c);
    }

    let mut mask = VoxelGrid::zeros(spec.dims, spec.spacing, GridKind::BinaryMask);
    for (k, slice) in slices.iter().enumerate() {
        if !slice.iter().any(|c| c.inclusion) {
            continue;
        }
        for j in 0..ny {
            for i in 0..nx {
                let p = (x0 + i as i64, y0 + j as i64);
                let included = slice
                    .iter()
                    .filter(|c| c.inclusion)
                    .any(|c| classify(p, &c.edge_points) == Side::Inside);
                if !included {
                    continue;
                }
                let excluded = slice
                    .iter()
                    .filter(|c| !c.inclusion)
                    .any(|c| classify(p, &c.edge_points) != Side::Outside);
                if !excluded {
                    mask.set(i, j, k, 1.0);
                }
            }
        }
    }
    if mask.count_set() == 0 {
        return Err(IngestError::DegenerateMask);
    }
    Ok(mask)
}
