//! Volumetric shape features of a nodule mask: maximum axial diameter,
//! surface area and volume, in mm, mm² and mm³.
//!
//! Surface area counts exposed voxel faces. It is exact for the voxelized
//! shape and over-estimates the area of the smooth object it approximates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{NoduleRecord, VoxelGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadiomicsError {
    #[error("expected a binary mask grid")]
    NotBinary,
    #[error("mask has no set voxels")]
    EmptyMask,
}

/// Fixed order: diameter, area, volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiomicVector {
    pub max_axial_diameter: f64,
    pub surface_area: f64,
    pub volume: f64,
}

impl RadiomicVector {
    pub fn to_array(&self) -> [f64; 3] {
        [self.max_axial_diameter, self.surface_area, self.volume]
    }
}

fn check(mask: &VoxelGrid) -> Result<(), RadiomicsError> {
    if !mask.is_binary() || mask.data.len() != mask.len() {
        return Err(RadiomicsError::NotBinary);
    }
    if mask.count_set() == 0 {
        return Err(RadiomicsError::EmptyMask);
    }
    Ok(())
}

fn spacing64(mask: &VoxelGrid) -> [f64; 3] {
    mask.spacing.map(|s| s as f64)
}

pub fn volume(mask: &VoxelGrid) -> Result<f64, RadiomicsError> {
    check(mask)?;
    let [sx, sy, sz] = spacing64(mask);
    Ok(mask.count_set() as f64 * sx * sy * sz)
}

pub fn surface_area(mask: &VoxelGrid) -> Result<f64, RadiomicsError> {
    check(mask)?;
    let [nx, ny, nz] = mask.dims;
    let [sx, sy, sz] = spacing64(mask);
    let set = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && mask.get(x as usize, y as usize, z as usize) != 0.0
    };
    // exposed faces per axis
    let mut faces = [0usize; 3];
    for z in 0..nz as isize {
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                if !set(x, y, z) {
                    continue;
                }
                faces[0] += !set(x - 1, y, z) as usize + !set(x + 1, y, z) as usize;
                faces[1] += !set(x, y - 1, z) as usize + !set(x, y + 1, z) as usize;
                faces[2] += !set(x, y, z - 1) as usize + !set(x, y, z + 1) as usize;
            }
        }
    }
    Ok(faces[0] as f64 * sy * sz + faces[1] as f64 * sx * sz + faces[2] as f64 * sx * sy)
}

/// Largest in-slice distance between set voxel centres over all axial slices.
///
/// The farthest pair of a point set lies on its convex hull, and hull
/// vertices are always boundary voxels, so only those are compared.
pub fn max_axial_diameter(mask: &VoxelGrid) -> Result<f64, RadiomicsError> {
    check(mask)?;
    let [nx, ny, nz] = mask.dims;
    let [sx, sy, _] = spacing64(mask);
    let mut best = 0.0f64;
    let mut boundary: Vec<(f64, f64)> = Vec::new();
    for z in 0..nz {
        boundary.clear();
        let on = |x: isize, y: isize| {
            x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny && mask.get(x as usize, y as usize, z) != 0.0
        };
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                if on(x, y) && !(on(x - 1, y) && on(x + 1, y) && on(x, y - 1) && on(x, y + 1)) {
                    boundary.push((x as f64 * sx, y as f64 * sy));
                }
            }
        }
        for (i, a) in boundary.iter().enumerate() {
            for b in &boundary[i + 1..] {
                let d2 = (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
                if d2 > best {
                    best = d2;
                }
            }
        }
    }
    Ok(best.sqrt())
}

pub fn extract(record: &NoduleRecord) -> Result<RadiomicVector, RadiomicsError> {
    Ok(RadiomicVector {
        max_axial_diameter: max_axial_diameter(&record.mask)?,
        surface_area: surface_area(&record.mask)?,
        volume: volume(&record.mask)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::GridKind;
    use proptest::prelude::*;

    fn mask_with(dims: [usize; 3], spacing: [f32; 3], voxels: &[(usize, usize, usize)]) -> VoxelGrid {
        let mut m = VoxelGrid::zeros(dims, spacing, GridKind::BinaryMask);
        for &(x, y, z) in voxels {
            m.set(x, y, z, 1.0);
        }
        m
    }

    fn cube(n: usize, at: usize) -> Vec<(usize, usize, usize)> {
        let mut v = Vec::new();
        for z in at..at + n {
            for y in at..at + n {
                for x in at..at + n {
                    v.push((x, y, z));
                }
            }
        }
        v
    }

    /// Brute-force oracles, independent of the implementation above.
    fn oracle_diameter(m: &VoxelGrid) -> f64 {
        let [nx, ny, nz] = m.dims;
        let mut best = 0.0f64;
        for z in 0..nz {
            let pts: Vec<(usize, usize)> = (0..ny)
                .flat_map(|y| (0..nx).map(move |x| (x, y)))
                .filter(|&(x, y)| m.get(x, y, z) == 1.0)
                .collect();
            for a in &pts {
                for b in &pts {
                    let dx = (a.0 as f64 - b.0 as f64) * m.spacing[0] as f64;
                    let dy = (a.1 as f64 - b.1 as f64) * m.spacing[1] as f64;
                    best = best.max((dx * dx + dy * dy).sqrt());
                }
            }
        }
        best
    }

    fn oracle_faces(m: &VoxelGrid) -> f64 {
        let [nx, ny, nz] = m.dims;
        let s = m.spacing.map(|v| v as f64);
        let face_area = [s[1] * s[2], s[0] * s[2], s[0] * s[1]];
        let mut area = 0.0;
        let dirs: [(i64, i64, i64, usize); 6] = [
            (1, 0, 0, 0),
            (-1, 0, 0, 0),
            (0, 1, 0, 1),
            (0, -1, 0, 1),
            (0, 0, 1, 2),
            (0, 0, -1, 2),
        ];
        for z in 0..nz as i64 {
            for y in 0..ny as i64 {
                for x in 0..nx as i64 {
                    if m.get(x as usize, y as usize, z as usize) != 1.0 {
                        continue;
                    }
                    for (dx, dy, dz, axis) in dirs {
                        let (a, b, c) = (x + dx, y + dy, z + dz);
                        let inside = (0..nx as i64).contains(&a)
                            && (0..ny as i64).contains(&b)
                            && (0..nz as i64).contains(&c);
                        if !inside || m.get(a as usize, b as usize, c as usize) != 1.0 {
                            area += face_area[axis];
                        }
                    }
                }
            }
        }
        area
    }

    #[test]
    fn unit_voxel() {
        let m = mask_with([4, 4, 4], [1.0; 3], &[(1, 1, 1)]);
        assert_eq!(volume(&m).unwrap(), 1.0);
        assert_eq!(surface_area(&m).unwrap(), 6.0);
        assert_eq!(max_axial_diameter(&m).unwrap(), 0.0);
    }

    #[test]
    fn anisotropic_cube_volume() {
        let m = mask_with([8, 8, 8], [0.7, 0.7, 2.5], &cube(3, 2));
        let v = volume(&m).unwrap();
        assert!((v - 33.075).abs() < 1e-5, "{v}");
    }

    #[test]
    fn two_cube() {
        let m = mask_with([6, 6, 6], [1.0; 3], &cube(2, 2));
        assert_eq!(surface_area(&m).unwrap(), 24.0);
        assert_eq!(volume(&m).unwrap(), 8.0);
        assert!((max_axial_diameter(&m).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_column() {
        let m = mask_with([3, 3, 4], [1.0, 1.0, 2.0], &[(1, 1, 1), (1, 1, 2)]);
        assert_eq!(surface_area(&m).unwrap(), 18.0);
        assert_eq!(oracle_faces(&m), 18.0);
    }

    #[test]
    fn diameter_examples() {
        let m = mask_with([8, 8, 2], [1.0; 3], &[(0, 0, 0), (3, 4, 0)]);
        assert_eq!(max_axial_diameter(&m).unwrap(), 5.0);
        let sq: Vec<_> = (0..5).flat_map(|y| (0..5).map(move |x| (x + 1, y + 1, 0))).collect();
        let m = mask_with([8, 8, 2], [1.0; 3], &sq);
        assert!((max_axial_diameter(&m).unwrap() - 4.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sphere_radius_eight() {
        let c = [15.5, 15.5, 9.5];
        let mut vox = Vec::new();
        for z in 0..20 {
            for y in 0..32 {
                for x in 0..32 {
                    let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
                    if d2 <= 64.0 {
                        vox.push((x, y, z));
                    }
                }
            }
        }
        let m = mask_with([32, 32, 20], [1.0; 3], &vox);
        let v = volume(&m).unwrap();
        assert_eq!(v, vox.len() as f64);
        let target = 4.0 / 3.0 * std::f64::consts::PI * 512.0;
        assert!((v - target).abs() / target < 0.05, "{v} vs {target}");
    }

    #[test]
    fn rejects_non_binary_and_empty() {
        let mut m = mask_with([2, 2, 2], [1.0; 3], &[(0, 0, 0)]);
        m.kind = GridKind::Intensity;
        assert_eq!(volume(&m), Err(RadiomicsError::NotBinary));
        let m = mask_with([2, 2, 2], [1.0; 3], &[]);
        assert_eq!(surface_area(&m), Err(RadiomicsError::EmptyMask));
    }

    fn random_mask() -> impl Strategy<Value = VoxelGrid> {
        (
            prop::collection::vec(any::<bool>(), 6 * 6 * 4),
            (0.3f32..3.0, 0.3f32..3.0, 0.3f32..3.0),
        )
            .prop_filter_map("needs a voxel", |(bits, (a, b, c))| {
                if !bits.iter().any(|&x| x) {
                    return None;
                }
                let data = bits.iter().map(|&x| x as u8 as f32).collect();
                Some(VoxelGrid {
                    dims: [6, 6, 4],
                    spacing: [a, b, c],
                    data,
                    kind: GridKind::BinaryMask,
                })
            })
    }

    proptest! {
        #[test]
        fn matches_brute_force(m in random_mask()) {
            let d = max_axial_diameter(&m).unwrap();
            prop_assert!((d - oracle_diameter(&m)).abs() < 1e-9);
            let a = surface_area(&m).unwrap();
            prop_assert!((a - oracle_faces(&m)).abs() < 1e-9 * a.max(1.0));
            let v = volume(&m).unwrap();
            let per = m.spacing.iter().map(|&s| s as f64).product::<f64>();
            prop_assert!((v - m.count_set() as f64 * per).abs() < 1e-9 * v.max(1.0));
        }

        #[test]
        fn spacing_scaling_laws(m in random_mask(), k in -2i32..=2, c in 0.25f32..4.0) {
            let base = (max_axial_diameter(&m).unwrap(), surface_area(&m).unwrap(), volume(&m).unwrap());
            // powers of two scale f32 spacing exactly, so the laws hold bit-for-bit
            let p = 2f32.powi(k);
            let mut scaled = m.clone();
            scaled.spacing = m.spacing.map(|s| s * p);
            let p = p as f64;
            prop_assert_eq!(max_axial_diameter(&scaled).unwrap(), base.0 * p);
            prop_assert_eq!(surface_area(&scaled).unwrap(), base.1 * p * p);
            prop_assert_eq!(volume(&scaled).unwrap(), base.2 * p * p * p);
            // arbitrary factors up to f32 rounding of the spacing
            let mut scaled = m.clone();
            scaled.spacing = m.spacing.map(|s| s * c);
            let c = c as f64;
            prop_assert!((max_axial_diameter(&scaled).unwrap() - base.0 * c).abs() <= 1e-6 * (base.0 * c).max(1e-12));
            prop_assert!((surface_area(&scaled).unwrap() - base.1 * c * c).abs() <= 1e-6 * base.1 * c * c);
            prop_assert!((volume(&scaled).unwrap() - base.2 * c * c * c).abs() <= 1e-6 * base.2 * c * c * c);
        }

        #[test]
        fn translation_invariance(m in random_mask()) {
            // pad by one voxel on every side, then shift
            let [nx, ny, nz] = m.dims;
            let mut big = VoxelGrid::zeros([nx + 3, ny + 3, nz + 3], m.spacing, GridKind::BinaryMask);
            let mut big2 = big.clone();
            for z in 0..nz { for y in 0..ny { for x in 0..nx {
                if m.get(x, y, z) == 1.0 {
                    big.set(x + 1, y + 1, z + 1, 1.0);
                    big2.set(x + 2, y + 2, z + 2, 1.0);
                }
            }}}
            prop_assert_eq!(surface_area(&big).unwrap(), surface_area(&big2).unwrap());
            prop_assert_eq!(volume(&big).unwrap(), volume(&big2).unwrap());
        }
    }
}
