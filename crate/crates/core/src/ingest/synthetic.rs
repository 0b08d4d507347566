//! Deterministic synthetic nodule generator for desk-scale runs.

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::data_model::{
    BiomarkerRanges, BiomarkerVector, GridKind, MalignancyScore, NoduleRecord, VoxelGrid,
    DEFAULT_BOX_DIMS, N_BIOMARKERS,
};
use crate::seeding::rng_from;

/// Per-class counts summing to 4505 with 1688 intermediate nodules
/// (2817 once R3 is removed). Only the total and the R3 count are fixed;
/// the split among R1/R2/R4/R5 is a plausible LIDC-like shape.
pub const LIDC_LIKE_CLASS_COUNTS: [usize; 5] = [513, 1104, 1688, 744, 456];

pub fn lidc_like_class_mix() -> [f64; 5] {
    let total: usize = LIDC_LIKE_CLASS_COUNTS.iter().sum();
    LIDC_LIKE_CLASS_COUNTS.map(|c| c as f64 / total as f64)
}

const BENIGN_PROFILE: [f64; N_BIOMARKERS] = [3.0, 1.0, 4.5, 4.0, 4.5, 1.5, 1.2, 4.7];
const MALIGNANT_PROFILE: [f64; N_BIOMARKERS] = [4.5, 1.2, 6.0, 3.5, 3.0, 3.0, 2.8, 4.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_records: usize,
    /// Proportions over malignancy 1..=5.
    pub class_mix: [f64; 5],
    /// Biomarker means per malignancy class (row = class 1..=5).
    pub biomarker_means: [[f64; N_BIOMARKERS]; 5],
    /// Standard deviation of every biomarker around its class mean.
    pub biomarker_spread: f64,
    /// Round to integer ratings and clip into the LIDC ranges.
    pub round_biomarkers: bool,
    /// In-plane blob radius range (voxels) per malignancy class.
    pub radius_range: [[f64; 2]; 5],
    /// Standard deviation of additive Gaussian intensity noise.
    pub noise_level: f64,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub annotations_per_patient: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let mut means = [[0.0; N_BIOMARKERS]; 5];
        for (c, row) in means.iter_mut().enumerate() {
            let t = c as f64 / 4.0;
            for (j, m) in row.iter_mut().enumerate() {
                *m = BENIGN_PROFILE[j] + t * (MALIGNANT_PROFILE[j] - BENIGN_PROFILE[j]);
            }
        }
        let radius_range = std::array::from_fn(|c| {
            let shift = 0.4 * c as f64;
            [2.0 + shift, 5.0 + shift]
        });
        Self {
            n_records: 500,
            class_mix: lidc_like_class_mix(),
            biomarker_means: means,
            biomarker_spread: 0.6,
            round_biomarkers: true,
            radius_range,
            noise_level: 0.15,
            dims: DEFAULT_BOX_DIMS,
            spacing: [1.0, 1.0, 1.0],
            annotations_per_patient: 4,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::InfeasibleConfig(m));
        let sum: f64 = self.class_mix.iter().sum();
        if self.class_mix.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return bad(format!("class_mix must be non-negative and sum to 1 (sum {sum})"));
        }
        if !(self.biomarker_spread >= 0.0) || !(self.noise_level >= 0.0) {
            return bad("spreads must be non-negative".into());
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad("spacing must be positive".into());
        }
        if self.annotations_per_patient == 0 {
            return bad("annotations_per_patient must be >= 1".into());
        }
        let [nx, ny, nz] = self.dims;
        let z_scale = (self.spacing[0] / self.spacing[2]) as f64;
        for (c, &[lo, hi]) in self.radius_range.iter().enumerate() {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("radius range for class {} is empty", c + 1));
            }
            let max_xy = nx.min(ny) as f64 / 2.0 - 1.0;
            let max_z = nz as f64 / 2.0 - 1.0;
            if hi > max_xy || hi * z_scale > max_z {
                return bad(format!(
                    "radius {hi} for class {} does not fit the {nx}x{ny}x{nz} box",
                    c + 1
                ));
            }
            if lo * z_scale < 1.0 || lo < 1.0 {
                return bad(format!("radius {lo} for class {} is below one voxel", c + 1));
            }
        }
        Ok(())
    }
}

/// Noiseless blob value at each voxel; half-max threshold recovers the ellipsoid.
fn blob(dims: [usize; 3], radius: f64, z_scale: f64) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let c = [(nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0, (nz as f64 - 1.0) / 2.0];
    let rz = radius * z_scale;
    let sharpness = 2.0 * radius;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let dx = (x as f64 - c[0]) / radius;
                let dy = (y as f64 - c[1]) / radius;
                let dz = (z as f64 - c[2]) / rz;
                let rho = (dx * dx + dy * dy + dz * dz).sqrt();
                out.push(1.0 / (1.0 + (sharpness * (rho - 1.0)).exp()));
            }
        }
    }
    out
}

fn make_record(cfg: &SyntheticConfig, index: usize, weights: &WeightedIndex<f64>) -> NoduleRecord {
    let mut rng = rng_from(cfg.seed, &[index as u64]);
    let class = weights.sample(&mut rng);
    let ranges = BiomarkerRanges::default().ranges;
    let spread = Normal::new(0.0, cfg.biomarker_spread).expect("validated spread");
    let mut bio = [0.0; N_BIOMARKERS];
    for j in 0..N_BIOMARKERS {
        let mut v = cfg.biomarker_means[class][j] + spread.sample(&mut rng);
        if cfg.round_biomarkers {
            v = v.round().clamp(ranges[j].0, ranges[j].1);
        }
        bio[j] = v;
    }
    let [lo, hi] = cfg.radius_range[class];
    let radius = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let z_scale = (cfg.spacing[0] / cfg.spacing[2]) as f64;
    let clean = blob(cfg.dims, radius, z_scale);
    let peak = clean.iter().cloned().fold(f64::MIN, f64::max);
    let mask_data: Vec<f32> = clean
        .iter()
        .map(|&v| if v >= peak / 2.0 { 1.0 } else { 0.0 })
        .collect();
    let noise = Normal::new(0.0, cfg.noise_level).expect("validated noise");
    let vol_data: Vec<f32> = clean
        .iter()
        .map(|&v| (0.1 + 0.8 * v + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32)
        .collect();
    NoduleRecord {
        patient_id: format!("SYN-{:05}", index / cfg.annotations_per_patient),
        biomarkers: BiomarkerVector::from_array(bio),
        malignancy: MalignancyScore::new(class as i64 + 1).expect("class in 0..5"),
        volume: VoxelGrid {
            dims: cfg.dims,
            spacing: cfg.spacing,
            data: vol_data,
            kind: GridKind::Intensity,
        },
        mask: VoxelGrid {
            dims: cfg.dims,
            spacing: cfg.spacing,
            data: mask_data,
            kind: GridKind::BinaryMask,
        },
    }
}

/// Generates `n_records` records; record `i` depends only on `(seed, i)`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<NoduleRecord>, IngestError> {
    cfg.validate()?;
    let weights = WeightedIndex::new(cfg.class_mix)
        .map_err(|e| IngestError::InfeasibleConfig(format!("class_mix: {e}")))?;
    Ok((0..cfg.n_records)
        .into_par_iter()
        .map(|i| make_record(cfg, i, &weights))
        .collect())
}
