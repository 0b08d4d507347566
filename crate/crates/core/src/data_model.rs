//! Core domain types shared across the pipeline and record validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of radiologist biomarkers per annotation.
pub const N_BIOMARKERS: usize = 8;

/// Default nodule box size in voxels (x, y, z).
pub const DEFAULT_BOX_DIMS: [usize; 3] = [32, 32, 16];

pub const BIOMARKER_NAMES: [&str; N_BIOMARKERS] = [
    "subtlety",
    "internal_structure",
    "calcification",
    "sphericity",
    "margin",
    "lobulation",
    "spiculation",
    "texture",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("malignancy score {0} outside 1..=5")]
    MalignancyOutOfRange(i64),
    #[error("voxel data length {actual} does not match dims {dims:?} (expected {expected})")]
    LengthMismatch {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("spacing components must be finite and > 0, got {0:?}")]
    BadSpacing([f32; 3]),
    #[error("binary mask contains a value other than 0 or 1")]
    NonBinaryMask,
}

/// The eight ordinal radiologist ratings, stored as reals in a fixed order.
///
/// Order matters: fusion tiles this vector block-wise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerVector {
    pub subtlety: f64,
    pub internal_structure: f64,
    pub calcification: f64,
    pub sphericity: f64,
    pub margin: f64,
    pub lobulation: f64,
    pub spiculation: f64,
    pub texture: f64,
}

impl BiomarkerVector {
    pub fn from_array(v: [f64; N_BIOMARKERS]) -> Self {
        Self {
            subtlety: v[0],
            internal_structure: v[1],
            calcification: v[2],
            sphericity: v[3],
            margin: v[4],
            lobulation: v[5],
            spiculation: v[6],
            texture: v[7],
        }
    }

    pub fn to_array(&self) -> [f64; N_BIOMARKERS] {
        [
            self.subtlety,
            self.internal_structure,
            self.calcification,
            self.sphericity,
            self.margin,
            self.lobulation,
            self.spiculation,
            self.texture,
        ]
    }
}

/// Radiologist malignancy-suspicion rating, 1 (highly unlikely) to 5 (highly suspicious).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct MalignancyScore(u8);

impl MalignancyScore {
    pub fn new(value: i64) -> Result<Self, DataError> {
        if (1..=5).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(DataError::MalignancyOutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Intermediate suspicion (the R3 set).
    pub fn is_intermediate(self) -> bool {
        self.0 == 3
    }

    /// Binary label under the fully supervised grouping: R12 → 0, R45 → 1, R3 → none.
    pub fn grouped_label(self) -> Option<u8> {
        match self.0 {
            1 | 2 => Some(0),
            4 | 5 => Some(1),
            _ => None,
        }
    }
}

impl TryFrom<i64> for MalignancyScore {
    type Error = DataError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<MalignancyScore> for i64 {
    fn from(m: MalignancyScore) -> i64 {
        m.0 as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Intensity,
    BinaryMask,
}

/// Dense scalar volume. Index order is x-fastest, then y, then z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f32; 3],
    pub data: Vec<f32>,
    pub kind: GridKind,
}

impl VoxelGrid {
    pub fn new(
        dims: [usize; 3],
        spacing: [f32; 3],
        data: Vec<f32>,
        kind: GridKind,
    ) -> Result<Self, DataError> {
        let grid = Self {
            dims,
            spacing,
            data,
            kind,
        };
        if let Some(err) = grid.check().into_iter().next() {
            return Err(err);
        }
        Ok(grid)
    }

    pub fn zeros(dims: [usize; 3], spacing: [f32; 3], kind: GridKind) -> Self {
        Self {
            dims,
            spacing,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.kind == GridKind::BinaryMask && self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    fn check(&self) -> Vec<DataError> {
        let mut errs = Vec::new();
        let expected = self.len();
        if self.data.len() != expected {
            errs.push(DataError::LengthMismatch {
                dims: self.dims,
                expected,
                actual: self.data.len(),
            });
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            errs.push(DataError::BadSpacing(self.spacing));
        }
        if self.kind == GridKind::BinaryMask && !self.data.iter().all(|&v| v == 0.0 || v == 1.0) {
            errs.push(DataError::NonBinaryMask);
        }
        errs
    }
}

/// One radiologist annotation of one nodule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoduleRecord {
    pub patient_id: String,
    pub biomarkers: BiomarkerVector,
    pub malignancy: MalignancyScore,
    pub volume: VoxelGrid,
    pub mask: VoxelGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelProvenance {
    Annotated,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distribution {
    /// R12 vs R45, intermediate nodules excluded.
    A,
    /// R123 vs R345, intermediate train nodules pseudo-labeled.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub record: NoduleRecord,
    pub label: u8,
    pub provenance: LabelProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub records: Vec<LabeledRecord>,
    pub distribution: Distribution,
    pub split_role: SplitRole,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn pseudo_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.provenance == LabelProvenance::Pseudo)
            .count()
    }

    /// Structural invariants: A has no R3, test splits have no pseudo labels.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.distribution == Distribution::A
            && self.records.iter().any(|r| r.record.malignancy.is_intermediate())
        {
            return Err("distribution A contains a malignancy-3 record".into());
        }
        if self.split_role == SplitRole::Test && self.pseudo_count() > 0 {
            return Err("test split contains pseudo-labeled records".into());
        }
        Ok(())
    }
}

/// Inclusive valid range per biomarker, in [`BiomarkerVector`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerRanges {
    pub ranges: [(f64, f64); N_BIOMARKERS],
}

impl Default for BiomarkerRanges {
    /// LIDC rating conventions.
    fn default() -> Self {
        Self {
            ranges: [
                (1.0, 5.0),
                (1.0, 4.0),
                (1.0, 6.0),
                (1.0, 5.0),
                (1.0, 5.0),
                (1.0, 5.0),
                (1.0, 5.0),
                (1.0, 5.0),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    BiomarkerOutOfRange { name: String, value: f64 },
    EmptyMask,
    MaskNotBinary,
    DimsMismatch,
    SpacingMismatch,
    Grid { which: String, detail: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::BiomarkerOutOfRange { name, value } => {
                write!(f, "{name} out of range ({value})")
            }
            Violation::EmptyMask => write!(f, "empty mask"),
            Violation::MaskNotBinary => write!(f, "mask is not binary"),
            Violation::DimsMismatch => write!(f, "volume and mask dims differ"),
            Violation::SpacingMismatch => write!(f, "volume and mask spacing differ"),
            Violation::Grid { which, detail } => write!(f, "{which}: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every record invariant and reports all violations found.
pub fn validate_record(record: &NoduleRecord, ranges: &BiomarkerRanges) -> ValidationReport {
    let mut violations = Vec::new();
    for ((name, value), (lo, hi)) in BIOMARKER_NAMES
        .iter()
        .zip(record.biomarkers.to_array())
        .zip(ranges.ranges)
    {
        if !value.is_finite() || value < lo || value > hi {
            violations.push(Violation::BiomarkerOutOfRange {
                name: name.to_string(),
                value,
            });
        }
    }
    for (which, grid) in [("volume", &record.volume), ("mask", &record.mask)] {
        for err in grid.check() {
            if matches!(err, DataError::NonBinaryMask) {
                continue;
            }
            violations.push(Violation::Grid {
                which: which.to_string(),
                detail: err.to_string(),
            });
        }
    }
    if record.volume.kind != GridKind::Intensity {
        violations.push(Violation::Grid {
            which: "volume".into(),
            detail: "expected an intensity grid".into(),
        });
    }
    if !record.mask.is_binary() {
        violations.push(Violation::MaskNotBinary);
    }
    if record.volume.dims != record.mask.dims {
        violations.push(Violation::DimsMismatch);
    }
    if record.volume.spacing != record.mask.spacing {
        violations.push(Violation::SpacingMismatch);
    }
    if record.mask.count_set() == 0 {
        violations.push(Violation::EmptyMask);
    }
    ValidationReport { violations }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn cube_record(dims: [usize; 3], spacing: [f32; 3], malignancy: i64) -> NoduleRecord {
        let mut mask = VoxelGrid::zeros(dims, spacing, GridKind::BinaryMask);
        let c = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
        for z in c[2] - 1..=c[2] {
            for y in c[1] - 1..=c[1] {
                for x in c[0] - 1..=c[0] {
                    mask.set(x, y, z, 1.0);
                }
            }
        }
        let mut volume = mask.clone();
        volume.kind = GridKind::Intensity;
        NoduleRecord {
            patient_id: "P0001".into(),
            biomarkers: BiomarkerVector::from_array([3.0, 1.0, 6.0, 4.0, 4.0, 2.0, 2.0, 5.0]),
            malignancy: MalignancyScore::new(malignancy).unwrap(),
            volume,
            mask,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::cube_record;
    use super::*;

    #[test]
    fn valid_record_passes() {
        let r = cube_record([32, 32, 16], [0.7, 0.7, 2.5], 4);
        assert!(validate_record(&r, &BiomarkerRanges::default()).passed());
    }

    #[test]
    fn spiculation_zero_is_flagged() {
        let mut r = cube_record([32, 32, 16], [0.7, 0.7, 2.5], 4);
        r.biomarkers.spiculation = 0.0;
        let rep = validate_record(&r, &BiomarkerRanges::default());
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].to_string(), "spiculation out of range (0)");
    }

    #[test]
    fn empty_mask_is_flagged() {
        let mut r = cube_record([32, 32, 16], [0.7, 0.7, 2.5], 4);
        r.mask.data.iter_mut().for_each(|v| *v = 0.0);
        let rep = validate_record(&r, &BiomarkerRanges::default());
        assert_eq!(rep.violations, vec![Violation::EmptyMask]);
        assert_eq!(rep.violations[0].to_string(), "empty mask");
    }

    /// Toggle each invariant on its own; exactly that invariant must be reported.
    #[test]
    fn each_invariant_toggles_independently() {
        let base = cube_record([8, 8, 4], [1.0, 1.0, 2.0], 2);
        let ranges = BiomarkerRanges::default();
        assert!(validate_record(&base, &ranges).passed());

        type Mutator = Box<dyn Fn(&mut NoduleRecord)>;
        let mut cases: Vec<(Mutator, fn(&Violation) -> bool)> = Vec::new();
        for i in 0..N_BIOMARKERS {
            cases.push((
                Box::new(move |r: &mut NoduleRecord| {
                    let mut a = r.biomarkers.to_array();
                    a[i] = 99.0;
                    r.biomarkers = BiomarkerVector::from_array(a);
                }),
                |v| matches!(v, Violation::BiomarkerOutOfRange { .. }),
            ));
        }
        cases.push((
            Box::new(|r| r.biomarkers.texture = f64::NAN),
            |v| matches!(v, Violation::BiomarkerOutOfRange { .. }),
        ));
        cases.push((
            Box::new(|r| r.mask.data.iter_mut().for_each(|v| *v = 0.0)),
            |v| matches!(v, Violation::EmptyMask),
        ));
        cases.push((
            Box::new(|r| {
                let i = r.mask.data.iter().position(|&v| v == 1.0).unwrap();
                r.mask.data[i] = 0.5;
            }),
            |v| matches!(v, Violation::MaskNotBinary),
        ));
        cases.push((
            Box::new(|r| r.volume.spacing[2] = 3.0),
            |v| matches!(v, Violation::SpacingMismatch),
        ));
        cases.push((
            Box::new(|r| {
                r.volume.dims = [8, 4, 8];
            }),
            |v| matches!(v, Violation::DimsMismatch),
        ));
        cases.push((
            Box::new(|r| {
                r.volume.data.pop();
            }),
            |v| matches!(v, Violation::Grid { .. }),
        ));

        for (i, (mutate, expect)) in cases.iter().enumerate() {
            let mut r = base.clone();
            let before = r.clone();
            mutate(&mut r);
            let rep = validate_record(&r, &ranges);
            assert_eq!(rep.violations.len(), 1, "case {i}: {:?}", rep.violations);
            assert!(expect(&rep.violations[0]), "case {i}: {:?}", rep.violations);
            let _ = before;
        }
    }

    #[test]
    fn malignancy_bounds() {
        assert!(MalignancyScore::new(0).is_err());
        assert!(MalignancyScore::new(6).is_err());
        assert_eq!(MalignancyScore::new(3).unwrap().grouped_label(), None);
        assert_eq!(MalignancyScore::new(2).unwrap().grouped_label(), Some(0));
        assert_eq!(MalignancyScore::new(5).unwrap().grouped_label(), Some(1));
    }

    #[test]
    fn voxel_grid_rejects_non_binary_mask() {
        let err = VoxelGrid::new([1, 1, 2], [1.0; 3], vec![0.0, 2.0], GridKind::BinaryMask);
        assert_eq!(err.unwrap_err(), DataError::NonBinaryMask);
        let err = VoxelGrid::new([1, 1, 2], [1.0, 0.0, 1.0], vec![0.0, 1.0], GridKind::BinaryMask);
        assert!(matches!(err.unwrap_err(), DataError::BadSpacing(_)));
    }
}
