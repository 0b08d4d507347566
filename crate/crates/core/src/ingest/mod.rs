//! Dataset construction: LIDC annotation XML, the portable container, and the
//! synthetic generator.

pub mod container;
pub mod rasterize;
pub mod synthetic;
pub mod xml;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{validate_record, BiomarkerRanges, GridKind, NoduleRecord};

pub use container::{container_fingerprint, load_container, read_manifest, save_container};
pub use rasterize::{contour_centroid, infer_slice_spacing, rasterize_mask, BoxSpec};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use xml::{parse_annotation_xml, ParseOutcome, ParsedAnnotation};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed XML at line {line}, column {col}: {message}")]
    Xml { line: u32, col: u32, message: String },
    #[error("unsupported annotation schema: {0}")]
    UnsupportedSchema(String),
    #[error("invalid value in <{element}> at line {line}, column {col}: {value}")]
    InvalidValue {
        element: String,
        line: u32,
        col: u32,
        value: String,
    },
    #[error("no inclusion contour to rasterize")]
    NoInclusionContour,
    #[error("degenerate mask: no voxel lies strictly inside the contours")]
    DegenerateMask,
    #[error("checksum mismatch for {blob}: manifest {expected:08x}, file {actual:08x}")]
    ChecksumMismatch {
        blob: String,
        expected: u32,
        actual: u32,
    },
    #[error("version mismatch: {0}")]
    VersionMismatch(String),
    #[error("truncated blob {blob}: expected {expected} bytes, found {actual}")]
    Truncated {
        blob: String,
        expected: usize,
        actual: usize,
    },
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("infeasible synthetic config: {0}")]
    InfeasibleConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for IngestError {
    fn from(e: std::io::Error) -> Self {
        IngestError::Io(e.to_string())
    }
}

/// One closed annotation outline on one CT slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationContour {
    /// Slice position in mm.
    pub z_position: f64,
    /// Outline pixel indices `(x, y)`.
    pub edge_points: Vec<(i64, i64)>,
    /// `false` marks a hole to cut out of the nodule.
    pub inclusion: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationIngestCounts {
    pub built: usize,
    pub degenerate: usize,
    pub invalid: usize,
}

/// Turns parsed annotations into records.
///
/// XML carries no pixel data, so the intensity grid is the rasterized mask
/// itself; supply real volumes through a container for image experiments.
/// Annotations that rasterize to nothing or fail validation are dropped and
/// counted.
pub fn records_from_annotations(
    annotations: &[ParsedAnnotation],
    pixel_spacing: f32,
    default_slice_spacing: f32,
    ranges: &BiomarkerRanges,
) -> (Vec<NoduleRecord>, AnnotationIngestCounts) {
    let mut counts = AnnotationIngestCounts::default();
    let mut records = Vec::new();
    for ann in annotations {
        let sz = infer_slice_spacing(&ann.contours)
            .map(|s| s as f32)
            .unwrap_or(default_slice_spacing);
        let spec = BoxSpec::with_spacing([pixel_spacing, pixel_spacing, sz]);
        let Some(center) = contour_centroid(&ann.contours) else {
            counts.degenerate += 1;
            continue;
        };
        let mask = match rasterize_mask(&ann.contours, &spec, center) {
            Ok(m) => m,
            Err(e) => {
                warn!("{} / {}: {e}", ann.patient_id, ann.nodule_id);
                counts.degenerate += 1;
                continue;
            }
        };
        let mut volume = mask.clone();
        volume.kind = GridKind::Intensity;
        let record = NoduleRecord {
            patient_id: ann.patient_id.clone(),
            biomarkers: ann.biomarkers,
            malignancy: ann.malignancy,
            volume,
            mask,
        };
        let report = validate_record(&record, ranges);
        if report.passed() {
            records.push(record);
            counts.built += 1;
        } else {
            warn!(
                "{} / {}: {}",
                ann.patient_id,
                ann.nodule_id,
                report
                    .violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            );
            counts.invalid += 1;
        }
    }
    (records, counts)
}
