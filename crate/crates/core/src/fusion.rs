//! Concatenation of deep image features with block-tiled tabular features.
//!
//! Short vectors are repeated whole (`[f1..fm, f1..fm, ...]`) until they are
//! roughly as long as the 64 image features, then appended after them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnn3d::DEEP_FEATURE_LEN;
use crate::data_model::BiomarkerVector;
use crate::radiomics::RadiomicVector;

pub const BIOMARKER_REPEATS: usize = 8;
pub const RADIOMIC_REPEATS: usize = 21;
pub const COMBINED_REPEATS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("cannot tile an empty vector")]
    EmptyInput,
    #[error("repeat count must be >= 1")]
    ZeroRepeats,
    #[error("image features have length {0}, expected {DEEP_FEATURE_LEN}")]
    ImageLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    Image,
    ImageBiomarkers,
    ImageRadiomics,
    ImageBiomarkersRadiomics,
}

impl Composition {
    pub fn expected_len(self) -> usize {
        match self {
            Composition::Image => DEEP_FEATURE_LEN,
            Composition::ImageBiomarkers => DEEP_FEATURE_LEN + 8 * BIOMARKER_REPEATS,
            Composition::ImageRadiomics => DEEP_FEATURE_LEN + 3 * RADIOMIC_REPEATS,
            Composition::ImageBiomarkersRadiomics => DEEP_FEATURE_LEN + 11 * COMBINED_REPEATS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedVector {
    pub values: Vec<f64>,
    pub composition: Composition,
}

pub fn tile(features: &[f64], repeats: usize) -> Result<Vec<f64>, FusionError> {
    if features.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    if repeats == 0 {
        return Err(FusionError::ZeroRepeats);
    }
    Ok(features.repeat(repeats))
}

/// `image ++ tile(extra)`, where `extra` is the biomarkers, the radiomics,
/// or biomarkers followed by radiomics.
pub fn fuse(
    image: &[f64],
    biomarkers: Option<&BiomarkerVector>,
    radiomics: Option<&RadiomicVector>,
) -> Result<FusedVector, FusionError> {
    if image.len() != DEEP_FEATURE_LEN {
        return Err(FusionError::ImageLength(image.len()));
    }
    let (block, repeats, composition) = match (biomarkers, radiomics) {
        (None, None) => (Vec::new(), 0, Composition::Image),
        (Some(b), None) => (b.to_array().to_vec(), BIOMARKER_REPEATS, Composition::ImageBiomarkers),
        (None, Some(r)) => (r.to_array().to_vec(), RADIOMIC_REPEATS, Composition::ImageRadiomics),
        (Some(b), Some(r)) => {
            let mut v = b.to_array().to_vec();
            v.extend_from_slice(&r.to_array());
            (v, COMBINED_REPEATS, Composition::ImageBiomarkersRadiomics)
        }
    };
    let mut values = image.to_vec();
    if repeats > 0 {
        values.extend(tile(&block, repeats)?);
    }
    debug_assert_eq!(values.len(), composition.expected_len());
    Ok(FusedVector { values, composition })
}
