//! Portable record container.
//!
//! A container is a directory holding `manifest.json` plus one binary blob
//! per record. Blob layout (all little-endian):
//!
//! | bytes            | content                               |
//! |------------------|---------------------------------------|
//! | 4                | magic `NFV1`                          |
//! | 3 × u32          | dims (nx, ny, nz)                     |
//! | 3 × f32          | spacing (sx, sy, sz) in mm            |
//! | nx·ny·nz × f32   | intensities, x-fastest                |
//! | nx·ny·nz × u8    | mask (0 or 1), x-fastest              |
//!
//! The manifest stores the schema version, per-record metadata, relative blob
//! paths, and a CRC32 of every blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::data_model::{BiomarkerVector, GridKind, MalignancyScore, NoduleRecord, VoxelGrid};

pub const BLOB_MAGIC: &[u8; 4] = b"NFV1";
pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const HEADER_LEN: usize = 4 + 12 + 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub biomarkers: [f64; 8],
    pub malignancy: MalignancyScore,
    pub blob: String,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerManifest {
    pub schema_version: u32,
    pub blob_format: String,
    pub records: Vec<ManifestEntry>,
}

fn encode_blob(record: &NoduleRecord) -> Vec<u8> {
    let n = record.volume.len();
    let mut buf = Vec::with_capacity(HEADER_LEN + 5 * n);
    buf.extend_from_slice(BLOB_MAGIC);
    for d in record.volume.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in record.volume.spacing {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    for v in &record.volume.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend(record.mask.data.iter().map(|&v| v as u8));
    buf
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_f32(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn decode_blob(name: &str, bytes: &[u8]) -> Result<(VoxelGrid, VoxelGrid), IngestError> {
    if bytes.len() < 4 || &bytes[..4] != BLOB_MAGIC {
        return Err(IngestError::VersionMismatch(format!(
            "{name}: bad blob magic (expected NFV1)"
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(IngestError::Truncated {
            blob: name.to_string(),
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let dims = [
        read_u32(bytes, 4) as usize,
        read_u32(bytes, 8) as usize,
        read_u32(bytes, 12) as usize,
    ];
    let spacing = [read_f32(bytes, 16), read_f32(bytes, 20), read_f32(bytes, 24)];
    let n = dims[0] * dims[1] * dims[2];
    let expected = HEADER_LEN + 5 * n;
    if bytes.len() < expected {
        return Err(IngestError::Truncated {
            blob: name.to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IngestError::Corrupt(format!(
            "{name}: {} trailing bytes",
            bytes.len() - expected
        )));
    }
    let intens: Vec<f32> = (0..n).map(|i| read_f32(bytes, HEADER_LEN + 4 * i)).collect();
    let mask_off = HEADER_LEN + 4 * n;
    let mask: Vec<f32> = bytes[mask_off..].iter().map(|&b| b as f32).collect();
    let volume = VoxelGrid::new(dims, spacing, intens, GridKind::Intensity)
        .map_err(|e| IngestError::Corrupt(format!("{name}: {e}")))?;
    let mask = VoxelGrid::new(dims, spacing, mask, GridKind::BinaryMask)
        .map_err(|e| IngestError::Corrupt(format!("{name}: {e}")))?;
    Ok((volume, mask))
}

fn check_storable(i: usize, r: &NoduleRecord) -> Result<(), IngestError> {
    let bad = |why: &str| Err(IngestError::InvalidRecord(format!("record {i}: {why}")));
    if r.volume.dims != r.mask.dims || r.volume.spacing != r.mask.spacing {
        return bad("volume and mask geometry differ");
    }
    if r.volume.data.len() != r.volume.len() || r.mask.data.len() != r.mask.len() {
        return bad("voxel data length does not match dims");
    }
    if !r.mask.is_binary() {
        return bad("mask is not binary");
    }
    Ok(())
}

/// Writes records to a container directory (created if missing).
pub fn save_container(records: &[NoduleRecord], dir: &Path) -> Result<ContainerManifest, IngestError> {
    for (i, r) in records.iter().enumerate() {
        check_storable(i, r)?;
    }
    let blob_dir = dir.join("records");
    fs::create_dir_all(&blob_dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let rel = format!("records/{i:06}.nfv");
        let bytes = encode_blob(r);
        fs::write(dir.join(&rel), &bytes)?;
        entries.push(ManifestEntry {
            patient_id: r.patient_id.clone(),
            biomarkers: r.biomarkers.to_array(),
            malignancy: r.malignancy,
            blob: rel,
            crc32: crc32fast::hash(&bytes),
        });
    }
    let manifest = ContainerManifest {
        schema_version: SCHEMA_VERSION,
        blob_format: "NFV1".into(),
        records: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<ContainerManifest, IngestError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| IngestError::Corrupt(format!("manifest: {e}")))?;
    let version = raw.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(IngestError::VersionMismatch(format!(
            "manifest schema_version {version:?}, expected {SCHEMA_VERSION}"
        )));
    }
    serde_json::from_value(raw).map_err(|e| IngestError::Corrupt(format!("manifest: {e}")))
}

/// Reads every record of a container, verifying checksums and layout.
pub fn load_container(dir: &Path) -> Result<Vec<NoduleRecord>, IngestError> {
    let manifest = read_manifest(dir)?;
    manifest
        .records
        .iter()
        .map(|entry| {
            let path: PathBuf = dir.join(&entry.blob);
            let bytes = fs::read(&path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
            let crc = crc32fast::hash(&bytes);
            if crc != entry.crc32 {
                return Err(IngestError::ChecksumMismatch {
                    blob: entry.blob.clone(),
                    expected: entry.crc32,
                    actual: crc,
                });
            }
            let (volume, mask) = decode_blob(&entry.blob, &bytes)?;
            Ok(NoduleRecord {
                patient_id: entry.patient_id.clone(),
                biomarkers: BiomarkerVector::from_array(entry.biomarkers),
                malignancy: entry.malignancy,
                volume,
                mask,
            })
        })
        .collect()
}

/// SHA-256 over the manifest bytes; the manifest pins every blob by CRC.
pub fn container_fingerprint(dir: &Path) -> Result<String, IngestError> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(dir.join(MANIFEST_FILE))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic::{generate_synthetic, SyntheticConfig};

    fn records(n: usize) -> Vec<NoduleRecord> {
        generate_synthetic(&SyntheticConfig {
            n_records: n,
            seed: 11,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn bits(r: &NoduleRecord) -> Vec<u32> {
        r.volume.data.iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let recs = records(10);
        save_container(&recs, dir.path()).unwrap();
        let back = load_container(dir.path()).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a, b);
            assert_eq!(bits(a), bits(b));
            assert_eq!(
                a.biomarkers.to_array().map(f64::to_bits),
                b.biomarkers.to_array().map(f64::to_bits)
            );
        }
    }

    #[test]
    fn flipped_magic_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        save_container(&records(2), dir.path()).unwrap();
        let blob = dir.path().join("records/000000.nfv");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[0] = b'X';
        fs::write(&blob, &bytes).unwrap();
        // keep the checksum consistent so the magic check is what fires
        let mut m = read_manifest(dir.path()).unwrap();
        m.records[0].crc32 = crc32fast::hash(&bytes);
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(
            load_container(dir.path()),
            Err(IngestError::VersionMismatch(_))
        ));
    }

    #[test]
    fn truncated_blob_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        save_container(&records(2), dir.path()).unwrap();
        let blob = dir.path().join("records/000001.nfv");
        let mut bytes = fs::read(&blob).unwrap();
        bytes.truncate(HEADER_LEN + 1000);
        fs::write(&blob, &bytes).unwrap();
        let mut m = read_manifest(dir.path()).unwrap();
        m.records[1].crc32 = crc32fast::hash(&bytes);
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(
            load_container(dir.path()),
            Err(IngestError::Truncated { .. })
        ));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        save_container(&records(1), dir.path()).unwrap();
        let blob = dir.path().join("records/000000.nfv");
        let mut bytes = fs::read(&blob).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(
            load_container(dir.path()),
            Err(IngestError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn manifest_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        save_container(&records(1), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 9");
        fs::write(&p, text).unwrap();
        assert!(matches!(
            load_container(dir.path()),
            Err(IngestError::VersionMismatch(_))
        ));
    }

    #[test]
    fn blob_layout_is_little_endian_x_fastest() {
        let mut r = records(1).remove(0);
        r.volume.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32);
        let bytes = encode_blob(&r);
        assert_eq!(&bytes[..4], b"NFV1");
        assert_eq!(read_u32(&bytes, 4), 32);
        assert_eq!(read_u32(&bytes, 12), 16);
        // voxel (1, 0, 0) is the second float, voxel (0, 1, 0) the 33rd
        assert_eq!(read_f32(&bytes, HEADER_LEN + 4), 1.0);
        assert_eq!(read_f32(&bytes, HEADER_LEN + 4 * 32), 32.0);
        assert_eq!(bytes.len(), HEADER_LEN + 5 * 32 * 32 * 16);
    }

    #[test]
    fn missing_directory_is_io_error() {
        assert!(matches!(
            load_container(Path::new("/nonexistent/container")),
            Err(IngestError::Io(_))
        ));
    }
}
