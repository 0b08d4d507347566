//! Model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "NFC1" | u32 version | u32 nx, ny, nz | u32 input channels | u32 layer count
//! per layer: u8 kind (1 conv, 2 pool, 3 flatten, 4 dense) | u8 activation | u32 width | f64 l2
//! per layer: u64 weight count | f64 weights | u64 bias count | f64 biases
//! u32 crc32 of everything above
//! ```
//!
//! Conv weights are `[out][in][kz][ky][kx]`, so kernels are x-fastest.

use std::path::Path;

use super::{Activation, Cnn3d, CnnArchitecture, CnnError, LayerParams, LayerSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NFC1";
const VERSION: u32 = 1;

fn act_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Sigmoid => 1,
        Activation::Linear => 2,
    }
}

fn act_from(code: u8) -> Result<Activation, CnnError> {
    match code {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Sigmoid),
        2 => Ok(Activation::Linear),
        c => Err(CnnError::Checkpoint(format!("unknown activation code {c}"))),
    }
}

pub fn to_bytes(model: &Cnn3d) -> Vec<u8> {
    let mut b = Vec::with_capacity(64 + model.parameter_count() * 8);
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    for d in model.arch.input_dims {
        b.extend_from_slice(&(d as u32).to_le_bytes());
    }
    b.extend_from_slice(&(model.arch.input_channels as u32).to_le_bytes());
    b.extend_from_slice(&(model.arch.layers.len() as u32).to_le_bytes());
    for spec in &model.arch.layers {
        let (kind, act, width, l2) = match *spec {
            LayerSpec::Conv3d {
                channels,
                activation,
                l2,
            } => (1u8, act_code(activation), channels, l2),
            LayerSpec::MaxPool3d => (2, 0, 0, 0.0),
            LayerSpec::Flatten => (3, 0, 0, 0.0),
            LayerSpec::Dense { units, activation, l2 } => (4, act_code(activation), units, l2),
        };
        b.push(kind);
        b.push(act);
        b.extend_from_slice(&(width as u32).to_le_bytes());
        b.extend_from_slice(&l2.to_le_bytes());
    }
    for p in &model.params {
        for part in [&p.weights, &p.bias] {
            b.extend_from_slice(&(part.len() as u64).to_le_bytes());
            for v in part {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CnnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            CnnError::Checkpoint(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CnnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CnnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CnnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CnnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, CnnError> {
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(CnnError::Checkpoint(format!("truncated: {n} values declared")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Cnn3d, CnnError> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CnnError::Checkpoint("bad magic, not an NFC1 checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(CnnError::Checkpoint(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CnnError::Checkpoint(format!("unsupported version {version}")));
    }
    let input_dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let input_channels = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let kind = r.u8()?;
        let act = r.u8()?;
        let width = r.u32()? as usize;
        let l2 = r.f64()?;
        layers.push(match kind {
            1 => LayerSpec::Conv3d {
                channels: width,
                activation: act_from(act)?,
                l2,
            },
            2 => LayerSpec::MaxPool3d,
            3 => LayerSpec::Flatten,
            4 => LayerSpec::Dense {
                units: width,
                activation: act_from(act)?,
                l2,
            },
            k => return Err(CnnError::Checkpoint(format!("unknown layer kind {k}"))),
        });
    }
    let mut params = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let weights = r.f64s()?;
        let bias = r.f64s()?;
        params.push(LayerParams { weights, bias });
    }
    if r.pos != body.len() {
        return Err(CnnError::Checkpoint("trailing bytes after parameters".into()));
    }
    let arch = CnnArchitecture {
        input_dims,
        input_channels,
        layers,
    };
    Cnn3d::from_parts(arch, params)
}

pub fn save_checkpoint(model: &Cnn3d, path: &Path) -> Result<(), CnnError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Cnn3d, CnnError> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Cnn3d {
        Cnn3d::build(CnnArchitecture::small([8, 8, 4]), 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/model.nfc");
        save_checkpoint(&m, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), m);
    }

    #[test]
    fn header_layout() {
        let b = to_bytes(&model());
        assert_eq!(&b[..4], b"NFC1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[24..28].try_into().unwrap()), 7);
        // first layer: conv, relu, 4 channels, l2 0.01
        assert_eq!(b[28], 1);
        assert_eq!(b[29], 0);
        assert_eq!(u32::from_le_bytes(b[30..34].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(b[34..42].try_into().unwrap()), 0.01);
    }

    #[test]
    fn corruption_detected() {
        let mut b = to_bytes(&model());
        let err = |b: &[u8]| match from_bytes(b) {
            Err(CnnError::Checkpoint(m)) => m,
            other => panic!("{other:?}"),
        };
        let mut bad_magic = b.clone();
        bad_magic[0] = b'X';
        assert!(err(&bad_magic).contains("magic"));
        let mid = b.len() / 2;
        b[mid] ^= 0x40;
        assert!(err(&b).contains("checksum"));
        let good = to_bytes(&model());
        let mut truncated = good[..good.len() - 100].to_vec();
        let crc = crc32fast::hash(&truncated);
        truncated.extend_from_slice(&crc.to_le_bytes());
        assert!(err(&truncated).contains("truncated"));
    }
}
