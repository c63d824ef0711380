//! Binary checkpoint: `FINNCKPT`, format version, layer shapes, metadata,
//! then the flat parameters as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelMeta, MlpParams, HIDDEN, INPUTS, N_PARAMS};
use crate::error::{Error, Result};
use crate::pricers::OptionKind;

const MAGIC: &[u8; 8] = b"FINNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const SHAPES: [(u32, u32); 3] = [(HIDDEN as u32, INPUTS as u32), (HIDDEN as u32, HIDDEN as u32), (1, HIDDEN as u32)];

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode(params: &MlpParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + 8 * N_PARAMS);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(SHAPES.len() as u32).to_le_bytes());
    for (r, c) in SHAPES {
        buf.extend_from_slice(&r.to_le_bytes());
        buf.extend_from_slice(&c.to_le_bytes());
    }
    buf.extend_from_slice(&params.meta.seed.to_le_bytes());
    buf.extend_from_slice(&params.meta.epoch.to_le_bytes());
    buf.push(match params.meta.kind {
        OptionKind::Call => 0,
        OptionKind::Put => 1,
    });
    put_str(&mut buf, &params.meta.process);
    put_str(&mut buf, &params.meta.loss);
    buf.extend_from_slice(&(params.theta.len() as u32).to_le_bytes());
    for v in &params.theta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint {
                field,
                detail: format!("truncated file ({} bytes)", self.buf.len()),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn string(&mut self, field: &'static str) -> Result<String> {
        let n = self.u32(field)? as usize;
        let bytes = self.take(n, field)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Checkpoint {
            field,
            detail: "not UTF-8".into(),
        })
    }
}

pub fn decode(buf: &[u8]) -> Result<MlpParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint {
            field: "magic",
            detail: "not a FINN checkpoint".into(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let n_layers = r.u32("shapes")? as usize;
    let mut shapes = Vec::with_capacity(n_layers.min(16));
    for _ in 0..n_layers {
        shapes.push((r.u32("shapes")?, r.u32("shapes")?));
    }
    if shapes != SHAPES {
        return Err(Error::Checkpoint {
            field: "shapes",
            detail: format!("found {shapes:?}, expected {SHAPES:?}"),
        });
    }
    let seed = r.u64("seed")?;
    let epoch = r.u32("epoch")?;
    let kind = match r.take(1, "kind")?[0] {
        0 => OptionKind::Call,
        1 => OptionKind::Put,
        k => {
            return Err(Error::Checkpoint {
                field: "kind",
                detail: format!("unknown option kind {k}"),
            })
        }
    };
    let process = r.string("process")?;
    let loss = r.string("loss")?;
    let count = r.u32("parameters")? as usize;
    if count != N_PARAMS {
        return Err(Error::Checkpoint {
            field: "parameters",
            detail: format!("found {count}, expected {N_PARAMS}"),
        });
    }
    let raw = r.take(8 * N_PARAMS, "parameters")?;
    let theta: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.pos != buf.len() {
        return Err(Error::Checkpoint {
            field: "parameters",
            detail: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    if let Some(k) = theta.iter().position(|v| !v.is_finite()) {
        return Err(Error::Checkpoint {
            field: "parameters",
            detail: format!("parameter {k} is not finite"),
        });
    }
    Ok(MlpParams {
        theta,
        meta: ModelMeta {
            seed,
            epoch,
            process,
            loss,
            kind,
        },
    })
}

pub fn save_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(params))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn sample() -> MlpParams {
        let mut p = init_params(77);
        p.meta.epoch = 12;
        p.meta.process = "heston".into();
        p.meta.loss = "delta-gamma".into();
        p.meta.kind = OptionKind::Put;
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let p = sample();
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(p.meta, q.meta);
        assert!(p.theta.iter().zip(&q.theta).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode(&sample());
        for cut in [4, 20, bytes.len() - 1] {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("truncated"), "{err}");
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = encode(&sample());
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::CheckpointVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn shape_mismatch_names_field() {
        let mut bytes = encode(&sample());
        bytes[16..20].copy_from_slice(&49u32.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { field: "shapes", .. }), "{err}");
    }
}
