//! "TSRC" checkpoints: learnable parameters, Adam moments and step counter.
//!
//! Layout (little-endian): magic `TSRC`, u32 version, u32 texture width,
//! u32 texture height, u32 view count, u32 prior parameter count, u64 step,
//! then f64 parameters, f64 first moments and f64 second moments.

use std::fs;
use std::path::Path;

use super::{AdamState, LearnableParams, PriorNet};
use crate::error::{Error, Result};
use crate::raster::Raster;

const MAGIC: &[u8; 4] = b"TSRC";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: LearnableParams,
    pub adam: AdamState,
}

pub fn write_checkpoint(path: &Path, params: &LearnableParams, adam: &AdamState) -> Result<()> {
    let n = params.len();
    if adam.m.len() != n || adam.v.len() != n {
        return Err(Error::Dimension(
            "optimizer moments do not match parameters".into(),
        ));
    }
    let (w, h) = params.tex_dims();
    let mut buf = Vec::with_capacity(HEADER_LEN + 24 * n);
    buf.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        w as u32,
        h as u32,
        params.num_views() as u32,
        PriorNet::PARAM_COUNT as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&adam.step.to_le_bytes());
    for v in params.to_vec().iter().chain(&adam.m).chain(&adam.v) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |offset: usize, msg: &str| Error::parse(path, format!("{msg} at byte {offset}"));
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated checkpoint header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, "bad magic (expected TSRC)"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(fail(
            4,
            &format!("unsupported checkpoint version {version}"),
        ));
    }
    let (w, h, views, prior) = (
        u32_at(8) as usize,
        u32_at(12) as usize,
        u32_at(16) as usize,
        u32_at(20) as usize,
    );
    if prior != PriorNet::PARAM_COUNT {
        return Err(fail(
            20,
            &format!(
                "prior has {prior} parameters, expected {}",
                PriorNet::PARAM_COUNT
            ),
        ));
    }
    let step = u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
    let n = w
        .checked_mul(h)
        .and_then(|t| t.checked_add(views + prior))
        .ok_or_else(|| Error::Parameter("checkpoint dimensions overflow".into()))?;
    let expected = n
        .checked_mul(24)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Parameter("checkpoint dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            &format!(
                "payload is {} bytes, expected {}",
                bytes.len() - HEADER_LEN,
                expected - HEADER_LEN
            ),
        ));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(fail(HEADER_LEN + 8 * i, "non-finite value"));
    }
    let mut params = LearnableParams {
        lambda_raw: Raster::zeros(w, h),
        sigma_raw: vec![0.0; views],
        prior: PriorNet::zeros(),
    };
    params.set_from(&values[..n])?;
    Ok(Checkpoint {
        params,
        adam: AdamState {
            m: values[n..2 * n].to_vec(),
            v: values[2 * n..].to_vec(),
            step,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsrc");
        let params = LearnableParams::new((5, 4), &[0.7, 1.1], 3).unwrap();
        let mut adam = AdamState::new(params.len());
        adam.step = 17;
        adam.m[3] = 0.25;
        adam.v[7] = 1e-3;
        write_checkpoint(&path, &params, &adam).unwrap();
        let c = read_checkpoint(&path).unwrap();
        assert_eq!(c.params, params);
        assert_eq!(c.adam, adam);

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Parse { .. })));
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Parse { .. })));
    }
}
