//! Portable float maps. `Pf` holds one channel, `PF` three; rows are stored
//! bottom to top as 32-bit floats whose byte order follows the sign of the
//! scale line (negative means little-endian).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::operators::FlowField;
use crate::raster::Raster;

/// Decoded header and samples of a PFM file, rows top to bottom.
#[derive(Debug)]
struct PfmImage {
    channels: usize,
    width: usize,
    height: usize,
    samples: Vec<f32>,
}

pub fn write_pfm(path: &Path, raster: &Raster) -> Result<()> {
    if !raster.is_finite() {
        return Err(Error::NonFinite(format!(
            "raster written to {}",
            path.display()
        )));
    }
    let (w, h) = raster.dims();
    let samples: Vec<f32> = raster.as_slice().iter().map(|&v| v as f32).collect();
    fs::write(path, encode(1, w, h, &samples)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Raster> {
    let img = decode(path, &fs::read(path).map_err(|e| Error::io(path, e))?)?;
    if img.channels != 1 {
        return Err(Error::parse(path, "expected a single-channel (Pf) map"));
    }
    Raster::from_vec(
        img.width,
        img.height,
        img.samples.iter().map(|&v| v as f64).collect(),
    )
}

/// Stores a flow as a three-channel map whose last channel is zero.
pub fn write_flow_pfm(path: &Path, flow: &FlowField) -> Result<()> {
    let (w, h) = flow.dims();
    let mut samples = Vec::with_capacity(3 * w * h);
    for (&dx, &dy) in flow.dx().iter().zip(flow.dy()) {
        samples.extend_from_slice(&[dx as f32, dy as f32, 0.0]);
    }
    fs::write(path, encode(3, w, h, &samples)).map_err(|e| Error::io(path, e))
}

/// Reads a flow written by [`write_flow_pfm`]; the third channel is ignored.
pub fn read_flow_pfm(path: &Path) -> Result<FlowField> {
    let img = decode(path, &fs::read(path).map_err(|e| Error::io(path, e))?)?;
    if img.channels != 3 {
        return Err(Error::parse(path, "expected a three-channel (PF) flow map"));
    }
    let dx = img.samples.iter().step_by(3).map(|&v| v as f64).collect();
    let dy = img
        .samples
        .iter()
        .skip(1)
        .step_by(3)
        .map(|&v| v as f64)
        .collect();
    FlowField::new(img.width, img.height, dx, dy)
}

fn encode(channels: usize, w: usize, h: usize, samples: &[f32]) -> Vec<u8> {
    let tag = if channels == 1 { "Pf" } else { "PF" };
    let mut buf = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    buf.reserve(samples.len() * 4);
    let row = w * channels;
    for y in (0..h).rev() {
        for v in &samples[y * row..(y + 1) * row] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

/// Splits off one whitespace-delimited header token, returning it with its
/// byte offset.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<(&'a str, usize)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .map(|s| (s, start))
}

fn decode(path: &Path, bytes: &[u8]) -> Result<PfmImage> {
    let fail = |offset: usize, msg: &str| Error::parse(path, format!("{msg} at byte {offset}"));
    let mut pos = 0;
    let (tag, at) = token(bytes, &mut pos).ok_or_else(|| fail(0, "missing PFM tag"))?;
    let channels = match tag {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(fail(at, "bad PFM tag (expected Pf or PF)")),
    };
    let mut dim = |what: &str| -> Result<usize> {
        let (t, at) =
            token(bytes, &mut pos).ok_or_else(|| fail(bytes.len(), &format!("missing {what}")))?;
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| fail(at, &format!("invalid {what} {t:?}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let (scale, at) = token(bytes, &mut pos).ok_or_else(|| fail(bytes.len(), "missing scale"))?;
    let scale: f64 = scale
        .parse()
        .ok()
        .filter(|s: &f64| *s != 0.0 && s.is_finite())
        .ok_or_else(|| fail(at, &format!("invalid scale {scale:?}")))?;
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail(pos, "header must end with a single whitespace byte"));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Parameter(format!("PFM dimensions {width}x{height} overflow")))?;
    let payload = &bytes[pos..];
    if payload.len() != n * 4 {
        return Err(fail(
            pos + payload.len().min(n * 4),
            &format!("payload is {} bytes, expected {}", payload.len(), n * 4),
        ));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let mut samples = vec![0.0f32; n];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().expect("4 bytes");
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, col) = (k / row, k % row);
        samples[(height - 1 - file_row) * row + col] = v;
    }
    Ok(PfmImage {
        channels,
        width,
        height,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_stored_bottom_up() {
        let r = Raster::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pfm");
        write_pfm(&p, &r).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        let first = f32::from_le_bytes(bytes[header.len()..header.len() + 4].try_into().unwrap());
        assert_eq!(first, 3.0);
        assert_eq!(read_pfm(&p).unwrap(), r);
    }

    #[test]
    fn big_endian_is_accepted() {
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        bytes.extend_from_slice(&5.0f32.to_be_bytes());
        bytes.extend_from_slice(&7.0f32.to_be_bytes());
        let r = decode(Path::new("x"), &bytes).unwrap();
        assert_eq!(r.samples, vec![7.0, 5.0]);
    }

    #[test]
    fn malformed_headers_report_offsets() {
        let cases: [(&[u8], &str); 4] = [
            (b"P5\n1 1\n-1\n", "byte 0"),
            (b"Pf\n1 x\n-1\n", "byte 5"),
            (b"Pf\n1 1\n0\n", "byte 7"),
            (b"Pf\n1 1\n-1\n\0\0", "byte 12"),
        ];
        for (bytes, offset) in cases {
            let e = decode(Path::new("x"), bytes).unwrap_err();
            assert!(matches!(e, Error::Parse { .. }), "{e}");
            assert!(e.to_string().contains(offset), "{e}");
        }
        let e = decode(Path::new("x"), b"Pf\n99999999999 99999999999\n-1\n").unwrap_err();
        assert!(matches!(e, Error::Parameter(_)), "{e}");
    }
}
