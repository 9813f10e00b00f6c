//! "TSR1" sparse maps: magic, u32 rows, u32 cols, u64 nnz, u64 row offsets
//! (rows + 1), u32 column indices, f32 values; all little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::operators::SparseLinearMap;

const MAGIC: &[u8; 4] = b"TSR1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// Values are narrowed to f32.
pub fn write_sparse_map(path: &Path, map: &SparseLinearMap) -> Result<()> {
    let rows =
        u32::try_from(map.rows()).map_err(|_| Error::Parameter("too many rows for TSR1".into()))?;
    let cols = u32::try_from(map.cols())
        .map_err(|_| Error::Parameter("too many columns for TSR1".into()))?;
    let nnz = map.nnz();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (map.rows() + 1) + 8 * nnz);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    buf.extend_from_slice(&(nnz as u64).to_le_bytes());
    for &o in map.row_offsets() {
        buf.extend_from_slice(&(o as u64).to_le_bytes());
    }
    for &c in map.col_indices() {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    for &v in map.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads and validates a map: offsets start at 0, never decrease and end at
/// nnz; columns are in range and strictly increasing within each row.
pub fn read_sparse_map(path: &Path) -> Result<SparseLinearMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |offset: usize, msg: String| Error::parse(path, format!("{msg} (byte {offset})"));
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, "bad magic, expected TSR1".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let rows = u32_at(4) as usize;
    let cols = u32_at(8) as usize;
    let nnz = usize::try_from(u64_at(12))
        .map_err(|_| Error::Parameter("nnz does not fit in memory".into()))?;
    let offsets_at = HEADER_LEN;
    let cols_at = rows
        .checked_add(1)
        .and_then(|r| r.checked_mul(8))
        .and_then(|b| b.checked_add(offsets_at))
        .ok_or_else(|| Error::Parameter("TSR1 dimensions overflow".into()))?;
    let values_at = nnz
        .checked_mul(4)
        .and_then(|b| b.checked_add(cols_at))
        .ok_or_else(|| Error::Parameter("TSR1 dimensions overflow".into()))?;
    let end = nnz
        .checked_mul(4)
        .and_then(|b| b.checked_add(values_at))
        .ok_or_else(|| Error::Parameter("TSR1 dimensions overflow".into()))?;
    if bytes.len() != end {
        return Err(fail(
            bytes.len().min(end),
            format!("file is {} bytes, header implies {end}", bytes.len()),
        ));
    }

    let mut row_offsets = Vec::with_capacity(rows + 1);
    for r in 0..=rows {
        let at = offsets_at + 8 * r;
        let o = u64_at(at);
        let prev = row_offsets.last().copied().unwrap_or(0);
        if r == 0 && o != 0 {
            return Err(fail(at, "row offsets must start at 0".into()));
        }
        if (o as u128) < prev as u128 || o > nnz as u64 {
            return Err(fail(
                at,
                format!("row offset {o} of row {r} is not monotone within [0, nnz]"),
            ));
        }
        row_offsets.push(o as usize);
    }
    if row_offsets[rows] != nnz {
        return Err(fail(
            offsets_at + 8 * rows,
            format!(
                "nnz mismatch: header says {nnz}, offsets end at {}",
                row_offsets[rows]
            ),
        ));
    }

    let col_indices: Vec<u32> = (0..nnz).map(|k| u32_at(cols_at + 4 * k)).collect();
    for r in 0..rows {
        for k in row_offsets[r]..row_offsets[r + 1] {
            let c = col_indices[k];
            if c as usize >= cols {
                return Err(fail(
                    cols_at + 4 * k,
                    format!("column index {c} out of range [0, {cols}) at row {r}, entry {k}"),
                ));
            }
            if k > row_offsets[r] && col_indices[k - 1] >= c {
                return Err(fail(
                    cols_at + 4 * k,
                    format!("columns not sorted and unique at row {r}, entry {k}"),
                ));
            }
        }
    }

    let mut values = Vec::with_capacity(nnz);
    for k in 0..nnz {
        let at = values_at + 4 * k;
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(fail(at, format!("non-finite value at entry {k}")));
        }
        values.push(v as f64);
    }
    SparseLinearMap::from_csr(rows, cols, row_offsets, col_indices, values)
}
