//! Matrix files: the binary `DMAT1` format and plain CSV.
//!
//! `DMAT1` layout, all integers little-endian:
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `b"DMAT"`           |
//! | 4      | 4    | version, `u32`, always 1  |
//! | 8      | 8    | rows, `u64`               |
//! | 16     | 8    | cols, `u64`               |
//! | 24     | 8·rows·cols | `f64` values, column-major |
//!
//! CSV files hold one matrix row per line, comma separated, no header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nmf_core::DenseMatrix;

use crate::error::{NmfError, Result};

pub const DMAT_MAGIC: &[u8; 4] = b"DMAT";
pub const DMAT_VERSION: u32 = 1;
pub const DMAT_HEADER_LEN: usize = 24;

pub fn encoded_len(m: &DenseMatrix) -> usize {
    DMAT_HEADER_LEN + 8 * m.len()
}

pub fn encode_dmat(m: &DenseMatrix, out: &mut Vec<u8>) {
    out.reserve(encoded_len(m));
    out.extend_from_slice(DMAT_MAGIC);
    out.extend_from_slice(&DMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

fn parse_header(header: &[u8]) -> Result<(usize, usize)> {
    if header.len() < DMAT_HEADER_LEN {
        return Err(NmfError::Format(format!("header is {} bytes, need {DMAT_HEADER_LEN}", header.len())));
    }
    if &header[..4] != DMAT_MAGIC {
        return Err(NmfError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != DMAT_VERSION {
        return Err(NmfError::Format(format!("unsupported version {version}")));
    }
    let rows = usize::try_from(u64_at(header, 8)).map_err(|_| NmfError::Format("rows overflow".into()))?;
    let cols = usize::try_from(u64_at(header, 16)).map_err(|_| NmfError::Format("cols overflow".into()))?;
    rows.checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| NmfError::Format(format!("{rows}x{cols} is too large")))?;
    Ok((rows, cols))
}

/// Decodes one complete `DMAT1` body. Trailing bytes are an error.
pub fn decode_dmat(bytes: &[u8]) -> Result<DenseMatrix> {
    let (rows, cols) = parse_header(bytes)?;
    let body = &bytes[DMAT_HEADER_LEN..];
    if body.len() != 8 * rows * cols {
        return Err(NmfError::Format(format!(
            "{rows}x{cols} needs {} data bytes, found {}",
            8 * rows * cols,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DenseMatrix::new(rows, cols, data)?)
}

pub fn write_dmat<W: Write>(mut w: W, m: &DenseMatrix) -> Result<()> {
    let mut buf = Vec::new();
    encode_dmat(m, &mut buf);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_dmat<R: Read>(mut r: R) -> Result<DenseMatrix> {
    let mut header = [0u8; DMAT_HEADER_LEN];
    r.read_exact(&mut header)?;
    let (rows, cols) = parse_header(&header)?;
    let mut body = vec![0u8; 8 * rows * cols];
    r.read_exact(&mut body)?;
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DenseMatrix::new(rows, cols, data)?)
}

pub fn write_csv<W: Write>(w: W, m: &DenseMatrix) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for r in 0..m.rows() {
        // `{:?}` prints the shortest string that round-trips.
        out.write_record(m.row(r).iter().map(|v| format!("{v:?}")))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<DenseMatrix> {
    let mut input = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in input.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| NmfError::Format(format!("line {}: {f:?}: {e}", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(DenseMatrix::from_rows(&refs)?)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a matrix, choosing CSV for a `.csv` extension and `DMAT1` otherwise.
pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    let file = BufReader::new(File::open(path)?);
    if is_csv(path) {
        read_csv(file)
    } else {
        read_dmat(file)
    }
}

pub fn save_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_csv(file, m)
    } else {
        write_dmat(file, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dmat_layout_is_exact() {
        let m = DenseMatrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        let mut buf = Vec::new();
        encode_dmat(&m, &mut buf);
        assert_eq!(&buf[..4], b"DMAT");
        assert_eq!(&buf[4..8], &[1, 0, 0, 0]);
        assert_eq!(u64_at(&buf, 8), 1);
        assert_eq!(u64_at(&buf, 16), 2);
        assert_eq!(&buf[24..32], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 40);
        assert_eq!(decode_dmat(&buf).unwrap(), m);
    }

    #[test]
    fn dmat_rejects_garbage() {
        assert!(matches!(decode_dmat(b"DMAT"), Err(NmfError::Format(_))));
        let mut buf = Vec::new();
        encode_dmat(&DenseMatrix::zeros(2, 2), &mut buf);
        buf[4] = 2;
        assert!(decode_dmat(&buf).is_err());
        buf[4] = 1;
        buf.pop();
        assert!(decode_dmat(&buf).is_err());
        buf[0] = b'X';
        assert!(decode_dmat(&buf).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_bits() {
        let m = DenseMatrix::from_rows(&[&[0.1, 1.0 / 3.0], &[1e-300, 7.0]]).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &m).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), m);
    }

    proptest::proptest! {
        #[test]
        fn both_formats_round_trip(rows in 1usize..6, cols in 1usize..6, seed in proptest::prelude::any::<u64>()) {
            let mut s = seed;
            let m = DenseMatrix::from_fn(rows, cols, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                f64::from_bits(s >> 2) - 1.0
            });
            let mut buf = Vec::new();
            encode_dmat(&m, &mut buf);
            proptest::prop_assert_eq!(decode_dmat(&buf).unwrap(), m.clone());
            buf.clear();
            write_csv(&mut buf, &m).unwrap();
            proptest::prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), m);
        }
    }

    #[test]
    fn csv_reports_bad_fields() {
        let err = read_csv("1,2\n3,x\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(read_csv("1,2\n3\n".as_bytes()).is_err());
    }
}
