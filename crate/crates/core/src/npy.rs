//! Reader and writer for the NPY v1.0 array file format.
//!
//! Only the subset this project exchanges is supported: version 1.0,
//! little-endian `<f4` or `<f8` payloads, C order, rank at most 3. Anything
//! else is a hard parse error carrying the byte offset where the problem
//! was detected; there is no silent coercion. Written files always use
//! `<f8`, C order, and a header padded so the payload starts on a 64-byte
//! boundary.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
/// Offset of the 2-byte header length, directly after magic + version.
const HEADER_LEN_OFFSET: usize = 8;
const HEADER_START: usize = 10;

pub fn read_npy(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path.as_ref())?;
    parse_npy(&bytes)
}

pub fn write_npy(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_npy_bytes(tensor)?;
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn parse_npy(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_START {
        return Err(Error::npy(0, "file shorter than the 10-byte preamble"));
    }
    if &bytes[..6] != MAGIC {
        return Err(Error::npy(0, "bad magic, expected \\x93NUMPY"));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::npy(
            6,
            format!("unsupported version {}.{}, only 1.0", bytes[6], bytes[7]),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = HEADER_START + header_len;
    if bytes.len() < payload_start {
        return Err(Error::npy(
            HEADER_LEN_OFFSET,
            format!(
                "declared header length {} exceeds file size {}",
                header_len,
                bytes.len()
            ),
        ));
    }
    let header = std::str::from_utf8(&bytes[HEADER_START..payload_start])
        .map_err(|_| Error::npy(HEADER_START, "header is not ASCII"))?;

    let descr = dict_value(header, "descr")?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    let item_size = match descr {
        "<f4" => 4,
        "<f8" => 8,
        other => {
            return Err(Error::npy(
                HEADER_START,
                format!("unsupported dtype '{other}', only '<f4' and '<f8'"),
            ))
        }
    };

    let fortran = dict_value(header, "fortran_order")?;
    match fortran.trim() {
        "False" => {}
        "True" => {
            return Err(Error::npy(
                HEADER_START,
                "Fortran-order arrays are not supported",
            ))
        }
        other => {
            return Err(Error::npy(
                HEADER_START,
                format!("unreadable fortran_order value '{other}'"),
            ))
        }
    }

    let shape = parse_shape(dict_value(header, "shape")?)
        .map_err(|reason| Error::npy(HEADER_START, reason))?;
    if shape.len() > 3 {
        return Err(Error::npy(
            HEADER_START,
            format!("rank {} exceeds the supported maximum of 3", shape.len()),
        ));
    }

    let count: usize = shape.iter().product();
    let need = count * item_size;
    let payload = &bytes[payload_start..];
    if payload.len() < need {
        return Err(Error::npy(
            payload_start + payload.len(),
            format!(
                "truncated payload: need {} bytes, have {}",
                need,
                payload.len()
            ),
        ));
    }

    let mut data = Vec::with_capacity(count);
    match item_size {
        4 => {
            for chunk in payload[..need].chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
        _ => {
            for chunk in payload[..need].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
    }
    Tensor::from_vec(&shape, data)
}

pub fn to_npy_bytes(tensor: &Tensor) -> Result<Vec<u8>> {
    if tensor.rank() > 3 {
        return Err(Error::config(format!(
            "npy writer supports rank <= 3, got rank {}",
            tensor.rank()
        )));
    }
    let shape_str = match tensor.shape() {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        dims => {
            let inner: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            format!("({})", inner.join(", "))
        }
    };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_str}, }}");
    // Pad with spaces, newline-terminated, so the payload is 64-byte aligned.
    let unpadded = HEADER_START + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    let mut out = Vec::with_capacity(HEADER_START + header.len() + tensor.len() * 8);
    out.extend_from_slice(MAGIC);
    out.push(1);
    out.push(0);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Extract the raw text of one `'key': value` entry from the header dict.
fn dict_value<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = header
        .find(&pat)
        .ok_or_else(|| Error::npy(HEADER_START, format!("header missing key '{key}'")))?
        + pat.len();
    let rest = &header[start..];
    // Value ends at the first top-level comma or closing brace.
    let mut depth = 0usize;
    for (i, c) in rest.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth = depth.saturating_sub(1),
            ',' | '}' if depth == 0 => return Ok(rest[..i].trim()),
            _ => {}
        }
    }
    Ok(rest.trim())
}

fn parse_shape(text: &str) -> std::result::Result<Vec<usize>, String> {
    let inner = text
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| format!("shape '{text}' is not a parenthesized tuple"))?;
    let mut dims = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let d: usize = part
            .parse()
            .map_err(|_| format!("shape entry '{part}' is not a non-negative integer"))?;
        dims.push(d);
    }
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn f4_file(shape: &[usize], values: &[f32]) -> Vec<u8> {
        let shape_str = match shape {
            [n] => format!("({n},)"),
            dims => {
                let inner: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
                format!("({})", inner.join(", "))
            }
        };
        let mut header =
            format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape_str}, }}");
        let pad = (16 - (10 + header.len() + 1) % 16) % 16;
        header.extend(std::iter::repeat_n(' ', pad));
        header.push('\n');
        let mut out = Vec::new();
        out.extend_from_slice(b"\x93NUMPY\x01\x00");
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    #[test]
    fn parses_f4_with_declared_shape() {
        // Small stand-in for the production trial layout (N, 22, 1000).
        let bytes = f4_file(&[2, 3, 4], &(0..24).map(|i| i as f32).collect::<Vec<_>>());
        let t = parse_npy(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 3, 4]);
        assert_eq!(t.at3(1, 2, 3), 23.0);
    }

    #[test]
    fn parses_empty_array() {
        let bytes = f4_file(&[0], &[]);
        let t = parse_npy(&bytes).unwrap();
        assert_eq!(t.shape(), &[0]);
        assert!(t.is_empty());
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = Rng::new(3);
        let t = Tensor::with_normal(&[3, 4, 5], 0.0, 1.0, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npy");
        write_npy(&t, &path).unwrap();
        let back = read_npy(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn written_header_matches_format_definition() {
        let t = Tensor::zeros(&[2, 2]);
        let bytes = to_npy_bytes(&t).unwrap();
        assert_eq!(&bytes[..6], b"\x93NUMPY");
        assert_eq!(bytes[6], 1);
        assert_eq!(bytes[7], 0);
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0, "payload must be 64-byte aligned");
        let header = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
        assert!(header.contains("'descr': '<f8'"));
        assert!(header.contains("'fortran_order': False"));
        assert!(header.contains("'shape': (2, 2)"));
        assert!(header.ends_with('\n'));
    }

    #[test]
    fn empty_tensor_writes_minimal_valid_file() {
        let t = Tensor::zeros(&[0]);
        let bytes = to_npy_bytes(&t).unwrap();
        let back = parse_npy(&bytes).unwrap();
        assert_eq!(back.shape(), &[0]);
    }

    #[test]
    fn bad_magic_is_reported_at_offset_zero() {
        let err = parse_npy(b"\x93NUMPZ\x01\x00xxxx").unwrap_err();
        match err {
            Error::NpyParse { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unsupported_dtype_rejected() {
        let mut bytes = f4_file(&[1], &[1.0]);
        let pos = bytes.windows(3).position(|w| w == b"<f4").unwrap();
        bytes[pos..pos + 3].copy_from_slice(b"<i8");
        let err = parse_npy(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported dtype"), "{err}");
    }

    #[test]
    fn big_endian_dtype_rejected() {
        let mut bytes = f4_file(&[1], &[1.0]);
        let pos = bytes.windows(3).position(|w| w == b"<f4").unwrap();
        bytes[pos] = b'>';
        assert!(parse_npy(&bytes).is_err());
    }

    #[test]
    fn fortran_order_rejected() {
        let mut bytes = f4_file(&[2], &[1.0, 2.0]);
        let pos = bytes.windows(5).position(|w| w == b"False").unwrap();
        bytes.splice(pos..pos + 5, *b"True ");
        let err = parse_npy(&bytes).unwrap_err();
        assert!(err.to_string().contains("Fortran"), "{err}");
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = f4_file(&[4], &[1.0, 2.0, 3.0]); // one value short
        let err = parse_npy(&bytes).unwrap_err();
        match err {
            Error::NpyParse { offset, reason } => {
                assert!(reason.contains("truncated"), "{reason}");
                assert_eq!(offset, bytes.len());
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rank_above_three_rejected() {
        let mut bytes = f4_file(&[1, 1, 1], &[1.0]);
        let pos = bytes.windows(9).position(|w| w == b"(1, 1, 1)").unwrap();
        bytes.splice(pos..pos + 9, b"(1,1,1,1)".iter().copied());
        assert!(parse_npy(&bytes).is_err());
    }

    #[test]
    fn version_2_rejected() {
        let mut bytes = f4_file(&[1], &[1.0]);
        bytes[6] = 2;
        let err = parse_npy(&bytes).unwrap_err();
        match err {
            Error::NpyParse { offset, .. } => assert_eq!(offset, 6),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
