//! Reader and writer for the NumPy `.npy` format, restricted to little-endian
//! `f4`/`f8` arrays.
//!
//! The format is described at
//! <https://numpy.org/doc/stable/reference/generated/numpy.lib.format.html>.

use ndarray::{Array1, Array2, ShapeBuilder};

use crate::error::{Error, Result};

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

#[derive(Debug)]
struct Header {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Decodes a rank-2 `.npy` payload into a row-major `f64` matrix.
///
/// `f4` data is widened to `f64`; Fortran-ordered payloads are transposed into
/// row-major storage.
pub fn read_npy(bytes: &[u8]) -> Result<Array2<f64>> {
    let (header, values) = decode(bytes)?;
    if header.shape.len() != 2 {
        return Err(Error::BadRank(header.shape));
    }
    let shape = (header.shape[0], header.shape[1]);
    let array = if header.fortran_order {
        Array2::from_shape_vec(shape.f(), values)
    } else {
        Array2::from_shape_vec(shape, values)
    }
    .map_err(|e| Error::MalformedNpy(e.to_string()))?;
    Ok(array.as_standard_layout().into_owned())
}

/// Decodes a vector stored either as a rank-1 array or as a single-row matrix.
pub fn read_npy_vector(bytes: &[u8]) -> Result<Array1<f64>> {
    let (header, values) = decode(bytes)?;
    match header.shape.as_slice() {
        [_] | [1, _] | [_, 1] => Ok(Array1::from(values)),
        _ => Err(Error::BadRank(header.shape)),
    }
}

/// Encodes a matrix as version 1.0 `.npy` bytes (`<f8`, C order).
pub fn write_npy(matrix: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = matrix.dim();
    let dict = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': ({rows}, {cols}), }}");
    // magic(6) + version(2) + header length(2) + dict + padding + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    let header_len = dict.len() + padding + 1;

    let mut out = Vec::with_capacity(unpadded + padding + rows * cols * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', padding));
    out.push(b'\n');
    for v in matrix.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<f64>)> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::MalformedNpy("missing magic string".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, start): (usize, usize) = match (major, minor) {
        (1, 0) => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        (2, 0) => {
            if bytes.len() < 12 {
                return Err(Error::MalformedNpy("truncated header length".into()));
            }
            let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
            (len as usize, 12)
        }
        _ => {
            return Err(Error::MalformedNpy(format!(
                "unsupported format version {major}.{minor}"
            )))
        }
    };
    let end = start
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::MalformedNpy("header extends past end of data".into()))?;
    let text = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| Error::MalformedNpy("header is not valid text".into()))?;
    let header = parse_header(text)?;

    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::MalformedNpy("shape overflows".into()))?;
    let payload = &bytes[end..];
    let width = header.dtype.width();
    if payload.len() != count * width {
        return Err(Error::MalformedNpy(format!(
            "payload is {} bytes, shape {:?} needs {}",
            payload.len(),
            header.shape,
            count * width
        )));
    }
    let values = match header.dtype {
        Dtype::F8 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F4 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Ok((header, values))
}

/// Minimal parser for the Python dict literal that forms an npy header.
#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected {:?}", c as char)))
        }
    }

    fn error(&self, msg: &str) -> Error {
        Error::MalformedNpy(format!("header parse error at byte {}: {msg}", self.pos))
    }

    fn string(&mut self) -> Result<String> {
        let quote = self.peek().ok_or_else(|| self.error("unexpected end"))?;
        if quote != b'\'' && quote != b'"' {
            return Err(self.error("expected string"));
        }
        self.pos += 1;
        let begin = self.pos;
        while self.pos < self.src.len() && self.src[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.src.len() {
            return Err(self.error("unterminated string"));
        }
        let s = String::from_utf8_lossy(&self.src[begin..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn integer(&mut self) -> Result<usize> {
        self.skip_ws();
        let begin = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        // Python 2 era writers emit `3L`.
        let digits = std::str::from_utf8(&self.src[begin..self.pos]).unwrap();
        if self.src.get(self.pos) == Some(&b'L') {
            self.pos += 1;
        }
        digits.parse().map_err(|_| self.error("expected integer"))
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'') | Some(b'"') => Ok(Value::Str(self.string()?)),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    match self.peek() {
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        Some(_) => {
                            dims.push(self.integer()?);
                            if self.peek() == Some(b',') {
                                self.pos += 1;
                            } else {
                                self.expect(b')')?;
                                break;
                            }
                        }
                        None => return Err(self.error("unterminated tuple")),
                    }
                }
                Ok(Value::Tuple(dims))
            }
            Some(_) => {
                let rest = &self.src[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Value::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Value::Bool(false))
                } else {
                    Err(self.error("unsupported value"))
                }
            }
            None => Err(self.error("unexpected end")),
        }
    }

    fn dict(&mut self) -> Result<Vec<(String, Value)>> {
        self.expect(b'{')?;
        let mut items = Vec::new();
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            let value = self.value()?;
            items.push((key, value));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.error("expected ',' or '}'")),
            }
        }
        if self.peek().is_some() {
            return Err(self.error("trailing characters after dict"));
        }
        Ok(items)
    }
}

fn parse_header(text: &str) -> Result<Header> {
    let items = Parser {
        src: text.as_bytes(),
        pos: 0,
    }
    .dict()?;
    let lookup = |key: &str| {
        items
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::MalformedNpy(format!("header is missing {key:?}")))
    };
    let dtype = match lookup("descr")? {
        Value::Str(s) => match s.as_str() {
            "<f8" => Dtype::F8,
            "<f4" => Dtype::F4,
            _ => return Err(Error::UnsupportedDtype(s)),
        },
        other => return Err(Error::MalformedNpy(format!("descr is {other:?}"))),
    };
    let fortran_order = match lookup("fortran_order")? {
        Value::Bool(b) => b,
        other => return Err(Error::MalformedNpy(format!("fortran_order is {other:?}"))),
    };
    let shape = match lookup("shape")? {
        Value::Tuple(dims) => dims,
        other => return Err(Error::MalformedNpy(format!("shape is {other:?}"))),
    };
    Ok(Header {
        dtype,
        fortran_order,
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Builds a file by hand, independently of `write_npy`.
    fn handmade(dict: &str, payload: &[u8]) -> Vec<u8> {
        let mut header = dict.to_string();
        while !(10 + header.len() + 1).is_multiple_of(64) {
            header.push(' ');
        }
        header.push('\n');
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn reads_minimal_2x3() {
        let payload: Vec<u8> = (0..6).flat_map(|i| (i as f64).to_le_bytes()).collect();
        assert_eq!(payload.len(), 48);
        let bytes = handmade(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3)}",
            &payload,
        );
        let m = read_npy(&bytes).unwrap();
        assert_eq!(m, array![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]);
    }

    #[test]
    fn reads_fortran_order_and_f4() {
        // column-major 2x2 [[1,2],[3,4]] stored as 1,3,2,4
        let payload: Vec<u8> = [1.0f32, 3.0, 2.0, 4.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let bytes = handmade(
            "{'descr': '<f4', 'fortran_order': True, 'shape': (2, 2), }",
            &payload,
        );
        let m = read_npy(&bytes).unwrap();
        assert_eq!(m, array![[1.0, 2.0], [3.0, 4.0]]);
        assert!(m.is_standard_layout());
    }

    #[test]
    fn reads_version_2_header() {
        let dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1), }\n";
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[2, 0]);
        bytes.extend_from_slice(&(dict.len() as u32).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        bytes.extend_from_slice(&7.5f64.to_le_bytes());
        assert_eq!(read_npy(&bytes).unwrap(), array![[7.5]]);
    }

    #[test]
    fn writes_zero_matrix_payload() {
        let bytes = write_npy(&array![[0.0]]);
        assert_eq!(bytes.len() % 64, 8);
        assert_eq!(&bytes[bytes.len() - 8..], &[0u8; 8]);
    }

    #[test]
    fn header_is_64_byte_aligned() {
        for shape in [(1, 1), (3, 4), (12345, 678), (1_000_000_000, 2)] {
            let m = Array2::<f64>::zeros((shape.0.min(2), shape.1.min(2)));
            let bytes = write_npy(&m);
            let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
            assert_eq!((10 + header_len) % 64, 0);
            assert_eq!(bytes[10 + header_len - 1], b'\n');
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            read_npy(b"NOTNUMPY0000"),
            Err(Error::MalformedNpy(_))
        ));
        let big_endian = handmade(
            "{'descr': '>f8', 'fortran_order': False, 'shape': (1, 1), }",
            &[0; 8],
        );
        assert!(matches!(
            read_npy(&big_endian),
            Err(Error::UnsupportedDtype(_))
        ));
        let ints = handmade(
            "{'descr': '<i8', 'fortran_order': False, 'shape': (1, 1), }",
            &[0; 8],
        );
        assert!(matches!(read_npy(&ints), Err(Error::UnsupportedDtype(_))));
        let rank3 = handmade(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1, 1), }",
            &[0; 8],
        );
        assert!(matches!(read_npy(&rank3), Err(Error::BadRank(_))));
        let short = handmade(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 1), }",
            &[0; 8],
        );
        assert!(matches!(read_npy(&short), Err(Error::MalformedNpy(_))));
    }

    #[test]
    fn vector_reader_accepts_rank_one() {
        let bytes = handmade(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (2,), }",
            &[1.0f64.to_le_bytes(), 2.0f64.to_le_bytes()].concat(),
        );
        assert_eq!(read_npy_vector(&bytes).unwrap(), ndarray::arr1(&[1.0, 2.0]));
        assert!(matches!(read_npy(&bytes), Err(Error::BadRank(_))));
    }
}
