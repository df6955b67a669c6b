//! NPY v1.0 reader and writer.
//!
//! Only version 1.0 headers are accepted. Supported element types are
//! `float32`, `float64` and `int16` in either byte order; files are always
//! written little-endian and C-ordered. Fortran-ordered payloads are transposed
//! into row-major order on load.

use std::fmt;

use thiserror::Error;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGNMENT: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported element type {0:?}")]
    UnsupportedElementType(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementType {
    Float32,
    Float64,
    Int16,
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::Float32 => 4,
            ElementType::Float64 => 8,
            ElementType::Int16 => 2,
        }
    }

    fn descr_code(self) -> &'static str {
        match self {
            ElementType::Float32 => "f4",
            ElementType::Float64 => "f8",
            ElementType::Int16 => "i2",
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElementType::Float32 => "float32",
            ElementType::Float64 => "float64",
            ElementType::Int16 => "int16",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Float32(Vec<f32>),
    Float64(Vec<f64>),
    Int16(Vec<i16>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::Float32(v) => v.len(),
            TensorData::Float64(v) => v.len(),
            TensorData::Int16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn element_type(&self) -> ElementType {
        match self {
            TensorData::Float32(_) => ElementType::Float32,
            TensorData::Float64(_) => ElementType::Float64,
            TensorData::Int16(_) => ElementType::Int16,
        }
    }

    /// Lossy for `float64` payloads; exact for the other two types.
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            TensorData::Float32(v) => v.clone(),
            TensorData::Float64(v) => v.iter().map(|&x| x as f32).collect(),
            TensorData::Int16(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn into_f32(self) -> Vec<f32> {
        match self {
            TensorData::Float32(v) => v,
            other => other.to_f32(),
        }
    }
}

/// Dense row-major tensor with one to four dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(TensorError::InvalidTensor(format!(
                "shape must have 1 to 4 dimensions, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(TensorError::InvalidTensor(format!(
                "dimension sizes must be positive: {shape:?}"
            )));
        }
        let count = element_count(&shape)
            .ok_or_else(|| TensorError::InvalidTensor("shape overflows usize".into()))?;
        if count != data.len() {
            return Err(TensorError::InvalidTensor(format!(
                "shape {shape:?} needs {count} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::Float32(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn element_type(&self) -> ElementType {
        self.data.element_type()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, TensorData) {
        (self.shape, self.data)
    }

    /// Compares shapes and the bit patterns of every element, so `NaN`
    /// payloads and signed zeros are distinguished.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::Float32(a), TensorData::Float32(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::Float64(a), TensorData::Float64(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::Int16(a), TensorData::Int16(b)) => a == b,
            _ => false,
        }
    }
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Parsed NPY header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub element_type: ElementType,
    pub big_endian: bool,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
    /// Byte offset of the payload from the start of the file.
    pub data_offset: usize,
}

impl Header {
    pub fn element_count(&self) -> usize {
        element_count(&self.shape).unwrap_or(usize::MAX)
    }
}

/// Parses only the preamble and header dictionary.
pub fn read_header(bytes: &[u8]) -> Result<Header, TensorError> {
    if bytes.len() < PREAMBLE_LEN {
        return Err(TensorError::MalformedHeader("file shorter than preamble".into()));
    }
    if &bytes[..6] != MAGIC {
        return Err(TensorError::MalformedHeader("missing NPY magic".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(TensorError::MalformedHeader(format!(
            "unsupported format version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_offset = PREAMBLE_LEN + header_len;
    let raw = bytes
        .get(PREAMBLE_LEN..data_offset)
        .ok_or_else(|| TensorError::MalformedHeader("header extends past end of file".into()))?;
    let text = std::str::from_utf8(raw)
        .map_err(|_| TensorError::MalformedHeader("header is not ASCII".into()))?;
    let dict = HeaderDict::parse(text)?;
    let (element_type, big_endian) = parse_descr(&dict.descr)?;
    if dict.shape.is_empty() || dict.shape.len() > 4 {
        return Err(TensorError::MalformedHeader(format!(
            "shape must have 1 to 4 dimensions, got {:?}",
            dict.shape
        )));
    }
    if dict.shape.contains(&0) {
        return Err(TensorError::MalformedHeader(format!(
            "zero-sized dimension in shape {:?}",
            dict.shape
        )));
    }
    if element_count(&dict.shape)
        .and_then(|n| n.checked_mul(element_type.size()))
        .is_none()
    {
        return Err(TensorError::MalformedHeader("shape overflows".into()));
    }
    Ok(Header {
        element_type,
        big_endian,
        fortran_order: dict.fortran_order,
        shape: dict.shape,
        data_offset,
    })
}

pub fn read_tensor(bytes: &[u8]) -> Result<Tensor, TensorError> {
    let header = read_header(bytes)?;
    let count = header.element_count();
    let expected = count * header.element_type.size();
    let payload = &bytes[header.data_offset..];
    if payload.len() < expected {
        return Err(TensorError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let payload = &payload[..expected];
    let be = header.big_endian;
    let data = match header.element_type {
        ElementType::Float32 => TensorData::Float32(
            payload
                .chunks_exact(4)
                .map(|c| {
                    let b = [c[0], c[1], c[2], c[3]];
                    if be {
                        f32::from_be_bytes(b)
                    } else {
                        f32::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
        ElementType::Float64 => TensorData::Float64(
            payload
                .chunks_exact(8)
                .map(|c| {
                    let b: [u8; 8] = c.try_into().expect("chunk of 8");
                    if be {
                        f64::from_be_bytes(b)
                    } else {
                        f64::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
        ElementType::Int16 => TensorData::Int16(
            payload
                .chunks_exact(2)
                .map(|c| {
                    let b = [c[0], c[1]];
                    if be {
                        i16::from_be_bytes(b)
                    } else {
                        i16::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
    };
    let data = if header.fortran_order && header.shape.len() > 1 {
        fortran_to_c(&header.shape, data)
    } else {
        data
    };
    Tensor::new(header.shape, data)
}

fn fortran_to_c(shape: &[usize], data: TensorData) -> TensorData {
    fn permute<T: Copy>(shape: &[usize], src: &[T]) -> Vec<T> {
        let n = src.len();
        let rank = shape.len();
        // Fortran strides: first axis fastest.
        let mut f_strides = vec![1usize; rank];
        for ax in 1..rank {
            f_strides[ax] = f_strides[ax - 1] * shape[ax - 1];
        }
        let mut out = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        for _ in 0..n {
            let off: usize = idx.iter().zip(&f_strides).map(|(i, s)| i * s).sum();
            out.push(src[off]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        out
    }
    match data {
        TensorData::Float32(v) => TensorData::Float32(permute(shape, &v)),
        TensorData::Float64(v) => TensorData::Float64(permute(shape, &v)),
        TensorData::Int16(v) => TensorData::Int16(permute(shape, &v)),
    }
}

/// Header dictionary text, padded with spaces and a trailing newline so the
/// payload starts on a 64-byte boundary.
fn header_text(t: &Tensor) -> String {
    let shape = match t.shape() {
        [d] => format!("({d},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut text = format!(
        "{{'descr': '<{}', 'fortran_order': False, 'shape': {}, }}",
        t.element_type().descr_code(),
        shape
    );
    let unpadded = PREAMBLE_LEN + text.len() + 1;
    let padded = unpadded.div_ceil(ALIGNMENT) * ALIGNMENT;
    text.extend(std::iter::repeat_n(' ', padded - unpadded));
    text.push('\n');
    text
}

pub fn write_tensor(t: &Tensor) -> Vec<u8> {
    let header = header_text(t);
    let payload_len = t.data.len() * t.element_type().size();
    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &t.data {
        TensorData::Float32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::Float64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::Int16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

fn parse_descr(descr: &str) -> Result<(ElementType, bool), TensorError> {
    let (order, code) = match descr.as_bytes().first() {
        Some(b'<') | Some(b'>') | Some(b'=') | Some(b'|') => descr.split_at(1),
        _ => ("=", descr),
    };
    let element = match code {
        "f4" => ElementType::Float32,
        "f8" => ElementType::Float64,
        "i2" => ElementType::Int16,
        _ => return Err(TensorError::UnsupportedElementType(descr.to_string())),
    };
    Ok((element, order == ">"))
}

#[derive(Debug, Default)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    /// Parses the Python dict literal numpy writes. Only the three keys the
    /// format defines are accepted.
    fn parse(text: &str) -> Result<Self, TensorError> {
        let mut p = Cursor { s: text.as_bytes(), pos: 0 };
        p.skip_ws();
        p.expect(b'{')?;
        let mut descr = None;
        let mut fortran = None;
        let mut shape = None;
        loop {
            p.skip_ws();
            if p.eat(b'}') {
                break;
            }
            let key = p.string()?;
            p.skip_ws();
            p.expect(b':')?;
            p.skip_ws();
            match key.as_str() {
                "descr" => descr = Some(p.string()?),
                "fortran_order" => fortran = Some(p.boolean()?),
                "shape" => shape = Some(p.tuple()?),
                other => return Err(malformed(format!("unexpected key {other:?}"))),
            }
            p.skip_ws();
            if !p.eat(b',') {
                p.skip_ws();
                p.expect(b'}')?;
                break;
            }
        }
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(malformed("trailing bytes after header dict"));
        }
        Ok(Self {
            descr: descr.ok_or_else(|| malformed("missing 'descr'"))?,
            fortran_order: fortran.ok_or_else(|| malformed("missing 'fortran_order'"))?,
            shape: shape.ok_or_else(|| malformed("missing 'shape'"))?,
        })
    }
}

fn malformed(msg: impl Into<String>) -> TensorError {
    TensorError::MalformedHeader(msg.into())
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && matches!(self.s[self.pos], b' ' | b'\n' | b'\t' | b'\r') {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), TensorError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(malformed(format!("expected '{}' at byte {}", c as char, self.pos)))
        }
    }

    fn string(&mut self) -> Result<String, TensorError> {
        let quote = match self.s.get(self.pos) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err(malformed(format!("expected string at byte {}", self.pos))),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return Err(malformed("unterminated string"));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn boolean(&mut self) -> Result<bool, TensorError> {
        let rest = &self.s[self.pos..];
        if rest.starts_with(b"True") {
            self.pos += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.pos += 5;
            Ok(false)
        } else {
            Err(malformed("expected True or False"))
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>, TensorError> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(b')') {
                break;
            }
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            // Python 2 era writers emit long literals such as `3L`.
            let digits = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or_default();
            let _ = self.eat(b'L');
            let dim = digits
                .parse::<usize>()
                .map_err(|_| malformed(format!("bad shape entry at byte {start}")))?;
            dims.push(dim);
            self.skip_ws();
            if !self.eat(b',') {
                self.skip_ws();
                self.expect(b')')?;
                break;
            }
        }
        Ok(dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_round_trip() {
        let t = Tensor::from_f32(vec![2, 3], vec![0.0; 6]).unwrap();
        let back = read_tensor(&write_tensor(&t)).unwrap();
        assert!(back.bit_eq(&t));
    }

    fn raw_npy(dict: &str, payload: &[u8]) -> Vec<u8> {
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(dict.len() as u16).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        bytes.extend_from_slice(payload);
        bytes
    }

    #[test]
    fn truncated_payload() {
        let payload: Vec<u8> = [1.0f32, 2.0, 3.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let bytes = raw_npy("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2), }", &payload);
        assert_eq!(
            read_tensor(&bytes),
            Err(TensorError::TruncatedPayload { expected: 16, found: 12 })
        );
    }

    #[test]
    fn payload_is_64_byte_aligned() {
        for shape in [vec![1], vec![7, 3], vec![2, 3, 4, 5], vec![123_456, 7, 89, 10]] {
            let fake = Tensor { shape: shape.clone(), data: TensorData::Int16(vec![]) };
            let text = header_text(&fake);
            assert_eq!((PREAMBLE_LEN + text.len()) % 64, 0, "{shape:?}");
            assert!(text.ends_with('\n'));
        }
        let t = Tensor::new(vec![7, 3], TensorData::Int16(vec![0; 21])).unwrap();
        assert_eq!(read_header(&write_tensor(&t)).unwrap().data_offset, 128);
    }

    #[test]
    fn one_element_file_length() {
        // Preamble (10) + dict "{'descr': '<f4', 'fortran_order': False, 'shape': (1,), }"
        // (57 chars) + newline = 68, rounded up to 128, then 4 payload bytes.
        let dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (1,), }";
        assert_eq!(dict.len(), 57);
        let header_total = (10 + dict.len() + 1).div_ceil(64) * 64;
        let t = Tensor::from_f32(vec![1], vec![42.0]).unwrap();
        assert_eq!(write_tensor(&t).len(), header_total + 4);
        assert_eq!(header_total, 128);
    }

    #[test]
    fn empty_shape_rejected() {
        assert!(matches!(
            Tensor::from_f32(vec![], vec![1.0]),
            Err(TensorError::InvalidTensor(_))
        ));
        assert!(Tensor::from_f32(vec![1, 1, 1, 1, 1], vec![1.0]).is_err());
    }

    #[test]
    fn unsupported_types() {
        for descr in ["<i4", "|u1", "<c8", "|b1"] {
            let text = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': (1,), }}");
            let bytes = raw_npy(&text, &[0; 8]);
            assert_eq!(
                read_tensor(&bytes),
                Err(TensorError::UnsupportedElementType(descr.into()))
            );
        }
    }

    #[test]
    fn version_two_rejected() {
        let t = Tensor::from_f32(vec![1], vec![1.0]).unwrap();
        let mut bytes = write_tensor(&t);
        bytes[6] = 2;
        assert!(matches!(read_tensor(&bytes), Err(TensorError::MalformedHeader(_))));
    }

    #[test]
    fn fortran_order_transposed() {
        // 2x3 matrix [[1,2,3],[4,5,6]] stored column-major: 1 4 2 5 3 6
        let text = "{'descr': '<i2', 'fortran_order': True, 'shape': (2, 3), }";
        let payload: Vec<u8> = [1i16, 4, 2, 5, 3, 6].iter().flat_map(|v| v.to_le_bytes()).collect();
        let bytes = raw_npy(text, &payload);
        let t = read_tensor(&bytes).unwrap();
        assert_eq!(t.data(), &TensorData::Int16(vec![1, 2, 3, 4, 5, 6]));
    }

    #[test]
    fn big_endian_float64() {
        let text = "{'descr': '>f8', 'fortran_order': False, 'shape': (2,), }";
        let payload: Vec<u8> = [0.0f64, 1.5].iter().flat_map(|v| v.to_be_bytes()).collect();
        let bytes = raw_npy(text, &payload);
        let t = read_tensor(&bytes).unwrap();
        assert_eq!(t.data(), &TensorData::Float64(vec![0.0, 1.5]));
    }
}
