//! Reader and writer for single serialized arrays (`.npy` members).
//!
//! Layout: the magic `\x93NUMPY`, a major/minor version pair, a little-endian
//! header length (2 bytes for 1.x, 4 bytes for 2.x/3.x), then a Python
//! literal dict with `descr`, `fortran_order` and `shape`, padded with spaces
//! and a trailing newline. The payload follows immediately.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Largest header we accept; numpy itself refuses anything longer.
const MAX_HEADER_LEN: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    Float64,
    Float32,
    Int64,
    Int32,
    /// Fixed-length byte string (`S<k>`), NUL padded.
    Bytes(usize),
    /// Fixed-length UCS-4 string (`U<k>`), NUL padded.
    Unicode(usize),
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::Float64 | ElementType::Int64 => 8,
            ElementType::Float32 | ElementType::Int32 => 4,
            ElementType::Bytes(k) => k,
            ElementType::Unicode(k) => 4 * k,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, ElementType::Float64 | ElementType::Float32)
    }

    pub fn is_int(self) -> bool {
        matches!(self, ElementType::Int64 | ElementType::Int32)
    }

    pub fn is_string(self) -> bool {
        matches!(self, ElementType::Bytes(_) | ElementType::Unicode(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    RowMajor,
    ColumnMajor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayDescriptor {
    pub element_type: ElementType,
    pub byte_order: ByteOrder,
    pub layout: Layout,
    pub shape: Vec<usize>,
}

impl ArrayDescriptor {
    pub fn new(element_type: ElementType, shape: Vec<usize>) -> Self {
        ArrayDescriptor {
            element_type,
            byte_order: ByteOrder::Little,
            layout: Layout::RowMajor,
            shape,
        }
    }

    /// Number of elements, or `None` on overflow.
    pub fn element_count(&self) -> Option<usize> {
        self.shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }

    /// Payload size in bytes, or `None` on overflow.
    pub fn payload_len(&self) -> Option<usize> {
        self.element_count()?.checked_mul(self.element_type.size())
    }

    fn descr(&self) -> String {
        let order = match (self.element_type, self.byte_order) {
            (ElementType::Bytes(_), _) => '|',
            (_, ByteOrder::Little) => '<',
            (_, ByteOrder::Big) => '>',
        };
        let code = match self.element_type {
            ElementType::Float64 => "f8".to_string(),
            ElementType::Float32 => "f4".to_string(),
            ElementType::Int64 => "i8".to_string(),
            ElementType::Int32 => "i4".to_string(),
            ElementType::Bytes(k) => format!("S{k}"),
            ElementType::Unicode(k) => format!("U{k}"),
        };
        format!("{order}{code}")
    }
}

/// Parses the header of a serialized array.
///
/// Returns the descriptor and the byte offset at which the payload starts.
/// Never panics: any input yields either a descriptor or a typed error.
pub fn parse_array_header(bytes: &[u8]) -> Result<(ArrayDescriptor, usize)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::MalformedHeader("truncated version".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (len_width, utf8) = match (major, minor) {
        (1, 0) => (2, false),
        (2, 0) => (4, false),
        (3, 0) => (4, true),
        _ => return Err(Error::UnsupportedVersion { major, minor }),
    };
    let start = 8 + len_width;
    if bytes.len() < start {
        return Err(Error::MalformedHeader("truncated header length".into()));
    }
    let header_len = if len_width == 2 {
        u16::from_le_bytes([bytes[8], bytes[9]]) as usize
    } else {
        u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize
    };
    if header_len > MAX_HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "header length {header_len} too large"
        )));
    }
    let end = start + header_len;
    if bytes.len() < end {
        return Err(Error::MalformedHeader("truncated header".into()));
    }
    let raw = &bytes[start..end];
    let text = if utf8 {
        std::str::from_utf8(raw).map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?
    } else {
        if !raw.is_ascii() {
            return Err(Error::MalformedHeader("header is not ASCII".into()));
        }
        // ASCII is valid UTF-8
        std::str::from_utf8(raw).map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?
    };
    let descriptor = parse_header_dict(text)?;
    Ok((descriptor, end))
}

fn parse_header_dict(text: &str) -> Result<ArrayDescriptor> {
    let mut parser = LiteralParser::new(text);
    let value = parser.parse_value()?;
    parser.skip_ws();
    if !parser.at_end() {
        return Err(Error::MalformedHeader("trailing characters after dict".into()));
    }
    let entries = match value {
        Literal::Dict(entries) => entries,
        _ => return Err(Error::MalformedHeader("header is not a dict".into())),
    };
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    for (key, value) in entries {
        match (key.as_str(), value) {
            ("descr", Literal::Str(s)) => descr = Some(s),
            ("fortran_order", Literal::Bool(b)) => fortran = Some(b),
            ("shape", Literal::Tuple(dims)) => shape = Some(dims),
            (k @ ("descr" | "fortran_order" | "shape"), _) => {
                return Err(Error::MalformedHeader(format!("wrong value type for {k:?}")))
            }
            (other, _) => {
                return Err(Error::MalformedHeader(format!("unexpected key {other:?}")))
            }
        }
    }
    let descr = descr.ok_or_else(|| Error::MalformedHeader("missing 'descr'".into()))?;
    let fortran =
        fortran.ok_or_else(|| Error::MalformedHeader("missing 'fortran_order'".into()))?;
    let shape = shape.ok_or_else(|| Error::MalformedHeader("missing 'shape'".into()))?;
    let (element_type, byte_order) = parse_descr(&descr)?;
    let descriptor = ArrayDescriptor {
        element_type,
        byte_order,
        layout: if fortran {
            Layout::ColumnMajor
        } else {
            Layout::RowMajor
        },
        shape,
    };
    if descriptor.payload_len().is_none() {
        return Err(Error::MalformedHeader("shape overflows".into()));
    }
    Ok(descriptor)
}

fn parse_descr(descr: &str) -> Result<(ElementType, ByteOrder)> {
    let unsupported = || Error::UnsupportedDtype(descr.to_string());
    let mut chars = descr.chars();
    let order_char = chars.next().ok_or_else(unsupported)?;
    let code = chars.as_str();
    let order = match order_char {
        '<' | '=' => ByteOrder::Little,
        '>' => ByteOrder::Big,
        '|' => ByteOrder::Little,
        _ => return Err(unsupported()),
    };
    let element = match code {
        "f8" => ElementType::Float64,
        "f4" => ElementType::Float32,
        "i8" => ElementType::Int64,
        "i4" => ElementType::Int32,
        _ if code.starts_with('S') || code.starts_with('U') => {
            let k: usize = code[1..].parse().map_err(|_| unsupported())?;
            if k == 0 || k > MAX_HEADER_LEN {
                return Err(unsupported());
            }
            if code.starts_with('S') {
                ElementType::Bytes(k)
            } else {
                ElementType::Unicode(k)
            }
        }
        _ => return Err(unsupported()),
    };
    // multi-byte numeric types need an explicit byte order
    if order_char == '|' && !matches!(element, ElementType::Bytes(_)) {
        return Err(unsupported());
    }
    Ok((element, order))
}

#[derive(Debug)]
enum Literal {
    Str(String),
    Bool(bool),
    Int(#[allow(dead_code)] usize),
    Tuple(Vec<usize>),
    Dict(Vec<(String, Literal)>),
}

/// Recursive-descent parser for the Python literal subset used in headers.
struct LiteralParser<'a> {
    text: &'a [u8],
    pos: usize,
    depth: usize,
}

impl<'a> LiteralParser<'a> {
    fn new(text: &'a str) -> Self {
        LiteralParser {
            text: text.as_bytes(),
            pos: 0,
            depth: 0,
        }
    }

    fn err(&self, what: &str) -> Error {
        Error::MalformedHeader(format!("{what} at offset {}", self.pos))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected {:?}", c as char)))
        }
    }

    fn parse_value(&mut self) -> Result<Literal> {
        self.skip_ws();
        match self.peek() {
            Some(b'{') => self.nested(Self::parse_dict),
            Some(b'(') => self.nested(Self::parse_tuple),
            Some(b'\'' | b'"') => Ok(Literal::Str(self.parse_str()?)),
            Some(b'0'..=b'9') => Ok(Literal::Int(self.parse_int()?)),
            Some(b'T' | b'F') => self.parse_bool(),
            _ => Err(self.err("unexpected token")),
        }
    }

    fn nested(&mut self, f: fn(&mut Self) -> Result<Literal>) -> Result<Literal> {
        if self.depth >= 8 {
            return Err(self.err("nesting too deep"));
        }
        self.depth += 1;
        let out = f(self);
        self.depth -= 1;
        out
    }

    fn parse_dict(&mut self) -> Result<Literal> {
        self.expect(b'{')?;
        let mut entries = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(b'}') {
                self.pos += 1;
                return Ok(Literal::Dict(entries));
            }
            let key = self.parse_str()?;
            self.expect(b':')?;
            let value = self.parse_value()?;
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(self.err("duplicate key"));
            }
            entries.push((key, value));
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
    }

    fn parse_tuple(&mut self) -> Result<Literal> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(b')') {
                self.pos += 1;
                return Ok(Literal::Tuple(dims));
            }
            dims.push(self.parse_int()?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    // a one-element tuple needs its trailing comma
                    if dims.len() == 1 {
                        return Err(self.err("one-element tuple without comma"));
                    }
                }
                _ => return Err(self.err("expected ',' or ')'")),
            }
            if dims.len() > 32 {
                return Err(self.err("too many dimensions"));
            }
        }
    }

    fn parse_str(&mut self) -> Result<String> {
        self.skip_ws();
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected string")),
        };
        self.pos += 1;
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == quote {
                let s = std::str::from_utf8(&self.text[start..self.pos])
                    .map_err(|_| self.err("invalid string"))?
                    .to_string();
                self.pos += 1;
                return Ok(s);
            }
            if c == b'\\' {
                return Err(self.err("escapes are not supported"));
            }
            self.pos += 1;
        }
        Err(self.err("unterminated string"))
    }

    fn parse_int(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected integer"));
        }
        let digits = std::str::from_utf8(&self.text[start..self.pos])
            .map_err(|_| self.err("invalid integer"))?;
        let value = digits.parse().map_err(|_| self.err("integer overflow"))?;
        // legacy Python 2 long suffix
        if self.peek() == Some(b'L') {
            self.pos += 1;
        }
        Ok(value)
    }

    fn parse_bool(&mut self) -> Result<Literal> {
        let rest = &self.text[self.pos..];
        if rest.starts_with(b"True") {
            self.pos += 4;
            Ok(Literal::Bool(true))
        } else if rest.starts_with(b"False") {
            self.pos += 5;
            Ok(Literal::Bool(false))
        } else {
            Err(self.err("expected True or False"))
        }
    }
}

/// Serializes a descriptor as a version 1.0 header (2.0 if it does not fit).
pub fn write_array_header(desc: &ArrayDescriptor) -> Vec<u8> {
    let shape = match desc.shape.len() {
        0 => "()".to_string(),
        1 => format!("({},)", desc.shape[0]),
        _ => format!(
            "({})",
            desc.shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': {}, 'shape': {}, }}",
        desc.descr(),
        if desc.layout == Layout::ColumnMajor {
            "True"
        } else {
            "False"
        },
        shape
    );
    let (major, len_width) = if dict.len() + 1 + 10 <= u16::MAX as usize {
        (1u8, 2usize)
    } else {
        (2u8, 4usize)
    };
    let prefix = MAGIC.len() + 2 + len_width;
    // pad so the payload starts on a 64-byte boundary
    let unpadded = prefix + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + padding + 1;
    let mut out = Vec::with_capacity(prefix + header_len);
    out.extend_from_slice(MAGIC);
    out.push(major);
    out.push(0);
    if len_width == 2 {
        out.extend_from_slice(&(header_len as u16).to_le_bytes());
    } else {
        out.extend_from_slice(&(header_len as u32).to_le_bytes());
    }
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', padding));
    out.push(b'\n');
    out
}

/// Decoded array payload, promoted to 64-bit types.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Float(Vec<f64>),
    Int(Vec<i64>),
    Str(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub descriptor: ArrayDescriptor,
    /// Elements in row-major order regardless of the stored layout.
    pub data: ArrayData,
}

impl NpyArray {
    pub fn shape(&self) -> &[usize] {
        &self.descriptor.shape
    }
}

/// Parses a complete serialized array.
pub fn read_array(bytes: &[u8]) -> Result<NpyArray> {
    let (descriptor, offset) = parse_array_header(bytes)?;
    let payload = &bytes[offset..];
    let expected = descriptor
        .payload_len()
        .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let big = descriptor.byte_order == ByteOrder::Big;
    let size = descriptor.element_type.size();
    let chunks = payload.chunks_exact(size.max(1));
    let data = match descriptor.element_type {
        ElementType::Float64 => ArrayData::Float(
            chunks
                .map(|c| {
                    let b: [u8; 8] = c.try_into().unwrap_or([0; 8]);
                    if big {
                        f64::from_be_bytes(b)
                    } else {
                        f64::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
        ElementType::Float32 => ArrayData::Float(
            chunks
                .map(|c| {
                    let b: [u8; 4] = c.try_into().unwrap_or([0; 4]);
                    f64::from(if big {
                        f32::from_be_bytes(b)
                    } else {
                        f32::from_le_bytes(b)
                    })
                })
                .collect(),
        ),
        ElementType::Int64 => ArrayData::Int(
            chunks
                .map(|c| {
                    let b: [u8; 8] = c.try_into().unwrap_or([0; 8]);
                    if big {
                        i64::from_be_bytes(b)
                    } else {
                        i64::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
        ElementType::Int32 => ArrayData::Int(
            chunks
                .map(|c| {
                    let b: [u8; 4] = c.try_into().unwrap_or([0; 4]);
                    i64::from(if big {
                        i32::from_be_bytes(b)
                    } else {
                        i32::from_le_bytes(b)
                    })
                })
                .collect(),
        ),
        ElementType::Bytes(_) => ArrayData::Str(
            chunks
                .map(|c| {
                    let end = c.iter().rposition(|&b| b != 0).map_or(0, |p| p + 1);
                    String::from_utf8_lossy(&c[..end]).into_owned()
                })
                .collect(),
        ),
        ElementType::Unicode(_) => ArrayData::Str(
            chunks
                .map(|c| decode_ucs4(c, big))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let data = if descriptor.layout == Layout::ColumnMajor && descriptor.shape.len() > 1 {
        to_row_major(data, &descriptor.shape)
    } else {
        data
    };
    Ok(NpyArray { descriptor, data })
}

fn decode_ucs4(chunk: &[u8], big: bool) -> Result<String> {
    let mut s = String::new();
    for unit in chunk.chunks_exact(4) {
        let b = [unit[0], unit[1], unit[2], unit[3]];
        let code = if big {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        };
        if code == 0 {
            break;
        }
        s.push(
            char::from_u32(code)
                .ok_or_else(|| Error::MalformedHeader(format!("invalid code point {code:#x}")))?,
        );
    }
    Ok(s)
}

fn to_row_major(data: ArrayData, shape: &[usize]) -> ArrayData {
    fn permute<T: Clone>(src: Vec<T>, shape: &[usize]) -> Vec<T> {
        let n = src.len();
        if n == 0 {
            return src;
        }
        let ndim = shape.len();
        // column-major strides
        let mut strides = vec![1usize; ndim];
        for d in 1..ndim {
            strides[d] = strides[d - 1] * shape[d - 1];
        }
        let mut index = vec![0usize; ndim];
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let src_pos: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out.push(src[src_pos].clone());
            for d in (0..ndim).rev() {
                index[d] += 1;
                if index[d] < shape[d] {
                    break;
                }
                index[d] = 0;
            }
        }
        out
    }
    match data {
        ArrayData::Float(v) => ArrayData::Float(permute(v, shape)),
        ArrayData::Int(v) => ArrayData::Int(permute(v, shape)),
        ArrayData::Str(v) => ArrayData::Str(permute(v, shape)),
    }
}

pub fn write_f64(shape: &[usize], values: &[f64]) -> Vec<u8> {
    let mut out = write_array_header(&ArrayDescriptor::new(ElementType::Float64, shape.to_vec()));
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_i64(values: &[i64]) -> Vec<u8> {
    let mut out = write_array_header(&ArrayDescriptor::new(
        ElementType::Int64,
        vec![values.len()],
    ));
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Writes a 1-D fixed-length byte-string array.
pub fn write_strings(values: &[String]) -> Vec<u8> {
    let k = values.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
    let mut out = write_array_header(&ArrayDescriptor::new(
        ElementType::Bytes(k),
        vec![values.len()],
    ));
    for v in values {
        out.extend_from_slice(v.as_bytes());
        out.extend(std::iter::repeat_n(0u8, k - v.len()));
    }
    out
}
