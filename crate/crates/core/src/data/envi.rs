//! ENVI text headers and raw rasters.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HyperCube;
use crate::error::EnviError;
use crate::{Error, Result};

/// Sample layout of the raw file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interleave {
    Bsq,
    Bil,
    Bip,
}

impl Interleave {
    pub const ALL: [Interleave; 3] = [Interleave::Bsq, Interleave::Bil, Interleave::Bip];

    /// Position in the file of element (band, line, sample).
    #[inline]
    pub fn offset(self, bands: usize, lines: usize, samples: usize, b: usize, y: usize, x: usize) -> usize {
        match self {
            Interleave::Bsq => (b * lines + y) * samples + x,
            Interleave::Bil => (y * bands + b) * samples + x,
            Interleave::Bip => (y * samples + x) * bands + b,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
            Interleave::Bip => "bip",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ByteOrder {
    Little,
    Big,
}

/// ENVI `data type` codes this crate can read and write.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnviDataType {
    U8,
    I16,
    I32,
    F32,
    F64,
    U16,
    U32,
}

impl EnviDataType {
    /// The four types accepted for image cubes.
    pub const CUBE: [EnviDataType; 4] = [EnviDataType::I16, EnviDataType::U16, EnviDataType::F32, EnviDataType::F64];

    pub fn from_code(code: u32) -> Result<Self, EnviError> {
        Ok(match code {
            1 => EnviDataType::U8,
            2 => EnviDataType::I16,
            3 => EnviDataType::I32,
            4 => EnviDataType::F32,
            5 => EnviDataType::F64,
            12 => EnviDataType::U16,
            13 => EnviDataType::U32,
            other => return Err(EnviError::UnsupportedDataType(other)),
        })
    }

    pub fn code(self) -> u32 {
        match self {
            EnviDataType::U8 => 1,
            EnviDataType::I16 => 2,
            EnviDataType::I32 => 3,
            EnviDataType::F32 => 4,
            EnviDataType::F64 => 5,
            EnviDataType::U16 => 12,
            EnviDataType::U32 => 13,
        }
    }

    pub fn size(self) -> usize {
        match self {
            EnviDataType::U8 => 1,
            EnviDataType::I16 | EnviDataType::U16 => 2,
            EnviDataType::I32 | EnviDataType::U32 | EnviDataType::F32 => 4,
            EnviDataType::F64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, EnviDataType::F32 | EnviDataType::F64)
    }

    fn range(self) -> (f64, f64) {
        match self {
            EnviDataType::U8 => (0.0, u8::MAX as f64),
            EnviDataType::I16 => (i16::MIN as f64, i16::MAX as f64),
            EnviDataType::U16 => (0.0, u16::MAX as f64),
            EnviDataType::I32 => (i32::MIN as f64, i32::MAX as f64),
            EnviDataType::U32 => (0.0, u32::MAX as f64),
            EnviDataType::F32 => (f32::MIN as f64, f32::MAX as f64),
            EnviDataType::F64 => (f64::MIN, f64::MAX),
        }
    }

    fn decode(self, b: &[u8], order: ByteOrder) -> f64 {
        macro_rules! get {
            ($t:ty) => {{
                let arr = b.try_into().unwrap();
                match order {
                    ByteOrder::Little => <$t>::from_le_bytes(arr),
                    ByteOrder::Big => <$t>::from_be_bytes(arr),
                }
            }};
        }
        match self {
            EnviDataType::U8 => b[0] as f64,
            EnviDataType::I16 => get!(i16) as f64,
            EnviDataType::U16 => get!(u16) as f64,
            EnviDataType::I32 => get!(i32) as f64,
            EnviDataType::U32 => get!(u32) as f64,
            EnviDataType::F32 => get!(f32) as f64,
            EnviDataType::F64 => get!(f64),
        }
    }

    fn encode(self, v: f64, order: ByteOrder, out: &mut Vec<u8>) {
        macro_rules! put {
            ($v:expr) => {
                match order {
                    ByteOrder::Little => out.extend_from_slice(&$v.to_le_bytes()),
                    ByteOrder::Big => out.extend_from_slice(&$v.to_be_bytes()),
                }
            };
        }
        match self {
            EnviDataType::U8 => out.push(v as u8),
            EnviDataType::I16 => put!(v as i16),
            EnviDataType::U16 => put!(v as u16),
            EnviDataType::I32 => put!(v as i32),
            EnviDataType::U32 => put!(v as u32),
            EnviDataType::F32 => put!(v as f32),
            EnviDataType::F64 => put!(v),
        }
    }
}

/// Parsed ENVI header. Keys the loader does not interpret are kept verbatim
/// in `extra`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnviHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub header_offset: u64,
    pub data_type: EnviDataType,
    pub interleave: Interleave,
    pub byte_order: ByteOrder,
    pub wavelength: Option<Vec<f64>>,
    pub extra: BTreeMap<String, String>,
}

impl EnviHeader {
    pub fn new(samples: usize, lines: usize, bands: usize, data_type: EnviDataType, interleave: Interleave) -> Self {
        Self {
            samples,
            lines,
            bands,
            header_offset: 0,
            data_type,
            interleave,
            byte_order: ByteOrder::Little,
            wavelength: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn element_count(&self) -> usize {
        self.samples * self.lines * self.bands
    }

    pub fn parse(text: &str) -> Result<Self, EnviError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim() == "ENVI" => {}
            _ => {
                return Err(EnviError::Malformed {
                    line: 1,
                    message: "header must start with `ENVI`".into(),
                })
            }
        }
        let mut map = BTreeMap::new();
        while let Some((i, raw)) = lines.next() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(EnviError::Malformed {
                    line: i + 1,
                    message: format!("expected `key = value`, found {line:?}"),
                });
            };
            let key = key.trim().to_ascii_lowercase();
            let mut value = value.trim().to_string();
            if value.starts_with('{') {
                while !value.contains('}') {
                    match lines.next() {
                        Some((_, more)) => {
                            value.push(' ');
                            value.push_str(more.trim());
                        }
                        None => {
                            return Err(EnviError::Malformed {
                                line: i + 1,
                                message: format!("unterminated brace list for `{key}`"),
                            })
                        }
                    }
                }
                let inner = value.trim_start_matches('{');
                let inner = &inner[..inner.rfind('}').unwrap_or(inner.len())];
                value = inner.trim().to_string();
            }
            map.insert(key, value);
        }

        fn take<T: std::str::FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>, EnviError> {
            match map.remove(key) {
                None => Ok(None),
                Some(v) => v.trim().parse().map(Some).map_err(|_| EnviError::InvalidValue {
                    key: key.into(),
                    value: v,
                }),
            }
        }
        fn need<T: std::str::FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<T, EnviError> {
            take(map, key)?.ok_or_else(|| EnviError::MissingKey(key.into()))
        }

        // always rewritten as "ENVI Standard"
        map.remove("file type");
        let samples = need(&mut map, "samples")?;
        let lines = need(&mut map, "lines")?;
        let bands = need(&mut map, "bands")?;
        let data_type = EnviDataType::from_code(need(&mut map, "data type")?)?;
        let interleave = match map.remove("interleave") {
            None => return Err(EnviError::MissingKey("interleave".into())),
            Some(v) => match v.trim().to_ascii_lowercase().as_str() {
                "bsq" => Interleave::Bsq,
                "bil" => Interleave::Bil,
                "bip" => Interleave::Bip,
                _ => {
                    return Err(EnviError::InvalidValue {
                        key: "interleave".into(),
                        value: v,
                    })
                }
            },
        };
        let byte_order = match need::<u8>(&mut map, "byte order")? {
            0 => ByteOrder::Little,
            1 => ByteOrder::Big,
            v => {
                return Err(EnviError::InvalidValue {
                    key: "byte order".into(),
                    value: v.to_string(),
                })
            }
        };
        let header_offset = take(&mut map, "header offset")?.unwrap_or(0);
        let wavelength = match map.remove("wavelength") {
            None => None,
            Some(v) => Some(
                v.split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| EnviError::InvalidValue {
                        key: "wavelength".into(),
                        value: v.clone(),
                    })?,
            ),
        };
        Ok(Self {
            samples,
            lines,
            bands,
            header_offset,
            data_type,
            interleave,
            byte_order,
            wavelength,
            extra: map,
        })
    }
}

impl fmt::Display for EnviHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ENVI")?;
        writeln!(f, "samples = {}", self.samples)?;
        writeln!(f, "lines = {}", self.lines)?;
        writeln!(f, "bands = {}", self.bands)?;
        writeln!(f, "header offset = {}", self.header_offset)?;
        writeln!(f, "file type = ENVI Standard")?;
        writeln!(f, "data type = {}", self.data_type.code())?;
        writeln!(f, "interleave = {}", self.interleave.tag())?;
        let order = match self.byte_order {
            ByteOrder::Little => 0,
            ByteOrder::Big => 1,
        };
        writeln!(f, "byte order = {order}")?;
        if let Some(wl) = &self.wavelength {
            let mut list = String::new();
            for (i, w) in wl.iter().enumerate() {
                if i > 0 {
                    list.push_str(", ");
                }
                write!(list, "{w}")?;
            }
            writeln!(f, "wavelength = {{{list}}}")?;
        }
        for (k, v) in &self.extra {
            writeln!(f, "{k} = {{{v}}}")?;
        }
        Ok(())
    }
}

fn envi_err(path: &Path, source: EnviError) -> Error {
    Error::Envi {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_header(path: &Path) -> Result<EnviHeader> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EnviHeader::parse(&text).map_err(|e| envi_err(path, e))
}

/// Decode a raw raster described by `header` into band-major order
/// (`band, line, sample`).
pub fn decode_raster(header: &EnviHeader, bytes: &[u8]) -> Result<Vec<f64>, EnviError> {
    let size = header.data_type.size();
    let expected = header.header_offset + (header.element_count() * size) as u64;
    if bytes.len() as u64 != expected {
        return Err(EnviError::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
            offset: header.header_offset,
        });
    }
    let raw = &bytes[header.header_offset as usize..];
    let (b, h, w) = (header.bands, header.lines, header.samples);
    let mut out = vec![0.0; b * h * w];
    for band in 0..b {
        for y in 0..h {
            for x in 0..w {
                let at = header.interleave.offset(b, h, w, band, y, x) * size;
                out[(band * h + y) * w + x] = header.data_type.decode(&raw[at..at + size], header.byte_order);
            }
        }
    }
    Ok(out)
}

/// Encode band-major values with the layout, type and byte order of
/// `header`. Integer types reject values that are fractional or out of range.
pub fn encode_raster(header: &EnviHeader, values: &[f64]) -> Result<Vec<u8>, EnviError> {
    let (b, h, w) = (header.bands, header.lines, header.samples);
    assert_eq!(values.len(), b * h * w, "value count must match header dims");
    let dt = header.data_type;
    let (lo, hi) = dt.range();
    for (index, &value) in values.iter().enumerate() {
        let bad_int = dt.is_integer() && value.fract() != 0.0;
        if !value.is_finite() && dt.is_integer() || bad_int || value < lo || value > hi {
            return Err(EnviError::OutOfRange {
                value,
                index,
                dtype: dt.code(),
            });
        }
    }
    let mut file_order = vec![0.0; values.len()];
    for band in 0..b {
        for y in 0..h {
            for x in 0..w {
                file_order[header.interleave.offset(b, h, w, band, y, x)] = values[(band * h + y) * w + x];
            }
        }
    }
    let mut out = vec![0u8; header.header_offset as usize];
    out.reserve(values.len() * dt.size());
    for v in file_order {
        dt.encode(v, header.byte_order, &mut out);
    }
    Ok(out)
}

/// Read a header plus its raw raster as band-major `f64` values.
pub fn load_raw(header_path: &Path, data_path: &Path) -> Result<(EnviHeader, Vec<f64>)> {
    let header = read_header(header_path)?;
    let bytes = std::fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    let values = decode_raster(&header, &bytes).map_err(|e| envi_err(data_path, e))?;
    Ok((header, values))
}

/// Load a hyperspectral cube. Only 16-bit integer and floating-point cubes
/// are accepted.
pub fn load_envi(header_path: &Path, data_path: &Path) -> Result<HyperCube> {
    let header = read_header(header_path)?;
    if !EnviDataType::CUBE.contains(&header.data_type) {
        return Err(envi_err(header_path, EnviError::UnsupportedDataType(header.data_type.code())));
    }
    let bytes = std::fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    let values = decode_raster(&header, &bytes).map_err(|e| envi_err(data_path, e))?;
    let data = values.into_iter().map(|v| v as f32).collect();
    let mut cube = HyperCube::new(header.bands, header.lines, header.samples, data)?;
    cube.wavelengths = header.wavelength;
    Ok(cube)
}

/// Write `cube` as an ENVI header plus raw raster.
pub fn write_envi(
    cube: &HyperCube,
    header_path: &Path,
    data_path: &Path,
    data_type: EnviDataType,
    interleave: Interleave,
    byte_order: ByteOrder,
) -> Result<()> {
    let mut header = EnviHeader::new(cube.width, cube.height, cube.bands, data_type, interleave);
    header.byte_order = byte_order;
    header.wavelength = cube.wavelengths.clone();
    let values: Vec<f64> = cube.data.iter().map(|&v| v as f64).collect();
    let bytes = encode_raster(&header, &values).map_err(|e| envi_err(data_path, e))?;
    std::fs::write(header_path, header.to_string()).map_err(|e| Error::io(header_path, e))?;
    std::fs::write(data_path, bytes).map_err(|e| Error::io(data_path, e))
}
