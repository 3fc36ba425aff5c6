//! SGRID: a little-endian single-band raster container.
//!
//! ```text
//! "SGRD" | version u32 | dtype u8 | rows u32 | cols u32 | spacing f64
//!        | origin_lat f64 | origin_lon f64 | timestamp i64 | nodata f32
//!        | payload (rows * cols values, row-major)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sarrain_core::{DType, Grid, GridGeometry};

use crate::error::{Error, Result, WithPath};

pub const MAGIC: &[u8; 4] = b"SGRD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 8 + 8 + 8 + 8 + 4;

pub fn encode(g: &Grid) -> Vec<u8> {
    let geo = g.geometry();
    let mut out = Vec::with_capacity(HEADER_LEN + g.len() * g.dtype().byte_width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(g.dtype().code());
    out.extend_from_slice(&(geo.rows as u32).to_le_bytes());
    out.extend_from_slice(&(geo.cols as u32).to_le_bytes());
    out.extend_from_slice(&geo.pixel_spacing_m.to_le_bytes());
    out.extend_from_slice(&geo.origin_lat.to_le_bytes());
    out.extend_from_slice(&geo.origin_lon.to_le_bytes());
    out.extend_from_slice(&g.timestamp().to_le_bytes());
    out.extend_from_slice(&g.nodata().to_le_bytes());
    match g.dtype() {
        DType::F32 => g.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::U8 => out.extend(g.values().iter().map(|&v| v as u8)),
    }
    out
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> [u8; N] {
    let mut a = [0u8; N];
    a.copy_from_slice(&bytes[*at..*at + N]);
    *at += N;
    a
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Grid> {
    let format = |msg: &str| Error::Format { path: path.to_path_buf(), msg: msg.into() };
    let corrupt = |msg: String| Error::Corruption { path: path.to_path_buf(), msg };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format("bad magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("header truncated at {} bytes", bytes.len())));
    }
    let mut at = 4;
    let version = u32::from_le_bytes(take(bytes, &mut at));
    if version != VERSION {
        return Err(Error::UnsupportedVersion { path: path.to_path_buf(), msg: format!("version {version}") });
    }
    let code = take::<1>(bytes, &mut at)[0];
    let dtype = DType::from_code(code).ok_or_else(|| Error::UnsupportedVersion { path: path.to_path_buf(), msg: format!("dtype code {code}") })?;
    let rows = u32::from_le_bytes(take(bytes, &mut at)) as usize;
    let cols = u32::from_le_bytes(take(bytes, &mut at)) as usize;
    let spacing = f64::from_le_bytes(take(bytes, &mut at));
    let lat = f64::from_le_bytes(take(bytes, &mut at));
    let lon = f64::from_le_bytes(take(bytes, &mut at));
    let timestamp = i64::from_le_bytes(take(bytes, &mut at));
    let nodata = f32::from_le_bytes(take(bytes, &mut at));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.byte_width()))
        .ok_or_else(|| corrupt(format!("dimensions {rows}x{cols} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(corrupt(format!("{rows}x{cols} {dtype:?} needs {expected} payload bytes, found {}", payload.len())));
    }
    let values = match dtype {
        DType::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        DType::U8 => payload.iter().map(|&b| f32::from(b)).collect(),
    };
    let geo = GridGeometry::with_origin(rows, cols, spacing, lat, lon).map_err(|e| corrupt(e.to_string()))?;
    Grid::from_parts(geo, dtype, nodata, timestamp, values).at(path)
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_grid(path: &Path, g: &Grid) -> Result<()> {
    write_atomic(path, &encode(g))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use sarrain_core::raster::FLOAT_NODATA;

    fn p() -> &'static Path {
        Path::new("mem.sgrd")
    }

    #[test]
    fn header_layout() {
        let geo = GridGeometry::with_origin(2, 3, 400.0, 27.5, -80.25).unwrap();
        let g = Grid::filled(geo, 1.5).unwrap().with_timestamp(-7);
        let b = encode(&g);
        assert_eq!(HEADER_LEN, 53);
        assert_eq!(b.len(), 53 + 24);
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(b[8], 0);
        assert_eq!(&b[9..13], &[2, 0, 0, 0]);
        assert_eq!(&b[41..49], &(-7i64).to_le_bytes());
        assert_eq!(&b[49..53], &FLOAT_NODATA.to_le_bytes());
    }

    #[test]
    fn errors() {
        let geo = GridGeometry::new(4, 4, 10.0).unwrap();
        let mut b = encode(&Grid::filled(geo, 0.0).unwrap());
        assert!(matches!(decode(b"XXXXrest", p()), Err(Error::Format { .. })));
        let short = &b[..b.len() - 4];
        assert!(matches!(decode(short, p()), Err(Error::Corruption { .. })));
        b[8] = 9;
        assert!(matches!(decode(&b, p()), Err(Error::UnsupportedVersion { .. })));
        b[8] = 0;
        b[4] = 2;
        assert!(matches!(decode(&b, p()), Err(Error::UnsupportedVersion { .. })));
        assert!(matches!(decode(&b[..20], p()), Err(Error::Corruption { .. })));
    }

    #[test]
    fn mask_out_of_range_byte_rejected() {
        let geo = GridGeometry::new(1, 2, 10.0).unwrap();
        let mut b = encode(&Grid::mask(geo, &[0, 1]).unwrap());
        let n = b.len();
        b[n - 1] = 7;
        assert!(decode(&b, p()).is_err());
    }

    proptest! {
        #[test]
        fn float_round_trip(
            rows in 1usize..12, cols in 1usize..12,
            spacing in 1e-3f64..1e5, lat in -90.0f64..90.0, ts in any::<i64>(),
            bits in proptest::collection::vec(any::<u32>(), 144),
        ) {
            let geo = GridGeometry::with_origin(rows, cols, spacing, lat, 12.0).unwrap();
            let vals: Vec<f32> = bits.iter().take(rows * cols).map(|&b| f32::from_bits(b)).collect();
            let g = Grid::new(geo, vals).unwrap().with_timestamp(ts);
            let back = decode(&encode(&g), p()).unwrap();
            prop_assert!(back.bit_eq(&g));
        }

        #[test]
        fn mask_round_trip(bytes in proptest::collection::vec(prop_oneof![Just(0u8), Just(1u8), Just(255u8)], 1..200)) {
            let geo = GridGeometry::new(1, bytes.len(), 10.0).unwrap();
            let g = Grid::mask(geo, &bytes).unwrap();
            prop_assert!(decode(&encode(&g), p()).unwrap().bit_eq(&g));
        }
    }
}
