//! On-disk formats.
//!
//! Cube files ("GCUB"):
//!   magic `GCUB` | version u16 LE | days u32 LE | width u32 LE | height u32 LE
//!   | days*height*width anomaly values, f32 LE, row-major per day
//!   | per day: ceil(width*height/8) mask bytes, bit i of byte k = cell 8k+i
//!     of that day's row-major scan (LSB first).
//!
//! Geometry files: comma-separated text, header `row,col,lat,lon,master`,
//! one line per cell in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cube::{AnomalyCube, GridGeometry, MaskCube};
use crate::error::{GridError, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"GCUB";
pub const CUBE_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4;

pub fn encode_cube(cube: &AnomalyCube) -> Vec<u8> {
    let (days, width, height) = (cube.days(), cube.width(), cube.height());
    let per_day = width * height;
    let mask_day_bytes = per_day.div_ceil(8);
    let mut out = Vec::with_capacity(HEADER_LEN + per_day * days * 4 + mask_day_bytes * days);
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&CUBE_VERSION.to_le_bytes());
    out.extend_from_slice(&(days as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    for &v in cube.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for day in 0..days {
        let bits = cube.mask().day_slice(day);
        let mut packed = vec![0u8; mask_day_bytes];
        for (i, &b) in bits.iter().enumerate() {
            packed[i / 8] |= b << (i % 8);
        }
        out.extend_from_slice(&packed);
    }
    out
}

pub fn decode_cube(path: &Path, data: &[u8]) -> Result<AnomalyCube> {
    let err = |field: &'static str, detail: String| GridError::Decode {
        path: path.to_path_buf(),
        field,
        detail,
    };
    if data.len() < HEADER_LEN {
        return Err(err("header", format!("file is {} bytes", data.len())));
    }
    if &data[0..4] != CUBE_MAGIC {
        return Err(err("magic", format!("{:?}", &data[0..4])));
    }
    let version = u16::from_le_bytes([data[4], data[5]]);
    if version != CUBE_VERSION {
        return Err(err("version", format!("{version}")));
    }
    let days = u32::from_le_bytes(data[6..10].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(data[10..14].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(data[14..18].try_into().unwrap()) as usize;
    if days == 0 || width == 0 || height == 0 {
        return Err(err("dimensions", format!("{days}x{width}x{height}")));
    }
    let per_day = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(days))
        .ok_or_else(|| err("dimensions", "overflow".to_string()))?;
    let mask_day_bytes = (width * height).div_ceil(8);
    let expected = HEADER_LEN + per_day * 4 + mask_day_bytes * days;
    if data.len() != expected {
        return Err(err(
            "payload length",
            format!("expected {expected} bytes, file is {}", data.len()),
        ));
    }

    let mut values = Vec::with_capacity(per_day);
    let mut off = HEADER_LEN;
    for _ in 0..per_day {
        values.push(f32::from_le_bytes(data[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    let mut bits = Vec::with_capacity(per_day);
    for _ in 0..days {
        let packed = &data[off..off + mask_day_bytes];
        for i in 0..width * height {
            bits.push((packed[i / 8] >> (i % 8)) & 1);
        }
        off += mask_day_bytes;
    }
    let mask = MaskCube::new(days, width, height, bits)?;
    AnomalyCube::new(days, width, height, values, mask)
}

pub fn write_cube(path: &Path, cube: &AnomalyCube) -> Result<()> {
    let bytes = encode_cube(cube);
    let mut f = fs::File::create(path).map_err(|e| GridError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    f.write_all(&bytes).map_err(|e| GridError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_cube(path: &Path) -> Result<AnomalyCube> {
    let data = fs::read(path).map_err(|e| GridError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode_cube(path, &data)
}

pub fn write_geometry(path: &Path, geometry: &GridGeometry) -> Result<()> {
    let mut out = String::from("row,col,lat,lon,master\n");
    for row in 0..geometry.height {
        for col in 0..geometry.width {
            let i = geometry.cell(row, col);
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row, col, geometry.lat[i], geometry.lon[i], geometry.master[i]
            ));
        }
    }
    fs::write(path, out).map_err(|e| GridError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_geometry(path: &Path) -> Result<GridGeometry> {
    let text = fs::read_to_string(path).map_err(|e| GridError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_geometry(path, &text)
}

pub fn parse_geometry(path: &Path, text: &str) -> Result<GridGeometry> {
    let err = |field: &'static str, detail: String| GridError::Decode {
        path: path.to_path_buf(),
        field,
        detail,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err("header", "empty file".into()))?;
    if header.trim() != "row,col,lat,lon,master" {
        return Err(err("header", header.to_string()));
    }
    let mut cells: Vec<(usize, usize, f64, f64, u8)> = Vec::new();
    let (mut max_row, mut max_col) = (0usize, 0usize);
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(err("row", format!("line {}: {line:?}", lineno + 2)));
        }
        let parse = |s: &str, what: &'static str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| err(what, format!("line {}: {s:?}", lineno + 2)))
        };
        let row = parse(parts[0], "row")? as usize;
        let col = parse(parts[1], "col")? as usize;
        let lat = parse(parts[2], "lat")?;
        let lon = parse(parts[3], "lon")?;
        let master = parse(parts[4], "master")?;
        if master != 0.0 && master != 1.0 {
            return Err(err("master", format!("line {}: {}", lineno + 2, parts[4])));
        }
        max_row = max_row.max(row);
        max_col = max_col.max(col);
        cells.push((row, col, lat, lon, master as u8));
    }
    if cells.is_empty() {
        return Err(err("row", "no cells".into()));
    }
    let (width, height) = (max_col + 1, max_row + 1);
    if cells.len() != width * height {
        return Err(err(
            "row",
            format!("{} cells for a {width}x{height} grid", cells.len()),
        ));
    }
    let mut lat = vec![f64::NAN; width * height];
    let mut lon = vec![f64::NAN; width * height];
    let mut master = vec![0u8; width * height];
    for (row, col, la, lo, m) in cells {
        let i = row * width + col;
        lat[i] = la;
        lon[i] = lo;
        master[i] = m;
    }
    GridGeometry::new(width, height, lat, lon, master)
}

/// Write, read back and return the decoded cube. The decoded cube is
/// mask-identical and bit-exact at observed cells.
pub fn codec_roundtrip(path: &Path, cube: &AnomalyCube, geometry: &GridGeometry) -> Result<AnomalyCube> {
    if geometry.width != cube.width() || geometry.height != cube.height() {
        return Err(GridError::ShapeMismatch {
            context: "codec_roundtrip",
            expected: format!("{}x{}", geometry.width, geometry.height),
            actual: format!("{}x{}", cube.width(), cube.height()),
        });
    }
    write_cube(path, cube)?;
    read_cube(path)
}
