//! Binary PGM / PPM (P5 / P6) reading and writing. 16-bit samples are
//! big-endian; 8-bit files are accepted on read.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::plane::Plane;

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::format(path, "truncated header"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "bad header field"))?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, "missing separator before raster"));
    }
    let maxval = fields[2] as u32;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        magic,
        width: fields[0],
        height: fields[1],
        maxval,
        offset: pos + 1,
    })
}

fn read_samples(path: &Path, expected_magic: &[u8; 2], channels: usize) -> Result<(Header, Vec<u16>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes, path)?;
    if &header.magic != expected_magic {
        return Err(Error::format(
            path,
            format!("expected magic {}", String::from_utf8_lossy(expected_magic)),
        ));
    }
    let n = header.width * header.height * channels;
    let wide = header.maxval > 255;
    let need = if wide { 2 * n } else { n };
    let raster = &bytes[header.offset..];
    if raster.len() < need {
        return Err(Error::format(path, "truncated raster"));
    }
    let samples = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster[..need].iter().map(|&b| u16::from(b)).collect()
    };
    Ok((header, samples))
}

/// Read a P5 file. Returns the sample grid and the file's maxval.
pub fn read_pgm(path: &Path) -> Result<(Plane<u16>, u32)> {
    let (h, samples) = read_samples(path, b"P5", 1)?;
    Ok((Plane::from_vec(h.width, h.height, samples)?, h.maxval))
}

/// Read a P6 file into three planes. Returns the planes and the file's maxval.
pub fn read_ppm(path: &Path) -> Result<([Plane<u16>; 3], u32)> {
    let (h, samples) = read_samples(path, b"P6", 3)?;
    let mut chans: [Vec<u16>; 3] = Default::default();
    for px in samples.chunks_exact(3) {
        for c in 0..3 {
            chans[c].push(px[c]);
        }
    }
    let [r, g, b] = chans;
    Ok((
        [
            Plane::from_vec(h.width, h.height, r)?,
            Plane::from_vec(h.width, h.height, g)?,
            Plane::from_vec(h.width, h.height, b)?,
        ],
        h.maxval,
    ))
}

fn write_file(path: &Path, header: String, body: Vec<u8>) -> Result<()> {
    let mut out = header.into_bytes();
    out.extend_from_slice(&body);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write a 16-bit P5 file (maxval 65535, big-endian samples).
pub fn write_pgm16(path: &Path, plane: &Plane<u16>) -> Result<()> {
    let body = plane.data().iter().flat_map(|v| v.to_be_bytes()).collect();
    write_file(path, format!("P5\n{} {}\n65535\n", plane.width(), plane.height()), body)
}

/// Write an 8-bit P5 file (used for masks).
pub fn write_pgm8(path: &Path, plane: &Plane<u8>) -> Result<()> {
    write_file(
        path,
        format!("P5\n{} {}\n255\n", plane.width(), plane.height()),
        plane.data().to_vec(),
    )
}

/// Write a 16-bit P6 file.
pub fn write_ppm16(path: &Path, planes: [&Plane<u16>; 3]) -> Result<()> {
    planes[0].ensure_same_dims(planes[1])?;
    planes[0].ensure_same_dims(planes[2])?;
    let mut body = Vec::with_capacity(planes[0].len() * 6);
    for i in 0..planes[0].len() {
        for p in planes {
            body.extend_from_slice(&p.data()[i].to_be_bytes());
        }
    }
    write_file(
        path,
        format!("P6\n{} {}\n65535\n", planes[0].width(), planes[0].height()),
        body,
    )
}

/// Write an 8-bit P6 file.
pub fn write_ppm8(path: &Path, planes: [&Plane<u8>; 3]) -> Result<()> {
    planes[0].ensure_same_dims(planes[1])?;
    planes[0].ensure_same_dims(planes[2])?;
    let mut body = Vec::with_capacity(planes[0].len() * 3);
    for i in 0..planes[0].len() {
        for p in planes {
            body.push(p.data()[i]);
        }
    }
    write_file(
        path,
        format!("P6\n{} {}\n255\n", planes[0].width(), planes[0].height()),
        body,
    )
}
