//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn bad(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad(path, "not a binary PGM/PPM (expected P5 or P6)")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| bad(path, "malformed header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad(path, "malformed header"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad(path, format!("unsupported maxval {maxval}, only 255 is accepted")));
    }
    if width == 0 || height == 0 {
        return Err(bad(path, "zero image extent"));
    }
    Ok(Header { channels, width, height, data_start: pos + 1 })
}

/// Decodes a PGM/PPM file into `[C,H,W]` with values `k/255`.
pub fn read_pnm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes, path)?;
    let n = h.channels * h.width * h.height;
    let raw = bytes
        .get(h.data_start..h.data_start + n)
        .ok_or_else(|| bad(path, "truncated pixel data"))?;
    let plane = h.width * h.height;
    // Interleaved RGB becomes channel-major.
    let data = (0..n)
        .map(|i| {
            let (c, p) = (i / plane, i % plane);
            raw[p * h.channels + c] as f32 / 255.0
        })
        .collect();
    Tensor::from_vec(vec![h.channels, h.height, h.width], data)
}

/// Quantizes `[C,H,W]` (C = 1 or 3) after clamping to `[0,1]`.
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w]: [usize; 3] = image
        .shape()
        .try_into()
        .map_err(|_| Error::shape("write_pnm", format!("expected [C,H,W], got {:?}", image.shape())))?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::shape("write_pnm", format!("{c} channels, expected 1 or 3"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = image.data();
    out.extend((0..c * plane).map(|i| {
        let (p, ch) = (i / c, i % c);
        (d[ch * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn write_pnm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    fs::write(path, encode_pnm(image)?)?;
    Ok(())
}

/// File extension matching the channel count.
pub fn pnm_extension(channels: usize) -> &'static str {
    if channels == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_white_pixel_is_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, b"P5\n# comment\n2 1\n255\n\xff\x00").unwrap();
        let t = read_pnm(&p).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0]);
    }

    #[test]
    fn p6_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        let t = Tensor::from_fn(&[3, 4, 5], |i| ((i * 37) % 256) as f32 / 255.0);
        write_pnm(&p, &t).unwrap();
        let back = read_pnm(&p).unwrap();
        assert_eq!(back, t);
        write_pnm(&p, &back).unwrap();
        assert_eq!(encode_pnm(&t).unwrap(), fs::read(&p).unwrap());
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        for bytes in [&b"P2\n1 1\n255\n0"[..], b"P5\n1 1\n65535\n\0\0", b"P5\n2 2\n255\n\0", b"P5\n1"] {
            fs::write(&p, bytes).unwrap();
            assert!(read_pnm(&p).is_err(), "{:?}", String::from_utf8_lossy(bytes));
        }
    }
}
