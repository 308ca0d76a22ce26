//! File formats: binary PGM (P5), binary PPM (P6), and raw planar YUV420.
//! All three round-trip losslessly; PGM/PPM accept maxval 255 only.

use std::fs;
use std::path::Path;

use super::{Plane, SimError, Yuv420Frame};

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, SimError> {
        if data.len() != width * height * 3 {
            return Err(SimError::SizeMismatch {
                expected: width * height * 3,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = (y * self.width + x) * 3;
        (self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, r: u8, g: u8, b: u8) {
        let i = (y * self.width + x) * 3;
        self.data[i] = r;
        self.data[i + 1] = g;
        self.data[i + 2] = b;
    }
}

struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderScanner<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_filler(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8], SimError> {
        self.skip_filler();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(SimError::BadHeader {
                reason: "unexpected end of header".into(),
            });
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize, SimError> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SimError::BadHeader {
                reason: format!("expected number, got {:?}", String::from_utf8_lossy(tok)),
            })
    }

    /// Consume the single whitespace byte that separates header and data.
    fn into_payload(mut self) -> Result<&'a [u8], SimError> {
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(SimError::BadHeader {
                reason: "missing separator before sample data".into(),
            });
        }
        self.pos += 1;
        Ok(&self.bytes[self.pos..])
    }
}

fn parse_netpbm(bytes: &[u8], magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<u8>), SimError> {
    let mut sc = HeaderScanner::new(bytes);
    let tag = sc.token()?;
    if tag != magic {
        return Err(SimError::BadHeader {
            reason: format!(
                "expected {:?}, got {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(tag)
            ),
        });
    }
    let width = sc.number()?;
    let height = sc.number()?;
    let maxval = sc.number()?;
    if maxval != 255 {
        return Err(SimError::Unsupported {
            reason: format!("maxval {maxval} (only 255 supported)"),
        });
    }
    let payload = sc.into_payload()?;
    let expected = width * height * channels;
    if payload.len() < expected {
        return Err(SimError::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    Ok((width, height, payload[..expected].to_vec()))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Plane, SimError> {
    let bytes = fs::read(path)?;
    let (w, h, data) = parse_netpbm(&bytes, b"P5", 1)?;
    Plane::new(w, h, data)
}

pub fn save_pgm(path: impl AsRef<Path>, plane: &Plane) -> Result<(), SimError> {
    let mut out = format!("P5\n{} {}\n255\n", plane.width(), plane.height()).into_bytes();
    out.extend_from_slice(plane.data());
    fs::write(path, out)?;
    Ok(())
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage, SimError> {
    let bytes = fs::read(path)?;
    let (w, h, data) = parse_netpbm(&bytes, b"P6", 3)?;
    RgbImage::new(w, h, data)
}

pub fn save_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<(), SimError> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    fs::write(path, out)?;
    Ok(())
}

/// Raw planar 8-bit YUV420: Y plane, then U, then V. Dimensions are not in
/// the file and must be supplied.
pub fn load_yuv420(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Yuv420Frame, SimError> {
    if width % 2 != 0 || height % 2 != 0 {
        return Err(SimError::OddDimensions { width, height });
    }
    let bytes = fs::read(path)?;
    let y_len = width * height;
    let c_len = y_len / 4;
    let expected = y_len + 2 * c_len;
    if bytes.len() != expected {
        return Err(SimError::SizeMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let y = Plane::new(width, height, bytes[..y_len].to_vec())?;
    let u = Plane::new(width / 2, height / 2, bytes[y_len..y_len + c_len].to_vec())?;
    let v = Plane::new(width / 2, height / 2, bytes[y_len + c_len..].to_vec())?;
    Yuv420Frame::new(y, u, v)
}

pub fn save_yuv420(path: impl AsRef<Path>, frame: &Yuv420Frame) -> Result<(), SimError> {
    let mut out = Vec::with_capacity(frame.y.data().len() * 3 / 2);
    out.extend_from_slice(frame.y.data());
    out.extend_from_slice(frame.u.data());
    out.extend_from_slice(frame.v.data());
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::synthetic_rgb;
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let plane = Plane::new(5, 3, (0u8..15).collect()).unwrap();
        save_pgm(&path, &plane).unwrap();
        assert_eq!(load_pgm(&path).unwrap(), plane);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let img = synthetic_rgb(10, 6, 1);
        save_ppm(&path, &img).unwrap();
        assert_eq!(load_ppm(&path).unwrap(), img);
    }

    #[test]
    fn yuv_round_trip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.yuv");
        let yuv = super::super::rgb_to_yuv420(&synthetic_rgb(12, 8, 2)).unwrap();
        save_yuv420(&path, &yuv).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 12 * 8 * 3 / 2);
        assert_eq!(load_yuv420(&path, 12, 8).unwrap(), yuv);

        assert!(matches!(
            load_yuv420(&path, 12, 10).unwrap_err(),
            SimError::SizeMismatch { .. }
        ));
    }

    #[test]
    fn pgm_rejects_wrong_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        std::fs::write(&path, b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(
            load_pgm(&path).unwrap_err(),
            SimError::Unsupported { .. }
        ));
    }

    #[test]
    fn pgm_rejects_truncation_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let trunc = dir.path().join("t.pgm");
        std::fs::write(&trunc, b"P5\n4 4\n255\nabc").unwrap();
        assert!(matches!(
            load_pgm(&trunc).unwrap_err(),
            SimError::SizeMismatch { .. }
        ));

        let bad = dir.path().join("b.pgm");
        std::fs::write(&bad, b"P4\n2 2\n255\n\0\0\0\0").unwrap();
        assert!(matches!(load_pgm(&bad).unwrap_err(), SimError::BadHeader { .. }));
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 # inline\n2\n255\n\x01\x02\x03\x04").unwrap();
        let plane = load_pgm(&path).unwrap();
        assert_eq!(plane.data(), &[1, 2, 3, 4]);
    }
}
