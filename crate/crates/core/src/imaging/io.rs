//! Luminance image files: binary PGM (P5, maxval 255) natively, PNG and other
//! formats through the `image` crate with RGB reduced to BT.601 luma.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A single-channel image with values on the 8-bit scale `[0, 255]`.
///
/// `pixels` is height×width (row index first).
#[derive(Debug, Clone, PartialEq)]
pub struct LumaImage {
    pub pixels: DMatrix<f64>,
}

impl LumaImage {
    pub fn new(pixels: DMatrix<f64>) -> Result<Self> {
        if pixels.nrows() == 0 || pixels.ncols() == 0 {
            return Err(Error::dim("image dimensions must be positive"));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("image has non-finite pixels"));
        }
        Ok(Self { pixels })
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    /// Pixels rounded and clamped to bytes, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width() * self.height());
        for r in 0..self.height() {
            for c in 0..self.width() {
                out.push(to_byte(self.pixels[(r, c)]));
            }
        }
        out
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height {
            return Err(Error::dim(format!("{} bytes for a {width}x{height} image", bytes.len())));
        }
        Self::new(DMatrix::from_fn(height, width, |r, c| bytes[r * width + c] as f64))
    }
}

pub fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// BT.601 full-range luma, rounded: `0.299 R + 0.587 G + 0.114 B`.
pub fn luma_from_rgb(r: u8, g: u8, b: u8) -> u8 {
    to_byte(0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
}

fn is_pgm(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<LumaImage> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P5") {
        return decode_pgm(&bytes);
    }
    if is_pgm(path) {
        return Err(Error::format(format!("{}: not a binary PGM (P5) file", path.display())));
    }
    let img = image::load_from_memory(&bytes)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<u8> = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => other.to_rgb8().pixels().map(|p| luma_from_rgb(p[0], p[1], p[2])).collect(),
    };
    LumaImage::from_bytes(w, h, &data)
}

/// Writes PNG for a `.png` extension and binary PGM otherwise.
pub fn save_image(path: impl AsRef<Path>, img: &LumaImage) -> Result<()> {
    let path = path.as_ref();
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.to_bytes())
            .ok_or_else(|| Error::dim("image buffer size"))?;
        buf.save(path)?;
        return Ok(());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}

pub fn encode_pgm(img: &LumaImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_bytes());
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LumaImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
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
                None => return Err(Error::format("truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format("bad PGM header"))?);
    }
    if fields[0] != "P5" {
        return Err(Error::format(format!("unsupported PGM magic {:?}", fields[0])));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>().map_err(|_| Error::format(format!("bad PGM {what} {s:?}")))
    };
    let width = parse(fields[1], "width")?;
    let height = parse(fields[2], "height")?;
    let maxval = parse(fields[3], "maxval")?;
    if maxval != 255 {
        return Err(Error::format(format!("unsupported PGM maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format("PGM dimensions must be positive"));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::format("truncated PGM header"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() < width * height {
        return Err(Error::format(format!(
            "PGM raster has {} bytes, {width}x{height} needs {}",
            raster.len(),
            width * height
        )));
    }
    LumaImage::from_bytes(width, height, &raster[..width * height])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_example() {
        let mut bytes = b"P5 4 3 255\n".to_vec();
        bytes.extend((0..12u8).map(|v| v * 10));
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (4, 3));
        assert_eq!(img.pixels[(1, 2)], 60.0);
    }

    #[test]
    fn comments_and_bad_maxval() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([7, 9]);
        assert_eq!(decode_pgm(&bytes).unwrap().pixels[(0, 1)], 9.0);
        let mut bad = b"P5 2 1 65535\n".to_vec();
        bad.extend([0, 0, 0, 0]);
        assert!(decode_pgm(&bad).is_err());
        assert!(decode_pgm(b"P5 2 2 255\n\x01").is_err());
    }

    #[test]
    fn red_is_76() {
        assert_eq!(luma_from_rgb(255, 0, 0), 76);
        assert_eq!(luma_from_rgb(255, 255, 255), 255);
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..35u32).map(|v| (v * 37 % 256) as u8).collect();
        let img = LumaImage::from_bytes(7, 5, &bytes).unwrap();
        for name in ["a.pgm", "a.png"] {
            let p = dir.path().join(name);
            save_image(&p, &img).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn rgb_png_is_reduced_to_luma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0])).save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert!(img.pixels.iter().all(|&v| v == 76.0));
    }
}
