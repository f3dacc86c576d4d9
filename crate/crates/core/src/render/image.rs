//! RGB float images, binary PPM I/O and PSNR.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![[0.0; 3]; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape { expected: width * height, got: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        self.pixels[y * self.width + x] = c;
    }

    /// Per-pixel mean of equally sized images.
    pub fn mean(images: &[Image]) -> Result<Image> {
        let first = images.first().ok_or(Error::EmptyBatch)?;
        let mut out = Image::new(first.width, first.height);
        for img in images {
            check_dims(first, img)?;
            for (o, p) in out.pixels.iter_mut().zip(&img.pixels) {
                for k in 0..3 {
                    o[k] += p[k];
                }
            }
        }
        let inv = 1.0 / images.len() as f64;
        out.pixels.iter_mut().for_each(|p| p.iter_mut().for_each(|v| *v *= inv));
        Ok(out)
    }

    /// Quantize to 8 bits and write as binary PPM.
    pub fn write_ppm<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = Vec::new();
        while header.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated PPM header".into()));
            }
            let line = line.split('#').next().unwrap_or("");
            header.extend(line.split_whitespace().map(str::to_owned));
        }
        if header[0] != "P6" || header.len() != 4 {
            return Err(Error::Format("expected a binary P6 PPM".into()));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("PPM header: {e}")));
        let (width, height, max) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if max != 255 {
            return Err(Error::Format("only 8-bit PPM is supported".into()));
        }
        let mut bytes = vec![0u8; width * height * 3];
        r.read_exact(&mut bytes)?;
        let pixels = bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]].map(|v| v as f64 / 255.0)).collect();
        Ok(Self { width, height, pixels })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ppm(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        Self::read_ppm(std::fs::File::open(path)?)
    }
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidArgument(format!("image sizes differ: {}x{} vs {}x{}", a.width, a.height, b.width, b.height)));
    }
    Ok(())
}

/// Mean squared error over all channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    if a.pixels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = a.pixels.iter().zip(&b.pixels).flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).powi(2))).sum();
    Ok(sum / (3 * a.pixels.len()) as f64)
}

/// `10 log10(1 / MSE)`; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: f64) -> Image {
        Image::from_pixels(2, 2, vec![[v; 3]; 4]).unwrap()
    }

    #[test]
    fn psnr_values() {
        assert_eq!(psnr(&flat(0.3), &flat(0.3)).unwrap(), f64::INFINITY);
        assert!((psnr(&flat(0.0), &flat(0.1)).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&flat(0.0), &flat(1.0)).unwrap()).abs() < 1e-12);
        assert!(psnr(&flat(0.0), &Image::new(3, 2)).is_err());
    }

    #[test]
    fn ppm_round_trip_is_exact_on_8bit_values() {
        let mut img = Image::new(3, 2);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = [i as f64 * 40.0 / 255.0, 1.0, 0.0];
        }
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        let back = Image::read_ppm(&buf[..]).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn mean_image() {
        let m = Image::mean(&[flat(0.2), flat(0.4)]).unwrap();
        assert!((m.get(1, 1)[0] - 0.3).abs() < 1e-15);
    }
}
