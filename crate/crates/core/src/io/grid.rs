//! CHGR: raw 64-bit float grids.
//!
//! ```text
//! "CHGR" | version: u32 | nx, ny, nz, channels: u32
//! lo: 3 x f64 | hi: 3 x f64 | time: f64
//! data: nx * ny * nz * channels x f64, channels interleaved, x fastest
//! ```
//!
//! All little-endian. Samples sit at cell centers of the `[lo, hi]` box.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::render::Image;

pub const GRID_MAGIC: &[u8; 4] = b"CHGR";
pub const GRID_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub channels: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub time: f64,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(dims: [usize; 3], channels: usize, lo: [f64; 3], hi: [f64; 3], time: f64) -> Result<Self> {
        if dims.contains(&0) || channels == 0 {
            return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
        }
        Ok(Self { dims, channels, lo, hi, time, data: vec![0.0; dims.iter().product::<usize>() * channels] })
    }

    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Flat index of cell `(i, j, k)`.
    pub fn cell(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn value(&self, cell: usize, channel: usize) -> f64 {
        self.data[cell * self.channels + channel]
    }

    pub fn set_value(&mut self, cell: usize, channel: usize, v: f64) {
        self.data[cell * self.channels + channel] = v;
    }

    /// Cell-center position of flat cell `cell`.
    pub fn position(&self, cell: usize) -> Vector3<f64> {
        let (nx, ny) = (self.dims[0], self.dims[1]);
        let idx = [cell % nx, (cell / nx) % ny, cell / (nx * ny)];
        Vector3::from_fn(|a, _| self.lo[a] + (self.hi[a] - self.lo[a]) * (idx[a] as f64 + 0.5) / self.dims[a] as f64)
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        (0..self.cell_count()).map(|c| self.position(c)).collect()
    }

    /// Values of one channel in cell order.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.data.iter().skip(channel).step_by(self.channels).copied().collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        for d in self.dims.iter().chain(std::iter::once(&self.channels)) {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in self.lo.iter().chain(&self.hi).chain(std::iter::once(&self.time)).chain(&self.data) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::Format(format!("bad grid magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != GRID_VERSION {
            return Err(Error::Format(format!("unsupported grid version {version}")));
        }
        let dims = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
        let channels = read_u32(r)? as usize;
        let n = dims.iter().try_fold(channels, |a, &d| a.checked_mul(d)).filter(|&n| n > 0 && n < 1 << 32);
        let n = n.ok_or_else(|| Error::Format(format!("implausible grid shape {dims:?} x {channels}")))?;
        let lo = [read_f64(r)?, read_f64(r)?, read_f64(r)?];
        let hi = [read_f64(r)?, read_f64(r)?, read_f64(r)?];
        let time = read_f64(r)?;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { dims, channels, lo, hi, time, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + self.data.len() * 8);
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut cursor = bytes.as_slice();
        let g = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", cursor.len())));
        }
        Ok(g)
    }

    /// An RGB image as a `width x height x 1` grid with pixel-unit bounds.
    pub fn from_image(img: &Image) -> Self {
        Self {
            dims: [img.width, img.height, 1],
            channels: 3,
            lo: [0.0; 3],
            hi: [img.width as f64, img.height as f64, 1.0],
            time: 0.0,
            data: img.pixels.iter().flatten().copied().collect(),
        }
    }

    pub fn to_image(&self) -> Result<Image> {
        if self.dims[2] != 1 || self.channels != 3 {
            return Err(Error::Format("grid is not a single RGB slice".into()));
        }
        Image::from_pixels(self.dims[0], self.dims[1], self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Grid {
        let mut g = Grid::zeros([3, 2, 4], 2, [-1.0, 0.0, -2.0], [1.0, 1.0, 2.0], 0.25).unwrap();
        for (i, v) in g.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin() / 3.0;
        }
        g
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let g = sample();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 * 5 + 8 * 7 + g.data.len() * 8);
        let back = Grid::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, g);
        assert!(back.data.iter().zip(&g.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[1] = b'X';
        assert!(matches!(Grid::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 7;
        assert!(matches!(Grid::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        assert!(Grid::read_from(&mut &buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn positions_are_cell_centers() {
        let g = sample();
        let p = g.position(g.cell(2, 1, 3));
        assert_eq!(p, Vector3::new(1.0 - 1.0 / 3.0, 0.75, 1.5));
        assert_eq!(g.channel(1).len(), g.cell_count());
    }

    #[test]
    fn image_conversion_round_trips() {
        let mut img = Image::new(4, 3);
        img.set(2, 1, [0.1, 0.2, 0.3]);
        assert_eq!(Grid::from_image(&img).to_image().unwrap(), img);
    }
}
