use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::mesh::{Point, Rect};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum RasterData {
    Gray(Vec<u8>),
    Float(Vec<f64>),
}

/// A scalar image covering a rectangle. Row 0 is the bottom row; files store
/// the top row first, like ordinary images.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterField {
    pub nx: usize,
    pub ny: usize,
    pub extent: Rect,
    pub data: RasterData,
}

impl RasterField {
    pub fn new(nx: usize, ny: usize, extent: Rect, data: RasterData) -> Result<Self> {
        let len = match &data {
            RasterData::Gray(v) => v.len(),
            RasterData::Float(v) => v.len(),
        };
        if nx == 0 || ny == 0 {
            return Err(Error::Config("raster resolution must be positive".into()));
        }
        if len != nx * ny {
            return Err(Error::Dimension {
                expected: nx * ny,
                found: len,
            });
        }
        Ok(Self { nx, ny, extent, data })
    }

    pub fn constant(nx: usize, ny: usize, extent: Rect, value: f64) -> Self {
        Self::new(nx, ny, extent, RasterData::Float(vec![value; nx * ny])).unwrap()
    }

    pub fn from_fn(nx: usize, ny: usize, extent: Rect, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut v = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                v.push(f(i, j));
            }
        }
        Self::new(nx, ny, extent, RasterData::Float(v)).unwrap()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        let k = j * self.nx + i;
        match &self.data {
            RasterData::Gray(v) => v[k] as f64,
            RasterData::Float(v) => v[k],
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match &self.data {
            RasterData::Gray(v) => v.iter().map(|&g| g as f64).collect(),
            RasterData::Float(v) => v.clone(),
        }
    }

    pub fn pixel_size(&self) -> (f64, f64) {
        (self.extent.width() / self.nx as f64, self.extent.height() / self.ny as f64)
    }

    /// Pixel containing `p`; pixel borders belong to the lower/left pixel.
    pub fn pixel_at(&self, p: Point) -> Result<(usize, usize)> {
        let tol = 1e-10 * self.extent.width().max(self.extent.height());
        if !self.extent.contains(p, tol) {
            return Err(Error::OutOfDomain {
                x: p.x,
                y: p.y,
                region: "the raster extent",
            });
        }
        let (dx, dy) = self.pixel_size();
        let axis = |t: f64, n: usize| {
            let c = t.ceil();
            let k = if (t - c).abs() < 1e-10 { c - 1.0 } else { t.floor() };
            (k.max(0.0) as usize).min(n - 1)
        };
        Ok((
            axis((p.x - self.extent.min.x) / dx, self.nx),
            axis((p.y - self.extent.min.y) / dy, self.ny),
        ))
    }

    /// Nearest-pixel lookup.
    pub fn sample(&self, p: Point) -> Result<f64> {
        let (i, j) = self.pixel_at(p)?;
        Ok(self.value(i, j))
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let RasterData::Gray(v) = &self.data else {
            return Err(Error::Config("PGM export needs an 8-bit raster".into()));
        };
        let mut out = format!("P5\n{} {}\n255\n", self.nx, self.ny).into_bytes();
        for j in (0..self.ny).rev() {
            out.extend_from_slice(&v[j * self.nx..(j + 1) * self.nx]);
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_pgm(path: &Path, extent: Rect) -> Result<Self> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut tokens = Vec::new();
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Parse("truncated PGM header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P5" {
            return Err(Error::Parse(format!("unsupported PGM magic {}", tokens[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("PGM header `{s}`: {e}")));
        let (nx, ny, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
        if maxval != 255 {
            return Err(Error::Parse(format!("PGM maxval {maxval}, expected 255")));
        }
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != nx * ny {
            return Err(Error::Parse(format!(
                "PGM body has {} bytes, expected {}",
                bytes.len(),
                nx * ny
            )));
        }
        let mut v = Vec::with_capacity(nx * ny);
        for j in (0..ny).rev() {
            v.extend_from_slice(&bytes[j * nx..(j + 1) * nx]);
        }
        Self::new(nx, ny, extent, RasterData::Gray(v))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for j in (0..self.ny).rev() {
            for i in 0..self.nx {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{:.16e}", self.value(i, j)).unwrap();
            }
            out.push('\n');
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn read_csv(path: &Path, extent: Rect) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: `{s}`: {e}", n + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let ny = rows.len();
        let nx = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nx) {
            return Err(Error::Parse("ragged raster CSV".into()));
        }
        let v = rows.into_iter().rev().flatten().collect();
        Self::new(nx, ny, extent, RasterData::Float(v))
    }
}

/// Seeded white noise convolved with a periodic Gaussian kernel of standard
/// deviation `corr_len` (domain units), before any rescaling.
pub fn correlated_noise(nx: usize, ny: usize, extent: Rect, corr_len: f64, seed: u64) -> Result<Vec<f64>> {
    if nx == 0 || ny == 0 {
        return Err(Error::Config("raster resolution must be positive".into()));
    }
    if !(corr_len > 0.0) || !corr_len.is_finite() {
        return Err(Error::Config(format!("correlation length must be positive, got {corr_len}")));
    }
    let noise = white_noise(nx * ny, seed);
    let kx = folded_kernel(corr_len * nx as f64 / extent.width(), nx);
    let ky = folded_kernel(corr_len * ny as f64 / extent.height(), ny);

    let mut tmp = vec![0.0; nx * ny];
    for j in 0..ny {
        let row = &noise[j * nx..(j + 1) * nx];
        for i in 0..nx {
            tmp[j * nx + i] = kx.iter().enumerate().map(|(d, w)| w * row[(i + d) % nx]).sum();
        }
    }
    let mut out = vec![0.0; nx * ny];
    let mut column = vec![0.0; ny];
    for i in 0..nx {
        for (j, c) in column.iter_mut().enumerate() {
            *c = tmp[j * nx + i];
        }
        for j in 0..ny {
            out[j * nx + i] = ky.iter().enumerate().map(|(d, w)| w * column[(j + d) % ny]).sum();
        }
    }
    Ok(out)
}

pub fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

// Offsets are taken modulo `n`: weight `k[d]` multiplies sample `i + d`.
fn folded_kernel(sigma_px: f64, n: usize) -> Vec<f64> {
    let radius = (4.0 * sigma_px).ceil() as i64;
    let mut k = vec![0.0; n];
    for d in -radius..=radius {
        let w = (-0.5 * (d as f64 / sigma_px).powi(2)).exp();
        k[d.rem_euclid(n as i64) as usize] += w;
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

/// Correlated Gaussian noise rescaled to span 0..=255 and rounded.
pub fn gen_gaussian_raster(nx: usize, ny: usize, extent: Rect, corr_len: f64, seed: u64) -> Result<RasterField> {
    let v = correlated_noise(nx, ny, extent, corr_len, seed)?;
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let gray = v
        .iter()
        .map(|&x| if span > 0.0 { (255.0 * (x - lo) / span).round() as u8 } else { 0 })
        .collect();
    RasterField::new(nx, ny, extent, RasterData::Gray(gray))
}
