//! A deterministic toy decoder from latent vectors to small grayscale
//! glyphs, and strips of glyphs along a query line.
//!
//! The first coordinate morphs a filled disc (`z₁ ≤ −3`) into a diagonal
//! cross (`z₁ ≥ 3`), the second sets the size, and the remaining
//! coordinates bend stroke thickness and rotation. Shapes are drawn from a
//! blended signed distance field with a linear edge ramp, so pixels change
//! continuously with `z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LineSample;

pub const GLYPH_SIZE: usize = 32;
pub const SEPARATOR_WIDTH: usize = 2;
const SEPARATOR_VALUE: u8 = 96;
const CLAMP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphImage {
    pub width: usize,
    pub height: usize,
    /// Row-major grayscale.
    pub pixels: Vec<u8>,
}

impl GlyphImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Euclidean distance between pixel buffers of equal shape.
    pub fn l2_distance(&self, other: &GlyphImage) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// 8-bit grayscale PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(&self.pixels)?;
            writer.finish()?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Side length of a glyph in pixels.
    pub size: usize,
    /// Extra edge softness in glyph-relative units; 0 gives crisp edges.
    /// Larger values mimic a poorer generator.
    pub blur: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            size: GLYPH_SIZE,
            blur: 0.0,
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

struct Shape {
    morph: f64,
    radius: f64,
    half_width: f64,
    angle: f64,
}

impl Shape {
    fn from_latent(z: &[f64]) -> Self {
        let c = |i: usize| z.get(i).copied().unwrap_or(0.0).clamp(-CLAMP, CLAMP);
        let rest = z.len().saturating_sub(2).max(1) as f64;
        let (mut even, mut odd) = (0.0, 0.0);
        for i in 2..z.len() {
            if i % 2 == 0 {
                even += c(i);
            } else {
                odd += c(i);
            }
        }
        Self {
            morph: smoothstep((c(0) + 3.0) / 6.0),
            radius: 0.6 + 0.07 * c(1),
            half_width: 0.16 + 0.05 * (even / rest.sqrt() / 2.0).tanh(),
            angle: std::f64::consts::FRAC_PI_4 + 0.25 * (odd / rest.sqrt() / 2.0).tanh(),
        }
    }

    // Signed distance at (x, y) in [-1, 1]²; negative inside.
    fn distance(&self, x: f64, y: f64) -> f64 {
        let disc = (x * x + y * y).sqrt() - self.radius;
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (c * x + s * y, -s * x + c * y);
        let bar = |a: f64, b: f64| {
            let dx = a.abs() - self.radius;
            let dy = b.abs() - self.half_width * self.radius;
            let outside = (dx.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt();
            outside + dx.max(dy).min(0.0)
        };
        let cross = bar(u, v).min(bar(v, u));
        (1.0 - self.morph) * disc + self.morph * cross
    }
}

/// Renders one glyph. Coordinates are clamped to `[-4, 4]`; missing
/// coordinates count as 0.
pub fn render_glyph(z: &[f64], options: &RenderOptions) -> GlyphImage {
    let n = options.size.max(1);
    let shape = Shape::from_latent(z);
    let pixel = 2.0 / n as f64;
    let soft = pixel + options.blur.max(0.0);
    let mut img = GlyphImage::new(n, n, 0);
    for row in 0..n {
        let y = -1.0 + (row as f64 + 0.5) * pixel;
        for col in 0..n {
            let x = -1.0 + (col as f64 + 0.5) * pixel;
            let d = shape.distance(x, y);
            let v = (0.5 - d / soft).clamp(0.0, 1.0);
            img.pixels[row * n + col] = (255.0 * v).round() as u8;
        }
    }
    img
}

/// Click zone `[x_start, x_end)` of one glyph: its columns plus the
/// separator to its right. Zones partition the strip width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StripZone {
    pub index: usize,
    pub x_start: usize,
    pub x_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strip {
    pub image: GlyphImage,
    pub zones: Vec<StripZone>,
}

impl Strip {
    /// Sample index under pixel column `x`. Separator columns belong to the
    /// glyph on their left.
    pub fn index_at(&self, x: usize) -> Option<usize> {
        if x >= self.image.width || self.zones.is_empty() {
            return None;
        }
        let pitch = self.zones.get(1).map_or(self.image.width, |z| z.x_start);
        Some((x / pitch).min(self.zones.len() - 1))
    }
}

/// Glyphs of `samples` left to right, separated by 2-pixel bars.
pub fn render_strip(samples: &[LineSample], options: &RenderOptions) -> Result<Strip> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("a strip needs at least one sample".into()));
    }
    let n = options.size.max(1);
    let count = samples.len();
    let width = count * n + (count - 1) * SEPARATOR_WIDTH;
    let mut image = GlyphImage::new(width, n, SEPARATOR_VALUE);
    let mut zones = Vec::with_capacity(count);
    for (i, sample) in samples.iter().enumerate() {
        let glyph = render_glyph(&sample.point, options);
        let x0 = i * (n + SEPARATOR_WIDTH);
        for row in 0..n {
            image.pixels[row * width + x0..row * width + x0 + n].copy_from_slice(&glyph.pixels[row * n..(row + 1) * n]);
        }
        zones.push(StripZone {
            index: sample.index,
            x_start: x0,
            x_end: (x0 + n + SEPARATOR_WIDTH).min(width),
        });
    }
    Ok(Strip { image, zones })
}
