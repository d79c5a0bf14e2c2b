//! Float RGB image buffer with PNG round-tripping.

use std::path::Path;

use crate::math::Real;
use crate::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf<F> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[F; 3]>,
}

impl<F: Real> ImageBuf<F> {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![[F::zero(); 3]; width * height] }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [F; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, c: [F; 3]) {
        self.data[y * self.width + x] = c;
    }

    pub fn cast<G: Real>(&self) -> ImageBuf<G> {
        ImageBuf {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| [G::c(p[0].as_f64()), G::c(p[1].as_f64()), G::c(p[2].as_f64())])
                .collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, p) in self.data.iter().enumerate() {
            let x = (i % self.width) as u32;
            let y = (i / self.width) as u32;
            let q = |v: F| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x, y, image::Rgb([q(p[0]), q(p[1]), q(p[2])]));
        }
        img
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let width = img.width() as usize;
        let height = img.height() as usize;
        let data = img
            .pixels()
            .map(|p| {
                [
                    F::c(p.0[0] as f64 / 255.0),
                    F::c(p.0[1] as f64 / 255.0),
                    F::c(p.0[2] as f64 / 255.0),
                ]
            })
            .collect();
        Self { width, height, data }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), Error> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
    }

    pub fn load_png(path: &Path) -> Result<Self, Error> {
        let img = image::open(path)
            .map_err(|e| Error::Image { path: path.to_path_buf(), source: e })?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    /// Mean absolute 4-neighbor Laplacian over interior pixels, averaged
    /// across channels; a crude high-frequency energy measure.
    pub fn mean_abs_laplacian(&self) -> f64 {
        if self.width < 3 || self.height < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut count = 0usize;
        for y in 1..self.height - 1 {
            for x in 1..self.width - 1 {
                for c in 0..3 {
                    let center = self.pixel(x, y)[c].as_f64();
                    let lap = self.pixel(x - 1, y)[c].as_f64()
                        + self.pixel(x + 1, y)[c].as_f64()
                        + self.pixel(x, y - 1)[c].as_f64()
                        + self.pixel(x, y + 1)[c].as_f64()
                        - 4.0 * center;
                    acc += lap.abs();
                    count += 1;
                }
            }
        }
        acc / count as f64
    }

    /// Box-filter downsample by an integer factor (used only to demonstrate
    /// that re-rendering differs from downsampling).
    pub fn downsample_box(&self, k: usize) -> ImageBuf<F> {
        let w = self.width / k;
        let h = self.height / k;
        let mut out = ImageBuf::new(w, h);
        let norm = F::c(1.0 / (k * k) as f64);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [F::zero(); 3];
                for dy in 0..k {
                    for dx in 0..k {
                        let p = self.pixel(x * k + dx, y * k + dy);
                        for c in 0..3 {
                            acc[c] = acc[c] + p[c];
                        }
                    }
                }
                out.set_pixel(x, y, [acc[0] * norm, acc[1] * norm, acc[2] * norm]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_for_quantized_values() {
        let mut img = ImageBuf::<f32>::new(8, 5);
        for (i, p) in img.data.iter_mut().enumerate() {
            let v = (i % 256) as f32 / 255.0;
            *p = [v, 1.0 - v, 0.5];
        }
        let dir = std::env::temp_dir().join("mipfield-imagebuf-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.png");
        img.save_png(&path).unwrap();
        let back = ImageBuf::<f32>::load_png(&path).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 0.5 / 255.0 + 1e-6);
            }
        }
    }
}
