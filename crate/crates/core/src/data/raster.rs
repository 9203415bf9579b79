//! Planar RGB images with values in `[0, 1]`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{FcnrError, Result};

/// Channel-major (`[3, height, width]`) float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(FcnrError::Shape(format!(
                "{} values for a 3x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Raster { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Raster {
            height,
            width,
            data: vec![value; 3 * height * width],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    pub fn set_rgb(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            let i = self.index(c, y, x);
            self.data[i] = v;
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// `[1, 3, H, W]` f32 tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, (1, 3, self.height, self.width), &Device::Cpu)?)
    }

    /// From a `[3, H, W]` or `[1, 3, H, W]` tensor of any float dtype.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            3 => t.clone(),
            _ => return Err(FcnrError::Shape(format!("expected one image, got {:?}", t.dims()))),
        };
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(FcnrError::Shape(format!("expected 3 channels, got {c}")));
        }
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Raster::new(h, w, data)
    }

    /// Mirror-extend at the bottom and right to the next multiple of
    /// `multiple`. Returns the padded image and the added rows and columns.
    pub fn pad_reflect(&self, multiple: usize) -> (Raster, usize, usize) {
        let ph = self.height.div_ceil(multiple) * multiple - self.height;
        let pw = self.width.div_ceil(multiple) * multiple - self.width;
        if ph == 0 && pw == 0 {
            return (self.clone(), 0, 0);
        }
        let (h, w) = (self.height + ph, self.width + pw);
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in 0..h {
                let sy = reflect(y, self.height);
                for x in 0..w {
                    data.push(self.get(c, sy, reflect(x, self.width)));
                }
            }
        }
        (Raster { height: h, width: w, data }, ph, pw)
    }

    /// Top-left `height x width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Raster> {
        if height > self.height || width > self.width {
            return Err(FcnrError::Shape(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                let start = self.index(c, y, 0);
                data.extend_from_slice(&self.data[start..start + width]);
            }
        }
        Ok(Raster { height, width, data })
    }

    /// Round to 8 bits per channel, as stored on disk.
    pub fn quantize_8bit(&self) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in buf.enumerate_pixels_mut() {
            let (x, y) = (x as usize, y as usize);
            *px = image::Rgb([0, 1, 2].map(|c| to_u8(self.get(c, y, x))));
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| FcnrError::io(parent, e))?;
            }
        }
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => FcnrError::io(path, io),
                other => FcnrError::Image(other),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Raster::filled(h, w, 0.0);
        for (x, y, px) in img.enumerate_pixels() {
            out.set_rgb(y as usize, x as usize, px.0.map(|v| v as f32 / 255.0));
        }
        Ok(out)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Whole-sample mirror index for `i` in an extended axis of length `n`.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}
