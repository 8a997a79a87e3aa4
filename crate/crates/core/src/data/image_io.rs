use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit RGB image, pixels interleaved row-major (the PNG layout).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelImage {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || rgb.len() != width * height * 3 {
            return Err(Error::Dimension {
                op: "pixel image",
                lhs: vec![height, width, 3],
                rhs: vec![rgb.len()],
            });
        }
        Ok(Self { width, height, rgb })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bytes(&self) -> &[u8] {
        &self.rgb
    }

    /// Channel-major `[3, h, w]` tensor scaled by 1/255.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f64 / 255.0;
            }
        }
        Tensor::new(vec![3, self.height, self.width], data).expect("consistent dims")
    }

    /// Quantizes a `[3, h, w]` tensor to the nearest 1/255 step after clamping to `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 3 || t.shape()[0] != 3 {
            return Err(Error::Dimension {
                op: "save_image",
                lhs: t.shape().to_vec(),
                rhs: vec![3, 0, 0],
            });
        }
        let (h, w) = (t.shape()[1], t.shape()[2]);
        let plane = h * w;
        let mut rgb = vec![0u8; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                rgb[3 * i + c] = (t.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Self::new(w, h, rgb)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.rgb,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w as usize, h as usize, rgb.into_raw())
    }
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    Ok(PixelImage::load_png(path)?.to_tensor())
}

pub fn save_image(tensor: &Tensor, path: &Path) -> Result<()> {
    PixelImage::from_tensor(tensor)?.save_png(path)
}
