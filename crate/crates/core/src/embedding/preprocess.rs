//! Decoding and pixel preprocessing for the embedding backends.
//!
//! One documented path, no bypass: decode, convert to RGB, resize the
//! shorter side to 256 with bilinear interpolation, center-crop 224x224,
//! normalize per channel with the published ImageNet constants.

use image::imageops::FilterType;

use super::EmbedError;

pub const RESIZE_SHORT: u32 = 256;
pub const CROP_SIDE: u32 = 224;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// 3 x 224 x 224 float tensor in CHW order.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTensor {
    data: Vec<f32>,
}

impl PixelTensor {
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (3, CROP_SIDE as usize, CROP_SIDE as usize)
    }

    /// Value at (channel, y, x).
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        let side = CROP_SIDE as usize;
        self.data[c * side * side + y * side + x]
    }

    /// Little-endian byte view of the tensor, used for content digests.
    pub fn le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

pub fn preprocess_image(bytes: &[u8]) -> Result<PixelTensor, EmbedError> {
    let decoded =
        image::load_from_memory(bytes).map_err(|e| EmbedError::Undecodable(e.to_string()))?;
    let rgb = decoded.to_rgb8();

    let (w, h) = (rgb.width(), rgb.height());
    if w == 0 || h == 0 {
        return Err(EmbedError::Undecodable("zero-sized image".to_string()));
    }
    let (new_w, new_h) = if w <= h {
        let scale = RESIZE_SHORT as f64 / w as f64;
        (RESIZE_SHORT, ((h as f64 * scale).round() as u32).max(RESIZE_SHORT))
    } else {
        let scale = RESIZE_SHORT as f64 / h as f64;
        (((w as f64 * scale).round() as u32).max(RESIZE_SHORT), RESIZE_SHORT)
    };
    let resized = image::imageops::resize(&rgb, new_w, new_h, FilterType::Triangle);

    let x0 = (new_w - CROP_SIDE) / 2;
    let y0 = (new_h - CROP_SIDE) / 2;
    let side = CROP_SIDE as usize;
    let mut data = vec![0.0f32; 3 * side * side];
    for y in 0..side {
        for x in 0..side {
            let px = resized.get_pixel(x0 + x as u32, y0 + y as u32);
            for c in 0..3 {
                data[c * side * side + y * side + x] =
                    (px.0[c] as f32 / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            }
        }
    }
    Ok(PixelTensor { data })
}
