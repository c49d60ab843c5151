//! Embedding backends, selected by a descriptor string:
//!
//! - `stub[:<dim>]`: deterministic pseudorandom embeddings keyed on the
//!   pixel content digest; lets the whole pipeline run with no model file.
//! - `precomputed:<dim>:<tag>`: no compute path at all; every embedding must
//!   already sit in the cache (synthetic corpora are served this way).
//! - `onnx:<path>`: a real model in the open interchange format, single
//!   NCHW float32 input, single fixed-length output.

use sha2::{Digest, Sha256};

use super::preprocess::PixelTensor;
use super::{EmbedError, ImageEmbedding};

pub const DEFAULT_STUB_DIM: usize = 2048;

pub enum BackendKind {
    Stub,
    Precomputed,
    #[cfg(feature = "onnx")]
    Onnx(onnx::OnnxModel),
}

pub struct Backend {
    id: String,
    dim: usize,
    kind: BackendKind,
}

impl Backend {
    /// Builds a backend from its descriptor. Loading an `onnx:` descriptor
    /// reads the model file eagerly so a bad path fails here, not per image.
    pub fn from_descriptor(descriptor: &str) -> Result<Backend, EmbedError> {
        let descriptor = descriptor.trim();
        if descriptor == "stub" {
            return Ok(Backend::stub(DEFAULT_STUB_DIM));
        }
        if let Some(dim) = descriptor.strip_prefix("stub:") {
            let dim: usize = dim
                .parse()
                .map_err(|_| EmbedError::BadDescriptor(descriptor.to_string()))?;
            if dim == 0 {
                return Err(EmbedError::BadDescriptor(descriptor.to_string()));
            }
            return Ok(Backend::stub(dim));
        }
        if let Some(rest) = descriptor.strip_prefix("precomputed:") {
            let (dim, tag) = rest
                .split_once(':')
                .ok_or_else(|| EmbedError::BadDescriptor(descriptor.to_string()))?;
            let dim: usize = dim
                .parse()
                .map_err(|_| EmbedError::BadDescriptor(descriptor.to_string()))?;
            if dim == 0 || tag.is_empty() {
                return Err(EmbedError::BadDescriptor(descriptor.to_string()));
            }
            return Ok(Backend {
                id: format!("precomputed:{dim}:{tag}"),
                dim,
                kind: BackendKind::Precomputed,
            });
        }
        if let Some(path) = descriptor.strip_prefix("onnx:") {
            return Backend::load_onnx(std::path::Path::new(path));
        }
        Err(EmbedError::BadDescriptor(descriptor.to_string()))
    }

    pub fn stub(dim: usize) -> Backend {
        Backend {
            id: format!("stub:{dim}"),
            dim,
            kind: BackendKind::Stub,
        }
    }

    #[cfg(feature = "onnx")]
    pub fn load_onnx(path: &std::path::Path) -> Result<Backend, EmbedError> {
        let bytes = std::fs::read(path)?;
        let model = onnx::OnnxModel::load(path)?;
        let file_digest = hex::encode(&Sha256::digest(&bytes)[..8]);
        Ok(Backend {
            id: format!("onnx:{file_digest}:{}", model.dim),
            dim: model.dim,
            kind: BackendKind::Onnx(model),
        })
    }

    #[cfg(not(feature = "onnx"))]
    pub fn load_onnx(_path: &std::path::Path) -> Result<Backend, EmbedError> {
        Err(EmbedError::Model(
            "this build does not include the onnx feature".to_string(),
        ))
    }

    /// Cache key component. Same id and same image bytes always yield the
    /// same embedding.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// False for `precomputed:` backends, which serve cache hits only.
    pub fn can_compute(&self) -> bool {
        !matches!(self.kind, BackendKind::Precomputed)
    }

    /// Embeds one preprocessed image.
    pub fn embed_image(&self, tensor: &PixelTensor) -> Result<ImageEmbedding, EmbedError> {
        match &self.kind {
            BackendKind::Stub => {
                let digest: [u8; 32] = Sha256::digest(tensor.le_bytes()).into();
                ImageEmbedding::new(stub_expand(&digest, self.dim))
            }
            BackendKind::Precomputed => Err(EmbedError::CannotCompute(self.id.clone())),
            #[cfg(feature = "onnx")]
            BackendKind::Onnx(model) => {
                let values = model.run(tensor)?;
                if values.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        got: values.len(),
                    });
                }
                ImageEmbedding::new(values)
            }
        }
    }
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .finish()
    }
}

/// Counter-mode expansion of a 32-byte digest into `dim` values uniform in
/// [-1, 1]: block i is SHA-256(digest || i_le), consumed as little-endian
/// u32 words.
pub fn stub_expand(digest: &[u8; 32], dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(dim);
    let mut counter: u64 = 0;
    while out.len() < dim {
        let mut hasher = Sha256::new();
        hasher.update(digest);
        hasher.update(counter.to_le_bytes());
        let block = hasher.finalize();
        for chunk in block.chunks_exact(4) {
            if out.len() == dim {
                break;
            }
            let word = u32::from_le_bytes(chunk.try_into().unwrap());
            let v = (word as f64 / u32::MAX as f64) * 2.0 - 1.0;
            out.push(v as f32);
        }
        counter += 1;
    }
    out
}

#[cfg(feature = "onnx")]
mod onnx {
    use tract_onnx::prelude::*;

    use super::super::preprocess::{PixelTensor, CROP_SIDE};
    use super::super::EmbedError;

    pub struct OnnxModel {
        plan: TypedRunnableModel<TypedModel>,
        pub dim: usize,
    }

    impl OnnxModel {
        pub fn load(path: &std::path::Path) -> Result<OnnxModel, EmbedError> {
            let side = CROP_SIDE as usize;
            let plan = tract_onnx::onnx()
                .model_for_path(path)
                .map_err(to_model_err)?
                .with_input_fact(0, f32::fact([1, 3, side, side]).into())
                .map_err(to_model_err)?
                .into_optimized()
                .map_err(to_model_err)?
                .into_runnable()
                .map_err(to_model_err)?;
            let fact = plan.model().output_fact(0).map_err(to_model_err)?;
            let shape = fact.shape.as_concrete().ok_or_else(|| {
                EmbedError::Model("model output shape is not static".to_string())
            })?;
            let dim: usize = shape.iter().skip(1).product();
            if shape.first().copied() != Some(1) || dim == 0 {
                return Err(EmbedError::Model(format!(
                    "expected output shape [1, D(, 1, 1)], got {shape:?}"
                )));
            }
            Ok(OnnxModel { plan, dim })
        }

        pub fn run(&self, tensor: &PixelTensor) -> Result<Vec<f32>, EmbedError> {
            let side = CROP_SIDE as usize;
            let input = Tensor::from_shape(&[1, 3, side, side], tensor.data())
                .map_err(to_model_err)?;
            let outputs = self.plan.run(tvec!(input.into())).map_err(to_model_err)?;
            let view = outputs[0].to_array_view::<f32>().map_err(to_model_err)?;
            Ok(view.iter().copied().collect())
        }
    }

    fn to_model_err(e: impl std::fmt::Display) -> EmbedError {
        EmbedError::Model(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::preprocess::preprocess_image;
    use image::RgbImage;

    fn png_bytes(img: &RgbImage) -> Vec<u8> {
        use image::ImageEncoder;
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(img.as_raw(), img.width(), img.height(), image::ColorType::Rgb8.into())
            .unwrap();
        out
    }

    #[test]
    fn stub_is_deterministic_for_same_tensor() {
        let backend = Backend::from_descriptor("stub:64").unwrap();
        let img = RgbImage::from_pixel(300, 300, image::Rgb([1, 2, 3]));
        let tensor = preprocess_image(&png_bytes(&img)).unwrap();
        let a = backend.embed_image(&tensor).unwrap();
        let b = backend.embed_image(&tensor).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 64);
    }

    #[test]
    fn stub_differs_when_one_pixel_differs() {
        let backend = Backend::from_descriptor("stub:64").unwrap();
        let img_a = RgbImage::from_pixel(320, 320, image::Rgb([100, 100, 100]));
        let mut img_b = img_a.clone();
        img_b.put_pixel(160, 160, image::Rgb([255, 255, 255]));
        let ta = preprocess_image(&png_bytes(&img_a)).unwrap();
        let tb = preprocess_image(&png_bytes(&img_b)).unwrap();
        assert!(ta != tb, "pixel change must survive preprocessing");
        let a = backend.embed_image(&ta).unwrap();
        let b = backend.embed_image(&tb).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn stub_values_are_bounded_and_finite() {
        let values = stub_expand(&[7u8; 32], 1000);
        assert_eq!(values.len(), 1000);
        assert!(values.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
        // uniform-ish: mean near zero
        let mean: f64 = values.iter().map(|v| *v as f64).sum::<f64>() / 1000.0;
        assert!(mean.abs() < 0.1, "mean {mean} too far from 0");
    }

    #[test]
    fn stub_expansion_is_a_pure_function_of_digest_and_dim() {
        let a = stub_expand(&[9u8; 32], 48);
        let b = stub_expand(&[9u8; 32], 48);
        let c = stub_expand(&[10u8; 32], 48);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // prefix property: a longer expansion starts with the shorter one
        let long = stub_expand(&[9u8; 32], 96);
        assert_eq!(&long[..48], &a[..]);
    }

    #[test]
    fn precomputed_backend_cannot_embed() {
        let backend = Backend::from_descriptor("precomputed:64:synth-seed42").unwrap();
        assert!(!backend.can_compute());
        assert_eq!(backend.dim(), 64);
        assert_eq!(backend.id(), "precomputed:64:synth-seed42");
        let img = RgbImage::from_pixel(256, 256, image::Rgb([0, 0, 0]));
        let tensor = preprocess_image(&png_bytes(&img)).unwrap();
        assert!(matches!(
            backend.embed_image(&tensor),
            Err(EmbedError::CannotCompute(_))
        ));
    }

    #[test]
    fn bad_descriptors_are_rejected() {
        for bad in ["", "stub:", "stub:0", "precomputed:64", "precomputed:x:tag", "magic"] {
            assert!(
                matches!(Backend::from_descriptor(bad), Err(EmbedError::BadDescriptor(_))),
                "descriptor `{bad}` should be rejected"
            );
        }
    }

    #[test]
    fn default_stub_is_2048_dimensional() {
        let backend = Backend::from_descriptor("stub").unwrap();
        assert_eq!(backend.dim(), 2048);
        assert_eq!(backend.id(), "stub:2048");
    }
}
