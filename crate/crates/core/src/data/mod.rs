//! Frame-sequence I/O, degradation synthesis, color conversion, and weight
//! serialization.

mod color;
mod png_io;
mod resize;
mod weights_io;

pub use color::rgb_to_y;
pub use png_io::{load_sequence, save_frame_png, save_sequence};
pub use resize::{bicubic_resize, degrade, gaussian_blur, gaussian_kernel};
pub use weights_io::{load_weights, save_weights};

use crate::error::{CtunError, Result};
use crate::tensor::{Scalar, Tensor};

/// An ordered list of RGB frames, each (1,3,H,W) with values in [0,1].
#[derive(Clone)]
pub struct FrameSequence<E: Scalar> {
    pub frames: Vec<Tensor<E>>,
    pub fps: Option<f64>,
    pub source: String,
}

impl<E: Scalar> std::fmt::Debug for FrameSequence<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FrameSequence({} frames from {})", self.frames.len(), self.source)
    }
}

impl<E: Scalar> FrameSequence<E> {
    pub fn new(frames: Vec<Tensor<E>>, source: impl Into<String>) -> Result<Self> {
        let seq = FrameSequence {
            frames,
            fps: None,
            source: source.into(),
        };
        seq.validate()?;
        Ok(seq)
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Ok(());
        };
        let fs = first.shape();
        if fs.n != 1 || fs.c != 3 {
            return Err(CtunError::FrameSize {
                detail: format!("frames must be (1,3,H,W), got {fs}"),
            });
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.shape() != fs {
                return Err(CtunError::FrameSize {
                    detail: format!("frame {i} is {} but frame 0 is {fs}", f.shape()),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// (H, W) of the frames. Panics on an empty sequence.
    pub fn frame_size(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s.h, s.w)
    }
}

/// Degradation model for synthesizing LR inputs from HR frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DegradationSpec {
    /// Antialiased bicubic downsampling.
    Bicubic { scale: usize },
    /// Gaussian blur followed by every-`scale`-th pixel decimation.
    BlurDown { scale: usize, sigma: f64 },
}

impl DegradationSpec {
    pub fn scale(&self) -> usize {
        match *self {
            DegradationSpec::Bicubic { scale } => scale,
            DegradationSpec::BlurDown { scale, .. } => scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale() < 2 {
            return Err(CtunError::arg("degrade", "scale must be >= 2"));
        }
        if let DegradationSpec::BlurDown { sigma, .. } = self {
            if *sigma <= 0.0 {
                return Err(CtunError::arg("degrade", "sigma must be > 0"));
            }
        }
        Ok(())
    }
}
