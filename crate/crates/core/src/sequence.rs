//! Per-frame parameter sequences and their container form.

use std::path::Path;

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::model::{FrameParams, Vec3, NUM_BETAS, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<FrameParams>,
    pub fps: f64,
    pub subject: String,
}

impl MotionSequence {
    pub fn new(frames: Vec<FrameParams>, fps: f64) -> Result<Self> {
        let s = MotionSequence {
            frames,
            fps,
            subject: String::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::Input(format!("frame rate must be positive, got {}", self.fps)));
        }
        if let Some(i) = self.frames.iter().position(|f| !f.is_finite()) {
            return Err(Error::NonFinite(format!("frame {i} parameters")));
        }
        Ok(())
    }

    /// Tensors `theta [T,24,3]`, `beta [T,10]`, `trans [T,3]`, `fps [1]`.
    pub fn to_container(&self) -> Container {
        let t = self.frames.len();
        let mut theta = Vec::with_capacity(t * NUM_JOINTS * 3);
        let mut beta = Vec::with_capacity(t * NUM_BETAS);
        let mut trans = Vec::with_capacity(t * 3);
        for f in &self.frames {
            theta.extend(f.theta.iter().flat_map(|w| w.iter().copied()));
            beta.extend_from_slice(&f.beta);
            trans.extend(f.trans.iter().copied());
        }
        let mut c = Container::new();
        c.insert(Tensor::f64("theta", vec![t, NUM_JOINTS, 3], theta));
        c.insert(Tensor::f64("beta", vec![t, NUM_BETAS], beta));
        c.insert(Tensor::f64("trans", vec![t, 3], trans));
        c.insert(Tensor::f64("fps", vec![1], vec![self.fps]));
        c
    }

    /// Reads a sequence; `fps` falls back to `default_fps` when absent.
    pub fn from_container(c: &Container, default_fps: f64) -> Result<Self> {
        let th = c.require("theta")?;
        th.expect_shape(&[None, Some(NUM_JOINTS), Some(3)])?;
        let t = th.dims[0];
        let be = c.require("beta")?;
        be.expect_shape(&[Some(t), Some(NUM_BETAS)])?;
        let tr = c.require("trans")?;
        tr.expect_shape(&[Some(t), Some(3)])?;
        let fps = match c.get("fps") {
            Some(f) => {
                f.expect_shape(&[Some(1)])?;
                f.as_f64()[0]
            }
            None => default_fps,
        };
        let (th, be, tr) = (th.as_f64(), be.as_f64(), tr.as_f64());
        let frames = (0..t)
            .map(|i| {
                let mut f = FrameParams::default();
                for j in 0..NUM_JOINTS {
                    let o = (i * NUM_JOINTS + j) * 3;
                    f.theta[j] = Vec3::new(th[o], th[o + 1], th[o + 2]);
                }
                f.beta.copy_from_slice(&be[i * NUM_BETAS..(i + 1) * NUM_BETAS]);
                f.trans = Vec3::new(tr[i * 3], tr[i * 3 + 1], tr[i * 3 + 2]);
                f
            })
            .collect();
        MotionSequence::new(frames, fps)
    }

    pub fn load(path: impl AsRef<Path>, default_fps: f64) -> Result<Self> {
        Self::from_container(&Container::read(path)?, default_fps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }
}
