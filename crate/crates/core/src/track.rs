//! 2D keypoint tracks stored as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointFrame {
    pub index: usize,
    /// `(u px, v px, confidence)` per keypoint.
    pub joints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointTrack {
    pub fps: f64,
    pub frames: Vec<KeypointFrame>,
}

impl KeypointTrack {
    pub fn new(fps: f64, joints: Vec<Vec<[f64; 3]>>) -> Result<Self> {
        let t = KeypointTrack {
            fps,
            frames: joints
                .into_iter()
                .enumerate()
                .map(|(index, joints)| KeypointFrame { index, joints })
                .collect(),
        };
        t.validate("keypoint track")?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joints(&self) -> Vec<Vec<[f64; 3]>> {
        self.frames.iter().map(|f| f.joints.clone()).collect()
    }

    pub fn validate(&self, origin: &str) -> Result<()> {
        let bad = |field: String, message: String| Error::Json {
            path: origin.to_string(),
            message: format!("{field}: {message}"),
        };
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(bad("fps".into(), format!("must be positive, got {}", self.fps)));
        }
        let count = self.frames.first().map(|f| f.joints.len()).unwrap_or(0);
        for (i, f) in self.frames.iter().enumerate() {
            if i > 0 && f.index <= self.frames[i - 1].index {
                return Err(bad(format!("frames[{i}].index"), "indices must increase".into()));
            }
            if f.joints.len() != count {
                return Err(bad(
                    format!("frames[{i}].joints"),
                    format!("{} keypoints, expected {count}", f.joints.len()),
                ));
            }
            for (k, j) in f.joints.iter().enumerate() {
                if !j.iter().all(|x| x.is_finite()) || !(0.0..=1.0).contains(&j[2]) {
                    return Err(bad(
                        format!("frames[{i}].joints[{k}]"),
                        format!("non-finite value or confidence outside [0, 1]: {j:?}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: KeypointTrack = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: origin.clone(),
            message: e.to_string(),
        })?;
        t.validate(&origin)?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("track serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_decreasing_indices() {
        let mut t = KeypointTrack::new(30.0, vec![vec![[0.0, 0.0, 1.0]]; 2]).unwrap();
        t.frames[1].index = 0;
        let e = t.validate("x.json").unwrap_err().to_string();
        assert!(e.contains("frames[1].index") && e.contains("x.json"), "{e}");
    }

    #[test]
    fn rejects_confidence_above_one() {
        assert!(KeypointTrack::new(30.0, vec![vec![[0.0, 0.0, 1.5]]]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = KeypointTrack::new(25.0, vec![vec![[1.5, -2.0, 0.5], [3.0, 4.0, 1.0]]; 3]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<KeypointTrack>(&s).unwrap(), t);
    }
}
