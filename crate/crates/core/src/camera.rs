//! Top-view pinhole camera.

use std::path::Path;

use nalgebra::{Matrix2x3, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vec3;

/// Points closer than this to the image plane are rejected.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Distance from the camera center down to the bed plane, meters.
    pub cam_height: f64,
    pub world_to_cam: Matrix3<f64>,
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    cam_height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    world_to_cam: Option<[[f64; 3]; 3]>,
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        let r = match j.world_to_cam {
            Some(rows) => Matrix3::from_fn(|r, c| rows[r][c]),
            None => Camera::looking_down(),
        };
        Camera::new(j.fx, j.fy, j.cx, j.cy, j.cam_height, r)
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let r = c.world_to_cam;
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            cam_height: c.cam_height,
            world_to_cam: (r != Camera::looking_down())
                .then(|| [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]])),
        }
    }
}

impl Camera {
    /// Camera axes for a camera looking straight down `-z`.
    pub fn looking_down() -> Matrix3<f64> {
        Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
    }

    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        cam_height: f64,
        world_to_cam: Matrix3<f64>,
    ) -> Result<Self> {
        let all = [fx, fy, cx, cy, cam_height];
        if all.iter().any(|x| !x.is_finite()) || world_to_cam.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("camera", "non-finite value"));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::config("fx/fy", "focal lengths must be positive"));
        }
        if cam_height <= 0.0 {
            return Err(Error::config("cam_height", "must be positive"));
        }
        let err = (world_to_cam * world_to_cam.transpose() - Matrix3::identity()).abs().max();
        if err > 1e-8 {
            return Err(Error::config(
                "world_to_cam",
                format!("not orthonormal (deviation {err:e})"),
            ));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            cam_height,
            world_to_cam,
        })
    }

    pub fn top_view(f: f64, cx: f64, cy: f64, cam_height: f64) -> Result<Self> {
        Self::new(f, f, cx, cy, cam_height, Self::looking_down())
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.cam_height)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("camera serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn to_cam(&self, p: &Vec3, index: usize) -> Result<Vec3> {
        let q = self.world_to_cam * (p - self.center());
        if !(q.z > MIN_DEPTH) {
            return Err(Error::BehindCamera { index, depth: q.z });
        }
        Ok(q)
    }

    /// Pixel coordinates of one point; `index` is only used in errors.
    pub fn project_point(&self, p: &Vec3, index: usize) -> Result<Vector2<f64>> {
        let q = self.to_cam(p, index)?;
        Ok(Vector2::new(
            self.cx + self.fx * q.x / q.z,
            self.cy + self.fy * q.y / q.z,
        ))
    }

    /// Pixel coordinates and their Jacobian with respect to the world point.
    pub fn project_with_jacobian(
        &self,
        p: &Vec3,
        index: usize,
    ) -> Result<(Vector2<f64>, Matrix2x3<f64>)> {
        let q = self.to_cam(p, index)?;
        let iz = 1.0 / q.z;
        let uv = Vector2::new(self.cx + self.fx * q.x / q.z, self.cy + self.fy * q.y / q.z);
        let d = Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * q.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * q.y * iz * iz,
        );
        Ok((uv, d * self.world_to_cam))
    }

    pub fn project(&self, points: &[Vec3]) -> Result<Vec<Vector2<f64>>> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| self.project_point(p, i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cam() -> Camera {
        Camera::top_view(600.0, 320.0, 240.0, 2.0).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let uv = cam().project_point(&Vec3::new(0.0, 0.0, 0.3), 0).unwrap();
        assert_relative_eq!(uv, Vector2::new(320.0, 240.0), epsilon = 1e-12);
    }

    #[test]
    fn closed_form_offset() {
        let uv = cam().project_point(&Vec3::new(0.1, 0.0, 0.0), 0).unwrap();
        assert_relative_eq!(uv.x, 320.0 + 600.0 * (0.1 / 2.0), epsilon = 1e-12);
        assert_relative_eq!(uv.x, 350.0, epsilon = 1e-12);
    }

    #[test]
    fn reflection_about_axis() {
        let c = cam();
        let a = c.project_point(&Vec3::new(0.2, -0.3, 0.1), 0).unwrap();
        let b = c.project_point(&Vec3::new(-0.2, 0.3, 0.1), 0).unwrap();
        assert_relative_eq!(a + b, Vector2::new(640.0, 480.0), epsilon = 1e-9);
    }

    #[test]
    fn behind_camera_names_index() {
        let err = cam()
            .project(&[Vec3::zeros(), Vec3::new(0.0, 0.0, 2.5)])
            .unwrap_err();
        assert!(matches!(err, Error::BehindCamera { index: 1, .. }));
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let r = Matrix3::identity() * 1.1;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 1.0, r).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = cam();
        let text = serde_json::to_string(&c).unwrap();
        assert!(!text.contains("world_to_cam"));
        let back: Camera = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let bad = r#"{"fx":-1,"fy":1,"cx":0,"cy":0,"cam_height":1}"#;
        assert!(serde_json::from_str::<Camera>(bad).is_err());
    }

    proptest! {
        #[test]
        fn halving_offsets_halves_pixels(x in -0.5f64..0.5, y in -0.5f64..0.5, z in 0.0f64..1.0) {
            let c = cam();
            let a = c.project_point(&Vec3::new(x, y, z), 0).unwrap() - Vector2::new(c.cx, c.cy);
            let b = c.project_point(&Vec3::new(x / 2.0, y / 2.0, z), 0).unwrap() - Vector2::new(c.cx, c.cy);
            prop_assert!((a / 2.0 - b).norm() <= 1e-9);
        }

        #[test]
        fn jacobian_matches_differences(x in -0.5f64..0.5, y in -0.5f64..0.5, z in 0.0f64..1.0, a in -0.3f64..0.3) {
            let r = crate::rotation::rodrigues(&Vec3::new(a, -a / 2.0, 0.1)) * Camera::looking_down();
            let c = Camera::new(500.0, 520.0, 300.0, 200.0, 2.0, r).unwrap();
            let p = Vec3::new(x, y, z);
            let (_, jac) = c.project_with_jacobian(&p, 0).unwrap();
            let h = 1e-5;
            for k in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[k] += h;
                pm[k] -= h;
                let fd = (c.project_point(&pp, 0).unwrap() - c.project_point(&pm, 0).unwrap()) / (2.0 * h);
                let an = jac.column(k);
                prop_assert!((fd - an).norm() <= 1e-4 * an.norm().max(1e-8));
            }
        }
    }
}
