use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splat::{Mat3, Vec3};

/// Pinhole camera. `rotation`/`translation` map world points into camera
/// space (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
    /// Position of this camera in the rig's circular ordering; used as the
    /// scalar pose coordinate of the mask grid.
    pub pose_index: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with `up` giving the world up
    /// direction (image y points opposite to it). Principal point at the
    /// image center.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
        pose_index: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("camera eye equals target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("camera up is parallel to view".into()))?;
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let cam = Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            translation: -(rotation * eye),
            rotation,
            width,
            height,
            pose_index,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        let err = (self.rotation * self.rotation.transpose() - Mat3::identity())
            .abs()
            .max();
        if err > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "camera rotation not orthonormal (error {err:.2e})"
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(
                "camera has zero-sized image".into(),
            ));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Same camera moved by `offset` in world space.
    pub fn translated(&self, offset: &Vec3) -> Self {
        let mut out = self.clone();
        out.translation -= self.rotation * offset;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_convention() {
        let cam = Camera::look_at(
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            100.0,
            32,
            32,
            0,
        )
        .unwrap();
        let p = cam.world_to_camera(&Vec3::zeros());
        assert!((p - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
        // World +x is image right, world +y is image up.
        assert!(cam.world_to_camera(&Vec3::new(1.0, 0.0, 0.0)).x > 0.0);
        assert!(cam.world_to_camera(&Vec3::new(0.0, 1.0, 0.0)).y < 0.0);
        assert!((cam.center() - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_focal() {
        let mut cam = Camera::look_at(
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            100.0,
            8,
            8,
            0,
        )
        .unwrap();
        cam.fx = 0.0;
        assert!(cam.validate().is_err());
    }
}
