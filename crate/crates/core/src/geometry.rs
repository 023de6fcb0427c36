//! Pinhole projection between point clouds and sparse depth rasters.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::SparseDepthImage;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid camera intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Image-plane coordinates of a camera-frame point with `z > 0`.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }

    /// Camera-frame point at depth `z` behind pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z]
    }
}

/// Sensor-to-camera rigid transform `p_cam = R · p_sensor + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose {
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self { rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], translation: [0.0; 3] }
    }

    pub fn new(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    /// Rotation about the camera's x, then y, then z axis.
    pub fn from_euler(rx: f64, ry: f64, rz: f64, translation: [f64; 3]) -> Self {
        let (sx, cx) = (libm::sin(rx), libm::cos(rx));
        let (sy, cy) = (libm::sin(ry), libm::cos(ry));
        let (sz, cz) = (libm::sin(rz), libm::cos(rz));
        let rot_x = [1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx];
        let rot_y = [cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy];
        let rot_z = [cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0];
        Self { rotation: matmul3(&rot_z, &matmul3(&rot_y, &rot_x)), translation }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k * 3 + i] * r[k * 3 + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - expect).abs());
            }
        }
        let det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6])
            + r[2] * (r[3] * r[7] - r[4] * r[6]);
        if worst > 1e-9 || (det - 1.0).abs() > 1e-9 || r.iter().chain(&self.translation).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pose rotation is not a proper rotation (orthogonality error {worst:e}, det {det})"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + t[0],
            r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + t[1],
            r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + t[2],
        ]
    }
}

fn matmul3(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = (0..3).map(|k| a[i * 3 + k] * b[k * 3 + j]).sum();
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points, intensity: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument(format!("point {i} has non-finite coordinates")));
        }
        if let Some(int) = &self.intensity {
            if int.len() != self.points.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} intensities for {} points",
                    int.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }
}

/// Nearest pixel `floor(u + 0.5)`, if it lies inside the image.
fn pixel_of(k: &CameraIntrinsics, u: f64, v: f64) -> Option<(usize, usize)> {
    let px = libm::floor(u + 0.5);
    let py = libm::floor(v + 0.5);
    if px < 0.0 || py < 0.0 || px >= k.width as f64 || py >= k.height as f64 {
        return None;
    }
    Some((px as usize, py as usize))
}

/// Rasterizes a sensor-frame cloud into a camera-sized sparse depth image.
///
/// Points behind the camera or outside the image are dropped; when several
/// land on the same pixel the smallest depth wins.
pub fn project_points(cloud: &PointCloud, pose: &RigidPose, k: &CameraIntrinsics) -> SparseDepthImage {
    let mut out = SparseDepthImage::new(k.width, k.height);
    for &p in &cloud.points {
        let c = pose.apply(p);
        let z = c[2];
        if !(z > 0.0) {
            continue;
        }
        let (u, v) = k.project(c);
        let Some((x, y)) = pixel_of(k, u, v) else { continue };
        let cur = out.get(x, y);
        if cur == 0.0 || z < cur {
            out.set(x, y, z);
        }
    }
    out
}

/// Camera-frame cloud with one point per nonzero pixel, row-major.
pub fn backproject(sparse: &SparseDepthImage, k: &CameraIntrinsics) -> PointCloud {
    PointCloud::new(sparse.measurements().map(|(x, y, d)| k.unproject(x as f64, y as f64, d)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn principal_ray_lands_on_principal_point() {
        let s = project_points(&PointCloud::new(alloc::vec![[0.0, 0.0, 10.0]]), &RigidPose::identity(), &cam());
        assert_eq!(s.get(32, 24), 10.0);
        assert_eq!(s.nonzero_count(), 1);
    }

    #[test]
    fn pinhole_example() {
        let s = project_points(&PointCloud::new(alloc::vec![[1.0, 0.5, 5.0]]), &RigidPose::identity(), &cam());
        assert_eq!(s.get(52, 34), 5.0);
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let cloud = PointCloud::new(alloc::vec![[0.0, 0.0, 7.0], [0.0, 0.0, 5.0], [0.0, 0.0, 6.0]]);
        let s = project_points(&cloud, &RigidPose::identity(), &cam());
        assert_eq!(s.get(32, 24), 5.0);
    }

    #[test]
    fn behind_and_outside_are_dropped() {
        let cloud = PointCloud::new(alloc::vec![[0.0, 0.0, -3.0], [0.0, 0.0, 0.0], [100.0, 0.0, 1.0]]);
        assert_eq!(project_points(&cloud, &RigidPose::identity(), &cam()).nonzero_count(), 0);
    }

    #[test]
    fn backproject_inverts_pinhole() {
        let mut s = SparseDepthImage::new(64, 48);
        s.set(52, 34, 5.0);
        let cloud = backproject(&s, &cam());
        let p = cloud.points[0];
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12 && p[2] == 5.0);
        assert!(backproject(&SparseDepthImage::new(4, 4), &cam()).is_empty());
    }

    #[test]
    fn pose_validation() {
        assert!(RigidPose::from_euler(0.3, -0.2, 1.1, [1.0, 2.0, 3.0]).validate().is_ok());
        let mut bad = RigidPose::identity();
        bad.rotation[0] = -1.0;
        assert!(bad.validate().is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 64.0, 24.0, 64, 48).is_err());
    }

    #[test]
    fn translation_moves_points() {
        let pose = RigidPose::from_euler(0.0, 0.0, 0.0, [0.0, 0.0, 2.0]);
        let s = project_points(&PointCloud::new(alloc::vec![[0.0, 0.0, 3.0]]), &pose, &cam());
        assert_eq!(s.get(32, 24), 5.0);
    }
}
