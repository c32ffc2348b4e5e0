//! Rotation codecs, pinhole projection, field-of-view tests, and the
//! gravity-preserving canonical transform.
//!
//! Conventions: world +z is vertical (up); camera frames are x-right,
//! y-down, z-forward; rotations are world-from-camera.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Below this norm a column is treated as degenerate.
const MIN_NORM: f64 = 1e-9;
/// Depths closer to the camera plane than this cannot be projected.
const MIN_DEPTH: f64 = 1e-9;
/// Orthonormality slack accepted when encoding a matrix.
const ENCODE_TOL: f64 = 1e-6;
/// Yaw angles this close to zero snap to exactly zero so that
/// canonicalizing already-canonical data is a bitwise no-op.
const YAW_SNAP: f64 = 1e-12;

/// Rotation as the first two columns of its matrix: `[c0x, c0y, c0z, c1x, c1y, c1z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6d(pub [f64; 6]);

impl Rotation6d {
    pub const IDENTITY: Rotation6d = Rotation6d([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    /// Decode via Gram-Schmidt: normalize the first column, orthogonalize the
    /// second against it, complete with their cross product.
    pub fn to_matrix(&self) -> Result<Mat3> {
        let r = &self.0;
        let a1 = Vec3::new(r[0], r[1], r[2]);
        let a2 = Vec3::new(r[3], r[4], r[5]);
        let n1 = a1.norm();
        if n1 < MIN_NORM {
            return Err(Error::InvalidRotation(format!(
                "first column norm {n1:.3e} below {MIN_NORM:.0e}"
            )));
        }
        let b1 = a1 / n1;
        let a2p = a2 - b1 * b1.dot(&a2);
        let n2 = a2p.norm();
        if n2 < MIN_NORM {
            return Err(Error::InvalidRotation(format!(
                "columns parallel (residual norm {n2:.3e})"
            )));
        }
        let b2 = a2p / n2;
        let b3 = b1.cross(&b2);
        Ok(Mat3::from_columns(&[b1, b2, b3]))
    }

    /// Encode a rotation matrix as its first two columns.
    pub fn from_matrix(m: &Mat3) -> Result<Rotation6d> {
        let gram = m.transpose() * m - Mat3::identity();
        let dev = gram.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if dev > ENCODE_TOL {
            return Err(Error::InvalidRotation(format!(
                "matrix not orthonormal (max deviation {dev:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ENCODE_TOL {
            return Err(Error::InvalidRotation(format!(
                "determinant {det:.6} is not +1"
            )));
        }
        Ok(Rotation6d([
            m[(0, 0)],
            m[(1, 0)],
            m[(2, 0)],
            m[(0, 1)],
            m[(1, 1)],
            m[(2, 1)],
        ]))
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("fx", self.fx), ("fy", self.fy), ("cx", self.cx), ("cy", self.cy)] {
            if !v.is_finite() {
                return Err(Error::InvalidCamera(format!("{name} = {v} is not finite")));
            }
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }
}

/// World-from-camera pose plus intrinsics and sensor size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Rotation6d,
    pub translation: [f64; 3],
    pub intrinsics: Intrinsics,
    pub image_size: [u32; 2],
}

impl CameraPose {
    pub fn new(
        rotation: Rotation6d,
        translation: [f64; 3],
        intrinsics: Intrinsics,
        image_size: [u32; 2],
    ) -> Result<Self> {
        let pose = CameraPose { rotation, translation, intrinsics, image_size };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        self.rotation.to_matrix()?;
        self.intrinsics.validate()?;
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(Error::InvalidCamera(format!(
                "image size {}x{} has a zero component",
                self.image_size[0], self.image_size[1]
            )));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("translation is not finite".into()));
        }
        Ok(())
    }

    /// The 9-real conditioning vector: rotation (6) then translation (3).
    pub fn conditioning(&self) -> [f64; 9] {
        let r = self.rotation.0;
        let t = self.translation;
        [r[0], r[1], r[2], r[3], r[4], r[5], t[0], t[1], t[2]]
    }

    pub fn rotation_matrix(&self) -> Result<Mat3> {
        self.rotation.to_matrix()
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.translation[0], self.translation[1], self.translation[2])
    }

    /// World point expressed in the camera frame.
    pub fn world_to_camera(&self, x_world: Vec3) -> Result<Vec3> {
        let r = self.rotation_matrix()?;
        Ok(r.transpose() * (x_world - self.position()))
    }

    /// Project to pixel coordinates; depth is returned as-is (may be negative).
    pub fn project(&self, x_world: Vec3) -> Result<([f64; 2], f64)> {
        let xc = self.world_to_camera(x_world)?;
        let z = xc.z;
        if z.abs() < MIN_DEPTH {
            return Err(Error::CameraPlane { z });
        }
        let u = self.intrinsics.fx * xc.x / z + self.intrinsics.cx;
        let v = self.intrinsics.fy * xc.y / z + self.intrinsics.cy;
        Ok(([u, v], z))
    }

    /// Inverse of [`CameraPose::project`] for a known depth.
    pub fn lift(&self, uv: [f64; 2], depth: f64) -> Result<Vec3> {
        let x = (uv[0] - self.intrinsics.cx) / self.intrinsics.fx * depth;
        let y = (uv[1] - self.intrinsics.cy) / self.intrinsics.fy * depth;
        let r = self.rotation_matrix()?;
        Ok(r * Vec3::new(x, y, depth) + self.position())
    }

    /// True iff the point projects strictly in front of the camera and inside
    /// the image: depth > 0, 0 <= u < width, 0 <= v < height.
    pub fn in_view(&self, x_world: Vec3) -> bool {
        match self.project(x_world) {
            Ok(([u, v], z)) => {
                z > 0.0
                    && u >= 0.0
                    && u < self.image_size[0] as f64
                    && v >= 0.0
                    && v < self.image_size[1] as f64
            }
            Err(_) => false,
        }
    }
}

/// Rotation about the world vertical axis.
pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// World-from-camera orientation for an egocentric camera without roll.
/// Zero yaw faces world +x; positive pitch tilts the view downward.
pub fn camera_orientation(yaw: f64, pitch: f64) -> Mat3 {
    // Base: camera x (right) -> world -y, camera y (down) -> world -z,
    // camera z (forward) -> world +x.
    let base = Mat3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let (s, c) = pitch.sin_cos();
    let pitch_about_y = Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
    rot_z(yaw) * pitch_about_y * base
}

/// Yaw removal and horizontal re-centering derived from a reference camera.
/// Vertical coordinates, pitch, and roll are left untouched so gravity stays
/// meaningful in the canonical frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalTransform {
    pub yaw: f64,
    pub horizontal_offset: [f64; 2],
}

impl CanonicalTransform {
    pub const IDENTITY: CanonicalTransform =
        CanonicalTransform { yaw: 0.0, horizontal_offset: [0.0, 0.0] };

    /// Build the transform that zeroes the reference camera's yaw and
    /// horizontal position. Yaw is read from the horizontal part of the
    /// camera's forward axis; when the camera looks along the vertical the
    /// right axis (always horizontal in that case) is used instead.
    pub fn from_reference(pose: &CameraPose) -> Result<Self> {
        let r = pose.rotation_matrix()?;
        let forward = r * Vec3::z();
        let heading = if forward.xy().norm() >= MIN_NORM {
            forward.xy()
        } else {
            (r * Vec3::x()).xy()
        };
        let mut yaw = -heading.y.atan2(heading.x);
        if yaw.abs() < YAW_SNAP {
            yaw = 0.0;
        }
        let t = rot_z(yaw) * pose.position();
        let horizontal_offset = if yaw == 0.0 && t.x == 0.0 && t.y == 0.0 {
            [0.0, 0.0]
        } else {
            [t.x, t.y]
        };
        Ok(CanonicalTransform { yaw, horizontal_offset })
    }

    pub fn is_identity(&self) -> bool {
        self.yaw == 0.0 && self.horizontal_offset == [0.0, 0.0]
    }

    /// Rotate about the vertical axis, then subtract the horizontal offset.
    /// Identity transforms return the input bitwise unchanged.
    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        if self.is_identity() {
            return p;
        }
        let q = rot_z(self.yaw) * p;
        Vec3::new(q.x - self.horizontal_offset[0], q.y - self.horizontal_offset[1], q.z)
    }

    /// Inverse of [`CanonicalTransform::apply_point`].
    pub fn invert_point(&self, p: Vec3) -> Vec3 {
        if self.is_identity() {
            return p;
        }
        let q = Vec3::new(p.x + self.horizontal_offset[0], p.y + self.horizontal_offset[1], p.z);
        rot_z(-self.yaw) * q
    }

    pub fn apply_pose(&self, pose: &CameraPose) -> Result<CameraPose> {
        if self.is_identity() {
            return Ok(pose.clone());
        }
        let r = rot_z(self.yaw) * pose.rotation_matrix()?;
        let t = self.apply_point(pose.position());
        Ok(CameraPose {
            rotation: Rotation6d::from_matrix(&r)?,
            translation: [t.x, t.y, t.z],
            intrinsics: pose.intrinsics,
            image_size: pose.image_size,
        })
    }

    pub fn invert_pose(&self, pose: &CameraPose) -> Result<CameraPose> {
        if self.is_identity() {
            return Ok(pose.clone());
        }
        let r = rot_z(-self.yaw) * pose.rotation_matrix()?;
        let t = self.invert_point(pose.position());
        Ok(CameraPose {
            rotation: Rotation6d::from_matrix(&r)?,
            translation: [t.x, t.y, t.z],
            intrinsics: pose.intrinsics,
            image_size: pose.image_size,
        })
    }
}
