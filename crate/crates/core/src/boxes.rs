//! 7-DoF boxes, pinhole projection, 2D box deduction and overlap measures.
//!
//! Corners are indexed by the bit pattern `(sx, sy, sz)`: bit 2 selects the
//! sign along width, bit 1 along height, bit 0 along length, with a clear
//! bit meaning the negative half. At yaw 0 width spans camera x, height
//! spans camera y and length spans camera z.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, AxisConvention, Intrinsics};

/// Default near-plane distance in meters.
pub const DEFAULT_NEAR: f64 = 0.1;

/// Box dimensions in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Size3 {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

impl Size3 {
    pub fn new(w: f64, h: f64, l: f64) -> Self {
        Self { w, h, l }
    }

    pub fn volume(&self) -> f64 {
        self.w * self.h * self.l
    }
}

/// An oriented box with yaw about the gravity axis. Serialized as
/// `[x, y, z, w, h, l, yaw]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D {
    pub center: Vector3<f64>,
    pub size: Size3,
    pub yaw: f64,
}

impl Box3D {
    /// Validates sizes and wraps `yaw` into `(-pi, pi]`.
    pub fn new(center: Vector3<f64>, size: Size3, yaw: f64) -> Result<Self> {
        let b = Self {
            center,
            size,
            yaw: wrap_angle(yaw),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.to_params();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox("non-finite parameter".into()));
        }
        if self.size.w <= 0.0 || self.size.h <= 0.0 || self.size.l <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "sizes must be positive, got ({}, {}, {})",
                self.size.w, self.size.h, self.size.l
            )));
        }
        Ok(())
    }

    pub fn to_params(&self) -> [f64; 7] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.size.w,
            self.size.h,
            self.size.l,
            self.yaw,
        ]
    }

    pub fn from_params(p: [f64; 7]) -> Result<Self> {
        Self::new(
            Vector3::new(p[0], p[1], p[2]),
            Size3::new(p[3], p[4], p[5]),
            p[6],
        )
    }

    /// The eight corners in canonical order.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (s, c) = self.yaw.sin_cos();
        let half = Vector3::new(self.size.w, self.size.h, self.size.l) / 2.0;
        std::array::from_fn(|i| {
            let local = Vector3::new(
                if i & 4 != 0 { half.x } else { -half.x },
                if i & 2 != 0 { half.y } else { -half.y },
                if i & 1 != 0 { half.z } else { -half.z },
            );
            // rotation about -y by yaw
            let rotated = Vector3::new(
                local.x * c - local.z * s,
                local.y,
                local.x * s + local.z * c,
            );
            self.center + rotated
        })
    }

    /// Unit heading vector in the camera convention.
    pub fn heading(&self) -> Vector3<f64> {
        AxisConvention::Camera.heading(self.yaw)
    }

    /// Box scaled about the camera center: center and size multiplied by
    /// `factor`. Its projection through any pinhole camera at the origin is
    /// unchanged.
    pub fn scaled_along_ray(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.center * factor,
            Size3::new(
                self.size.w * factor,
                self.size.h * factor,
                self.size.l * factor,
            ),
            self.yaw,
        )
    }
}

impl Serialize for Box3D {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_params().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Box3D {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let p = <[f64; 7]>::deserialize(d)?;
        let b = Box3D {
            center: Vector3::new(p[0], p[1], p[2]),
            size: Size3::new(p[3], p[4], p[5]),
            yaw: p[6],
        };
        b.validate().map_err(serde::de::Error::custom)?;
        Ok(b)
    }
}

/// Axis-aligned pixel box. Serialized as `[x_tl, y_tl, x_br, y_br]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box2D {
    pub x_tl: f64,
    pub y_tl: f64,
    pub x_br: f64,
    pub y_br: f64,
}

impl Box2D {
    pub fn new(x_tl: f64, y_tl: f64, x_br: f64, y_br: f64) -> Result<Self> {
        let b = Self {
            x_tl,
            y_tl,
            x_br,
            y_br,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.x_tl, self.y_tl, self.x_br, self.y_br];
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox("non-finite 2D box".into()));
        }
        if self.x_tl > self.x_br || self.y_tl > self.y_br {
            return Err(Error::InvalidBox(format!(
                "2D box corners out of order: {v:?}"
            )));
        }
        Ok(())
    }

    pub fn from_center_size(cu: f64, cv: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cu - w / 2.0, cv - h / 2.0, cu + w / 2.0, cv + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_br - self.x_tl
    }

    pub fn height(&self) -> f64 {
        self.y_br - self.y_tl
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new((self.x_tl + self.x_br) / 2.0, (self.y_tl + self.y_br) / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_tl, self.y_tl, self.x_br, self.y_br]
    }

    pub fn translate(&self, du: f64, dv: f64) -> Self {
        Self {
            x_tl: self.x_tl + du,
            y_tl: self.y_tl + dv,
            x_br: self.x_br + du,
            y_br: self.y_br + dv,
        }
    }

    /// Overlap with another box, or `None` when disjoint.
    pub fn intersection(&self, other: &Box2D) -> Option<Box2D> {
        let b = Box2D {
            x_tl: self.x_tl.max(other.x_tl),
            y_tl: self.y_tl.max(other.y_tl),
            x_br: self.x_br.min(other.x_br),
            y_br: self.y_br.min(other.y_br),
        };
        (b.x_tl <= b.x_br && b.y_tl <= b.y_br).then_some(b)
    }

    /// Smallest box enclosing both.
    pub fn hull(&self, other: &Box2D) -> Box2D {
        Box2D {
            x_tl: self.x_tl.min(other.x_tl),
            y_tl: self.y_tl.min(other.y_tl),
            x_br: self.x_br.max(other.x_br),
            y_br: self.y_br.max(other.y_br),
        }
    }

    /// Part of the box inside the image rectangle `[0, width] x [0, height]`.
    pub fn clip_to_image(&self, k: &Intrinsics) -> Option<Box2D> {
        self.intersection(&Box2D {
            x_tl: 0.0,
            y_tl: 0.0,
            x_br: k.width,
            y_br: k.height,
        })
    }
}

impl Serialize for Box2D {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Box2D {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [a, b, c, e] = <[f64; 4]>::deserialize(d)?;
        Box2D::new(a, b, c, e).map_err(serde::de::Error::custom)
    }
}

/// Eight corners of `b` in canonical order.
pub fn corners3d(b: &Box3D) -> [Vector3<f64>; 8] {
    b.corners()
}

/// Perspective projection with the default near plane.
pub fn project_point(k: &Intrinsics, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    project_point_with(k, p, DEFAULT_NEAR)
}

pub fn project_point_with(k: &Intrinsics, p: &Vector3<f64>, near: f64) -> Result<Vector2<f64>> {
    if !(p.z >= near) {
        return Err(Error::BehindCamera { depth: p.z, near });
    }
    Ok(Vector2::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// Axis-aligned bounds of the projected corners, not clipped to the image.
pub fn deduce_box2d(b: &Box3D, k: &Intrinsics) -> Result<Box2D> {
    deduce_box2d_with(b, k, DEFAULT_NEAR)
}

pub fn deduce_box2d_with(b: &Box3D, k: &Intrinsics, near: f64) -> Result<Box2D> {
    let mut out = Box2D {
        x_tl: f64::INFINITY,
        y_tl: f64::INFINITY,
        x_br: f64::NEG_INFINITY,
        y_br: f64::NEG_INFINITY,
    };
    for c in b.corners() {
        let px = project_point_with(k, &c, near)?;
        out.x_tl = out.x_tl.min(px.x);
        out.x_br = out.x_br.max(px.x);
        out.y_tl = out.y_tl.min(px.y);
        out.y_br = out.y_br.max(px.y);
    }
    Ok(out)
}

/// Intersection over union. Zero when the union has no area.
pub fn iou2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Generalized IoU: `IoU - (hull - union) / hull`.
pub fn giou2d(a: &Box2D, b: &Box2D) -> Result<f64> {
    let hull = a.hull(b).area();
    if !(hull > 0.0) {
        return Err(Error::Degenerate("enclosing box has zero area"));
    }
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    Ok(iou - (hull - union) / hull)
}

/// IoU of the two boxes' sizes after aligning centers and yaw.
pub fn iou3d_aligned(a: &Box3D, b: &Box3D) -> f64 {
    let inter = a.size.w.min(b.size.w) * a.size.h.min(b.size.h) * a.size.l.min(b.size.l);
    inter / (a.size.volume() + b.size.volume() - inter)
}
