//! 2-D points, axis-aligned boxes and affine maps, all in `f64`.
//!
//! Image coordinates are continuous: pixel `(i, j)` covers `[i, i+1) x [j, j+1)`
//! and its centre sits at `(i + 0.5, j + 0.5)`. `y` grows downwards.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned box `(x, y, w, h)` with `(x, y)` the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    /// Open-interior test: points on the border are outside.
    pub fn contains_strict(&self, p: Point) -> bool {
        p.x > self.x && p.x < self.x + self.w && p.y > self.y && p.y < self.y + self.h
    }

    /// Positive-area overlap with `[0, width] x [0, height]`.
    pub fn intersects_frame(&self, width: f64, height: f64) -> bool {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width);
        let y1 = (self.y + self.h).min(height);
        x1 > x0 && y1 > y0
    }

    /// Smallest box containing `points`.
    pub fn enclosing(points: &[Point]) -> Option<BBox> {
        let first = points.first()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for p in &points[1..] {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseBBoxError(pub String);

impl fmt::Display for ParseBBoxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "invalid bounding box {:?}: expected x,y,w,h with w, h > 0",
            self.0
        )
    }
}

impl std::error::Error for ParseBBoxError {}

impl FromStr for BBox {
    type Err = ParseBBoxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseBBoxError(s.to_string());
        let vals: Vec<f64> = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err())?;
        match vals[..] {
            [x, y, w, h] => {
                let b = BBox::new(x, y, w, h);
                if b.is_valid() && w.is_finite() && h.is_finite() {
                    Ok(b)
                } else {
                    Err(err())
                }
            }
            _ => Err(err()),
        }
    }
}

/// `p' = [[a, b], [c, d]] p + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for Affine2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            a: v[0],
            b: v[1],
            c: v[2],
            d: v[3],
            tx: v[4],
            ty: v[5],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.tx, self.ty]
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x + self.b * p.y + self.tx,
            self.c * p.x + self.d * p.y + self.ty,
        )
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn then_after(&self, inner: &Affine2) -> Affine2 {
        Affine2 {
            a: self.a * inner.a + self.b * inner.c,
            b: self.a * inner.b + self.b * inner.d,
            c: self.c * inner.a + self.d * inner.c,
            d: self.c * inner.b + self.d * inner.d,
            tx: self.a * inner.tx + self.b * inner.ty + self.tx,
            ty: self.c * inner.tx + self.d * inner.ty + self.ty,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let (a, b, c, d) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Some(Affine2 {
            a,
            b,
            c,
            d,
            tx: -(a * self.tx + b * self.ty),
            ty: -(c * self.tx + d * self.ty),
        })
    }

    /// Counter-clockwise in a y-up frame: `(1, 0)` goes to `(0, 1)` for +90°.
    pub fn rotation_about(center: Point, degrees: f64) -> Affine2 {
        let (s, c) = degrees.to_radians().sin_cos();
        Affine2 {
            a: c,
            b: -s,
            c: s,
            d: c,
            tx: center.x - c * center.x + s * center.y,
            ty: center.y - s * center.x - c * center.y,
        }
    }

    pub fn scale_about(center: Point, sx: f64, sy: f64) -> Affine2 {
        Affine2 {
            a: sx,
            b: 0.0,
            c: 0.0,
            d: sy,
            tx: center.x * (1.0 - sx),
            ty: center.y * (1.0 - sy),
        }
    }

    /// Reflection across the vertical line `x = axis_x`.
    pub fn mirror_x(axis_x: f64) -> Affine2 {
        Affine2 {
            a: -1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            tx: 2.0 * axis_x,
            ty: 0.0,
        }
    }

    /// Unit square `[0,1]^2` onto `bbox`.
    pub fn unit_to_box(bbox: &BBox) -> Affine2 {
        Affine2 {
            a: bbox.w,
            b: 0.0,
            c: 0.0,
            d: bbox.h,
            tx: bbox.x,
            ty: bbox.y,
        }
    }
}
