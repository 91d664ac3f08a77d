//! Oriented points, angle arithmetic, local frames and rigid transforms.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coincident minutiae closer than this are rejected at ingestion.
pub const DUPLICATE_EPS: f64 = 1e-6;

/// Reduce an angle to `[0, 2π)`.
pub fn canonical_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed minimal difference `a - b`, in `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Rotate about the origin.
    pub fn rotated(self, theta: f64) -> Point {
        let (s, c) = theta.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Rotate about an arbitrary center.
    pub fn rotated_about(self, center: Point, theta: f64) -> Point {
        (self - center).rotated(theta) + center
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl std::ops::AddAssign for Point {
    fn add_assign(&mut self, o: Point) {
        self.x += o.x;
        self.y += o.y;
    }
}

/// Arithmetic mean of a non-empty point set.
pub fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let sum = points.iter().fold(Point::ORIGIN, |acc, &p| acc + p);
    sum * (1.0 / n)
}

/// Largest pairwise distance in a point set (0 for fewer than two points).
pub fn diameter(points: &[Point]) -> f64 {
    let mut best = 0.0f64;
    for (i, &p) in points.iter().enumerate() {
        for &q in &points[i + 1..] {
            best = best.max(p.dist(q));
        }
    }
    best
}

/// An oriented point `{x, y, θ}` with `θ` kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minutia {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Minutia {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Minutia {
            x,
            y,
            theta: canonical_angle(theta),
        }
    }

    pub fn pos(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// Re-express `m` in the frame whose origin is this minutia and whose
    /// x-axis points along its orientation.
    pub fn to_local(&self, m: &Minutia) -> Minutia {
        to_local_frame(self, m)
    }

    pub fn from_local(&self, m: &Minutia) -> Minutia {
        from_local_frame(self, m)
    }
}

pub fn to_local_frame(center: &Minutia, m: &Minutia) -> Minutia {
    let rel = Point::new(m.x - center.x, m.y - center.y).rotated(-center.theta);
    Minutia::new(rel.x, rel.y, m.theta - center.theta)
}

pub fn from_local_frame(center: &Minutia, m_local: &Minutia) -> Minutia {
    let p = Point::new(m_local.x, m_local.y).rotated(center.theta);
    Minutia::new(p.x + center.x, p.y + center.y, m_local.theta + center.theta)
}

/// Rotation by `theta` about the origin followed by translation by `(dx, dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    pub dx: f64,
    pub dy: f64,
    pub theta: f64,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        dx: 0.0,
        dy: 0.0,
        theta: 0.0,
    };

    pub fn new(dx: f64, dy: f64, theta: f64) -> Self {
        RigidTransform { dx, dy, theta }
    }

    pub fn translation(&self) -> Point {
        Point::new(self.dx, self.dy)
    }

    pub fn apply(&self, p: Point) -> Point {
        apply_rigid(p, self)
    }

    /// Moves the position and turns the orientation by `theta`.
    pub fn apply_minutia(&self, m: &Minutia) -> Minutia {
        let p = self.apply(m.pos());
        Minutia::new(p.x, p.y, m.theta + self.theta)
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        let t = self.apply(first.translation());
        RigidTransform::new(t.x, t.y, self.theta + first.theta)
    }

    pub fn inverse(&self) -> RigidTransform {
        let t = self.translation().rotated(-self.theta);
        RigidTransform::new(-t.x, -t.y, -self.theta)
    }
}

pub fn apply_rigid(p: Point, t: &RigidTransform) -> Point {
    p.rotated(t.theta) + t.translation()
}

/// A labelled set of minutiae without coincident positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    pub id: String,
    minutiae: Vec<Minutia>,
}

impl Constellation {
    pub fn new(id: impl Into<String>, minutiae: Vec<Minutia>) -> Result<Self> {
        for (i, m) in minutiae.iter().enumerate() {
            if !(m.x.is_finite() && m.y.is_finite() && m.theta.is_finite()) {
                return Err(Error::NonFinite(format!("minutia {i}")));
            }
            for (j, n) in minutiae[..i].iter().enumerate() {
                if m.pos().dist(n.pos()) < DUPLICATE_EPS {
                    return Err(Error::DuplicateMinutia { first: j, second: i });
                }
            }
        }
        let minutiae = minutiae
            .into_iter()
            .map(|m| Minutia::new(m.x, m.y, m.theta))
            .collect();
        Ok(Constellation {
            id: id.into(),
            minutiae,
        })
    }

    pub fn empty(id: impl Into<String>) -> Self {
        Constellation {
            id: id.into(),
            minutiae: Vec::new(),
        }
    }

    pub fn minutiae(&self) -> &[Minutia] {
        &self.minutiae
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    pub fn positions(&self) -> Vec<Point> {
        self.minutiae.iter().map(Minutia::pos).collect()
    }

    /// Rigid motion of every minutia; the id is kept.
    pub fn transformed(&self, t: &RigidTransform) -> Constellation {
        Constellation {
            id: self.id.clone(),
            minutiae: self.minutiae.iter().map(|m| t.apply_minutia(m)).collect(),
        }
    }
}

/// Per-minutia score parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    /// Position variance, px².
    pub sigma_x: f64,
    /// Orientation variance, rad².
    pub sigma_theta: f64,
    /// Penalty per non-associated minutia.
    pub k_na: f64,
    /// Associated pairs scoring above this cap are dissolved. `f64::INFINITY` disables gating.
    pub s_max: f64,
    /// Overrides `sigma_x / sigma_theta` as the angle-term weight when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_weight: Option<f64>,
}

impl ScoreParams {
    /// Defaults derived from the extraction radius: `K_NA = ρ²/4`, `s_max = 3ρ²/4`.
    pub fn for_radius(rho: f64) -> Self {
        ScoreParams {
            sigma_x: 5.0,
            sigma_theta: 0.3,
            k_na: rho * rho / 4.0,
            s_max: 3.0 * rho * rho / 4.0,
            angle_weight: None,
        }
    }

    pub fn theta_weight(&self) -> f64 {
        self.angle_weight
            .unwrap_or(self.sigma_x / self.sigma_theta)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && !v.is_nan();
        if !(ok(self.sigma_x) && ok(self.sigma_theta) && ok(self.k_na) && ok(self.s_max)) {
            return Err(Error::InvalidParams(
                "score parameters must be strictly positive".into(),
            ));
        }
        if let Some(w) = self.angle_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParams("angle weight must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams::for_radius(75.0)
    }
}

/// `s(a, b) = |Δpos|² + w_θ · angle_diff(a.θ, b.θ)²` for two minutiae in one frame.
pub fn minutia_score(a: &Minutia, b: &Minutia, p: &ScoreParams) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    // order the operands so s(a, b) and s(b, a) round identically
    let (hi, lo) = if a.theta >= b.theta {
        (a.theta, b.theta)
    } else {
        (b.theta, a.theta)
    };
    let dt = angle_diff(hi, lo);
    dx * dx + dy * dy + p.theta_weight() * dt * dt
}
