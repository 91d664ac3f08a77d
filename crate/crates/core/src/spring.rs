//! The mechanical comparator.
//!
//! Constellation A becomes a rigid body of unit point masses; constellation B
//! is a set of fixed anchors. Zero-rest-length springs link `a_i` to `b_i`,
//! viscous drag damps every point, and the body is released until it settles.
//! The settled potential energy (`e_min`) and the settled distance sum
//! (`sim_phi`) are the similarity outputs.
//!
//! Also here: the closed-form least-squares alignment (the exact minimizer of
//! the spring energy over rigid poses), a grid-plus-refinement search for the
//! sum-of-distances objective, and the forced-rotation sweep.

use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{centroid, diameter, Point, RigidTransform};

/// Angular updates are skipped for bodies with less inertia than this.
const MIN_INERTIA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// Spring stiffness.
    pub k: f64,
    /// Per-point drag coefficient, `F = -k_v · v`.
    pub k_v: f64,
    pub dt: f64,
    pub max_steps: usize,
    /// Kinetic energy below which a step counts as quiet.
    pub eps_kinetic: f64,
    /// Consecutive quiet steps required to stop.
    pub settle_window: usize,
    /// Record a trajectory sample every this many steps.
    #[serde(default)]
    pub trajectory_stride: Option<usize>,
    /// Translation-only relaxation.
    #[serde(default)]
    pub lock_rotation: bool,
}

impl PhysicsParams {
    /// Defaults scaled to a particular pair of point sets: `k = 1`,
    /// `k_v = 2√(kℓ)`, `dt = 0.01`, `eps_kinetic = 1e-9·k·diameter²`.
    pub fn for_points(a: &[Point], b: &[Point]) -> Self {
        let k = 1.0;
        let l = a.len().max(1) as f64;
        let d = diameter(a).max(diameter(b)).max(1.0);
        PhysicsParams {
            k,
            k_v: 2.0 * (k * l).sqrt(),
            dt: 0.01,
            max_steps: 200_000,
            eps_kinetic: 1e-9 * k * d * d,
            settle_window: 50,
            trajectory_stride: None,
            lock_rotation: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.k) && pos(self.k_v) && pos(self.dt) && pos(self.eps_kinetic)) {
            return Err(Error::InvalidParams(
                "k, k_v, dt and eps_kinetic must be positive".into(),
            ));
        }
        if self.settle_window == 0 || self.max_steps == 0 {
            return Err(Error::InvalidParams(
                "settle_window and max_steps must be at least 1".into(),
            ));
        }
        if self.trajectory_stride == Some(0) {
            return Err(Error::InvalidParams("trajectory stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidBody {
    /// Offsets from the centroid in the assembled orientation.
    pub local_points: Vec<Point>,
    pub mass: f64,
    /// `Σ m_i |r_i|²` about the centroid.
    pub inertia: f64,
    /// Where the centroid started; `pose` is measured relative to this placement.
    origin: Point,
    /// Current centroid position.
    pub position: Point,
    /// Current rotation relative to the assembled orientation.
    pub angle: f64,
    pub lin_vel: Point,
    pub ang_vel: f64,
}

impl RigidBody {
    fn new(points: &[Point]) -> Self {
        let c = centroid(points);
        let local_points: Vec<Point> = points.iter().map(|&p| p - c).collect();
        let inertia = local_points.iter().map(|r| r.dot(*r)).sum();
        RigidBody {
            mass: points.len() as f64,
            inertia,
            local_points,
            origin: c,
            position: c,
            angle: 0.0,
            lin_vel: Point::ORIGIN,
            ang_vel: 0.0,
        }
    }

    /// Rigid transform taking the assembled coordinates to the current ones.
    pub fn pose(&self) -> RigidTransform {
        let t = self.position - self.origin.rotated(self.angle);
        RigidTransform::new(t.x, t.y, self.angle)
    }

    /// Current offsets from the centroid.
    fn arms(&self) -> impl Iterator<Item = Point> + '_ {
        let (s, c) = self.angle.sin_cos();
        self.local_points
            .iter()
            .map(move |r| Point::new(c * r.x - s * r.y, s * r.x + c * r.y))
    }

    pub fn world_points(&self) -> Vec<Point> {
        self.arms().map(|r| r + self.position).collect()
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.lin_vel.dot(self.lin_vel)
            + 0.5 * self.inertia * self.ang_vel * self.ang_vel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpringSystem {
    pub body: RigidBody,
    /// Fixed (infinite-mass) endpoints; spring `i` links body point `i` to anchor `i`.
    pub anchors: Vec<Point>,
    pub params: PhysicsParams,
}

/// Largest stable timestep for the translational and rotational spring modes.
pub fn stability_bound(a: &[Point], b: &[Point], k: f64) -> f64 {
    let body = RigidBody::new(a);
    let translational = 2.0 * (body.mass / (k * a.len() as f64)).sqrt();
    let cb = centroid(b);
    let h = body
        .local_points
        .iter()
        .zip(b)
        .fold((0.0, 0.0), |(dot, cross), (r, &q)| {
            let q = q - cb;
            (dot + r.dot(q), cross + r.cross(q))
        });
    let coupling = h.0.hypot(h.1);
    if body.inertia < MIN_INERTIA || coupling <= 0.0 {
        translational
    } else {
        translational.min(2.0 * (body.inertia / (k * coupling)).sqrt())
    }
}

pub fn assemble(a: &[Point], b: &[Point], params: PhysicsParams) -> Result<SpringSystem> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidParams("at least one point pair is required".into()));
    }
    if a.iter().chain(b).any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::NonFinite("point set".into()));
    }
    params.validate()?;
    let bound = stability_bound(a, b, params.k);
    if params.dt >= bound {
        return Err(Error::Unstable {
            dt: params.dt,
            bound,
        });
    }
    Ok(SpringSystem {
        body: RigidBody::new(a),
        anchors: b.to_vec(),
        params,
    })
}

impl SpringSystem {
    pub fn potential_energy(&self) -> f64 {
        potential_energy(self)
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.body.kinetic_energy()
    }

    pub fn total_energy(&self) -> f64 {
        self.potential_energy() + self.kinetic_energy()
    }

    /// Sum of spring lengths.
    pub fn distance_sum(&self) -> f64 {
        self.body
            .world_points()
            .iter()
            .zip(&self.anchors)
            .map(|(p, b)| p.dist(*b))
            .sum()
    }

    /// Advance one timestep in place.
    pub fn advance(&mut self) {
        let p = self.params;
        let body = &mut self.body;
        let mut force = Point::ORIGIN;
        let mut torque = 0.0;
        let mut arm_sq = 0.0;
        for (r, b) in body.arms().zip(&self.anchors) {
            let world = r + body.position;
            let f = (world - *b) * (-p.k);
            force += f;
            torque += r.cross(f);
            arm_sq += r.dot(r);
        }
        // Point-wise drag -k_v (v + ω × r_i) sums to -k_v ℓ v and -k_v Σ|r|² ω
        // about the centroid; both are integrated implicitly.
        let lin_drag = p.k_v * body.local_points.len() as f64;
        body.lin_vel = (body.lin_vel + force * (p.dt / body.mass)) * (1.0 / (1.0 + p.dt * lin_drag / body.mass));
        if body.inertia >= MIN_INERTIA && !p.lock_rotation {
            let ang_drag = p.k_v * arm_sq;
            body.ang_vel =
                (body.ang_vel + torque * p.dt / body.inertia) / (1.0 + p.dt * ang_drag / body.inertia);
        } else {
            body.ang_vel = 0.0;
        }
        body.position += body.lin_vel * p.dt;
        body.angle += body.ang_vel * p.dt;
    }
}

/// One integration step, returning the new state.
pub fn step(s: &SpringSystem) -> SpringSystem {
    let mut next = s.clone();
    next.advance();
    next
}

/// `Σ k·|p_i − b_i|² / 2`.
pub fn potential_energy(s: &SpringSystem) -> f64 {
    let k = s.params.k;
    s.body
        .world_points()
        .iter()
        .zip(&s.anchors)
        .map(|(p, b)| 0.5 * k * p.dist_sq(*b))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub step: usize,
    pub potential: f64,
    pub kinetic: f64,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub e_min: f64,
    pub sim_phi: f64,
    pub steps: usize,
    pub converged: bool,
    pub final_pose: RigidTransform,
    /// Settled energy exceeds the analytic optimum by more than 1%; a
    /// meta-stable or unfinished run.
    pub above_optimum: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TrajectorySample>>,
}

impl SimResult {
    pub fn world_points(&self, a: &[Point]) -> Vec<Point> {
        a.iter().map(|&p| self.final_pose.apply(p)).collect()
    }
}

/// Run until the kinetic energy stays below `eps_kinetic` for
/// `settle_window` consecutive steps, or `max_steps` is reached.
pub fn simulate(s: &SpringSystem) -> SimResult {
    let mut sys = s.clone();
    let p = sys.params;
    let mut trajectory = p.trajectory_stride.map(|_| Vec::new());
    let sample = |sys: &SpringSystem, step: usize| TrajectorySample {
        step,
        potential: sys.potential_energy(),
        kinetic: sys.kinetic_energy(),
        pose: sys.body.pose(),
    };
    if let Some(t) = trajectory.as_mut() {
        t.push(sample(&sys, 0));
    }

    let mut steps = 0;
    let mut quiet = 0;
    let mut converged = false;
    while steps < p.max_steps {
        sys.advance();
        steps += 1;
        if sys.kinetic_energy() < p.eps_kinetic {
            quiet += 1;
        } else {
            quiet = 0;
        }
        if let (Some(t), Some(stride)) = (trajectory.as_mut(), p.trajectory_stride) {
            if steps % stride == 0 {
                t.push(sample(&sys, steps));
            }
        }
        if quiet >= p.settle_window {
            converged = true;
            break;
        }
    }
    if let Some(t) = trajectory.as_mut() {
        if t.last().map(|x| x.step) != Some(steps) {
            t.push(sample(&sys, steps));
        }
    }

    let e_min = sys.potential_energy();
    let a0: Vec<Point> = s.body.world_points();
    let above_optimum = match kabsch_align(&a0, &sys.anchors) {
        Ok((_, residual)) => e_min > 1.01 * 0.5 * p.k * residual + p.eps_kinetic,
        Err(_) => false,
    };
    SimResult {
        e_min,
        sim_phi: sys.distance_sum(),
        steps,
        converged,
        final_pose: sys.body.pose(),
        above_optimum,
        trajectory,
    }
}

/// CSV with header `step,potential_energy,kinetic_energy,pose_x,pose_y,pose_theta`.
pub fn write_trajectory_csv<W: Write>(mut w: W, samples: &[TrajectorySample]) -> std::io::Result<()> {
    writeln!(w, "step,potential_energy,kinetic_energy,pose_x,pose_y,pose_theta")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.step, s.potential, s.kinetic, s.pose.dx, s.pose.dy, s.pose.theta
        )?;
    }
    Ok(())
}

/// Closed-form rigid transform minimizing `Σ |Γ(a_i) − b_i|²`, with the
/// minimal residual.
pub fn kabsch_align(a: &[Point], b: &[Point]) -> Result<(RigidTransform, f64)> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidParams("at least one point pair is required".into()));
    }
    let ca = centroid(a);
    let cb = centroid(b);
    let (mut dot, mut cross) = (0.0, 0.0);
    for (&p, &q) in a.iter().zip(b) {
        let (p, q) = (p - ca, q - cb);
        dot += p.dot(q);
        cross += p.cross(q);
    }
    let theta = cross.atan2(dot);
    let t = cb - ca.rotated(theta);
    let transform = RigidTransform::new(t.x, t.y, theta);
    let residual = a
        .iter()
        .zip(b)
        .map(|(&p, &q)| transform.apply(p).dist_sq(q))
        .sum();
    Ok((transform, residual))
}

/// Search settings for [`brute_force_sim`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub angle_steps: usize,
    /// Half-width of the translation window around centroid alignment.
    pub shift_extent: f64,
    pub shift_steps: usize,
    /// Refinement stops when the translation step falls below this.
    pub tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            angle_steps: 36,
            shift_extent: 20.0,
            shift_steps: 5,
            tol: 1e-4,
        }
    }
}

/// Minimum over rigid transforms of `Σ |Γ(a_i) − b_i|`, by coarse grid over
/// rotation and translation followed by step-halving pattern search.
pub fn brute_force_sim(a: &[Point], b: &[Point], grid: &GridSpec) -> Result<(f64, RigidTransform)> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if grid.angle_steps == 0 || grid.shift_steps == 0 {
        return Err(Error::DegenerateGrid("step counts must be positive".into()));
    }
    if !(grid.tol > 0.0 && grid.shift_extent >= 0.0 && grid.shift_extent.is_finite()) {
        return Err(Error::DegenerateGrid(
            "tolerance must be positive and extent finite".into(),
        ));
    }
    if a.is_empty() {
        return Ok((0.0, RigidTransform::IDENTITY));
    }
    let ca = centroid(a);
    let cb = centroid(b);
    let arms: Vec<Point> = a.iter().map(|&p| p - ca).collect();
    let radius = (arms.iter().map(|r| r.dot(*r)).sum::<f64>() / arms.len() as f64)
        .sqrt()
        .max(1.0);
    // x = (θ, u, v): rotate about ca by θ, then place ca at cb + (u, v)
    let objective = |x: [f64; 3]| -> f64 {
        let (s, c) = x[0].sin_cos();
        arms.iter()
            .zip(b)
            .map(|(r, q)| {
                let px = c * r.x - s * r.y + cb.x + x[1];
                let py = s * r.x + c * r.y + cb.y + x[2];
                (px - q.x).hypot(py - q.y)
            })
            .sum()
    };

    let d_theta = TAU / grid.angle_steps as f64;
    let d_shift = if grid.shift_steps > 1 {
        2.0 * grid.shift_extent / (grid.shift_steps - 1) as f64
    } else {
        grid.shift_extent.max(grid.tol)
    };
    let shift_at = |k: usize| {
        if grid.shift_steps > 1 {
            -grid.shift_extent + k as f64 * d_shift
        } else {
            0.0
        }
    };
    let mut coarse: Vec<(f64, [f64; 3])> = Vec::with_capacity(grid.angle_steps);
    for i in 0..grid.angle_steps {
        let theta = i as f64 * d_theta;
        let mut best = (f64::INFINITY, [theta, 0.0, 0.0]);
        for ju in 0..grid.shift_steps {
            for jv in 0..grid.shift_steps {
                let x = [theta, shift_at(ju), shift_at(jv)];
                let f = objective(x);
                if f < best.0 {
                    best = (f, x);
                }
            }
        }
        coarse.push(best);
    }
    coarse.sort_by(|p, q| p.0.total_cmp(&q.0));

    let mut best = (f64::INFINITY, [0.0; 3]);
    for &(f0, x0) in coarse.iter().take(3) {
        let refined = pattern_search(&objective, x0, f0, d_theta / 2.0, d_shift / 2.0, radius, grid.tol);
        if refined.0 < best.0 {
            best = refined;
        }
    }
    let (value, [theta, u, v]) = best;
    let t = cb + Point::new(u, v) - ca.rotated(theta);
    Ok((value, RigidTransform::new(t.x, t.y, theta)))
}

/// Compass search over all 26 neighbours in (θ, u, v); halves the steps
/// whenever no neighbour improves.
fn pattern_search(
    f: &impl Fn([f64; 3]) -> f64,
    mut x: [f64; 3],
    mut fx: f64,
    mut d_theta: f64,
    mut d_shift: f64,
    radius: f64,
    tol: f64,
) -> (f64, [f64; 3]) {
    // keep the angular step no coarser than the translation step at the body radius
    d_theta = d_theta.min(d_shift / radius).max(tol / radius);
    while d_shift >= tol || d_theta * radius >= tol {
        let mut improved = false;
        for i in -1i32..=1 {
            for j in -1i32..=1 {
                for k in -1i32..=1 {
                    if i == 0 && j == 0 && k == 0 {
                        continue;
                    }
                    let y = [
                        x[0] + i as f64 * d_theta,
                        x[1] + j as f64 * d_shift,
                        x[2] + k as f64 * d_shift,
                    ];
                    let fy = f(y);
                    if fy < fx {
                        x = y;
                        fx = fy;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            d_theta *= 0.5;
            d_shift *= 0.5;
        }
    }
    (fx, x)
}

/// `c^(−sim)`, in `(0, 1]`.
pub fn similarity_score(sim_value: f64, c: f64) -> Result<f64> {
    if !(c > 1.0) {
        return Err(Error::InvalidParams(format!("base must exceed 1, got {c}")));
    }
    if !(sim_value >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "similarity must be non-negative, got {sim_value}"
        )));
    }
    Ok(c.powf(-sim_value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `(θ, settled energy)` at each coarse sample.
    pub curve: Vec<(f64, f64)>,
    /// Refined rotation of A about the center, in `[0, 2π)`.
    pub best_theta: f64,
    pub best_energy: f64,
    /// `(θ, energy)` evaluated while refining.
    pub refinements: Vec<(f64, f64)>,
}

/// Stop refining once the step drops below half a degree.
const SWEEP_MIN_STEP: f64 = 0.5 * std::f64::consts::PI / 180.0;

/// Force A through rotations about `center`, relax translation only at each
/// angle, then refine around the lowest-energy sample by halving the step.
pub fn rotation_sweep(
    a: &[Point],
    b: &[Point],
    center: Point,
    increment: f64,
    params: Option<PhysicsParams>,
) -> Result<SweepResult> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if !(increment > 0.0 && increment.is_finite()) {
        return Err(Error::InvalidParams("increment must be positive".into()));
    }
    let mut p = params.unwrap_or_else(|| PhysicsParams::for_points(a, b));
    p.lock_rotation = true;
    p.trajectory_stride = None;
    let settle = |theta: f64| -> Result<f64> {
        let rotated: Vec<Point> = a.iter().map(|q| q.rotated_about(center, theta)).collect();
        Ok(simulate(&assemble(&rotated, b, p)?).e_min)
    };

    let samples = (TAU / increment).ceil() as usize;
    let curve: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let theta = k as f64 * increment;
            settle(theta).map(|e| (theta, e))
        })
        .collect::<Result<_>>()?;

    let (mut best_theta, mut best_energy) = curve
        .iter()
        .copied()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("at least one sample");
    let mut refinements = Vec::new();
    let mut h = increment / 2.0;
    while h >= SWEEP_MIN_STEP {
        let center_theta = best_theta;
        for theta in [center_theta - h, center_theta + h] {
            let e = settle(theta)?;
            refinements.push((theta, e));
            if e < best_energy {
                best_energy = e;
                best_theta = theta;
            }
        }
        h /= 2.0;
    }
    Ok(SweepResult {
        curve,
        best_theta: best_theta.rem_euclid(TAU),
        best_energy,
        refinements,
    })
}
