//! Seeded synthetic constellations and perturbations.
//!
//! All randomness comes from ChaCha8 seeded with a `u64`, so a seed
//! reproduces the same output on every platform.

use std::f64::consts::{PI, TAU};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Constellation, Minutia, Point, RigidTransform, DUPLICATE_EPS};

const MAX_ATTEMPTS: usize = 1_000_000;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` minutiae uniform in `[0, width) × [0, height)` with pairwise
/// separation `>= min_sep` and uniform orientation.
pub fn generate(n: usize, width: f64, height: f64, min_sep: f64, seed: u64) -> Result<Constellation> {
    let mut rng = rng_from_seed(seed);
    let minutiae = place(&mut rng, n, width, height, min_sep, &[])?;
    Constellation::new(format!("synth-{seed}"), minutiae)
}

fn place(
    rng: &mut ChaCha8Rng,
    n: usize,
    width: f64,
    height: f64,
    min_sep: f64,
    existing: &[Minutia],
) -> Result<Vec<Minutia>> {
    let sep = min_sep.max(DUPLICATE_EPS);
    let mut out: Vec<Minutia> = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts == MAX_ATTEMPTS {
            return Err(Error::Placement {
                wanted: n,
                placed: out.len(),
                min_sep,
            });
        }
        attempts += 1;
        let p = Point::new(rng.random_range(0.0..width), rng.random_range(0.0..height));
        let clear = existing
            .iter()
            .chain(out.iter())
            .all(|m| m.pos().dist(p) >= sep);
        if clear {
            out.push(Minutia::new(p.x, p.y, rng.random_range(0.0..TAU)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TransformSpec {
    Fixed(RigidTransform),
    /// Uniform rotation in `[0, 2π)` and translation in `[-max_shift, max_shift]²`.
    Random { max_shift: f64 },
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec::Fixed(RigidTransform::IDENTITY)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub transform: TransformSpec,
    pub jitter_sigma: f64,
    pub theta_jitter_sigma: f64,
    pub occlusions: usize,
    /// Restricts which source indices may be occluded; all when `None`.
    #[serde(default)]
    pub occlusion_pool: Option<Vec<usize>>,
    pub spurious: usize,
    pub distortion_amp: f64,
    pub distortion_scale: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn rigid(t: RigidTransform) -> Self {
        PerturbSpec {
            transform: TransformSpec::Fixed(t),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub transform: RigidTransform,
    /// `(source index, where it would have landed)` for each occluded minutia.
    pub removed: Vec<(usize, Minutia)>,
    /// Output indices of inserted spurious minutiae.
    pub added: Vec<usize>,
    /// For each output minutia, its source index (`None` for spurious ones).
    pub source_of: Vec<Option<usize>>,
}

/// One smooth displacement field `amp · e · sin(2π (u·p) / λ + φ)`.
struct Wave {
    dir: Point,
    disp: Point,
    phase: f64,
}

/// Distortion, jitter, rigid motion, occlusion, then spurious insertion.
pub fn perturb(c: &Constellation, spec: &PerturbSpec) -> Result<(Constellation, GroundTruth)> {
    if spec.occlusions > 0 && spec.occlusions >= c.len() {
        return Err(Error::InvalidParams(format!(
            "cannot occlude {} of {} minutiae",
            spec.occlusions,
            c.len()
        )));
    }
    let mut rng = rng_from_seed(spec.seed);
    let mut pts: Vec<Minutia> = c.minutiae().to_vec();

    if spec.distortion_amp > 0.0 {
        if spec.distortion_scale <= 0.0 {
            return Err(Error::InvalidParams("distortion scale must be positive".into()));
        }
        let waves: Vec<Wave> = (0..2)
            .map(|_| {
                let a = rng.random_range(0.0..TAU);
                let b = rng.random_range(0.0..TAU);
                Wave {
                    dir: Point::new(a.cos(), a.sin()),
                    disp: Point::new(b.cos(), b.sin()),
                    phase: rng.random_range(0.0..TAU),
                }
            })
            .collect();
        for m in &mut pts {
            let p = m.pos();
            let mut d = Point::ORIGIN;
            for w in &waves {
                let arg = 2.0 * PI * w.dir.dot(p) / spec.distortion_scale + w.phase;
                d += w.disp * (spec.distortion_amp * arg.sin());
            }
            *m = Minutia::new(p.x + d.x, p.y + d.y, m.theta);
        }
    }

    if spec.jitter_sigma > 0.0 || spec.theta_jitter_sigma > 0.0 {
        let pos = Normal::new(0.0, spec.jitter_sigma.max(0.0))
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        let ang = Normal::new(0.0, spec.theta_jitter_sigma.max(0.0))
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        for m in &mut pts {
            let dx = pos.sample(&mut rng);
            let dy = pos.sample(&mut rng);
            let dt = ang.sample(&mut rng);
            *m = Minutia::new(m.x + dx, m.y + dy, m.theta + dt);
        }
    }

    let transform = match &spec.transform {
        TransformSpec::Fixed(t) => *t,
        TransformSpec::Random { max_shift } => {
            let s = max_shift.abs();
            let (dx, dy) = if s > 0.0 {
                (rng.random_range(-s..=s), rng.random_range(-s..=s))
            } else {
                (0.0, 0.0)
            };
            RigidTransform::new(dx, dy, rng.random_range(0.0..TAU))
        }
    };
    for m in &mut pts {
        *m = transform.apply_minutia(m);
    }

    let mut removed = Vec::new();
    if spec.occlusions > 0 {
        let pool: Vec<usize> = match &spec.occlusion_pool {
            Some(p) => p.iter().copied().filter(|&i| i < pts.len()).collect(),
            None => (0..pts.len()).collect(),
        };
        if pool.len() < spec.occlusions {
            return Err(Error::InvalidParams(format!(
                "occlusion pool has {} entries, {} requested",
                pool.len(),
                spec.occlusions
            )));
        }
        let mut picked: Vec<usize> = sample(&mut rng, pool.len(), spec.occlusions)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        picked.sort_unstable();
        removed = picked.iter().map(|&i| (i, pts[i])).collect();
    }
    let mut out = Vec::with_capacity(pts.len() + spec.spurious);
    let mut source_of = Vec::with_capacity(pts.len() + spec.spurious);
    for (i, m) in pts.iter().enumerate() {
        if removed.iter().all(|&(r, _)| r != i) {
            out.push(*m);
            source_of.push(Some(i));
        }
    }

    let mut added = Vec::new();
    if spec.spurious > 0 {
        let (lo, hi) = bounds(&out);
        let extra = place_in(&mut rng, spec.spurious, lo, hi, &out)?;
        for m in extra {
            added.push(out.len());
            out.push(m);
            source_of.push(None);
        }
    }

    let perturbed = Constellation::new(c.id.clone(), out)?;
    Ok((
        perturbed,
        GroundTruth {
            transform,
            removed,
            added,
            source_of,
        },
    ))
}

fn bounds(pts: &[Minutia]) -> (Point, Point) {
    if pts.is_empty() {
        return (Point::ORIGIN, Point::new(1.0, 1.0));
    }
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for m in pts {
        lo = Point::new(lo.x.min(m.x), lo.y.min(m.y));
        hi = Point::new(hi.x.max(m.x), hi.y.max(m.y));
    }
    // avoid an empty sampling range for degenerate layouts
    if hi.x - lo.x < 1.0 {
        hi.x = lo.x + 1.0;
    }
    if hi.y - lo.y < 1.0 {
        hi.y = lo.y + 1.0;
    }
    (lo, hi)
}

fn place_in(
    rng: &mut ChaCha8Rng,
    n: usize,
    lo: Point,
    hi: Point,
    existing: &[Minutia],
) -> Result<Vec<Minutia>> {
    let shifted: Vec<Minutia> = existing
        .iter()
        .map(|m| Minutia::new(m.x - lo.x, m.y - lo.y, m.theta))
        .collect();
    let placed = place(rng, n, hi.x - lo.x, hi.y - lo.y, DUPLICATE_EPS, &shifted)?;
    Ok(placed
        .into_iter()
        .map(|m| Minutia::new(m.x + lo.x, m.y + lo.y, m.theta))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spring::kabsch_align;
    use approx::assert_abs_diff_eq;

    #[test]
    fn generate_edge_cases() {
        assert!(generate(0, 100.0, 100.0, 5.0, 1).unwrap().is_empty());
        let one = generate(1, 100.0, 50.0, 5.0, 1).unwrap();
        let m = one.minutiae()[0];
        assert!((0.0..100.0).contains(&m.x) && (0.0..50.0).contains(&m.y));
    }

    #[test]
    fn generate_respects_separation() {
        let c = generate(40, 300.0, 300.0, 10.0, 2).unwrap();
        assert_eq!(c.len(), 40);
        for (i, a) in c.minutiae().iter().enumerate() {
            for b in &c.minutiae()[i + 1..] {
                assert!(a.pos().dist(b.pos()) >= 10.0);
            }
            assert!((0.0..TAU).contains(&a.theta));
        }
    }

    #[test]
    fn generate_reports_impossible_packing() {
        assert!(matches!(
            generate(50, 10.0, 10.0, 5.0, 0),
            Err(Error::Placement { .. })
        ));
    }

    #[test]
    fn same_seed_same_output() {
        assert_eq!(
            generate(30, 300.0, 300.0, 5.0, 7).unwrap(),
            generate(30, 300.0, 300.0, 5.0, 7).unwrap()
        );
        let c = generate(30, 300.0, 300.0, 5.0, 7).unwrap();
        let spec = PerturbSpec {
            transform: TransformSpec::Random { max_shift: 50.0 },
            jitter_sigma: 2.0,
            theta_jitter_sigma: 0.1,
            occlusions: 2,
            spurious: 3,
            distortion_amp: 3.0,
            distortion_scale: 150.0,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(perturb(&c, &spec).unwrap(), perturb(&c, &spec).unwrap());
    }

    #[test]
    fn zero_spec_is_identity() {
        let c = generate(20, 300.0, 300.0, 5.0, 3).unwrap();
        let (out, gt) = perturb(&c, &PerturbSpec::default()).unwrap();
        assert_eq!(out, c);
        assert!(gt.removed.is_empty() && gt.added.is_empty());
    }

    #[test]
    fn rigid_spec_is_recovered_by_alignment() {
        let c = generate(25, 300.0, 300.0, 5.0, 4).unwrap();
        let t = RigidTransform::new(40.0, -13.0, 2.2);
        let (out, gt) = perturb(&c, &PerturbSpec::rigid(t)).unwrap();
        assert_eq!(gt.transform, t);
        let (found, residual) = kabsch_align(&c.positions(), &out.positions()).unwrap();
        assert_abs_diff_eq!(found.dx, t.dx, epsilon = 1e-6);
        assert_abs_diff_eq!(found.dy, t.dy, epsilon = 1e-6);
        assert_abs_diff_eq!(found.theta, t.theta, epsilon = 1e-6);
        assert!(residual < 1e-6);
    }

    #[test]
    fn occlusion_and_spurious_ground_truth() {
        let c = generate(20, 300.0, 300.0, 5.0, 5).unwrap();
        let spec = PerturbSpec {
            occlusions: 1,
            occlusion_pool: Some(vec![7]),
            spurious: 2,
            seed: 1,
            ..Default::default()
        };
        let (out, gt) = perturb(&c, &spec).unwrap();
        assert_eq!(out.len(), 21);
        assert_eq!(gt.removed, vec![(7, c.minutiae()[7])]);
        assert_eq!(gt.added, vec![19, 20]);
        assert_eq!(gt.source_of[7], Some(8));
        assert!(gt.source_of[19].is_none());

        let too_many = PerturbSpec {
            occlusions: 20,
            ..Default::default()
        };
        assert!(perturb(&c, &too_many).is_err());
    }

    #[test]
    fn distortion_is_bounded_by_amplitude() {
        let c = generate(20, 300.0, 300.0, 5.0, 6).unwrap();
        let spec = PerturbSpec {
            distortion_amp: 4.0,
            distortion_scale: 200.0,
            seed: 2,
            ..Default::default()
        };
        let (out, _) = perturb(&c, &spec).unwrap();
        let mut moved = false;
        for (a, b) in c.minutiae().iter().zip(out.minutiae()) {
            let d = a.pos().dist(b.pos());
            assert!(d <= 8.0 + 1e-9);
            moved |= d > 1e-3;
        }
        assert!(moved);
    }
}
