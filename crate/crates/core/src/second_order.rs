//! Vicinities of vicinities and the two-pass match decision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Constellation, Minutia, Point, ScoreParams};
use crate::vicinity::{
    extract_from_points, extract_vicinities, feature_vector_from_vicinities, hamming,
    select_representatives, DbConfig, FeatureVector, RepresentativeDB, Vicinity,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderParams {
    pub rho1: f64,
    pub rho2: f64,
    /// Neighbour-count bounds for a significant vicinity (center excluded).
    pub l_min: usize,
    pub l_max: usize,
    /// Largest accepted first-order Hamming distance.
    pub t1: usize,
    /// Largest accepted second-order Hamming distance.
    pub t2: usize,
    /// Score threshold for first-order feature bits.
    pub bit_t1: f64,
    /// Score threshold for second-order feature bits.
    pub bit_t2: f64,
}

impl Default for SecondOrderParams {
    fn default() -> Self {
        let rho1 = 75.0;
        let rho2 = 2.0 * rho1;
        SecondOrderParams {
            rho1,
            rho2,
            l_min: 3,
            l_max: 8,
            t1: 3,
            t2: 4,
            bit_t1: rho1 * rho1 / 4.0,
            bit_t2: rho2 * rho2 / 4.0,
        }
    }
}

impl SecondOrderParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho1 > 0.0 && self.rho2 > self.rho1 && self.rho2.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "need 0 < rho1 < rho2, got {} and {}",
                self.rho1, self.rho2
            )));
        }
        if self.l_min > self.l_max {
            return Err(Error::InvalidParams("l_min exceeds l_max".into()));
        }
        if !(self.bit_t1 > 0.0 && self.bit_t2 > 0.0) {
            return Err(Error::InvalidParams("bit thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Keep vicinities with `l_min..=l_max` neighbours, then walk them by
/// descending neighbour count (ties by source index) and drop any whose
/// center lies strictly inside an already kept vicinity.
pub fn filter_significant(vs: &[Vicinity], l_min: usize, l_max: usize) -> Vec<Vicinity> {
    let mut cands: Vec<&Vicinity> = vs
        .iter()
        .filter(|v| (l_min..=l_max).contains(&v.neighbor_count()))
        .collect();
    cands.sort_by(|a, b| {
        b.neighbor_count()
            .cmp(&a.neighbor_count())
            .then(a.source_index.cmp(&b.source_index))
    });
    let mut kept: Vec<Vicinity> = Vec::new();
    for v in cands {
        let inside = kept
            .iter()
            .any(|k| k.center.pos().dist(v.center.pos()) < k.rho);
        if !inside {
            kept.push(v.clone());
        }
    }
    kept
}

/// Mean member position in the global frame, carrying the center's orientation.
pub fn barycenter(v: &Vicinity) -> Minutia {
    let n = v.members.len() as f64;
    let local = v
        .members
        .iter()
        .fold(Point::ORIGIN, |acc, m| acc + m.pos())
        * (1.0 / n);
    let g = v.center.pos() + local.rotated(v.center.theta);
    Minutia::new(g.x, g.y, v.center.theta)
}

/// First-order extraction at `rho1`, significance filtering, barycenter
/// reduction, then extraction at `rho2` over the barycenters.
pub fn extract_second_order(c: &Constellation, p: &SecondOrderParams) -> Vec<Vicinity> {
    let first = extract_vicinities(c, p.rho1);
    second_order_from(&first, p)
}

pub fn second_order_from(first: &[Vicinity], p: &SecondOrderParams) -> Vec<Vicinity> {
    let kept = filter_significant(first, p.l_min, p.l_max);
    let bary: Vec<Minutia> = kept.iter().map(barycenter).collect();
    extract_from_points(&bary, p.rho2, 2)
}

/// Representatives for order-2 vicinities drawn from a pool. The radius and
/// the score parameters are rescaled to `p.rho2` (and `d_min` to its `K_NA`),
/// so the second pass is the first pass run at a larger scale.
pub fn build_second_order_db(
    pool: &[Constellation],
    p: &SecondOrderParams,
    cfg: &DbConfig,
) -> Result<RepresentativeDB> {
    p.validate()?;
    let params = ScoreParams::for_radius(p.rho2);
    let cfg = DbConfig {
        rho: p.rho2,
        d_min: params.k_na,
        params,
        ..cfg.clone()
    };
    let cands = pool
        .iter()
        .flat_map(|c| extract_second_order(c, p))
        .collect();
    select_representatives(cands, &cfg, 2)
}

/// First- and second-order feature vectors of one constellation.
pub fn two_pass_vectors(
    c: &Constellation,
    db1: &RepresentativeDB,
    db2: &RepresentativeDB,
    p: &SecondOrderParams,
) -> Result<(FeatureVector, FeatureVector)> {
    p.validate()?;
    if db1.rho != p.rho1 || db2.rho != p.rho2 {
        return Err(Error::InvalidParams(format!(
            "databases built at radii ({}, {}) but parameters use ({}, {})",
            db1.rho, db2.rho, p.rho1, p.rho2
        )));
    }
    let first = extract_vicinities(c, p.rho1);
    let second = second_order_from(&first, p);
    Ok((
        feature_vector_from_vicinities(&first, db1, p.bit_t1),
        feature_vector_from_vicinities(&second, db2, p.bit_t2),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoPassDecision {
    pub is_match: bool,
    pub hamming1: usize,
    pub hamming2: usize,
}

/// Match iff both `hamming1 <= t1` and `hamming2 <= t2`.
pub fn decide(h1: usize, h2: usize, p: &SecondOrderParams) -> TwoPassDecision {
    TwoPassDecision {
        is_match: h1 <= p.t1 && h2 <= p.t2,
        hamming1: h1,
        hamming2: h2,
    }
}

pub fn match_two_pass(
    candidate: &Constellation,
    template: &Constellation,
    db1: &RepresentativeDB,
    db2: &RepresentativeDB,
    p: &SecondOrderParams,
) -> Result<TwoPassDecision> {
    let (c1, c2) = two_pass_vectors(candidate, db1, db2, p)?;
    let (t1, t2) = two_pass_vectors(template, db1, db2, p)?;
    Ok(decide(hamming(&c1, &t1)?, hamming(&c2, &t2)?, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{angle_diff, from_local_frame, RigidTransform};
    use crate::synth::generate;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::TAU;

    fn cluster(at: Point, turn: f64) -> Vec<Minutia> {
        // 5 minutiae within 20 px of `at`
        [(0.0, 0.0, 0.3), (12.0, 4.0, 1.1), (-6.0, 11.0, 2.0), (3.0, -14.0, 4.0), (-13.0, -5.0, 5.5)]
            .iter()
            .map(|&(x, y, t)| {
                let p = Point::new(x, y).rotated(turn) + at;
                Minutia::new(p.x, p.y, t + turn)
            })
            .collect()
    }

    #[test]
    fn too_small_vicinities_are_all_dropped() {
        let c = generate(10, 2000.0, 2000.0, 300.0, 1).unwrap();
        let vs = extract_vicinities(&c, 75.0);
        assert!(filter_significant(&vs, 1, 8).is_empty());
    }

    #[test]
    fn tie_keeps_lower_source_index() {
        let c = Constellation::new("pair", cluster(Point::new(0.0, 0.0), 0.0)).unwrap();
        let vs = extract_vicinities(&c, 75.0);
        let kept = filter_significant(&vs, 1, 8);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].source_index, 0);
    }

    #[test]
    fn kept_centers_are_pairwise_separated() {
        for seed in 0..10 {
            let c = generate(40, 320.0, 400.0, 8.0, seed).unwrap();
            let rho = 75.0;
            let kept = filter_significant(&extract_vicinities(&c, rho), 3, 8);
            for (i, a) in kept.iter().enumerate() {
                assert!((3..=8).contains(&a.neighbor_count()));
                for b in &kept[i + 1..] {
                    assert!(a.center.pos().dist(b.center.pos()) >= rho);
                }
            }
        }
    }

    #[test]
    fn barycenter_examples() {
        let solo = Constellation::new("solo", vec![Minutia::new(4.0, 5.0, 1.0)]).unwrap();
        let v = &extract_vicinities(&solo, 10.0)[0];
        let b = barycenter(v);
        assert_abs_diff_eq!(b.x, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.y, 5.0, epsilon = 1e-12);
        assert_eq!(b.theta, 1.0);

        let sym = Constellation::new(
            "sym",
            vec![
                Minutia::new(10.0, 10.0, 0.4),
                Minutia::new(15.0, 12.0, 2.0),
                Minutia::new(5.0, 8.0, 3.0),
            ],
        )
        .unwrap();
        let v = &extract_vicinities(&sym, 50.0)[0];
        let b = barycenter(v);
        assert_abs_diff_eq!(b.x, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.y, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn barycenter_agrees_with_global_average() {
        let c = generate(30, 300.0, 300.0, 5.0, 3).unwrap();
        for v in extract_vicinities(&c, 75.0) {
            let globals: Vec<Minutia> = v.members.iter().map(|m| from_local_frame(&v.center, m)).collect();
            let n = globals.len() as f64;
            let (mx, my) = globals.iter().fold((0.0, 0.0), |(x, y), m| (x + m.x, y + m.y));
            let b = barycenter(&v);
            assert_abs_diff_eq!(b.x, mx / n, epsilon = 1e-9);
            assert_abs_diff_eq!(b.y, my / n, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_significant_vicinity_gives_one_singleton() {
        let c = Constellation::new("one", cluster(Point::new(100.0, 100.0), 0.5)).unwrap();
        let p = SecondOrderParams {
            l_min: 1,
            ..SecondOrderParams::default()
        };
        let v2 = extract_second_order(&c, &p);
        assert_eq!(v2.len(), 1);
        assert_eq!(v2[0].members.len(), 1);
        assert_eq!(v2[0].order, 2);
    }

    #[test]
    fn separation_changes_second_order_only() {
        let p = SecondOrderParams {
            l_min: 1,
            ..SecondOrderParams::default()
        };
        let build = |gap: f64| {
            let mut m = cluster(Point::new(0.0, 0.0), 0.0);
            m.extend(cluster(Point::new(gap, 0.0), 0.0));
            Constellation::new("two", m).unwrap()
        };
        let near = build(110.0);
        let far = build(140.0);
        let v_near = extract_vicinities(&near, p.rho1);
        let v_far = extract_vicinities(&far, p.rho1);
        for (a, b) in v_near.iter().zip(&v_far) {
            assert_eq!(a.members.len(), b.members.len());
            for (x, y) in a.members.iter().zip(&b.members) {
                assert_abs_diff_eq!(x.x, y.x, epsilon = 1e-9);
                assert_abs_diff_eq!(x.y, y.y, epsilon = 1e-9);
            }
        }
        let s_near = extract_second_order(&near, &p);
        let s_far = extract_second_order(&far, &p);
        assert_eq!(s_near[0].members.len(), 2);
        assert_eq!(s_far[0].members.len(), 2);
        assert!((s_near[0].members[1].x - s_far[0].members[1].x).abs() > 20.0);
    }

    #[test]
    fn second_order_is_rigid_invariant() {
        let p = SecondOrderParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for seed in 0..10 {
            let c = generate(40, 320.0, 400.0, 8.0, 40 + seed).unwrap();
            let t = RigidTransform::new(
                rng.random_range(-300.0..300.0),
                rng.random_range(-300.0..300.0),
                rng.random_range(0.0..TAU),
            );
            let a = extract_second_order(&c, &p);
            let b = extract_second_order(&c.transformed(&t), &p);
            assert_eq!(a.len(), b.len());
            for (va, vb) in a.iter().zip(&b) {
                assert_eq!(va.members.len(), vb.members.len());
                for (x, y) in va.members.iter().zip(&vb.members) {
                    assert!((x.x - y.x).abs() < 1e-6 && (x.y - y.y).abs() < 1e-6);
                    assert!(angle_diff(x.theta, y.theta).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn params_validation() {
        let bad = SecondOrderParams {
            rho2: 50.0,
            ..SecondOrderParams::default()
        };
        assert!(bad.validate().is_err());
        assert!(SecondOrderParams::default().validate().is_ok());
    }

    #[test]
    fn decision_is_logical_and() {
        let p = SecondOrderParams::default();
        for h1 in 0..30 {
            for h2 in 0..30 {
                let d = decide(h1, h2, &p);
                assert_eq!(d.is_match, h1 <= p.t1 && h2 <= p.t2);
                if h1 > p.t1 {
                    assert!(!d.is_match);
                }
            }
        }
    }
}
