//! Missing-minutia analysis.
//!
//! When several template vicinities each lose exactly the same member in
//! their paired candidate vicinity, and the rest of each pair associates
//! cleanly, the shared member was most likely occluded in the candidate. The
//! hypothesized minutia is located in the candidate frame, and the penalties
//! it explains can be forgiven.

use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::error::{Error, Result};
use crate::geom::{from_local_frame, to_local_frame, Constellation, Minutia, Point, ScoreParams};
use crate::vicinity::{
    binarize, combine, extract_vicinities, vicinity_score, FeatureVector, RepresentativeDB,
    Vicinity, VicinityScore,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingParams {
    /// Clustering radius, px.
    pub eps_miss: f64,
    /// Largest number of missing members considered per vicinity (1 or 2).
    pub k_max: usize,
    /// A score is penalty-dominated when `associated ≤ ratio · penalty`.
    pub penalty_dominance_ratio: f64,
    /// Also look for spurious candidate minutiae (members the template lacks).
    #[serde(default)]
    pub include_spurious: bool,
}

impl Default for MissingParams {
    fn default() -> Self {
        MissingParams {
            eps_miss: 10.0,
            k_max: 2,
            penalty_dominance_ratio: 0.25,
            include_spurious: false,
        }
    }
}

impl MissingParams {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.k_max) {
            return Err(Error::InvalidParams(format!("k_max must be 1 or 2, got {}", self.k_max)));
        }
        if !(self.eps_miss > 0.0 && self.penalty_dominance_ratio >= 0.0) {
            return Err(Error::InvalidParams(
                "eps_miss must be positive and the dominance ratio non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParts {
    pub associated_cost: f64,
    pub penalty_cost: f64,
    pub penalty_dominated: bool,
}

pub fn score_decompose(sc: &VicinityScore, p: &ScoreParams, ratio: f64) -> ScoreParts {
    let penalty_cost = sc.unassociated() as f64 * p.k_na;
    ScoreParts {
        associated_cost: sc.associated_cost,
        penalty_cost,
        penalty_dominated: penalty_cost > 0.0 && sc.associated_cost <= ratio * penalty_cost,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypothesisKind {
    /// Present in the template, lost in the candidate.
    Missing,
    /// Present in the candidate only.
    Spurious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingHypothesis {
    /// Candidate global frame.
    pub x: f64,
    pub y: f64,
    /// Circular mean of the supporters' implied orientations; informational only.
    pub theta: f64,
    /// `(template vicinity, candidate vicinity)` pairs that imply this minutia.
    pub supporters: Vec<(usize, usize)>,
    #[serde(rename = "forgiven")]
    pub forgiven_penalty: f64,
    pub kind: HypothesisKind,
}

impl MissingHypothesis {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingReport {
    pub hypotheses: Vec<MissingHypothesis>,
    pub k_na: f64,
    pub params: MissingParams,
}

impl MissingReport {
    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn forgiven_total(&self) -> f64 {
        self.hypotheses.iter().map(|h| h.forgiven_penalty).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything computed while looking for missing minutiae.
#[derive(Debug, Clone)]
pub struct MissingAnalysis {
    pub template_vicinities: Vec<Vicinity>,
    pub candidate_vicinities: Vec<Vicinity>,
    /// Candidate vicinity paired with each template vicinity.
    pub paired_with: Vec<Option<usize>>,
    /// One score per template vicinity; unpaired ones carry every member as unassociated.
    pub scores: Vec<VicinityScore>,
    pub report: MissingReport,
}

impl MissingAnalysis {
    /// Fraction of template vicinities whose paired score is below `t`.
    pub fn agreement(&self, scores: &[VicinityScore], t: f64) -> f64 {
        if scores.is_empty() {
            return 0.0;
        }
        scores.iter().filter(|s| s.value < t).count() as f64 / scores.len() as f64
    }
}

struct Proposal {
    pos: Point,
    theta: f64,
    supporter: (usize, usize),
    kind: HypothesisKind,
}

pub fn detect_missing(
    candidate: &Constellation,
    template: &Constellation,
    rho: f64,
    sp: &ScoreParams,
    mp: &MissingParams,
) -> Result<MissingReport> {
    Ok(analyze(candidate, template, rho, sp, mp)?.report)
}

/// Pair vicinities greedily, collect per-pair hypotheses for penalty-dominated
/// pairs, cluster them, and keep clusters with at least two supporters.
pub fn analyze(
    candidate: &Constellation,
    template: &Constellation,
    rho: f64,
    sp: &ScoreParams,
    mp: &MissingParams,
) -> Result<MissingAnalysis> {
    mp.validate()?;
    sp.validate()?;
    let tv = extract_vicinities(template, rho);
    let cv = extract_vicinities(candidate, rho);

    // Greedy one-to-one pairing by ascending score, ties by index.
    let mut all: Vec<(f64, usize, usize, VicinityScore)> = Vec::with_capacity(tv.len() * cv.len());
    for (i, t) in tv.iter().enumerate() {
        for (j, c) in cv.iter().enumerate() {
            let s = vicinity_score(t, c, sp);
            all.push((s.value, i, j, s));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut paired_with = vec![None; tv.len()];
    let mut scores: Vec<Option<VicinityScore>> = vec![None; tv.len()];
    let mut used = vec![false; cv.len()];
    for (_, i, j, s) in all {
        if paired_with[i].is_none() && !used[j] {
            paired_with[i] = Some(j);
            used[j] = true;
            scores[i] = Some(s);
        }
    }
    let scores: Vec<VicinityScore> = scores
        .into_iter()
        .zip(&tv)
        .map(|(s, t)| s.unwrap_or_else(|| unpaired_score(t, sp)))
        .collect();

    let mut proposals = Vec::new();
    for (i, j) in paired_with.iter().enumerate() {
        let Some(j) = *j else { continue };
        let sc = &scores[i];
        if !score_decompose(sc, sp, mp.penalty_dominance_ratio).penalty_dominated {
            continue;
        }
        let (t, c) = (&tv[i], &cv[j]);
        let lost = sc.unmatched_first(t.members.len());
        if (1..=mp.k_max).contains(&lost.len()) {
            for subset in subsets_up_to(&lost, mp.k_max) {
                for &k in &subset {
                    let g = from_local_frame(&c.center, &t.members[k]);
                    proposals.push(Proposal {
                        pos: g.pos(),
                        theta: g.theta,
                        supporter: (i, j),
                        kind: HypothesisKind::Missing,
                    });
                }
            }
        }
        if mp.include_spurious {
            let extra = sc.unmatched_second(c.members.len());
            if (1..=mp.k_max).contains(&extra.len()) {
                for k in extra {
                    let g = from_local_frame(&c.center, &c.members[k]);
                    proposals.push(Proposal {
                        pos: g.pos(),
                        theta: g.theta,
                        supporter: (i, j),
                        kind: HypothesisKind::Spurious,
                    });
                }
            }
        }
    }

    // A "lost" member that the candidate actually has nearby fell outside the
    // radius through noise; it is not an occlusion.
    let existing = candidate.minutiae();
    proposals.retain(|p| {
        p.kind == HypothesisKind::Spurious
            || existing.iter().all(|m| m.pos().dist(p.pos) >= 0.5 * mp.eps_miss)
    });
    // The same (pair, position) can be produced by several subsets.
    proposals.dedup_by(|a, b| a.supporter == b.supporter && a.kind == b.kind && a.pos == b.pos);

    let mut hypotheses = Vec::new();
    for kind in [HypothesisKind::Missing, HypothesisKind::Spurious] {
        let group: Vec<&Proposal> = proposals.iter().filter(|p| p.kind == kind).collect();
        for cluster in single_linkage(&group, mp.eps_miss) {
            if let Some(h) = summarize(&cluster, mp.eps_miss, sp.k_na, kind) {
                hypotheses.push(h);
            }
        }
    }
    hypotheses.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));

    Ok(MissingAnalysis {
        template_vicinities: tv,
        candidate_vicinities: cv,
        paired_with,
        scores,
        report: MissingReport {
            hypotheses,
            k_na: sp.k_na,
            params: *mp,
        },
    })
}

fn unpaired_score(t: &Vicinity, sp: &ScoreParams) -> VicinityScore {
    let n = t.members.len();
    VicinityScore {
        value: combine(0.0, n, sp.k_na),
        associated_cost: 0.0,
        nar: n,
        nas: 0,
        forgiven: 0,
        pairs: Vec::new(),
        assignment: Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
            padded_cost: 0.0,
            unassigned_rows: (0..n).collect(),
            unassigned_cols: Vec::new(),
        },
    }
}

/// Non-empty subsets of `items` with at most `k` elements.
fn subsets_up_to(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 1u32..(1 << items.len()) {
        if mask.count_ones() as usize <= k {
            out.push(
                items
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask >> b & 1 == 1)
                    .map(|(_, &v)| v)
                    .collect(),
            );
        }
    }
    out
}

fn single_linkage<'a>(points: &[&'a Proposal], eps: f64) -> Vec<Vec<&'a Proposal>> {
    let n = points.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if points[i].pos.dist(points[j].pos) <= eps {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                if a != b {
                    label[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<&Proposal>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut label, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[root_slot[r]].push(points[i]);
    }
    clusters
}

/// Trim members farther than `eps` from the cluster mean until stable, then
/// require two distinct supporting vicinity pairs.
fn summarize(cluster: &[&Proposal], eps: f64, k_na: f64, kind: HypothesisKind) -> Option<MissingHypothesis> {
    let mut members: Vec<&Proposal> = cluster.to_vec();
    loop {
        if members.is_empty() {
            return None;
        }
        let n = members.len() as f64;
        let mean = members.iter().fold(Point::ORIGIN, |acc, p| acc + p.pos) * (1.0 / n);
        let before = members.len();
        members.retain(|p| p.pos.dist(mean) <= eps);
        if members.len() == before {
            let mut supporters: Vec<(usize, usize)> = members.iter().map(|p| p.supporter).collect();
            supporters.sort_unstable();
            supporters.dedup();
            if supporters.len() < 2 {
                return None;
            }
            let (s, c) = members
                .iter()
                .fold((0.0, 0.0), |(s, c), p| (s + p.theta.sin(), c + p.theta.cos()));
            let theta = Minutia::new(0.0, 0.0, s.atan2(c)).theta;
            return Some(MissingHypothesis {
                x: mean.x,
                y: mean.y,
                theta,
                forgiven_penalty: k_na * supporters.len() as f64,
                supporters,
                kind,
            });
        }
    }
}

/// Indices of minutiae lying inside the vicinities of at least `k` other
/// minutiae, i.e. those whose loss would show up in `k` or more vicinities.
pub fn shared_minutiae(c: &Constellation, rho: f64, k: usize) -> Vec<usize> {
    let ms = c.minutiae();
    (0..ms.len())
        .filter(|&i| {
            ms.iter()
                .enumerate()
                .filter(|&(j, m)| j != i && m.pos().dist(ms[i].pos()) < rho)
                .count()
                >= k
        })
        .collect()
}

/// Forgive one non-association penalty per supporter occurrence, keyed by the
/// template vicinity index. Re-applying the same report changes nothing.
pub fn adjust_scores(scores: &[VicinityScore], report: &MissingReport) -> Result<Vec<VicinityScore>> {
    let mut occurrences = vec![0usize; scores.len()];
    for h in &report.hypotheses {
        for &(ti, _) in &h.supporters {
            *occurrences.get_mut(ti).ok_or(Error::UnknownScore(ti))? += 1;
        }
    }
    Ok(scores
        .iter()
        .zip(occurrences)
        .map(|(s, n)| {
            if n == 0 {
                s.clone()
            } else {
                forgive(s, n, report.k_na)
            }
        })
        .collect())
}

fn forgive(s: &VicinityScore, n: usize, k_na: f64) -> VicinityScore {
    let forgiven = n.min(s.unassociated());
    VicinityScore {
        value: combine(s.associated_cost, s.unassociated() - forgiven, k_na),
        forgiven,
        ..s.clone()
    }
}

/// Candidate feature vector where, for each vicinity that supports a
/// missing-minutia hypothesis, a representative's unassociated member lying
/// within `eps_miss` of the hypothesized position is not penalized.
pub fn adjusted_feature_vector(
    candidate: &Constellation,
    db: &RepresentativeDB,
    t: f64,
    report: &MissingReport,
) -> FeatureVector {
    let cv = extract_vicinities(candidate, db.rho);
    let mut holes: Vec<Vec<Point>> = vec![Vec::new(); cv.len()];
    for h in report.hypotheses.iter().filter(|h| h.kind == HypothesisKind::Missing) {
        let global = Minutia::new(h.x, h.y, h.theta);
        for &(_, j) in &h.supporters {
            if let Some(v) = cv.get(j) {
                holes[j].push(to_local_frame(&v.center, &global).pos());
            }
        }
    }
    let eps = report.params.eps_miss;
    let scores: Vec<f64> = db
        .reps
        .iter()
        .map(|rep| {
            cv.iter()
                .zip(&holes)
                .map(|(f, hs)| {
                    let s = vicinity_score(f, rep, &db.params);
                    if hs.is_empty() || s.nas == 0 {
                        return s.value;
                    }
                    let open = s.unmatched_second(rep.members.len());
                    let explained = hs
                        .iter()
                        .filter(|h| open.iter().any(|&k| rep.members[k].pos().dist(**h) <= eps))
                        .count();
                    forgive(&s, explained.min(s.nas), db.params.k_na).value
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    binarize(&scores, db, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, perturb, PerturbSpec, TransformSpec};

    fn params() -> (f64, ScoreParams, MissingParams) {
        let rho = 75.0;
        (rho, ScoreParams::for_radius(rho), MissingParams::default())
    }

    #[test]
    fn decompose_examples() {
        let (_, sp, _) = params();
        let mut s = unpaired_score(
            &extract_vicinities(&Constellation::new("x", vec![Minutia::new(0.0, 0.0, 0.0)]).unwrap(), 75.0)[0],
            &sp,
        );
        s.nar = 0;
        s.value = 0.0;
        let d = score_decompose(&s, &sp, 0.25);
        assert_eq!((d.associated_cost, d.penalty_cost, d.penalty_dominated), (0.0, 0.0, false));
        s.nar = 1;
        s.associated_cost = 1e-3;
        let d = score_decompose(&s, &sp, 0.25);
        assert_eq!(d.penalty_cost, sp.k_na);
        assert!(d.penalty_dominated);
    }

    #[test]
    fn decomposition_recomposes_value() {
        let (rho, sp, _) = params();
        let a = generate(30, 300.0, 300.0, 8.0, 1).unwrap();
        let b = generate(30, 300.0, 300.0, 8.0, 2).unwrap();
        let va = extract_vicinities(&a, rho);
        let vb = extract_vicinities(&b, rho);
        for x in &va {
            for y in &vb {
                let s = vicinity_score(x, y, &sp);
                let d = score_decompose(&s, &sp, 0.25);
                let sign = crate::vicinity::penalty_sign();
                assert!((d.associated_cost + sign * d.penalty_cost - s.value).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_constellations_give_empty_report() {
        let (rho, sp, mp) = params();
        let c = generate(35, 320.0, 400.0, 10.0, 3).unwrap();
        let r = detect_missing(&c, &c, rho, &sp, &mp).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn planted_shared_occlusion_is_recovered() {
        let (rho, sp, _) = params();
        for k_max in [1, 2] {
            let mp = MissingParams { k_max, ..MissingParams::default() };
            let mut hits = 0;
            for seed in 0..10 {
                let t = generate(35, 320.0, 400.0, 10.0, 100 + seed).unwrap();
                let spec = PerturbSpec {
                    transform: TransformSpec::Random { max_shift: 100.0 },
                    jitter_sigma: 0.5,
                    theta_jitter_sigma: 0.01,
                    occlusions: 1,
                    occlusion_pool: Some(shared_minutiae(&t, rho, 2)),
                    seed,
                    ..Default::default()
                };
                let (c, gt) = perturb(&t, &spec).unwrap();
                let truth = gt.removed[0].1.pos();
                let r = detect_missing(&c, &t, rho, &sp, &mp).unwrap();
                if r.hypotheses.iter().any(|h| h.position().dist(truth) <= mp.eps_miss && h.supporters.len() >= 2) {
                    hits += 1;
                }
            }
            assert!(hits >= 9, "k_max={k_max}: {hits}/10");
        }
    }

    #[test]
    fn single_vicinity_loss_is_not_enough() {
        let (rho, sp, mp) = params();
        // Minutia 3 sits within rho of minutia 0 only.
        let t = Constellation::new(
            "t",
            vec![
                Minutia::new(0.0, 0.0, 0.1),
                Minutia::new(-50.0, 10.0, 1.0),
                Minutia::new(-20.0, -45.0, 2.0),
                Minutia::new(60.0, 0.0, 3.0),
            ],
        )
        .unwrap();
        let c = Constellation::new("c", t.minutiae()[..3].to_vec()).unwrap();
        let r = detect_missing(&c, &t, rho, &sp, &mp).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn adjust_examples() {
        let (rho, sp, mp) = params();
        let t = generate(35, 320.0, 400.0, 10.0, 7).unwrap();
        let spec = PerturbSpec {
            occlusions: 1,
            occlusion_pool: Some(shared_minutiae(&t, rho, 3)),
            seed: 2,
            ..Default::default()
        };
        let (c, _) = perturb(&t, &spec).unwrap();
        let a = analyze(&c, &t, rho, &sp, &mp).unwrap();
        assert_eq!(adjust_scores(&a.scores, &MissingReport { hypotheses: vec![], ..a.report.clone() }).unwrap(), a.scores);

        assert!(!a.report.is_empty());
        let adjusted = adjust_scores(&a.scores, &a.report).unwrap();
        let occurrences: usize = a.report.hypotheses.iter().map(|h| h.supporters.len()).sum();
        let changed: Vec<usize> = (0..a.scores.len()).filter(|&i| adjusted[i] != a.scores[i]).collect();
        assert_eq!(changed.len(), occurrences);
        for &i in &changed {
            assert_eq!(a.scores[i].value - adjusted[i].value, sp.k_na);
            assert!(adjusted[i].value >= adjusted[i].associated_cost);
        }
        // idempotent
        assert_eq!(adjust_scores(&adjusted, &a.report).unwrap(), adjusted);

        let mut bogus = a.report.clone();
        bogus.hypotheses[0].supporters.push((10_000, 0));
        assert!(matches!(adjust_scores(&a.scores, &bogus), Err(Error::UnknownScore(10_000))));
    }

    #[test]
    fn report_json_shape() {
        let r = MissingReport {
            hypotheses: vec![MissingHypothesis {
                x: 1.0,
                y: 2.0,
                theta: 0.5,
                supporters: vec![(0, 1), (2, 3)],
                forgiven_penalty: 10.0,
                kind: HypothesisKind::Missing,
            }],
            k_na: 5.0,
            params: MissingParams::default(),
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        let h = &v["hypotheses"][0];
        for key in ["x", "y", "theta", "supporters", "forgiven"] {
            assert!(h.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn k_max_is_validated() {
        let (rho, sp, _) = params();
        let c = generate(5, 100.0, 100.0, 5.0, 1).unwrap();
        let bad = MissingParams { k_max: 3, ..MissingParams::default() };
        assert!(detect_missing(&c, &c, rho, &sp, &bad).is_err());
    }
}
