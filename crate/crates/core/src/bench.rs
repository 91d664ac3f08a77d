//! Synthetic matching benchmarks: genuine/impostor score distributions,
//! FAR/FRR tables and the effect of missing-minutia forgiveness on FRR.
//!
//! Every matcher reports a dissimilarity, so a pair is accepted at threshold
//! `h` when its score is `≤ h`.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Constellation, Point};
use crate::missing::{adjust_scores, analyze, shared_minutiae, MissingParams};
use crate::second_order::{build_second_order_db, two_pass_vectors, SecondOrderParams};
use crate::spring::{assemble, simulate, PhysicsParams};
use crate::synth::{generate, perturb, rng_from_seed, GroundTruth, PerturbSpec, TransformSpec};
use crate::vicinity::{build_representative_db, compute_feature_vector, hamming, DbConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    /// Hamming distance between first-order feature vectors.
    Vicinity,
    /// `max(h1 / t1, h2 / t2)`, so the two-pass decision is `score ≤ 1`.
    TwoPass,
    /// Settled spring energy per point, with correspondences taken from the
    /// ground truth (genuine) or by index (impostor).
    Spring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub subjects: usize,
    pub minutiae: usize,
    pub width: f64,
    pub height: f64,
    pub min_sep: f64,
    /// Applied to each subject to produce its genuine candidate. The seed is
    /// mixed with the subject index.
    pub genuine: PerturbSpec,
    /// Impostor pairs are sampled from all ordered pairs of distinct subjects.
    pub max_impostors: usize,
    /// Only occlude minutiae that sit inside at least two other vicinities.
    #[serde(default)]
    pub occlude_shared_only: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            subjects: 50,
            minutiae: 35,
            width: 320.0,
            height: 400.0,
            min_sep: 10.0,
            genuine: PerturbSpec {
                transform: TransformSpec::Random { max_shift: 100.0 },
                jitter_sigma: 1.0,
                theta_jitter_sigma: 0.02,
                ..Default::default()
            },
            max_impostors: 1000,
            occlude_shared_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub matcher: MatcherKind,
    pub corpus: CorpusSpec,
    pub db: DbConfig,
    /// Subjects generated (from a disjoint seed range) to build the databases.
    pub db_pool: usize,
    /// Score threshold for first-order feature bits.
    pub bit_threshold: f64,
    pub second_order: SecondOrderParams,
    pub db2_target: usize,
    /// Acceptance thresholds; every distinct observed score when empty.
    pub thresholds: Vec<f64>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let db = DbConfig::default();
        BenchConfig {
            matcher: MatcherKind::Vicinity,
            corpus: CorpusSpec::default(),
            bit_threshold: db.rho * db.rho / 4.0,
            db,
            db_pool: 40,
            second_order: SecondOrderParams::default(),
            db2_target: 64,
            thresholds: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Genuine,
    Impostor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair_id: String,
    pub kind: PairKind,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mid = v.len() / 2;
        let median = if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) };
        Some(Summary {
            count: v.len(),
            mean,
            std: var.sqrt(),
            min: v[0],
            median,
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub thresholds: Vec<f64>,
    /// Absent when there are no impostor pairs.
    pub far: Option<Vec<f64>>,
    pub frr: Vec<f64>,
    pub genuine_scores: Summary,
    pub impostor_scores: Option<Summary>,
    /// Probability that a genuine pair scores lower than an impostor pair,
    /// ties counted half.
    pub auc: Option<f64>,
    pub config: BenchConfig,
}

impl RocReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn write_pair_csv<W: Write>(mut w: W, pairs: &[PairScore]) -> std::io::Result<()> {
    writeln!(w, "pair_id,kind,score")?;
    for p in pairs {
        let kind = match p.kind {
            PairKind::Genuine => "genuine",
            PairKind::Impostor => "impostor",
        };
        writeln!(w, "{},{},{}", p.pair_id, kind, p.score)?;
    }
    Ok(())
}

/// SplitMix64 of `(seed, stream, index)`, so per-item seeds do not collide
/// across streams.
fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TEMPLATE_STREAM: u64 = 1;
const GENUINE_STREAM: u64 = 2;
const POOL_STREAM: u64 = 3;
const IMPOSTOR_STREAM: u64 = 4;

/// Subjects, their genuine candidates and ground truth.
pub struct Corpus {
    pub templates: Vec<Constellation>,
    pub candidates: Vec<Constellation>,
    pub truth: Vec<GroundTruth>,
    /// `(candidate subject, template subject)`.
    pub impostors: Vec<(usize, usize)>,
}

pub fn build_corpus(spec: &CorpusSpec, rho: f64, seed: u64) -> Result<Corpus> {
    if spec.subjects == 0 {
        return Err(Error::EmptyPopulation);
    }
    let templates = (0..spec.subjects)
        .into_par_iter()
        .map(|i| {
            let mut c = generate(spec.minutiae, spec.width, spec.height, spec.min_sep, mix(seed, TEMPLATE_STREAM, i as u64))?;
            c.id = format!("s{i:04}");
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let perturbed = templates
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut p = spec.genuine.clone();
            p.seed = mix(spec.genuine.seed ^ seed, GENUINE_STREAM, i as u64);
            if spec.occlude_shared_only {
                p.occlusion_pool = Some(shared_minutiae(t, rho, 2));
            }
            let (mut c, gt) = perturb(t, &p)?;
            c.id = format!("s{i:04}g");
            Ok((c, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    let (candidates, truth) = perturbed.into_iter().unzip();

    let mut impostors: Vec<(usize, usize)> = (0..spec.subjects)
        .flat_map(|i| (0..spec.subjects).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    if impostors.len() > spec.max_impostors {
        impostors.shuffle(&mut rng_from_seed(mix(seed, IMPOSTOR_STREAM, 0)));
        impostors.truncate(spec.max_impostors);
        impostors.sort_unstable();
    }
    Ok(Corpus {
        templates,
        candidates,
        truth,
        impostors,
    })
}

fn db_pool(cfg: &BenchConfig) -> Result<Vec<Constellation>> {
    let c = &cfg.corpus;
    (0..cfg.db_pool)
        .into_par_iter()
        .map(|i| generate(c.minutiae, c.width, c.height, c.min_sep, mix(cfg.seed, POOL_STREAM, i as u64)))
        .collect()
}

/// Score every genuine and impostor pair of the corpus.
pub fn score_pairs(cfg: &BenchConfig, corpus: &Corpus) -> Result<Vec<PairScore>> {
    let n = corpus.templates.len();
    let pairs: Vec<(String, PairKind, usize, usize)> = (0..n)
        .map(|i| (format!("g{i:04}"), PairKind::Genuine, i, i))
        .chain(
            corpus
                .impostors
                .iter()
                .map(|&(i, j)| (format!("i{i:04}-{j:04}"), PairKind::Impostor, i, j)),
        )
        .collect();
    let scores: Vec<f64> = match cfg.matcher {
        MatcherKind::Vicinity => {
            let db = build_representative_db(&db_pool(cfg)?, &cfg.db)?;
            let fv = |c: &Constellation| compute_feature_vector(c, &db, cfg.bit_threshold);
            let tv: Vec<_> = corpus.templates.par_iter().map(fv).collect();
            let cv: Vec<_> = corpus.candidates.par_iter().map(fv).collect();
            pairs
                .iter()
                .map(|&(_, _, i, j)| Ok(hamming(&cv[i], &tv[j])? as f64))
                .collect::<Result<_>>()?
        }
        MatcherKind::TwoPass => {
            let p = &cfg.second_order;
            let pool = db_pool(cfg)?;
            let db1_cfg = DbConfig { rho: p.rho1, ..cfg.db.clone() };
            let db2_cfg = DbConfig {
                n_target: cfg.db2_target,
                ..cfg.db.clone()
            };
            let db1 = build_representative_db(&pool, &db1_cfg)?;
            let db2 = build_second_order_db(&pool, p, &db2_cfg)?;
            let vecs = |cs: &[Constellation]| {
                cs.par_iter()
                    .map(|c| two_pass_vectors(c, &db1, &db2, p))
                    .collect::<Result<Vec<_>>>()
            };
            let tv = vecs(&corpus.templates)?;
            let cv = vecs(&corpus.candidates)?;
            let (t1, t2) = (p.t1.max(1) as f64, p.t2.max(1) as f64);
            pairs
                .iter()
                .map(|&(_, _, i, j)| {
                    let h1 = hamming(&cv[i].0, &tv[j].0)? as f64;
                    let h2 = hamming(&cv[i].1, &tv[j].1)? as f64;
                    Ok((h1 / t1).max(h2 / t2))
                })
                .collect::<Result<_>>()?
        }
        MatcherKind::Spring => pairs
            .par_iter()
            .map(|&(_, kind, i, j)| {
                let (a, b) = correspondences(corpus, kind, i, j);
                spring_score(&a, &b)
            })
            .collect::<Result<_>>()?,
    };
    Ok(pairs
        .into_iter()
        .zip(scores)
        .map(|((pair_id, kind, _, _), score)| PairScore { pair_id, kind, score })
        .collect())
}

fn correspondences(corpus: &Corpus, kind: PairKind, i: usize, j: usize) -> (Vec<Point>, Vec<Point>) {
    let cand = corpus.candidates[i].minutiae();
    let tmpl = corpus.templates[j].minutiae();
    match kind {
        PairKind::Genuine => corpus.truth[i]
            .source_of
            .iter()
            .enumerate()
            .filter_map(|(k, src)| src.map(|s| (tmpl[s].pos(), cand[k].pos())))
            .unzip(),
        PairKind::Impostor => tmpl.iter().zip(cand).map(|(t, c)| (t.pos(), c.pos())).unzip(),
    }
}

fn spring_score(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() {
        return Ok(f64::INFINITY);
    }
    let r = simulate(&assemble(a, b, PhysicsParams::for_points(a, b))?);
    Ok(r.e_min / a.len() as f64)
}

/// Mann–Whitney estimate of `P(genuine < impostor)`.
pub fn auc(genuine: &[f64], impostor: &[f64]) -> Option<f64> {
    if genuine.is_empty() || impostor.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &g in genuine {
        for &i in impostor {
            if g < i {
                wins += 1.0;
            } else if g == i {
                wins += 0.5;
            }
        }
    }
    Some(wins / (genuine.len() * impostor.len()) as f64)
}

/// FAR and FRR at each threshold, from the per-pair scores.
pub fn roc(pairs: &[PairScore], thresholds: &[f64], config: BenchConfig) -> Result<RocReport> {
    let mut genuine: Vec<f64> = pairs.iter().filter(|p| p.kind == PairKind::Genuine).map(|p| p.score).collect();
    let mut impostor: Vec<f64> = pairs.iter().filter(|p| p.kind == PairKind::Impostor).map(|p| p.score).collect();
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);
    let genuine_scores = Summary::of(&genuine).ok_or(Error::EmptyPopulation)?;
    let thresholds: Vec<f64> = if thresholds.is_empty() {
        let mut t: Vec<f64> = genuine.iter().chain(&impostor).copied().filter(|s| s.is_finite()).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    } else {
        let mut t = thresholds.to_vec();
        t.sort_by(f64::total_cmp);
        t
    };
    let accepted = |sorted: &[f64], h: f64| sorted.partition_point(|&s| s <= h);
    let frr = thresholds
        .iter()
        .map(|&h| (genuine.len() - accepted(&genuine, h)) as f64 / genuine.len() as f64)
        .collect();
    let far = (!impostor.is_empty()).then(|| {
        thresholds
            .iter()
            .map(|&h| accepted(&impostor, h) as f64 / impostor.len() as f64)
            .collect()
    });
    Ok(RocReport {
        thresholds,
        far,
        frr,
        auc: auc(&genuine, &impostor),
        genuine_scores,
        impostor_scores: Summary::of(&impostor),
        config,
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<(RocReport, Vec<PairScore>)> {
    let corpus = build_corpus(&cfg.corpus, cfg.db.rho, cfg.seed)?;
    let pairs = score_pairs(cfg, &corpus)?;
    let report = roc(&pairs, &cfg.thresholds, cfg.clone())?;
    Ok((report, pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingGainReport {
    /// Vicinity score below which a paired vicinity agrees.
    pub vicinity_threshold: f64,
    /// Minimum fraction of agreeing template vicinities for acceptance.
    pub levels: Vec<f64>,
    pub frr_plain: Vec<f64>,
    pub frr_with_missing: Vec<f64>,
    pub difference: Vec<f64>,
    pub genuine_pairs: usize,
    pub pairs_with_hypotheses: usize,
    pub hypotheses: usize,
    pub forgiven_total: f64,
    pub corpus: CorpusSpec,
    pub missing: MissingParams,
    pub seed: u64,
}

/// FRR of genuine pairs with and without forgiving the penalties explained by
/// missing-minutia hypotheses.
///
/// A genuine pair is accepted at level `a` when at least a fraction `a` of
/// the template's vicinities have a paired score below `vicinity_threshold`.
/// Forgiveness only lowers scores, so it can only reduce rejections.
pub fn compare_missing_gain(
    corpus: &CorpusSpec,
    rho: f64,
    vicinity_threshold: f64,
    levels: &[f64],
    missing: &MissingParams,
    seed: u64,
) -> Result<MissingGainReport> {
    let sp = crate::geom::ScoreParams::for_radius(rho);
    let c = build_corpus(&CorpusSpec { max_impostors: 0, ..corpus.clone() }, rho, seed)?;
    let per_pair = c
        .templates
        .par_iter()
        .zip(&c.candidates)
        .map(|(t, cand)| {
            let a = analyze(cand, t, rho, &sp, missing)?;
            let adjusted = adjust_scores(&a.scores, &a.report)?;
            Ok((
                a.agreement(&a.scores, vicinity_threshold),
                a.agreement(&adjusted, vicinity_threshold),
                a.report.hypotheses.len(),
                a.report.forgiven_total(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_pair.len() as f64;
    let frr = |pick: fn(&(f64, f64, usize, f64)) -> f64| -> Vec<f64> {
        levels
            .iter()
            .map(|&lvl| per_pair.iter().filter(|p| pick(p) < lvl).count() as f64 / n)
            .collect()
    };
    let frr_plain = frr(|p| p.0);
    let frr_with_missing = frr(|p| p.1);
    Ok(MissingGainReport {
        vicinity_threshold,
        levels: levels.to_vec(),
        difference: frr_plain.iter().zip(&frr_with_missing).map(|(a, b)| a - b).collect(),
        frr_plain,
        frr_with_missing,
        genuine_pairs: per_pair.len(),
        pairs_with_hypotheses: per_pair.iter().filter(|p| p.2 > 0).count(),
        hypotheses: per_pair.iter().map(|p| p.2).sum(),
        forgiven_total: per_pair.iter().map(|p| p.3).sum(),
        corpus: corpus.clone(),
        missing: *missing,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(matcher: MatcherKind, subjects: usize) -> BenchConfig {
        BenchConfig {
            matcher,
            corpus: CorpusSpec {
                subjects,
                max_impostors: 60,
                ..CorpusSpec::default()
            },
            db: DbConfig { n_target: 48, ..DbConfig::default() },
            db_pool: 20,
            db2_target: 16,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn empty_population_is_an_error() {
        let cfg = small(MatcherKind::Vicinity, 0);
        assert!(matches!(run_bench(&cfg), Err(Error::EmptyPopulation)));
    }

    #[test]
    fn single_subject_has_no_far() {
        let (r, pairs) = run_bench(&small(MatcherKind::Vicinity, 1)).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!(r.far.is_none());
        assert!(r.auc.is_none());
        assert!(r.impostor_scores.is_none());
    }

    #[test]
    fn unperturbed_genuine_pairs_are_never_rejected() {
        let mut cfg = small(MatcherKind::Vicinity, 6);
        cfg.corpus.genuine = PerturbSpec::default();
        cfg.thresholds = vec![0.0, 1.0, 5.0];
        let (r, pairs) = run_bench(&cfg).unwrap();
        assert!(pairs.iter().filter(|p| p.kind == PairKind::Genuine).all(|p| p.score == 0.0));
        assert_eq!(r.frr, vec![0.0; 3]);
    }

    #[test]
    fn rates_are_exact_counts_and_monotone() {
        let (r, pairs) = run_bench(&small(MatcherKind::Vicinity, 8)).unwrap();
        let far = r.far.as_ref().unwrap();
        let g: Vec<f64> = pairs.iter().filter(|p| p.kind == PairKind::Genuine).map(|p| p.score).collect();
        let im: Vec<f64> = pairs.iter().filter(|p| p.kind == PairKind::Impostor).map(|p| p.score).collect();
        for (k, &h) in r.thresholds.iter().enumerate() {
            let frr = g.iter().filter(|&&s| s > h).count() as f64 / g.len() as f64;
            let fa = im.iter().filter(|&&s| s <= h).count() as f64 / im.len() as f64;
            assert_eq!(r.frr[k], frr);
            assert_eq!(far[k], fa);
            assert!((0.0..=1.0).contains(&frr) && (0.0..=1.0).contains(&fa));
        }
        for w in far.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for w in r.frr.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small(MatcherKind::Vicinity, 5);
        assert_eq!(run_bench(&cfg).unwrap().1, run_bench(&cfg).unwrap().1);
    }

    #[test]
    fn spring_and_two_pass_separate_self_pairs() {
        for m in [MatcherKind::Spring, MatcherKind::TwoPass] {
            let mut cfg = small(m, 4);
            if m == MatcherKind::Spring {
                cfg.corpus.minutiae = 20;
            }
            let (r, _) = run_bench(&cfg).unwrap();
            assert!(r.auc.unwrap() > 0.5, "{m:?}: {:?}", r.auc);
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.0, 1.0], &[2.0, 3.0]), Some(1.0));
        assert_eq!(auc(&[2.0], &[2.0]), Some(0.5));
        assert_eq!(auc(&[3.0], &[1.0, 2.0]), Some(0.0));
        assert_eq!(auc(&[], &[1.0]), None);
    }

    #[test]
    fn csv_layout() {
        let mut out = Vec::new();
        write_pair_csv(
            &mut out,
            &[PairScore {
                pair_id: "g0000".into(),
                kind: PairKind::Genuine,
                score: 1.5,
            }],
        )
        .unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "pair_id,kind,score\ng0000,genuine,1.5\n");
    }

    #[test]
    fn missing_gain_without_occlusions_is_neutral() {
        let corpus = CorpusSpec {
            subjects: 6,
            genuine: PerturbSpec::default(),
            ..CorpusSpec::default()
        };
        let r = compare_missing_gain(&corpus, 75.0, 75.0 * 75.0 / 4.0, &[0.5, 0.9, 1.0], &MissingParams::default(), 3).unwrap();
        assert_eq!(r.frr_plain, r.frr_with_missing);
        assert_eq!(r.hypotheses, 0);
        assert_eq!(r.forgiven_total, 0.0);
    }

    #[test]
    fn missing_gain_never_hurts() {
        let corpus = CorpusSpec {
            subjects: 12,
            genuine: PerturbSpec {
                jitter_sigma: 0.5,
                occlusions: 1,
                ..CorpusSpec::default().genuine
            },
            occlude_shared_only: true,
            ..CorpusSpec::default()
        };
        let levels = [0.6, 0.7, 0.8, 0.9, 1.0];
        let r = compare_missing_gain(&corpus, 75.0, 75.0 * 75.0 / 4.0, &levels, &MissingParams::default(), 9).unwrap();
        for (a, b) in r.frr_plain.iter().zip(&r.frr_with_missing) {
            assert!(b <= a);
        }
        assert!(r.forgiven_total > 0.0);
    }
}
