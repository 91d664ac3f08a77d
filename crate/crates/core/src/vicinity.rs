//! First-order vicinities, vicinity-vs-vicinity scoring, the representative
//! database and binary feature vectors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assignment::{assign, Assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::geom::{minutia_score, to_local_frame, Constellation, Minutia, ScoreParams};

pub const DB_FORMAT_VERSION: u32 = 1;

/// A center minutia and every minutia strictly closer than `rho`, expressed
/// in the center's local frame. `members[0]` is the center itself at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Vicinity {
    /// Global-frame center.
    pub center: Minutia,
    pub members: Vec<Minutia>,
    /// Index of each member in the source point list (parallel to `members`).
    pub member_sources: Vec<usize>,
    pub order: u8,
    pub source_index: usize,
    pub rho: f64,
}

impl Vicinity {
    /// Number of members other than the center.
    pub fn neighbor_count(&self) -> usize {
        self.members.len().saturating_sub(1)
    }
}

/// One vicinity per minutia, membership by strict `< rho`.
pub fn extract_vicinities(c: &Constellation, rho: f64) -> Vec<Vicinity> {
    extract_from_points(c.minutiae(), rho, 1)
}

pub(crate) fn extract_from_points(points: &[Minutia], rho: f64, order: u8) -> Vec<Vicinity> {
    points
        .iter()
        .enumerate()
        .map(|(i, center)| {
            let mut members = vec![to_local_frame(center, center)];
            let mut member_sources = vec![i];
            for (j, m) in points.iter().enumerate() {
                if j != i && center.pos().dist(m.pos()) < rho {
                    members.push(to_local_frame(center, m));
                    member_sources.push(j);
                }
            }
            Vicinity {
                center: *center,
                members,
                member_sources,
                order,
                source_index: i,
                rho,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VicinityScore {
    /// Lower is more similar.
    pub value: f64,
    /// Sum of `s` over the pairs that survived gating.
    pub associated_cost: f64,
    /// Members of the first vicinity left without a partner.
    pub nar: usize,
    /// Members of the second vicinity left without a partner.
    pub nas: usize,
    /// Unassociated members excused by a missing-minutia hypothesis.
    pub forgiven: usize,
    /// Surviving `(first member, second member)` pairs.
    pub pairs: Vec<(usize, usize)>,
    /// Raw assignment before gating.
    pub assignment: Assignment,
}

impl VicinityScore {
    pub fn unassociated(&self) -> usize {
        self.nar + self.nas
    }

    /// Indices of first-vicinity members without a surviving partner.
    pub fn unmatched_first(&self, first_len: usize) -> Vec<usize> {
        let mut seen = vec![false; first_len];
        for &(i, _) in &self.pairs {
            seen[i] = true;
        }
        (0..first_len).filter(|&i| !seen[i]).collect()
    }

    pub fn unmatched_second(&self, second_len: usize) -> Vec<usize> {
        let mut seen = vec![false; second_len];
        for &(_, j) in &self.pairs {
            seen[j] = true;
        }
        (0..second_len).filter(|&j| !seen[j]).collect()
    }
}

pub(crate) fn penalty_sign() -> f64 {
    if cfg!(feature = "subtractive-penalty") {
        -1.0
    } else {
        1.0
    }
}

/// Combine an association cost with the non-association penalty.
pub fn combine(associated_cost: f64, unassociated: usize, k_na: f64) -> f64 {
    associated_cost + penalty_sign() * unassociated as f64 * k_na
}

/// Hungarian association of members, gating at `s_max`, then
/// `Σ s + (NAR + NAS)·K_NA`.
pub fn vicinity_score(a: &Vicinity, b: &Vicinity, p: &ScoreParams) -> VicinityScore {
    let m = CostMatrix::from_fn(a.members.len(), b.members.len(), |i, j| {
        minutia_score(&a.members[i], &b.members[j], p)
    });
    // Members are finite and non-empty, so assignment cannot fail.
    let assignment = assign(&m).expect("vicinities always have a center member");
    let pairs: Vec<(usize, usize)> = assignment
        .pairs
        .iter()
        .copied()
        .filter(|&(i, j)| m.get(i, j) <= p.s_max)
        .collect();
    let associated_cost: f64 = pairs.iter().map(|&(i, j)| m.get(i, j)).sum();
    let nar = a.members.len() - pairs.len();
    let nas = b.members.len() - pairs.len();
    VicinityScore {
        value: combine(associated_cost, nar + nas, p.k_na),
        associated_cost,
        nar,
        nas,
        forgiven: 0,
        pairs,
        assignment,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbConfig {
    pub rho: f64,
    pub l_min: usize,
    pub l_max: usize,
    pub d_min: f64,
    pub n_target: usize,
    pub params: ScoreParams,
    pub seed: u64,
}

impl Default for DbConfig {
    fn default() -> Self {
        let rho = 75.0;
        let params = ScoreParams::for_radius(rho);
        DbConfig {
            rho,
            l_min: 3,
            l_max: 8,
            d_min: params.k_na,
            n_target: 128,
            params,
            seed: 0,
        }
    }
}

/// `N` reference vicinities against which every extracted vicinity is scored.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeDB {
    pub reps: Vec<Vicinity>,
    pub order: u8,
    pub rho: f64,
    pub l_min: usize,
    pub l_max: usize,
    pub d_min: f64,
    pub params: ScoreParams,
}

#[derive(Serialize, Deserialize)]
struct RepDoc {
    center: Minutia,
    members: Vec<Minutia>,
}

#[derive(Serialize, Deserialize)]
struct DbDoc {
    version: u32,
    #[serde(default = "first_order")]
    order: u8,
    rho: f64,
    l_min: usize,
    l_max: usize,
    d_min: f64,
    params: ScoreParams,
    reps: Vec<RepDoc>,
}

fn first_order() -> u8 {
    1
}

impl RepresentativeDB {
    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    fn to_doc(&self) -> DbDoc {
        DbDoc {
            version: DB_FORMAT_VERSION,
            order: self.order,
            rho: self.rho,
            l_min: self.l_min,
            l_max: self.l_max,
            d_min: self.d_min,
            params: self.params,
            reps: self
                .reps
                .iter()
                .map(|r| RepDoc {
                    center: r.center,
                    members: r.members.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DbDoc = serde_json::from_str(text)?;
        if doc.version != DB_FORMAT_VERSION {
            return Err(Error::InvalidParams(format!(
                "unsupported database version {}",
                doc.version
            )));
        }
        doc.params.validate()?;
        let reps = doc
            .reps
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let has_origin = r
                    .members
                    .first()
                    .is_some_and(|m| m.x == 0.0 && m.y == 0.0 && m.theta == 0.0);
                if !has_origin {
                    return Err(Error::InvalidParams(format!(
                        "representative {i} does not start with its center at the origin"
                    )));
                }
                Ok(Vicinity {
                    center: r.center,
                    member_sources: (0..r.members.len()).collect(),
                    members: r.members,
                    order: doc.order,
                    source_index: i,
                    rho: doc.rho,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RepresentativeDB {
            reps,
            order: doc.order,
            rho: doc.rho,
            l_min: doc.l_min,
            l_max: doc.l_max,
            d_min: doc.d_min,
            params: doc.params,
        })
    }

    /// Content hash of the persisted form; feature vectors carry it.
    pub fn id(&self) -> String {
        let canonical = serde_json::to_vec(&self.to_doc()).expect("database serializes");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }
}

/// Greedy, seeded selection of representatives from the vicinities of a pool
/// of constellations.
pub fn build_representative_db(pool: &[Constellation], cfg: &DbConfig) -> Result<RepresentativeDB> {
    let candidates = pool
        .iter()
        .flat_map(|c| extract_vicinities(c, cfg.rho))
        .collect();
    select_representatives(candidates, cfg, 1)
}

/// Keep a candidate iff its member count lies in `[l_min, l_max]` and it
/// scores above `d_min` against every representative kept so far.
pub fn select_representatives(
    mut candidates: Vec<Vicinity>,
    cfg: &DbConfig,
    order: u8,
) -> Result<RepresentativeDB> {
    if cfg.n_target == 0 {
        return Err(Error::InvalidParams("n_target must be at least 1".into()));
    }
    cfg.params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    candidates.shuffle(&mut rng);

    let mut reps: Vec<Vicinity> = Vec::with_capacity(cfg.n_target);
    for cand in candidates {
        let n = cand.members.len();
        if n < cfg.l_min || n > cfg.l_max {
            continue;
        }
        let distinct = reps
            .iter()
            .all(|r| vicinity_score(&cand, r, &cfg.params).value > cfg.d_min);
        if distinct {
            reps.push(cand);
            if reps.len() == cfg.n_target {
                break;
            }
        }
    }
    if reps.len() < cfg.n_target {
        return Err(Error::PoolExhausted {
            found: reps.len(),
            wanted: cfg.n_target,
        });
    }
    for (i, r) in reps.iter_mut().enumerate() {
        r.source_index = i;
        r.order = order;
    }
    Ok(RepresentativeDB {
        reps,
        order,
        rho: cfg.rho,
        l_min: cfg.l_min,
        l_max: cfg.l_max,
        d_min: cfg.d_min,
        params: cfg.params,
    })
}

/// N-bit template. Serialized as lowercase hex, bit 0 in the most significant
/// position of the first byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FeatureVectorDoc", try_from = "FeatureVectorDoc")]
pub struct FeatureVector {
    pub bits: Vec<bool>,
    pub threshold: f64,
    pub db_id: String,
}

#[derive(Serialize, Deserialize)]
struct FeatureVectorDoc {
    db_id: String,
    threshold: f64,
    n: usize,
    hex: String,
}

impl From<FeatureVector> for FeatureVectorDoc {
    fn from(v: FeatureVector) -> Self {
        FeatureVectorDoc {
            hex: v.to_hex(),
            n: v.bits.len(),
            db_id: v.db_id,
            threshold: v.threshold,
        }
    }
}

impl TryFrom<FeatureVectorDoc> for FeatureVector {
    type Error = Error;
    fn try_from(d: FeatureVectorDoc) -> Result<Self> {
        FeatureVector::from_hex(&d.hex, d.n, d.threshold, d.db_id)
    }
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self
            .bits
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (k, &b)| acc | ((b as u8) << (7 - k)))
            })
            .collect();
        hex::encode(bytes)
    }

    pub fn from_hex(text: &str, n: usize, threshold: f64, db_id: String) -> Result<Self> {
        let bytes = hex::decode(text).map_err(|e| Error::MalformedVector(e.to_string()))?;
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::MalformedVector(format!(
                "{} hex bytes cannot hold exactly {n} bits",
                bytes.len()
            )));
        }
        let mut bits = Vec::with_capacity(n);
        for k in 0..bytes.len() * 8 {
            let bit = bytes[k / 8] >> (7 - k % 8) & 1 == 1;
            if k < n {
                bits.push(bit);
            } else if bit {
                return Err(Error::MalformedVector("padding bits must be zero".into()));
            }
        }
        Ok(FeatureVector {
            bits,
            threshold,
            db_id,
        })
    }
}

/// For each representative, the lowest score any of `vicinities` achieves
/// against it (`+∞` when `vicinities` is empty).
pub fn best_rep_scores(vicinities: &[Vicinity], db: &RepresentativeDB) -> Vec<f64> {
    db.reps
        .par_iter()
        .map(|rep| {
            vicinities
                .iter()
                .map(|f| vicinity_score(f, rep, &db.params).value)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Threshold per-representative scores into a feature vector.
pub fn binarize(scores: &[f64], db: &RepresentativeDB, t: f64) -> FeatureVector {
    FeatureVector {
        bits: scores.iter().map(|&s| s < t).collect(),
        threshold: t,
        db_id: db.id(),
    }
}

pub fn feature_vector_from_vicinities(
    vicinities: &[Vicinity],
    db: &RepresentativeDB,
    t: f64,
) -> FeatureVector {
    binarize(&best_rep_scores(vicinities, db), db, t)
}

/// Bit `i` is set iff some vicinity of `c` scores below `t` against rep `i`.
pub fn compute_feature_vector(c: &Constellation, db: &RepresentativeDB, t: f64) -> FeatureVector {
    feature_vector_from_vicinities(&extract_vicinities(c, db.rho), db, t)
}

pub fn hamming(u: &FeatureVector, v: &FeatureVector) -> Result<usize> {
    if u.db_id != v.db_id {
        return Err(Error::Incomparable(format!(
            "database {} vs {}",
            u.db_id, v.db_id
        )));
    }
    if u.threshold != v.threshold {
        return Err(Error::Incomparable(format!(
            "threshold {} vs {}",
            u.threshold, v.threshold
        )));
    }
    if u.len() != v.len() {
        return Err(Error::Incomparable(format!("length {} vs {}", u.len(), v.len())));
    }
    Ok(u.bits.iter().zip(&v.bits).filter(|(a, b)| a != b).count())
}
