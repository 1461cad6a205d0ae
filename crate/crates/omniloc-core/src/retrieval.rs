//! Image retrieval over precomputed global descriptors, with the
//! cross-device twist: a panoramic reference can be represented by a group
//! of crop descriptors, and a query scored against the best member of each
//! group. Includes the recall/precision evaluation used to compare routing
//! modes.

use nalgebra::Vector3;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("descriptor '{0}' has zero or non-finite norm")]
    BadDescriptor(String),
    #[error("descriptor dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("feature group '{0}' has no members")]
    EmptyGroup(String),
    #[error("group '{group}' contains descriptor '{member}' from a different reference")]
    ForeignMember { group: String, member: String },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("descriptor database is empty")]
    EmptyDatabase,
    #[error("no retrieval results to evaluate")]
    NoResults,
    #[error("distance threshold must be positive")]
    BadThreshold,
    #[error("no pose recorded for '{0}'")]
    MissingPose(String),
    #[error("unknown retrieval mode '{0}' (expected direct, vc1 or vc2)")]
    UnknownMode(String),
}

/// An L2-normalized embedding of one image. `source_ref` names the
/// panoramic frame a crop was cut from; full reference frames leave it
/// unset.
#[derive(Debug, Clone)]
pub struct GlobalDescriptor {
    pub id: String,
    pub source_ref: Option<String>,
    vector: Vec<f32>,
}

impl GlobalDescriptor {
    /// Normalizes on ingest, so stored vectors are scale invariant.
    pub fn new(id: impl Into<String>, source_ref: Option<String>, vector: Vec<f32>) -> Result<Self, RetrievalError> {
        let id = id.into();
        let norm = vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(RetrievalError::BadDescriptor(id));
        }
        let vector = vector.iter().map(|&x| (f64::from(x) / norm) as f32).collect();
        Ok(GlobalDescriptor { id, source_ref, vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    /// The panoramic frame this descriptor counts toward when ranking.
    pub fn ref_key(&self) -> &str {
        self.source_ref.as_deref().unwrap_or(&self.id)
    }
}

/// Cosine similarity of two stored descriptors. Both are unit vectors, so
/// this is their dot product, accumulated in f64.
pub fn cosine_similarity(a: &GlobalDescriptor, b: &GlobalDescriptor) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimensionMismatch { a: a.dim(), b: b.dim() });
    }
    let dot = a
        .vector
        .iter()
        .zip(&b.vector)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum::<f64>();
    Ok(dot.clamp(-1.0, 1.0))
}

/// All crop descriptors belonging to one panoramic reference frame.
#[derive(Debug, Clone)]
pub struct FeatureGroup {
    pub ref_id: String,
    pub members: Vec<GlobalDescriptor>,
}

impl FeatureGroup {
    pub fn new(ref_id: impl Into<String>, members: Vec<GlobalDescriptor>) -> Result<Self, RetrievalError> {
        let ref_id = ref_id.into();
        if members.is_empty() {
            return Err(RetrievalError::EmptyGroup(ref_id));
        }
        for m in &members {
            if m.source_ref.as_deref() != Some(ref_id.as_str()) {
                return Err(RetrievalError::ForeignMember { group: ref_id, member: m.id.clone() });
            }
        }
        Ok(FeatureGroup { ref_id, members })
    }
}

/// A query matches a group as well as it matches the group's best member.
pub fn group_score(q: &GlobalDescriptor, g: &FeatureGroup) -> Result<f64, RetrievalError> {
    if g.members.is_empty() {
        return Err(RetrievalError::EmptyGroup(g.ref_id.clone()));
    }
    let mut best = f64::NEG_INFINITY;
    for m in &g.members {
        best = best.max(cosine_similarity(q, m)?);
    }
    Ok(best)
}

/// The reference side of retrieval: either plain per-frame descriptors or
/// per-frame crop groups.
#[derive(Debug, Clone)]
pub enum DescriptorDb {
    Flat(Vec<GlobalDescriptor>),
    Grouped(Vec<FeatureGroup>),
}

impl DescriptorDb {
    pub fn len(&self) -> usize {
        match self {
            DescriptorDb::Flat(v) => v.len(),
            DescriptorDb::Grouped(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub query_id: String,
    /// (reference frame, score), scores non-increasing, references distinct.
    pub ranked: Vec<(String, f64)>,
    pub k_max: usize,
}

/// Ranks the database against a query and keeps the best k distinct
/// panoramic references. Descriptors sharing a `source_ref` collapse to
/// one entry scored by their best member; ties break on lexicographic
/// reference name so runs are reproducible.
pub fn retrieve_topk(q: &GlobalDescriptor, db: &DescriptorDb, k: usize) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if db.is_empty() {
        return Err(RetrievalError::EmptyDatabase);
    }
    let mut best: HashMap<&str, f64> = HashMap::new();
    match db {
        DescriptorDb::Flat(entries) => {
            for d in entries {
                let s = cosine_similarity(q, d)?;
                let slot = best.entry(d.ref_key()).or_insert(f64::NEG_INFINITY);
                if s > *slot {
                    *slot = s;
                }
            }
        }
        DescriptorDb::Grouped(groups) => {
            for g in groups {
                let s = group_score(q, g)?;
                let slot = best.entry(g.ref_id.as_str()).or_insert(f64::NEG_INFINITY);
                if s > *slot {
                    *slot = s;
                }
            }
        }
    }
    let mut ranked: Vec<(String, f64)> = best.into_iter().map(|(id, s)| (id.to_owned(), s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(RetrievalResult { query_id: q.id.clone(), ranked, k_max: k })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalMetrics {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
}

/// Recall@k / Precision@k against a translation-distance gate: a retrieved
/// reference is correct when its position lies within `d_threshold` meters
/// of the query's. Recall@k asks for at least one correct entry in the top
/// k; Precision@k averages the correct fraction (out of k) over queries.
pub fn eval_retrieval(
    results: &[RetrievalResult],
    query_positions: &HashMap<String, Vector3<f64>>,
    ref_positions: &HashMap<String, Vector3<f64>>,
    d_threshold: f64,
    ks: &[usize],
) -> Result<Vec<RetrievalMetrics>, RetrievalError> {
    if results.is_empty() {
        return Err(RetrievalError::NoResults);
    }
    if !(d_threshold > 0.0) {
        return Err(RetrievalError::BadThreshold);
    }
    let mut correct: Vec<Vec<bool>> = Vec::with_capacity(results.len());
    for r in results {
        let q = query_positions
            .get(&r.query_id)
            .ok_or_else(|| RetrievalError::MissingPose(r.query_id.clone()))?;
        let mut flags = Vec::with_capacity(r.ranked.len());
        for (ref_id, _) in &r.ranked {
            let p = ref_positions
                .get(ref_id)
                .ok_or_else(|| RetrievalError::MissingPose(ref_id.clone()))?;
            flags.push((q - p).norm() <= d_threshold);
        }
        correct.push(flags);
    }
    let n = results.len() as f64;
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let mut hits = 0usize;
        let mut frac = 0.0;
        for flags in &correct {
            let top = &flags[..k.min(flags.len())];
            let good = top.iter().filter(|&&b| b).count();
            if good > 0 {
                hits += 1;
            }
            frac += good as f64 / k as f64;
        }
        out.push(RetrievalMetrics { k, recall: hits as f64 / n, precision: frac / n });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrievalMode {
    /// Query descriptor against reference descriptors as-is.
    Direct,
    /// Remap the query into the panoramic domain first.
    Vc1,
    /// Rectify every reference into the query's domain (crop groups).
    Vc2,
}

impl RetrievalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RetrievalMode::Direct => "direct",
            RetrievalMode::Vc1 => "vc1",
            RetrievalMode::Vc2 => "vc2",
        }
    }
}

impl std::str::FromStr for RetrievalMode {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(RetrievalMode::Direct),
            "vc1" => Ok(RetrievalMode::Vc1),
            "vc2" => Ok(RetrievalMode::Vc2),
            other => Err(RetrievalError::UnknownMode(other.to_owned())),
        }
    }
}

/// How references are cropped in VC2 mode.
#[derive(Debug, Clone)]
pub struct Vc2Config {
    /// Render the cube faces at all (off gives fisheye-only or empty sets).
    pub include_cube: bool,
    /// Add the straight-down cube face (usually tripod-contaminated).
    pub include_bottom: bool,
    /// Fisheye preset names rendered in addition to the cube faces.
    pub fisheye_presets: Vec<String>,
}

impl Default for Vc2Config {
    fn default() -> Self {
        Vc2Config {
            include_cube: true,
            include_bottom: false,
            fisheye_presets: vec!["fisheye-120".into(), "fisheye-150".into(), "fisheye-195".into()],
        }
    }
}

impl Vc2Config {
    pub fn crops_per_reference(&self) -> usize {
        self.crop_names().len()
    }

    pub fn crop_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.include_cube {
            names.extend(["front", "left", "right", "back", "up"].iter().map(|f| format!("cube-{f}")));
            if self.include_bottom {
                names.push("cube-down".into());
            }
        }
        names.extend(self.fisheye_presets.iter().cloned());
        names
    }
}

/// One image the descriptor extractor must be run on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanItem {
    /// The query image itself.
    QueryImage { id: String },
    /// The query remapped onto a masked panoramic canvas.
    QueryRemapped { id: String },
    /// A named crop of a panoramic reference.
    ReferenceCrop { ref_id: String, crop: String },
}

/// Plans which images need descriptors for a given routing mode. Pure
/// bookkeeping: rendering and inference happen elsewhere.
pub fn route_query(mode: RetrievalMode, query_id: &str, ref_ids: &[String], cfg: &Vc2Config) -> Vec<PlanItem> {
    match mode {
        RetrievalMode::Direct => vec![PlanItem::QueryImage { id: query_id.to_owned() }],
        RetrievalMode::Vc1 => vec![PlanItem::QueryRemapped { id: query_id.to_owned() }],
        RetrievalMode::Vc2 => {
            let crops = cfg.crop_names();
            let mut plan = Vec::with_capacity(ref_ids.len() * crops.len());
            for r in ref_ids {
                for c in &crops {
                    plan.push(PlanItem::ReferenceCrop { ref_id: r.clone(), crop: c.clone() });
                }
            }
            plan
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desc(id: &str, v: &[f32]) -> GlobalDescriptor {
        GlobalDescriptor::new(id, None, v.to_vec()).unwrap()
    }

    fn crop(id: &str, parent: &str, v: &[f32]) -> GlobalDescriptor {
        GlobalDescriptor::new(id, Some(parent.to_owned()), v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_basics() {
        let a = desc("a", &[1.0, 0.0, 0.0]);
        let b = desc("b", &[0.0, 1.0, 0.0]);
        let minus = desc("m", &[-2.0, 0.0, 0.0]);
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&a, &minus).unwrap(), -1.0);
        let short = desc("s", &[1.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&a, &short),
            Err(RetrievalError::DimensionMismatch { a: 3, b: 2 })
        ));
    }

    #[test]
    fn ingest_normalizes_and_rejects_junk() {
        let raw = [0.3f32, -1.2, 0.4, 2.0];
        let v1 = GlobalDescriptor::new("x", None, raw.to_vec()).unwrap();
        // a power-of-two scale is exact in binary floats, so the stored
        // vectors must agree to the bit
        let v4 = GlobalDescriptor::new("x", None, raw.iter().map(|&x| 4.0 * x).collect()).unwrap();
        assert_eq!(v1.vector(), v4.vector(), "scaling must not change the stored vector");
        let norm: f64 = v1.vector().iter().map(|&x| f64::from(x) * f64::from(x)).sum();
        assert!((norm.sqrt() - 1.0).abs() < 1e-6);
        assert!(GlobalDescriptor::new("z", None, vec![0.0; 8]).is_err());
        assert!(GlobalDescriptor::new("n", None, vec![f32::NAN, 1.0]).is_err());
    }

    #[test]
    fn group_score_is_the_member_max() {
        let q = desc("q", &[1.0, 0.0, 0.0]);
        let members = vec![
            crop("r0-a", "r0", &[0.0, 1.0, 0.0]),
            crop("r0-b", "r0", &[1.0, 1.0, 0.0]),
            crop("r0-c", "r0", &[-1.0, 0.0, 0.0]),
        ];
        let g = FeatureGroup::new("r0", members.clone()).unwrap();
        let s = group_score(&q, &g).unwrap();
        let brute = members
            .iter()
            .map(|m| cosine_similarity(&q, m).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(s, brute);
        assert!((s - (0.5f64).sqrt()).abs() < 1e-6);
        for m in &members {
            assert!(s >= cosine_similarity(&q, m).unwrap());
        }
    }

    #[test]
    fn group_membership_is_checked() {
        assert!(matches!(FeatureGroup::new("r0", vec![]), Err(RetrievalError::EmptyGroup(_))));
        let stray = crop("r1-a", "r1", &[1.0, 0.0]);
        assert!(matches!(
            FeatureGroup::new("r0", vec![stray]),
            Err(RetrievalError::ForeignMember { .. })
        ));
    }

    #[test]
    fn self_retrieval_ranks_first() {
        let q = desc("r2", &[0.2, -0.5, 0.7]);
        let db = DescriptorDb::Flat(vec![
            desc("r0", &[1.0, 0.0, 0.0]),
            desc("r1", &[0.0, 1.0, 0.0]),
            desc("r2", &[0.2, -0.5, 0.7]),
        ]);
        let res = retrieve_topk(&q, &db, 2).unwrap();
        assert_eq!(res.ranked[0].0, "r2");
        assert!((res.ranked[0].1 - 1.0).abs() < 1e-6);
        assert_eq!(res.ranked.len(), 2);
    }

    #[test]
    fn oversized_k_returns_everything() {
        let db = DescriptorDb::Flat(vec![desc("a", &[1.0, 0.0]), desc("b", &[0.0, 1.0])]);
        let res = retrieve_topk(&desc("q", &[1.0, 1.0]), &db, 10).unwrap();
        assert_eq!(res.ranked.len(), 2);
        assert!(matches!(retrieve_topk(&desc("q", &[1.0, 0.0]), &db, 0), Err(RetrievalError::InvalidK)));
        assert!(matches!(
            retrieve_topk(&desc("q", &[1.0, 0.0]), &DescriptorDb::Flat(vec![]), 1),
            Err(RetrievalError::EmptyDatabase)
        ));
    }

    #[test]
    fn ranking_matches_brute_force_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let dim = 16;
            let mk = |rng: &mut ChaCha8Rng| -> Vec<f32> {
                (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect()
            };
            let entries: Vec<GlobalDescriptor> =
                (0..10).map(|i| GlobalDescriptor::new(format!("r{i:02}"), None, mk(&mut rng)).unwrap()).collect();
            let q = GlobalDescriptor::new("q", None, mk(&mut rng)).unwrap();
            let mut oracle: Vec<(String, f64)> = entries
                .iter()
                .map(|d| (d.id.clone(), cosine_similarity(&q, d).unwrap()))
                .collect();
            oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let res = retrieve_topk(&q, &DescriptorDb::Flat(entries), 10).unwrap();
            assert_eq!(res.ranked, oracle);
        }
    }

    #[test]
    fn crops_collapse_to_their_reference() {
        let q = desc("q", &[1.0, 0.0]);
        let db = DescriptorDb::Flat(vec![
            crop("r0-front", "r0", &[0.0, 1.0]),
            crop("r0-left", "r0", &[1.0, 1.0]),
            crop("r1-front", "r1", &[1.0, 0.1]),
        ]);
        let res = retrieve_topk(&q, &db, 10).unwrap();
        assert_eq!(res.ranked.len(), 2);
        let names: Vec<&str> = res.ranked.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["r1", "r0"]);
        // r0 scored by its best crop, not its first
        assert!((res.ranked[1].1 - (0.5f64).sqrt()).abs() < 1e-6);

        let grouped = DescriptorDb::Grouped(vec![
            FeatureGroup::new("r0", vec![crop("r0-front", "r0", &[0.0, 1.0]), crop("r0-left", "r0", &[1.0, 1.0])]).unwrap(),
            FeatureGroup::new("r1", vec![crop("r1-front", "r1", &[1.0, 0.1])]).unwrap(),
        ]);
        let res2 = retrieve_topk(&q, &grouped, 10).unwrap();
        assert_eq!(res.ranked, res2.ranked);
    }

    #[test]
    fn equal_scores_break_ties_by_name() {
        let q = desc("q", &[1.0, 0.0]);
        let db = DescriptorDb::Flat(vec![
            desc("zeta", &[1.0, 0.0]),
            desc("alpha", &[1.0, 0.0]),
            desc("mid", &[1.0, 0.0]),
        ]);
        let res = retrieve_topk(&q, &db, 3).unwrap();
        let names: Vec<&str> = res.ranked.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["alpha", "mid", "zeta"]);
    }

    fn line_positions(xs: &[(&str, f64)]) -> HashMap<String, Vector3<f64>> {
        xs.iter().map(|&(n, x)| (n.to_owned(), Vector3::new(x, 0.0, 0.0))).collect()
    }

    #[test]
    fn eval_matches_hand_enumeration() {
        let qpos = line_positions(&[("q0", 0.0), ("q1", 10.0), ("q2", 20.0), ("q3", 30.0)]);
        let rpos = line_positions(&[("r0", 0.0), ("r1", 5.0), ("r2", 10.0), ("r3", 15.0), ("r4", 20.0), ("r5", 25.0)]);
        let ranked = |q: &str, names: &[&str]| RetrievalResult {
            query_id: q.to_owned(),
            ranked: names.iter().enumerate().map(|(i, n)| (n.to_string(), 1.0 - 0.1 * i as f64)).collect(),
            k_max: 3,
        };
        let results = [
            ranked("q0", &["r0", "r2", "r1"]),
            ranked("q1", &["r5", "r0", "r1"]),
            ranked("q2", &["r3"]),
            ranked("q3", &["r0", "r1", "r2"]),
        ];
        let metrics = eval_retrieval(&results, &qpos, &rpos, 5.0, &[1, 3]).unwrap();
        assert_eq!(metrics[0].k, 1);
        assert!((metrics[0].recall - 0.5).abs() < 1e-12);
        assert!((metrics[0].precision - 0.5).abs() < 1e-12);
        assert_eq!(metrics[1].k, 3);
        assert!((metrics[1].recall - 0.75).abs() < 1e-12);
        assert!((metrics[1].precision - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn eval_boundary_and_errors() {
        let qpos = line_positions(&[("q", 0.0)]);
        let rpos = line_positions(&[("r", 5.0)]);
        let res = [RetrievalResult { query_id: "q".into(), ranked: vec![("r".into(), 0.9)], k_max: 1 }];
        // exactly at the threshold counts as correct
        let m = eval_retrieval(&res, &qpos, &rpos, 5.0, &[1]).unwrap();
        assert_eq!(m[0].recall, 1.0);
        let m = eval_retrieval(&res, &qpos, &rpos, 4.999, &[1]).unwrap();
        assert_eq!(m[0].recall, 0.0);
        assert!(matches!(
            eval_retrieval(&res, &qpos, &line_positions(&[]), 5.0, &[1]),
            Err(RetrievalError::MissingPose(_))
        ));
        assert!(matches!(eval_retrieval(&res, &qpos, &rpos, 0.0, &[1]), Err(RetrievalError::BadThreshold)));
        assert!(matches!(eval_retrieval(&[], &qpos, &rpos, 5.0, &[1]), Err(RetrievalError::NoResults)));
    }

    #[test]
    fn recall_never_drops_as_k_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let refs: Vec<(String, Vector3<f64>)> = (0..8)
                .map(|i| {
                    (format!("r{i}"), Vector3::new(rng.random::<f64>() * 30.0, rng.random::<f64>() * 30.0, 0.0))
                })
                .collect();
            let rpos: HashMap<_, _> = refs.iter().cloned().collect();
            let mut qpos = HashMap::new();
            let mut results = Vec::new();
            for qi in 0..5 {
                let name = format!("q{qi}");
                qpos.insert(name.clone(), Vector3::new(rng.random::<f64>() * 30.0, rng.random::<f64>() * 30.0, 0.0));
                let mut order: Vec<String> = refs.iter().map(|(n, _)| n.clone()).collect();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                results.push(RetrievalResult {
                    query_id: name,
                    ranked: order.into_iter().enumerate().map(|(i, n)| (n, 1.0 - 0.01 * i as f64)).collect(),
                    k_max: 8,
                });
            }
            let ks = [1, 2, 4, 8];
            let metrics = eval_retrieval(&results, &qpos, &rpos, 8.0, &ks).unwrap();
            for w in metrics.windows(2) {
                assert!(w[1].recall + 1e-12 >= w[0].recall, "recall dipped: {metrics:?}");
            }
        }
    }

    #[test]
    fn routing_plans() {
        let refs: Vec<String> = (0..4).map(|i| format!("r{i}")).collect();
        let cfg = Vc2Config::default();
        assert_eq!(
            route_query(RetrievalMode::Direct, "q", &refs, &cfg),
            vec![PlanItem::QueryImage { id: "q".into() }]
        );
        assert_eq!(
            route_query(RetrievalMode::Vc1, "q", &refs, &cfg),
            vec![PlanItem::QueryRemapped { id: "q".into() }]
        );
        let plan = route_query(RetrievalMode::Vc2, "q", &refs, &cfg);
        assert_eq!(plan.len(), 32);
        assert_eq!(cfg.crops_per_reference(), 8);
        assert!(plan.iter().all(|p| matches!(p, PlanItem::ReferenceCrop { .. })));
        assert!("vc2".parse::<RetrievalMode>().is_ok());
        assert!(matches!("warp".parse::<RetrievalMode>(), Err(RetrievalError::UnknownMode(_))));
    }
}
