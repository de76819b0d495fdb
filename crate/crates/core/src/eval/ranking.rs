use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{cross_distances, FeatureBatch, Metric};

/// Which gallery items a query may be ranked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    /// Drop gallery items with the query's person id *and* camera id.
    pub exclude_same_camera: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            exclude_same_camera: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRanking {
    /// Admissible gallery indices by ascending distance, ties by index.
    pub order: Vec<usize>,
    /// Whether `order[r]` shares the query's person id.
    pub matches: Vec<bool>,
    pub average_precision: f64,
}

impl QueryRanking {
    /// 0-based rank of the first relevant item.
    pub fn first_match(&self) -> usize {
        self.matches
            .iter()
            .position(|&m| m)
            .expect("ranking holds a match")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub queries: Vec<QueryRanking>,
}

/// Mean of precision@k over the ranks k holding a relevant item.
pub fn average_precision(matches: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &m) in matches.iter().enumerate() {
        if m {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::Protocol(
            "average precision needs at least one relevant item".into(),
        ));
    }
    Ok(sum / hits as f64)
}

const EVAL_EPS: f64 = 0.0;

pub fn rank_gallery(
    query: &FeatureBatch,
    gallery: &FeatureBatch,
    metric: Metric,
    protocol: Protocol,
) -> Result<RankingResult> {
    if gallery.is_empty() {
        return Err(Error::Protocol("gallery is empty".into()));
    }
    let dist = cross_distances(&query.features, &gallery.features, metric, EVAL_EPS)?;
    let mut queries = Vec::with_capacity(query.len());
    for q in 0..query.len() {
        let (pid, cam) = (query.person_ids[q], query.camera_ids[q]);
        let row = dist.row(q);
        let mut order: Vec<usize> = (0..gallery.len())
            .filter(|&g| {
                !(protocol.exclude_same_camera
                    && gallery.person_ids[g] == pid
                    && gallery.camera_ids[g] == cam)
            })
            .collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let matches: Vec<bool> = order
            .iter()
            .map(|&g| gallery.person_ids[g] == pid)
            .collect();
        if !matches.contains(&true) {
            return Err(Error::Protocol(format!(
                "query {q} (person {pid}, camera {cam}) has no admissible relevant gallery item"
            )));
        }
        let average_precision = average_precision(&matches)?;
        queries.push(QueryRanking {
            order,
            matches,
            average_precision,
        });
    }
    Ok(RankingResult { queries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    /// `cmc[k - 1]` is the fraction of queries with a match in the top k.
    pub cmc: Vec<f64>,
    pub num_queries: usize,
    pub metric: Metric,
    pub probe_accuracy: Option<f64>,
    pub chance_level: Option<f64>,
}

impl EvalReport {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[(k.max(1) - 1).min(self.cmc.len() - 1)]
    }

    pub fn rank1(&self) -> f64 {
        self.rank(1)
    }
}

pub fn evaluate(
    query: &FeatureBatch,
    gallery: &FeatureBatch,
    metric: Metric,
    protocol: Protocol,
) -> Result<EvalReport> {
    if query.is_empty() {
        return Err(Error::Protocol("no queries".into()));
    }
    let ranking = rank_gallery(query, gallery, metric, protocol)?;
    let n = ranking.queries.len();
    let mut hist = vec![0usize; gallery.len()];
    let mut ap_sum = 0.0;
    for r in &ranking.queries {
        hist[r.first_match()] += 1;
        ap_sum += r.average_precision;
    }
    let mut acc = 0;
    let cmc = hist
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / n as f64
        })
        .collect();
    Ok(EvalReport {
        map: ap_sum / n as f64,
        cmc,
        num_queries: n,
        metric,
        probe_accuracy: None,
        chance_level: None,
    })
}
