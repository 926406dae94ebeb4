//! Exact nearest-neighbor retrieval metrics: Recall@k, R-Precision, MAP@R.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::DataSet;
use crate::error::{Error, Result};
use crate::geometry::{euclidean_distance, geodesic_distance, ClassId};
use crate::trainer::EncoderModel;

/// Cutoffs reported by [`evaluate`].
pub const DEFAULT_KS: [usize; 2] = [1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingMetric {
    #[default]
    Euclidean,
    Geodesic,
}

impl RankingMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            RankingMetric::Euclidean => euclidean_distance(a, b),
            RankingMetric::Geodesic => geodesic_distance(a, b),
        }
    }
}

impl FromStr for RankingMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(RankingMetric::Euclidean),
            "geodesic" => Ok(RankingMetric::Geodesic),
            other => Err(Error::Config(format!("unknown ranking metric {other:?}"))),
        }
    }
}

/// Gallery indices by ascending distance to `query`, ties by ascending id.
/// Entries whose id equals `query_id` are left out.
pub fn rank_neighbors(
    query: &[f64],
    query_id: u64,
    gallery: &[(u64, &[f64])],
    metric: RankingMetric,
) -> Result<Vec<usize>> {
    let mut scored = Vec::with_capacity(gallery.len());
    for (i, &(id, e)) in gallery.iter().enumerate() {
        if id != query_id {
            scored.push((metric.distance(query, e)?, id, i));
        }
    }
    if scored.is_empty() {
        return Err(Error::contract("rank_neighbors with an empty gallery"));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, _, i)| i).collect())
}

/// 1 if any of the first `k` labels matches, else 0.
pub fn recall_at_k(ranked: &[ClassId], query: ClassId, k: usize) -> Result<f64> {
    if k < 1 || k > ranked.len() {
        return Err(Error::contract(format!(
            "recall_at_k needs 1 <= k <= {}, got {k}",
            ranked.len()
        )));
    }
    Ok(if ranked[..k].contains(&query) { 1.0 } else { 0.0 })
}

fn relevant_count(ranked: &[ClassId], query: ClassId) -> usize {
    ranked.iter().filter(|&&c| c == query).count()
}

/// Relevant fraction of the top `R` ranks, `R` the number of relevant items
/// in the ranking. `None` when nothing is relevant.
pub fn r_precision(ranked: &[ClassId], query: ClassId) -> Option<f64> {
    let r = relevant_count(ranked, query);
    if r == 0 {
        return None;
    }
    let hits = relevant_count(&ranked[..r], query);
    Some(hits as f64 / r as f64)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `sum hits_i / i` as a reduced fraction; `None` on overflow.
fn exact_precision_sum(ranked: &[ClassId], query: ClassId) -> Option<(u128, u128)> {
    let (mut num, mut den) = (0u128, 1u128);
    let mut hits = 0u128;
    for (i, &c) in ranked.iter().enumerate() {
        if c != query {
            continue;
        }
        hits += 1;
        let d = (i + 1) as u128;
        let g = gcd(den, d);
        let lcm = den.checked_mul(d / g)?;
        num = num.checked_mul(lcm / den)?.checked_add(hits.checked_mul(lcm / d)?)?;
        den = lcm;
        let g = gcd(num, den);
        (num, den) = (num / g, den / g);
    }
    Some((num, den))
}

const EXACT: u128 = 1 << 53;

/// `(1/R) * sum_{i<=R} P(i) * rel(i)`. `None` when nothing is relevant.
/// Short rankings are summed as an exact fraction and rounded once.
pub fn map_at_r(ranked: &[ClassId], query: ClassId) -> Option<f64> {
    let r = relevant_count(ranked, query);
    if r == 0 {
        return None;
    }
    let top = &ranked[..r];
    if let Some((num, den)) = exact_precision_sum(top, query) {
        if let Some(den) = den.checked_mul(r as u128) {
            let g = gcd(num, den);
            let (num, den) = (num / g, den / g);
            if num < EXACT && den < EXACT {
                return Some(num as f64 / den as f64);
            }
        }
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, &c) in top.iter().enumerate() {
        if c == query {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    Some(acc / r as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    /// Keyed by k.
    pub recall_at: BTreeMap<usize, f64>,
    pub r_precision: f64,
    pub map_at_r: f64,
    /// Queries that entered the averages.
    pub queries: usize,
    /// Queries whose class had no other member in the gallery.
    pub excluded_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub domains: BTreeMap<String, DomainMetrics>,
    /// Unweighted mean over domains.
    pub average: DomainMetrics,
    pub metric: RankingMetric,
}

/// Leave-one-out metrics over a labeled embedding set.
pub fn score_embeddings(
    items: &[(u64, ClassId, Vec<f64>)],
    metric: RankingMetric,
    ks: &[usize],
) -> Result<DomainMetrics> {
    if items.len() < 2 {
        return Err(Error::contract("retrieval needs at least 2 samples"));
    }
    let gallery: Vec<(u64, &[f64])> = items.iter().map(|(id, _, e)| (*id, e.as_slice())).collect();
    let ks: Vec<usize> = ks.iter().copied().filter(|&k| k >= 1 && k < items.len()).collect();
    let mut recall_sums = vec![0.0; ks.len()];
    let (mut rp_sum, mut map_sum) = (0.0, 0.0);
    let (mut used, mut excluded) = (0usize, 0usize);
    for (id, class, e) in items {
        let order = rank_neighbors(e, *id, &gallery, metric)?;
        let labels: Vec<ClassId> = order.iter().map(|&i| items[i].1).collect();
        let (Some(rp), Some(map)) = (r_precision(&labels, *class), map_at_r(&labels, *class)) else {
            excluded += 1;
            continue;
        };
        for (s, &k) in recall_sums.iter_mut().zip(&ks) {
            *s += recall_at_k(&labels, *class, k)?;
        }
        rp_sum += rp;
        map_sum += map;
        used += 1;
    }
    let n = used.max(1) as f64;
    Ok(DomainMetrics {
        recall_at: ks.iter().zip(&recall_sums).map(|(&k, &s)| (k, s / n)).collect(),
        r_precision: rp_sum / n,
        map_at_r: map_sum / n,
        queries: used,
        excluded_queries: excluded,
    })
}

pub fn embed_dataset(model: &EncoderModel, data: &DataSet) -> Result<Vec<(u64, ClassId, Vec<f64>)>> {
    data.samples()
        .iter()
        .map(|s| Ok((s.id, s.class_id, model.forward(&s.features)?)))
        .collect()
}

/// Embeds each test domain with the frozen model and scores it in isolation.
pub fn evaluate(
    model: &EncoderModel,
    tests: &BTreeMap<String, DataSet>,
    metric: RankingMetric,
) -> Result<RetrievalReport> {
    if tests.is_empty() {
        return Err(Error::contract("evaluate needs at least one test domain"));
    }
    let mut domains = BTreeMap::new();
    for (name, data) in tests {
        if data.dim() != Some(model.input_dim()) && !data.is_empty() {
            return Err(Error::Schema(format!(
                "domain {name} has {} features but the model expects {}",
                data.dim().unwrap_or(0),
                model.input_dim()
            )));
        }
        let items = embed_dataset(model, data)?;
        if metric == RankingMetric::Geodesic {
            for (id, _, e) in &items {
                crate::geometry::project_to_sphere(e).map_err(|err| Error::DegenerateSample {
                    sample_id: *id,
                    source: Box::new(err),
                })?;
            }
        }
        domains.insert(name.clone(), score_embeddings(&items, metric, &DEFAULT_KS)?);
    }
    let average = average_metrics(domains.values());
    Ok(RetrievalReport {
        domains,
        average,
        metric,
    })
}

fn average_metrics<'a>(ms: impl Iterator<Item = &'a DomainMetrics> + Clone) -> DomainMetrics {
    let n = ms.clone().count().max(1) as f64;
    let mut recall_at: BTreeMap<usize, f64> = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for m in ms.clone() {
        for (&k, &v) in &m.recall_at {
            *recall_at.entry(k).or_insert(0.0) += v;
            *counts.entry(k).or_insert(0) += 1;
        }
    }
    for (k, v) in recall_at.iter_mut() {
        *v /= counts[k] as f64;
    }
    DomainMetrics {
        recall_at,
        r_precision: ms.clone().map(|m| m.r_precision).sum::<f64>() / n,
        map_at_r: ms.clone().map(|m| m.map_at_r).sum::<f64>() / n,
        queries: ms.clone().map(|m| m.queries).sum(),
        excluded_queries: ms.map(|m| m.excluded_queries).sum(),
    }
}

impl RetrievalReport {
    /// Aligned table in percent: domain, R@1, R@2, RP, MAP.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>8} {:>8} {:>8} {:>8}", "domain", "R@1", "R@2", "RP", "MAP");
        let row = |out: &mut String, name: &str, m: &DomainMetrics| {
            let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
            let _ = writeln!(
                out,
                "{:<16} {:>8} {:>8} {:>8} {:>8}",
                name,
                pct(m.recall_at.get(&1).copied()),
                pct(m.recall_at.get(&2).copied()),
                pct(Some(m.r_precision)),
                pct(Some(m.map_at_r)),
            );
        };
        for (name, m) in &self.domains {
            row(&mut out, name, m);
        }
        row(&mut out, "average", &self.average);
        out
    }
}
