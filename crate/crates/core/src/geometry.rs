//! Hypersphere projection, geodesic and Euclidean distances, class centroids.
//!
//! Plain-slice functions serve inference and reporting; the `*_on_tape`
//! variants build the same quantities on a [`Tape`] for differentiation.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Norm at or below which a vector has no usable direction.
pub const PROJECTION_FLOOR: f64 = 1e-12;

pub type ClassId = u32;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_dims(op: &'static str, u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::shape(op, &[u.len()], &[v.len()]));
    }
    Ok(())
}

pub fn project_to_sphere(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > PROJECTION_FLOOR) {
        return Err(Error::DegenerateVector { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine between the spherical projections, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims("cosine", u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    for n in [nu, nv] {
        if !(n > PROJECTION_FLOOR) {
            return Err(Error::DegenerateVector { norm: n });
        }
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Angle between the directions of `u` and `v`, divided by pi. In `[0, 1]`.
///
/// Computed as `2 atan2(|u^ - v^|, |u^ + v^|)`, which keeps full precision
/// near 0 and pi where `acos` of a rounded cosine does not.
pub fn geodesic_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims("geodesic_distance", u, v)?;
    let (pu, pv) = (project_to_sphere(u)?, project_to_sphere(v)?);
    let diff: Vec<f64> = pu.iter().zip(&pv).map(|(a, b)| a - b).collect();
    let sum: Vec<f64> = pu.iter().zip(&pv).map(|(a, b)| a + b).collect();
    Ok(2.0 * norm(&diff).atan2(norm(&sum)) / PI)
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims("euclidean_distance", u, v)?;
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Differentiable geodesic distance; both operands must be vectors of equal
/// length. The cosine passes through the clamped `acos` of the tape.
pub fn geodesic_on_tape(tape: &Tape, u: Var, v: Var) -> Result<Var> {
    let nu = tape.l2_norm(u)?;
    let nv = tape.l2_norm(v)?;
    for n in [nu, nv] {
        let value = tape.item(n)?;
        if !(value > PROJECTION_FLOOR) {
            return Err(Error::DegenerateVector { norm: value });
        }
    }
    let dot = tape.dot(u, v)?;
    let cos = tape.div(dot, tape.mul(nu, nv)?)?;
    tape.scale(tape.acos(cos)?, 1.0 / PI)
}

pub fn euclidean_on_tape(tape: &Tape, u: Var, v: Var) -> Result<Var> {
    let (su, sv) = (tape.shape(u)?, tape.shape(v)?);
    if su != sv {
        return Err(Error::shape("euclidean_distance", &su, &sv));
    }
    tape.l2_norm(tape.sub(u, v)?)
}

/// Per-class mean embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    centroids: BTreeMap<ClassId, Vec<f64>>,
    counts: BTreeMap<ClassId, usize>,
}

impl CentroidTable {
    pub fn get(&self, class: ClassId) -> Result<&[f64]> {
        self.centroids
            .get(&class)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::contract(format!("no centroid for class {class}")))
    }

    pub fn count(&self, class: ClassId) -> Option<usize> {
        self.counts.get(&class).copied()
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.centroids.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids.values().next().map_or(0, Vec::len)
    }
}

/// Arithmetic mean of each class's embeddings, summed in input order.
pub fn compute_centroids<'a, I>(embeddings: I) -> Result<CentroidTable>
where
    I: IntoIterator<Item = (ClassId, &'a [f64])>,
{
    let mut sums: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    let mut dim = None;
    for (class, e) in embeddings {
        match dim {
            None => dim = Some(e.len()),
            Some(d) if d != e.len() => {
                return Err(Error::shape("compute_centroids", &[d], &[e.len()]))
            }
            _ => {}
        }
        let acc = sums.entry(class).or_insert_with(|| vec![0.0; e.len()]);
        for (a, x) in acc.iter_mut().zip(e) {
            *a += x;
        }
        *counts.entry(class).or_insert(0) += 1;
    }
    if sums.is_empty() {
        return Err(Error::contract("compute_centroids needs at least one embedding"));
    }
    let centroids = sums
        .into_iter()
        .map(|(c, s)| {
            let n = counts[&c] as f64;
            (c, s.into_iter().map(|x| x / n).collect())
        })
        .collect();
    Ok(CentroidTable { centroids, counts })
}
