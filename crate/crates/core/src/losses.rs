//! Losses for both training phases, built on the tape.
//!
//! Expansion-phase terms are differentiated with respect to the expanded
//! input; constraint-phase terms with respect to the encoder parameters.
//! Centroids always enter as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euclidean_on_tape, geodesic_on_tape, CentroidTable, ClassId};
use crate::tensor::{Tape, Var};
use crate::trainer::BoundEncoder;

/// Tape tags recorded by each loss, used to audit which terms a run touched.
pub mod tags {
    pub const LOSS_C3E: &str = "loss_c3e";
    pub const LOSS_DOM: &str = "loss_dom";
    pub const LOSS_DIS: &str = "loss_dis";
    pub const LOSS_C4: &str = "loss_c4";
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Hinge margin of the high-level semantic term.
    pub margin_m: f64,
    /// Weight of the centroid-attraction term.
    pub lambda: f64,
    pub margin_pos: f64,
    pub margin_neg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin_m: 1.0,
            lambda: 0.75,
            margin_pos: 0.0,
            margin_neg: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_m > 0.0) {
            return Err(Error::Config(format!("margin_m must be > 0, got {}", self.margin_m)));
        }
        if !(self.margin_pos >= 0.0 && self.margin_neg > self.margin_pos) {
            return Err(Error::Config(format!(
                "need margin_neg > margin_pos >= 0, got {} / {}",
                self.margin_neg, self.margin_pos
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Negative geodesic distance from the centroid.
pub fn loss_geo(tape: &Tape, embedding: Var, centroid: &[f64]) -> Result<Var> {
    let mu = tape.vector(centroid);
    tape.neg(geodesic_on_tape(tape, mu, embedding)?)
}

/// Energy of the straight path from `original` to `expanded`: `|x - x~|^2`.
pub fn loss_sem_low(tape: &Tape, original: &[f64], expanded: Var) -> Result<Var> {
    let x = tape.vector(original);
    let shape = tape.shape(expanded)?;
    if shape != [original.len()] {
        return Err(Error::shape("loss_sem_low", &[original.len()], &shape));
    }
    tape.sum(tape.square(tape.sub(expanded, x)?)?)
}

/// `[d(mu, phi(x~)) - d(mu, phi(x)) + m]_+` with Euclidean `d`.
pub fn loss_sem_high(
    tape: &Tape,
    original_embedding: Var,
    expanded_embedding: Var,
    centroid: &[f64],
    margin_m: f64,
) -> Result<Var> {
    let mu = tape.vector(centroid);
    let d_exp = euclidean_on_tape(tape, mu, expanded_embedding)?;
    let d_orig = euclidean_on_tape(tape, mu, original_embedding)?;
    tape.relu(tape.shift(tape.sub(d_exp, d_orig)?, margin_m)?)
}

/// One expansion-phase sample: the original input, its expanded copy on the
/// tape, and its class.
#[derive(Debug, Clone, Copy)]
pub struct ExpansionTerm<'a> {
    pub original: &'a [f64],
    pub expanded: Var,
    pub class: ClassId,
}

/// Batch mean of `loss_geo + loss_sem_low + loss_sem_high`, unit weights.
pub fn loss_c3e(
    tape: &Tape,
    batch: &[ExpansionTerm<'_>],
    encoder: &BoundEncoder,
    centroids: &CentroidTable,
    cfg: &LossConfig,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::contract("loss_c3e on an empty batch"));
    }
    tape.tag(tags::LOSS_C3E);
    let mut per_sample = Vec::with_capacity(batch.len());
    for term in batch {
        let mu = centroids.get(term.class)?;
        let phi_exp = encoder.forward(tape, term.expanded)?;
        let phi_orig = encoder.forward(tape, tape.vector(term.original))?;
        let geo = loss_geo(tape, phi_exp, mu)?;
        let low = loss_sem_low(tape, term.original, term.expanded)?;
        let high = loss_sem_high(tape, phi_orig, phi_exp, mu, cfg.margin_m)?;
        per_sample.push(tape.add_n(&[geo, low, high])?);
    }
    let total = tape.add_n(&per_sample)?;
    tape.scale(total, 1.0 / batch.len() as f64)
}

/// Pairwise contrastive term over unordered pairs `i < j`.
///
/// Same-label pairs pay `[d - margin_pos]_+`, averaged over positive pairs;
/// different-label pairs pay `[margin_neg - d]_+`, averaged over negative
/// pairs. A side with no pairs contributes zero.
pub fn loss_dom(tape: &Tape, batch: &[(Var, ClassId)], cfg: &LossConfig) -> Result<Var> {
    if batch.len() < 2 {
        return Err(Error::contract(format!(
            "loss_dom needs at least 2 samples, got {}",
            batch.len()
        )));
    }
    tape.tag(tags::LOSS_DOM);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            let (ei, yi) = batch[i];
            let (ej, yj) = batch[j];
            let d = euclidean_on_tape(tape, ei, ej)?;
            if yi == yj {
                pos.push(tape.relu(tape.shift(d, -cfg.margin_pos)?)?);
            } else {
                neg.push(tape.relu(tape.shift(tape.neg(d)?, cfg.margin_neg)?)?);
            }
        }
    }
    let mean_of = |terms: &[Var]| -> Result<Var> {
        if terms.is_empty() {
            Ok(tape.scalar(0.0))
        } else {
            tape.scale(tape.add_n(terms)?, 1.0 / terms.len() as f64)
        }
    };
    let p = mean_of(&pos)?;
    let n = mean_of(&neg)?;
    tape.add(p, n)
}

/// Geodesic distance to the centroid; the exact negation of [`loss_geo`].
pub fn loss_dis(tape: &Tape, embedding: Var, centroid: &[f64]) -> Result<Var> {
    tape.tag(tags::LOSS_DIS);
    let mu = tape.vector(centroid);
    geodesic_on_tape(tape, mu, embedding)
}

/// The two parts of the constraint objective, kept apart so their gradients
/// can be inspected separately.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintTerms {
    pub dom: Var,
    /// Batch mean of `loss_dis`, not yet weighted by lambda.
    pub dis_mean: Var,
}

pub fn constraint_terms(
    tape: &Tape,
    batch: &[(Var, ClassId)],
    centroids: &CentroidTable,
    cfg: &LossConfig,
) -> Result<ConstraintTerms> {
    if batch.is_empty() {
        return Err(Error::contract("loss_c4 on an empty batch"));
    }
    let dom = loss_dom(tape, batch, cfg)?;
    let mut dis = Vec::with_capacity(batch.len());
    for &(e, class) in batch {
        dis.push(loss_dis(tape, e, centroids.get(class)?)?);
    }
    let dis_mean = tape.scale(tape.add_n(&dis)?, 1.0 / batch.len() as f64)?;
    Ok(ConstraintTerms { dom, dis_mean })
}

/// `loss_dom + lambda * mean(loss_dis)` over a batch drawn from originals
/// and expanded samples alike. With `lambda == 0` the attraction term is not
/// built at all and the result is exactly `loss_dom`.
pub fn loss_c4(
    tape: &Tape,
    batch: &[(Var, ClassId)],
    centroids: &CentroidTable,
    cfg: &LossConfig,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::contract("loss_c4 on an empty batch"));
    }
    tape.tag(tags::LOSS_C4);
    if cfg.lambda == 0.0 {
        return loss_dom(tape, batch, cfg);
    }
    let terms = constraint_terms(tape, batch, centroids, cfg)?;
    tape.add(terms.dom, tape.scale(terms.dis_mean, cfg.lambda)?)
}
