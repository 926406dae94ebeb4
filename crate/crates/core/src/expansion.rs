//! Centrifugal expansion: gradient descent on input copies with the encoder
//! and centroids frozen.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euclidean_distance, geodesic_distance, CentroidTable, ClassId};
use crate::losses::{loss_c3e, ExpansionTerm, LossConfig};
use crate::tensor::{Tape, Tensor};
use crate::trainer::EncoderModel;

/// Domain tag carried by expanded samples.
pub const EXPANDED_DOMAIN: &str = "expanded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    /// Descent steps per expansion round.
    #[serde(alias = "iterations_Te")]
    pub iterations: usize,
    pub step_size: f64,
    /// 1-based epochs at which a round runs.
    #[serde(alias = "expansion_epochs")]
    pub epochs: BTreeSet<usize>,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            step_size: 1e-2,
            epochs: BTreeSet::from([1]),
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self, total_epochs: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("expansion iterations must be >= 1".into()));
        }
        if !(self.step_size >= 0.0) {
            return Err(Error::Config(format!("step_size must be >= 0, got {}", self.step_size)));
        }
        // with no epochs at all nothing is ever scheduled
        if let Some(&e) = self.epochs.iter().find(|&&e| e == 0 || (total_epochs > 0 && e > total_epochs)) {
            return Err(Error::Config(format!(
                "expansion epoch {e} lies outside 1..={total_epochs}"
            )));
        }
        Ok(())
    }

    /// `start, start + every, ...` up to `total_epochs`.
    pub fn every(start: usize, every: usize, total_epochs: usize) -> BTreeSet<usize> {
        (start..=total_epochs).step_by(every.max(1)).collect()
    }
}

/// One sample to expand. `start` is where descent begins (the carried-over
/// result of the previous round, or the original itself on the first);
/// the semantic terms always measure against `original`.
#[derive(Debug, Clone, Copy)]
pub struct ExpansionInput<'a> {
    pub id: u64,
    pub original: &'a [f64],
    pub start: &'a [f64],
    pub class: ClassId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedSample {
    pub features: Vec<f64>,
    pub class_id: ClassId,
    /// Id of the original sample this copy was expanded from.
    pub source_id: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpandedSet {
    pub samples: Vec<ExpandedSample>,
}

impl ExpandedSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Diagnostics for one iterate of the descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub iteration: usize,
    /// Geodesic distance from the class centroid to the embedding.
    pub d_geo: f64,
    /// Euclidean distance from the class centroid to the embedding.
    pub d_euclid: f64,
    pub loss: f64,
}

struct Step {
    loss: f64,
    grad: Vec<f64>,
}

fn evaluate(
    input: &ExpansionInput<'_>,
    current: &[f64],
    model: &EncoderModel,
    centroids: &CentroidTable,
    lconfig: &LossConfig,
    with_grad: bool,
) -> Result<Step> {
    let tape = Tape::new();
    let encoder = model.bind(&tape, false);
    let x_tilde = tape.leaf(Tensor::vector(current.to_vec()), with_grad);
    let term = ExpansionTerm {
        original: input.original,
        expanded: x_tilde,
        class: input.class,
    };
    let loss = loss_c3e(&tape, &[term], &encoder, centroids, lconfig)?;
    let value = tape.item(loss)?;
    let grad = if with_grad {
        tape.backward(loss)?;
        tape.grad(x_tilde)?
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![0.0; current.len()])
    } else {
        Vec::new()
    };
    Ok(Step { loss: value, grad })
}

fn diagnostics(
    iteration: usize,
    current: &[f64],
    loss: f64,
    class: ClassId,
    model: &EncoderModel,
    centroids: &CentroidTable,
) -> Result<TrajectoryRow> {
    let phi = model.forward(current)?;
    let mu = centroids.get(class)?;
    Ok(TrajectoryRow {
        iteration,
        d_geo: geodesic_distance(mu, &phi)?,
        d_euclid: euclidean_distance(mu, &phi)?,
        loss,
    })
}

/// Runs the descent for one sample; pushes one row per iterate into `trace`
/// (including the starting point) when given.
pub fn expand_sample(
    input: &ExpansionInput<'_>,
    model: &EncoderModel,
    centroids: &CentroidTable,
    econfig: &ExpansionConfig,
    lconfig: &LossConfig,
    mut trace: Option<&mut Vec<TrajectoryRow>>,
) -> Result<Vec<f64>> {
    if input.start.len() != input.original.len() {
        return Err(Error::shape(
            "expand_sample",
            &[input.original.len()],
            &[input.start.len()],
        ));
    }
    let mut current = input.start.to_vec();
    for t in 0..econfig.iterations {
        let step = evaluate(input, &current, model, centroids, lconfig, true)?;
        if !step.loss.is_finite() || !step.grad.iter().all(|g| g.is_finite()) {
            return Err(Error::ExpansionDiverged {
                sample_id: input.id,
                iteration: t,
            });
        }
        if let Some(rows) = trace.as_deref_mut() {
            rows.push(diagnostics(t, &current, step.loss, input.class, model, centroids)?);
        }
        for (x, g) in current.iter_mut().zip(&step.grad) {
            *x -= econfig.step_size * g;
        }
        if !current.iter().all(|x| x.is_finite()) {
            return Err(Error::ExpansionDiverged {
                sample_id: input.id,
                iteration: t,
            });
        }
    }
    if let Some(rows) = trace {
        let last = evaluate(input, &current, model, centroids, lconfig, false)?;
        rows.push(diagnostics(
            econfig.iterations,
            &current,
            last.loss,
            input.class,
            model,
            centroids,
        )?);
    }
    Ok(current)
}

/// Expands every sample of a batch independently. The model is only read.
pub fn expand_batch(
    batch: &[ExpansionInput<'_>],
    model: &EncoderModel,
    centroids: &CentroidTable,
    econfig: &ExpansionConfig,
    lconfig: &LossConfig,
) -> Result<ExpandedSet> {
    if batch.is_empty() {
        return Err(Error::contract("expand_batch on an empty batch"));
    }
    let mut samples = Vec::with_capacity(batch.len());
    for input in batch {
        let features = expand_sample(input, model, centroids, econfig, lconfig, None)?;
        samples.push(ExpandedSample {
            features,
            class_id: input.class,
            source_id: input.id,
        });
    }
    Ok(ExpandedSet { samples })
}

/// Per-iterate diagnostics of one sample's descent: `iterations + 1` rows.
pub fn expansion_trajectory(
    input: &ExpansionInput<'_>,
    model: &EncoderModel,
    centroids: &CentroidTable,
    econfig: &ExpansionConfig,
    lconfig: &LossConfig,
) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::with_capacity(econfig.iterations + 1);
    if econfig.iterations == 0 {
        let s = evaluate(input, input.start, model, centroids, lconfig, false)?;
        rows.push(diagnostics(0, input.start, s.loss, input.class, model, centroids)?);
        return Ok(rows);
    }
    expand_sample(input, model, centroids, econfig, lconfig, Some(&mut rows))?;
    Ok(rows)
}

/// CSV with columns `sample_id,iter,d_geo,d_euclid,loss`.
pub fn write_trajectories<W: Write>(mut w: W, rows: &[(u64, TrajectoryRow)]) -> Result<()> {
    writeln!(w, "sample_id,iter,d_geo,d_euclid,loss")?;
    for (id, r) in rows {
        writeln!(
            w,
            "{id},{},{:.16e},{:.16e},{:.16e}",
            r.iteration, r.d_geo, r.d_euclid, r.loss
        )?;
    }
    Ok(())
}
