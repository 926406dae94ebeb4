//! Encoder, optimizer and the alternating expansion / constraint loop.

mod adam;
mod checkpoint;
mod model;
mod probe;
mod strategy;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, LayerRecord};
pub(crate) use model::hex_string;
pub use model::{Activation, BoundEncoder, EncoderModel, Layer};
pub use probe::{c4_equilibrium_probe, ProbeRow};
pub use strategy::{StrategyRegistry, TrainingStrategy};

use crate::dataset::DataSet;
use crate::error::{Error, Result};
use crate::expansion::{expand_batch, expand_sample, ExpandedSample, ExpansionConfig, ExpansionInput, TrajectoryRow};
use crate::geometry::{compute_centroids, CentroidTable, ClassId};
use crate::losses::{tags, LossConfig};
use crate::retrieval::{evaluate, RankingMetric, RetrievalReport};
use crate::rng::{SeededRng, Stream};
use crate::tensor::{Tape, Tensor};

/// Counter key for expansion rounds, one per expanded batch.
pub const EXPAND_BATCH: &str = "expand_batch";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            embed_dim: 32,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub batch_size: usize,
    pub lr_theta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub ablation: String,
    pub loss: LossConfig,
    pub expansion: ExpansionConfig,
    pub encoder: EncoderConfig,
    /// Evaluate every this many epochs (and after the last one).
    pub eval_every: usize,
    pub ranking: RankingMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            total_epochs: 20,
            batch_size: 64,
            lr_theta: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            seed: 0,
            ablation: "full".into(),
            loss: LossConfig::default(),
            expansion: ExpansionConfig::default(),
            encoder: EncoderConfig::default(),
            eval_every: 2,
            ranking: RankingMetric::Euclidean,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_theta,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self, registry: &StrategyRegistry) -> Result<()> {
        self.adam().validate()?;
        self.loss.validate()?;
        self.expansion.validate(self.total_epochs)?;
        registry.resolve(&self.ablation)?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    /// Mean phase-two loss over the batches of each epoch.
    pub epoch_losses: Vec<f64>,
    pub evaluations: BTreeMap<usize, RetrievalReport>,
    /// Loss-term constructions and expansion rounds over the whole run.
    pub call_counts: BTreeMap<String, u64>,
    pub final_model_checksum: String,
    #[serde(skip)]
    pub final_model: EncoderModel,
    /// Kept out of the JSON so reruns serialize identically.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

/// Splits `labels` into batches of at most `batch_size` where every class
/// present contributes at least two samples. Each class is shuffled and cut
/// into pieces of `max(2, batch_size / n_classes)`; a trailing single is
/// folded into the previous piece; pieces are shuffled and packed in order.
pub fn class_balanced_batches(labels: &[ClassId], batch_size: usize, rng: &mut SeededRng) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch_size must be >= 2, got {batch_size}")));
    }
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let piece = (batch_size / by_class.len().max(1)).max(2);
    let mut pieces: Vec<Vec<usize>> = Vec::new();
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(Error::contract(format!("class {class} has fewer than 2 samples")));
        }
        rng.shuffle(&mut idx);
        let mut chunks: Vec<Vec<usize>> = idx.chunks(piece).map(<[usize]>::to_vec).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
            let single = chunks.pop().expect("nonempty");
            chunks.last_mut().expect("nonempty").extend(single);
        }
        pieces.extend(chunks);
    }
    rng.shuffle(&mut pieces);
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for p in pieces {
        if !current.is_empty() && current.len() + p.len() > batch_size {
            batches.push(std::mem::take(&mut current));
        }
        current.extend(p);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Epoch-by-epoch driver of the training loop.
pub struct Trainer<'a> {
    config: TrainConfig,
    strategy: Box<dyn TrainingStrategy>,
    train: &'a DataSet,
    tests: Option<&'a BTreeMap<String, DataSet>>,
    model: EncoderModel,
    adam: AdamState,
    batch_rng: SeededRng,
    /// Latest expansion result per training sample; starts at the inputs.
    carry: Vec<Vec<f64>>,
    expanded: Vec<ExpandedSample>,
    epoch: usize,
    epoch_losses: Vec<f64>,
    evaluations: BTreeMap<usize, RetrievalReport>,
    counts: BTreeMap<String, u64>,
    trajectories: Option<Vec<(u64, TrajectoryRow)>>,
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a DataSet, config: TrainConfig) -> Result<Self> {
        Self::with_registry(train, config, &StrategyRegistry::builtin())
    }

    pub fn with_registry(train: &'a DataSet, config: TrainConfig, registry: &StrategyRegistry) -> Result<Self> {
        config.validate(registry)?;
        let Some(input_dim) = train.dim() else {
            return Err(Error::contract("training set is empty"));
        };
        if let Some((c, _)) = train.class_counts().into_iter().find(|&(_, n)| n < 2) {
            return Err(Error::contract(format!("class {c} has fewer than 2 training samples")));
        }
        let enc = &config.encoder;
        let model = EncoderModel::random(
            input_dim,
            &enc.hidden,
            enc.embed_dim,
            enc.hidden_activation,
            enc.output_activation,
            config.seed,
        )?;
        let counts = [EXPAND_BATCH, tags::LOSS_DOM, tags::LOSS_DIS, tags::LOSS_C4]
            .into_iter()
            .map(|k| (k.to_string(), 0))
            .collect();
        Ok(Self {
            strategy: registry.create(&config.ablation)?,
            adam: AdamState::new(model.num_params()),
            batch_rng: SeededRng::for_stream(config.seed, Stream::Batching),
            carry: train.samples().iter().map(|s| s.features.clone()).collect(),
            expanded: Vec::new(),
            epoch: 0,
            epoch_losses: Vec::new(),
            evaluations: BTreeMap::new(),
            counts,
            trajectories: None,
            train,
            tests: None,
            model,
            config,
        })
    }

    /// Replaces the initial encoder. Only allowed before the first epoch.
    pub fn with_model(mut self, model: EncoderModel) -> Result<Self> {
        if self.epoch > 0 {
            return Err(Error::contract("with_model after training started"));
        }
        if model.input_dim() != self.model.input_dim() {
            return Err(Error::shape("with_model", &[self.model.input_dim()], &[model.input_dim()]));
        }
        self.adam = AdamState::new(model.num_params());
        self.model = model;
        Ok(self)
    }

    /// Evaluate on these domains on the configured cadence.
    pub fn with_tests(mut self, tests: &'a BTreeMap<String, DataSet>) -> Self {
        self.tests = (!tests.is_empty()).then_some(tests);
        self
    }

    /// Keep per-iterate diagnostics of every expansion round.
    pub fn record_trajectories(mut self) -> Self {
        self.trajectories = Some(Vec::new());
        self
    }

    pub fn model(&self) -> &EncoderModel {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn strategy(&self) -> &dyn TrainingStrategy {
        self.strategy.as_ref()
    }

    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn trajectories(&self) -> Option<&[(u64, TrajectoryRow)]> {
        self.trajectories.as_deref()
    }

    /// Centroids of the original training samples under the current encoder.
    pub fn centroids(&self) -> Result<CentroidTable> {
        let embeds = self
            .train
            .samples()
            .iter()
            .map(|s| Ok((s.class_id, self.model.forward(&s.features)?)))
            .collect::<Result<Vec<_>>>()?;
        compute_centroids(embeds.iter().map(|(c, e)| (*c, e.as_slice())))
    }

    /// Training samples followed by the latest expanded copies.
    pub fn omega(&self) -> Vec<(&[f64], ClassId)> {
        self.train
            .samples()
            .iter()
            .map(|s| (s.features.as_slice(), s.class_id))
            .chain(self.expanded.iter().map(|e| (e.features.as_slice(), e.class_id)))
            .collect()
    }

    fn expand(&mut self, centroids: &CentroidTable) -> Result<()> {
        let samples = self.train.samples();
        let mut fresh = Vec::with_capacity(samples.len());
        for (chunk_no, chunk) in samples.chunks(self.config.batch_size).enumerate() {
            let base = chunk_no * self.config.batch_size;
            let inputs: Vec<ExpansionInput> = chunk
                .iter()
                .enumerate()
                .map(|(j, s)| ExpansionInput {
                    id: s.id,
                    original: &s.features,
                    start: &self.carry[base + j],
                    class: s.class_id,
                })
                .collect();
            let out = match self.trajectories.as_mut() {
                None => expand_batch(&inputs, &self.model, centroids, &self.config.expansion, &self.config.loss)?.samples,
                Some(sink) => {
                    let mut out = Vec::with_capacity(inputs.len());
                    for input in &inputs {
                        let mut rows = Vec::new();
                        let features = expand_sample(
                            input,
                            &self.model,
                            centroids,
                            &self.config.expansion,
                            &self.config.loss,
                            Some(&mut rows),
                        )?;
                        sink.extend(rows.into_iter().map(|r| (input.id, r)));
                        out.push(ExpandedSample {
                            features,
                            class_id: input.class,
                            source_id: input.id,
                        });
                    }
                    out
                }
            };
            *self.counts.entry(EXPAND_BATCH.into()).or_insert(0) += 1;
            fresh.extend(out);
        }
        for (slot, e) in self.carry.iter_mut().zip(&fresh) {
            slot.clone_from(&e.features);
        }
        self.expanded = fresh;
        Ok(())
    }

    /// Runs one epoch and returns its mean phase-two loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.epoch + 1;
        let centroids = self.centroids()?;
        if self.strategy.expands() && self.config.expansion.epochs.contains(&epoch) {
            self.expand(&centroids)?;
        }

        let omega: Vec<(&[f64], ClassId)> = self
            .train
            .samples()
            .iter()
            .map(|s| (s.features.as_slice(), s.class_id))
            .chain(self.expanded.iter().map(|e| (e.features.as_slice(), e.class_id)))
            .collect();
        let labels: Vec<ClassId> = omega.iter().map(|o| o.1).collect();
        let batches = class_balanced_batches(&labels, self.config.batch_size, &mut self.batch_rng)?;
        let adam_cfg = self.config.adam();
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let tape = Tape::new();
            let enc = self.model.bind(&tape, true);
            let mut embedded = Vec::with_capacity(batch.len());
            for &i in batch {
                let x = tape.constant(Tensor::vector(omega[i].0.to_vec()));
                embedded.push((enc.forward(&tape, x)?, omega[i].1));
            }
            let loss = self
                .strategy
                .phase_two_loss(&tape, &embedded, &centroids, &self.config.loss)?;
            let value = tape.item(loss)?;
            for (k, n) in tape.tags() {
                *self.counts.entry(k.to_string()).or_insert(0) += n;
            }
            if !value.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            tape.backward(loss)?;
            let grads = enc.flat_grad(&tape)?;
            if !grads.iter().all(|g| g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            let mut params = self.model.flat_params();
            adam_step(&mut params, &grads, &mut self.adam, &adam_cfg)?;
            self.model.set_flat_params(&params)?;
            total += value;
        }
        let mean = total / batches.len() as f64;
        self.epoch = epoch;
        self.epoch_losses.push(mean);

        if let Some(tests) = self.tests {
            if epoch % self.config.eval_every == 0 || epoch == self.config.total_epochs {
                let report = evaluate(&self.model, tests, self.config.ranking)?;
                self.evaluations.insert(epoch, report);
            }
        }
        Ok(mean)
    }

    /// Runs the remaining configured epochs.
    pub fn run(&mut self) -> Result<()> {
        while self.epoch < self.config.total_epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn into_report(self, wall_clock_seconds: f64) -> TrainReport {
        TrainReport {
            final_model_checksum: self.model.checksum(),
            final_model: self.model,
            config: self.config,
            epoch_losses: self.epoch_losses,
            evaluations: self.evaluations,
            call_counts: self.counts,
            wall_clock_seconds,
        }
    }
}

pub fn train(dataset: &DataSet, config: TrainConfig) -> Result<TrainReport> {
    train_with_tests(dataset, &BTreeMap::new(), config)
}

pub fn train_with_tests(
    dataset: &DataSet,
    tests: &BTreeMap<String, DataSet>,
    config: TrainConfig,
) -> Result<TrainReport> {
    let start = Instant::now();
    let mut t = Trainer::new(dataset, config)?.with_tests(tests);
    t.run()?;
    Ok(t.into_report(start.elapsed().as_secs_f64()))
}
