//! Multi-seed ablation and lambda-sweep harness on the synthetic benchmark.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::{generate_benchmark, Benchmark, BenchmarkSpec, DomainTransform, Rotation};
use crate::error::Result;
use crate::retrieval::evaluate;
use crate::trainer::{train, TrainConfig};

/// Four seen and four unseen classes, three shifted target domains.
pub fn default_benchmark_spec(seed: u64) -> BenchmarkSpec {
    let shifted = |name: &str, angle: f64, scale: f64, k: u64| DomainTransform {
        name: name.into(),
        rotation: Rotation::Planes {
            angles: vec![angle; 4],
            seed: seed.wrapping_mul(31).wrapping_add(k),
        },
        scale,
        bias_scale: 0.5,
        bias_seed: seed.wrapping_mul(17).wrapping_add(k),
    };
    BenchmarkSpec {
        n_classes_total: 8,
        n_classes_seen: 4,
        samples_per_class: 200,
        input_dim: 16,
        class_separation: 3.0,
        intra_std: 0.5,
        domain_transforms: vec![
            shifted("rot_small", 0.35, 1.0, 1),
            shifted("rot_scaled", 0.6, 1.3, 2),
            shifted("rot_shrunk", 0.8, 0.8, 3),
        ],
        seed,
        latent_dim: Some(4),
        nuisance_std: Some(2.0),
    }
}

/// Training settings used with the default benchmark.
pub fn benchmark_train_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        total_epochs: 20,
        ..TrainConfig::default()
    };
    cfg.loss.lambda = 0.25;
    cfg
}

/// Trains on the benchmark's source split and returns the average MAP@R
/// over its target domains.
pub fn final_map(bench: &Benchmark, config: &TrainConfig) -> Result<f64> {
    let report = train(&bench.train, config.clone())?;
    Ok(evaluate(&report.final_model, &bench.tests, config.ranking)?.average.map_at_r)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    /// ablation → per-seed MAP@R
    pub runs: BTreeMap<String, Vec<f64>>,
    pub seeds: Vec<u64>,
}

impl AblationTable {
    pub fn mean(&self, ablation: &str) -> Option<f64> {
        let v = self.runs.get(ablation)?;
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Every ablation on every seed; the benchmark and model seed move together.
pub fn ablation_suite(
    spec_for_seed: impl Fn(u64) -> BenchmarkSpec,
    base: &TrainConfig,
    ablations: &[&str],
    seeds: &[u64],
) -> Result<AblationTable> {
    let mut runs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &seed in seeds {
        let bench = generate_benchmark(&spec_for_seed(seed))?;
        for &a in ablations {
            let cfg = TrainConfig {
                ablation: a.into(),
                seed,
                ..base.clone()
            };
            runs.entry(a.to_string()).or_default().push(final_map(&bench, &cfg)?);
        }
    }
    Ok(AblationTable {
        runs,
        seeds: seeds.to_vec(),
    })
}

/// MAP@R for each lambda on one benchmark, all other settings fixed.
pub fn lambda_sweep(bench: &Benchmark, base: &TrainConfig, lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
    lambdas
        .iter()
        .map(|&l| {
            let mut cfg = base.clone();
            cfg.loss.lambda = l;
            Ok((l, final_map(bench, &cfg)?))
        })
        .collect()
}

fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.map_or(true, |b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// The first maximum sits strictly inside the sweep.
pub fn has_interior_max(values: &[f64]) -> bool {
    matches!(argmax(values), Some(i) if i > 0 && i + 1 < values.len())
}

/// The first point beats every other point.
pub fn first_is_unique_max(values: &[f64]) -> bool {
    match values.split_first() {
        Some((first, rest)) => rest.iter().all(|v| first > v),
        None => false,
    }
}
