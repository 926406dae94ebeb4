use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DataSet, LabeledSample};
use crate::error::{Error, Result};
use crate::geometry::ClassId;
use crate::rng::{SeededRng, Stream};

/// Domain tag of the training split.
pub const SOURCE_DOMAIN: &str = "source";

const PROTOTYPE_ATTEMPTS: usize = 10_000;

/// Orthogonal part of a domain transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rotation {
    Identity,
    /// One Givens rotation per angle (radians), each in a random plane.
    Planes { angles: Vec<f64>, seed: u64 },
    /// Gram-Schmidt orthonormalization of a Gaussian matrix.
    Orthogonal { seed: u64 },
}

/// `x -> scale * R x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainTransform {
    pub name: String,
    pub rotation: Rotation,
    pub scale: f64,
    /// Standard deviation of each bias entry; zero for no bias.
    #[serde(default)]
    pub bias_scale: f64,
    #[serde(default)]
    pub bias_seed: u64,
}

impl DomainTransform {
    pub fn identity(name: &str) -> Self {
        Self {
            name: name.to_string(),
            rotation: Rotation::Identity,
            scale: 1.0,
            bias_scale: 0.0,
            bias_seed: 0,
        }
    }

    /// Dense rotation matrix, row-major `dim x dim`.
    pub fn rotation_matrix(&self, dim: usize) -> Vec<f64> {
        let mut r = identity(dim);
        match &self.rotation {
            Rotation::Identity => {}
            Rotation::Planes { angles, seed } => {
                let mut rng = SeededRng::new(*seed, Stream::Rotation as u64);
                for &theta in angles {
                    if dim < 2 {
                        break;
                    }
                    let u = unit(rng.normal_vec(dim));
                    let mut w = rng.normal_vec(dim);
                    let p: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
                    for (wi, ui) in w.iter_mut().zip(&u) {
                        *wi -= p * ui;
                    }
                    let w = unit(w);
                    let (c, s) = (theta.cos(), theta.sin());
                    let mut g = identity(dim);
                    for i in 0..dim {
                        for j in 0..dim {
                            g[i * dim + j] += (c - 1.0) * (u[i] * u[j] + w[i] * w[j])
                                + s * (w[i] * u[j] - u[i] * w[j]);
                        }
                    }
                    r = matmul(&g, &r, dim);
                }
            }
            Rotation::Orthogonal { seed } => {
                let mut rng = SeededRng::new(*seed, Stream::Rotation as u64);
                let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
                while cols.len() < dim {
                    let mut c = rng.normal_vec(dim);
                    for q in &cols {
                        let p: f64 = c.iter().zip(q).map(|(a, b)| a * b).sum();
                        for (ci, qi) in c.iter_mut().zip(q) {
                            *ci -= p * qi;
                        }
                    }
                    let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n > 1e-8 {
                        cols.push(c.into_iter().map(|x| x / n).collect());
                    }
                }
                for (j, col) in cols.iter().enumerate() {
                    for i in 0..dim {
                        r[i * dim + j] = col[i];
                    }
                }
            }
        }
        r
    }

    pub fn bias(&self, dim: usize) -> Vec<f64> {
        if self.bias_scale == 0.0 {
            return vec![0.0; dim];
        }
        let mut rng = SeededRng::new(self.bias_seed, Stream::Bias as u64);
        rng.normal_vec(dim)
            .into_iter()
            .map(|z| self.bias_scale * z)
            .collect()
    }

    /// Applies the transform to every point; matrix and bias are built once.
    pub fn apply_all(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let Some(dim) = points.first().map(Vec::len) else {
            return Vec::new();
        };
        let r = self.rotation_matrix(dim);
        let b = self.bias(dim);
        points
            .iter()
            .map(|x| {
                (0..dim)
                    .map(|i| {
                        let rx: f64 = (0..dim).map(|j| r[i * dim + j] * x[j]).sum();
                        self.scale * rx + b[i]
                    })
                    .collect()
            })
            .collect()
    }
}

fn identity(dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = 1.0;
    }
    m
}

fn matmul(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            for j in 0..dim {
                out[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    out
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Parameters of the synthetic benchmark. Classes `0..n_classes_seen` form
/// the training split in the source domain; the remaining classes appear
/// only in the test splits, one per domain transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub n_classes_total: u32,
    pub n_classes_seen: u32,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Minimum pairwise distance between class prototypes, which also sets
    /// the radius of the shell they are drawn on.
    pub class_separation: f64,
    pub intra_std: f64,
    pub domain_transforms: Vec<DomainTransform>,
    pub seed: u64,
    /// Number of leading coordinates the prototypes live in; the remaining
    /// coordinates carry noise only. Defaults to `input_dim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    /// Noise level outside the latent coordinates; defaults to `intra_std`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuisance_std: Option<f64>,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0 < self.n_classes_seen && self.n_classes_seen < self.n_classes_total) {
            return bad(format!(
                "need 0 < n_classes_seen ({}) < n_classes_total ({})",
                self.n_classes_seen, self.n_classes_total
            ));
        }
        if self.samples_per_class == 0 || self.input_dim == 0 {
            return bad("samples_per_class and input_dim must be positive".into());
        }
        if !(self.class_separation > 0.0) || !(self.intra_std > 0.0) {
            return bad("class_separation and intra_std must be positive".into());
        }
        if self.latent_dim.is_some_and(|k| k == 0 || k > self.input_dim) {
            return bad(format!("latent_dim must lie in 1..={}", self.input_dim));
        }
        if self.nuisance_std.is_some_and(|s| !(s >= 0.0)) {
            return bad("nuisance_std must be >= 0".into());
        }
        let mut names = BTreeSet::new();
        for t in &self.domain_transforms {
            if t.name == SOURCE_DOMAIN || t.name.is_empty() || !names.insert(t.name.as_str()) {
                return bad(format!("domain name {:?} is reserved, empty or repeated", t.name));
            }
            if !(t.scale > 0.0) || !(t.bias_scale >= 0.0) {
                return bad(format!("domain {} needs scale > 0 and bias_scale >= 0", t.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train: DataSet,
    pub tests: BTreeMap<String, DataSet>,
}

fn draw_prototypes(spec: &BenchmarkSpec) -> Result<Vec<Vec<f64>>> {
    let mut rng = SeededRng::for_stream(spec.seed, Stream::Prototypes);
    let radius = spec.class_separation;
    let mut protos: Vec<Vec<f64>> = Vec::new();
    for class in 0..spec.n_classes_total {
        let mut placed = false;
        for _ in 0..PROTOTYPE_ATTEMPTS {
            let mut cand: Vec<f64> = unit(rng.normal_vec(spec.latent()))
                .into_iter()
                .map(|x| radius * x)
                .collect();
            cand.resize(spec.input_dim, 0.0);
            let ok = protos.iter().all(|p| {
                let d2: f64 = p.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= spec.class_separation
            });
            if ok {
                protos.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place class {class} at separation {} in {} dimensions",
                spec.class_separation, spec.input_dim
            )));
        }
    }
    Ok(protos)
}

impl BenchmarkSpec {
    fn latent(&self) -> usize {
        self.latent_dim.unwrap_or(self.input_dim)
    }

    /// Per-coordinate noise level.
    fn noise_levels(&self) -> Vec<f64> {
        let k = self.latent();
        let outside = self.nuisance_std.unwrap_or(self.intra_std);
        (0..self.input_dim)
            .map(|d| if d < k { self.intra_std } else { outside })
            .collect()
    }
}

fn draw_class_samples(
    rng: &mut SeededRng,
    protos: &[Vec<f64>],
    classes: std::ops::Range<u32>,
    per_class: usize,
    std: &[f64],
) -> Vec<(ClassId, Vec<f64>)> {
    let mut out = Vec::new();
    for c in classes {
        let p = &protos[c as usize];
        for _ in 0..per_class {
            out.push((c, p.iter().zip(std).map(|(&x, &s)| x + s * rng.normal()).collect()));
        }
    }
    out
}

/// Builds the train split and one test split per domain transform.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    spec.validate()?;
    let protos = draw_prototypes(spec)?;
    let noise = spec.noise_levels();
    let mut next_id = 0u64;
    let mut label = |rows: Vec<(ClassId, Vec<f64>)>, domain: &str| -> Vec<LabeledSample> {
        rows.into_iter()
            .map(|(class_id, features)| {
                let s = LabeledSample {
                    id: next_id,
                    features,
                    class_id,
                    domain: domain.to_string(),
                };
                next_id += 1;
                s
            })
            .collect()
    };

    let mut rng = SeededRng::for_stream(spec.seed, Stream::TrainNoise);
    let train_rows = draw_class_samples(
        &mut rng,
        &protos,
        0..spec.n_classes_seen,
        spec.samples_per_class,
        &noise,
    );
    let train = DataSet::new(label(train_rows, SOURCE_DOMAIN))?;

    let mut tests = BTreeMap::new();
    for (k, t) in spec.domain_transforms.iter().enumerate() {
        let mut rng = SeededRng::new(spec.seed, Stream::TestNoise as u64 + k as u64);
        let rows = draw_class_samples(
            &mut rng,
            &protos,
            spec.n_classes_seen..spec.n_classes_total,
            spec.samples_per_class,
            &noise,
        );
        let (classes, points): (Vec<ClassId>, Vec<Vec<f64>>) = rows.into_iter().unzip();
        let moved = t.apply_all(&points);
        tests.insert(
            t.name.clone(),
            DataSet::new(label(classes.into_iter().zip(moved).collect(), &t.name))?,
        );
    }
    Ok(Benchmark { train, tests })
}
