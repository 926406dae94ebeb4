use serde::Serialize;

use super::EncoderModel;
use crate::error::{Error, Result};
use crate::geometry::{CentroidTable, ClassId};
use crate::losses::{constraint_terms, LossConfig};
use crate::tensor::{Tape, Tensor};

/// Gradient norms of the two constraint terms and of their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeRow {
    pub lambda: f64,
    /// `|grad loss_dom|`
    pub dom_norm: f64,
    /// `lambda * |grad mean(loss_dis)|`
    pub dis_norm: f64,
    /// `|grad (loss_dom + lambda * mean(loss_dis))|`
    pub combined_norm: f64,
}

impl ProbeRow {
    /// Combined norm relative to the larger term; near 0 at equilibrium.
    pub fn ratio(&self) -> f64 {
        let denom = self.dom_norm.max(self.dis_norm);
        if denom == 0.0 {
            0.0
        } else {
            self.combined_norm / denom
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Parameter gradients of the constraint terms on one batch, one row per
/// lambda. Margins come from `lconfig`; its own lambda is ignored.
pub fn c4_equilibrium_probe(
    model: &EncoderModel,
    batch: &[(&[f64], ClassId)],
    centroids: &CentroidTable,
    lconfig: &LossConfig,
    lambdas: &[f64],
) -> Result<Vec<ProbeRow>> {
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::Config(format!("probe lambda must be >= 0, got {l}")));
    }
    let tape = Tape::new();
    let enc = model.bind(&tape, true);
    let mut embedded = Vec::with_capacity(batch.len());
    for &(x, class) in batch {
        let e = enc.forward(&tape, tape.constant(Tensor::vector(x.to_vec())))?;
        embedded.push((e, class));
    }
    let terms = constraint_terms(&tape, &embedded, centroids, lconfig)?;
    tape.backward(terms.dom)?;
    let g_dom = enc.flat_grad(&tape)?;
    tape.backward(terms.dis_mean)?;
    let g_dis = enc.flat_grad(&tape)?;

    let dom_norm = norm(&g_dom);
    let dis_unit = norm(&g_dis);
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let combined: Vec<f64> = g_dom.iter().zip(&g_dis).map(|(a, b)| a + lambda * b).collect();
            ProbeRow {
                lambda,
                dom_norm,
                dis_norm: lambda * dis_unit,
                combined_norm: norm(&combined),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::compute_centroids;
    use crate::rng::SeededRng;
    use crate::trainer::Activation;

    fn setup() -> (EncoderModel, Vec<(Vec<f64>, ClassId)>, CentroidTable) {
        let model = EncoderModel::random(3, &[8], 4, Activation::Tanh, Activation::Identity, 2).unwrap();
        let mut rng = SeededRng::new(5, 0);
        let data: Vec<(Vec<f64>, ClassId)> = (0..10).map(|i| (rng.normal_vec(3), (i % 2) as ClassId)).collect();
        let emb: Vec<(ClassId, Vec<f64>)> = data.iter().map(|(x, c)| (*c, model.forward(x).unwrap())).collect();
        let c = compute_centroids(emb.iter().map(|(c, e)| (*c, e.as_slice()))).unwrap();
        (model, data, c)
    }

    #[test]
    fn lambda_zero_has_no_attraction_column() {
        let (model, data, c) = setup();
        let batch: Vec<(&[f64], ClassId)> = data.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let rows = c4_equilibrium_probe(&model, &batch, &c, &LossConfig::default(), &[0.0]).unwrap();
        assert_eq!(rows[0].dis_norm, 0.0);
        assert_eq!(rows[0].combined_norm, rows[0].dom_norm);
    }

    #[test]
    fn attraction_norm_grows_with_lambda() {
        let (model, data, c) = setup();
        let batch: Vec<(&[f64], ClassId)> = data.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let lambdas = [0.1, 0.5, 1.0, 2.0];
        let rows = c4_equilibrium_probe(&model, &batch, &c, &LossConfig::default(), &lambdas).unwrap();
        assert!(rows.windows(2).all(|w| w[1].dis_norm > w[0].dis_norm));
        // untrained: no cancellation between the terms
        assert!(rows[2].ratio() > 0.2, "{:?}", rows[2]);
    }
}
