use super::{Adam, Metrics, TrainConfig};
use crate::diffmath::{init_params, mlp_forward, LossGraphBuilder, MlpParams, MlpSpec};
use crate::error::{Error, Result};
use crate::fieldio::{fit_normalization, FieldDataset, Node, NormalizationMeta};
use crate::mpinn::derive_seed;

/// A single network trained on high-fidelity samples alone.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleFidelityModel {
    spec: MlpSpec,
    params: MlpParams,
    norm: NormalizationMeta,
}

impl SingleFidelityModel {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn normalization(&self) -> &NormalizationMeta {
        &self.norm
    }

    pub fn predict(&self, x: &Node) -> Result<f64> {
        let out = mlp_forward(&self.spec, &self.params, &self.norm.normalize_node(x))?[0];
        if !out.is_finite() {
            return Err(Error::NetworkOutput {
                network: "baseline",
            });
        }
        Ok(self.norm.denormalize_value(out))
    }

    pub fn predict_field(&self, nodes: &[Node]) -> Result<FieldDataset> {
        if nodes.is_empty() {
            return Err(Error::InvalidDataset("no nodes to predict on".into()));
        }
        let values = nodes
            .iter()
            .map(|x| self.predict(x))
            .collect::<Result<Vec<_>>>()?;
        FieldDataset::new("baseline", nodes.to_vec(), values)
    }

    pub fn evaluate(&self, truth: &FieldDataset) -> Result<Metrics> {
        let pred = self.predict_field(truth.nodes())?;
        Metrics::from_predictions(pred.values(), truth.values())
    }
}

/// Train one MLP on `hf_points` with plain MSE and the same Adam settings
/// as the multi-fidelity model. Returns the model and its training-set
/// metrics. The weight penalty and loss weights of `cfg` are not used.
pub fn single_fidelity_baseline(
    hf_points: &FieldDataset,
    spec: &MlpSpec,
    cfg: &TrainConfig,
) -> Result<(SingleFidelityModel, Metrics)> {
    cfg.validate()?;
    spec.validate()?;
    if spec.input_dim != 2 || spec.output_dim != 1 {
        return Err(Error::InvalidSpec(format!(
            "baseline network must map 2 inputs to 1 output, got {} -> {}",
            spec.input_dim, spec.output_dim
        )));
    }
    let norm = fit_normalization(hf_points)?;
    let data = norm.apply(hf_points);

    let mut g = LossGraphBuilder::new(vec![spec.clone()], 0)?;
    let b = g.add_batch(vec![
        data.nodes().iter().map(|n| n[0]).collect(),
        data.nodes().iter().map(|n| n[1]).collect(),
        data.values().to_vec(),
    ])?;
    let (x1, x2, y) = (g.column(b, 0)?, g.column(b, 1)?, g.column(b, 2)?);
    let pred = g.net(0, 0, &[x1, x2])?;
    let diff = g.sub(pred, y)?;
    let sq = g.square(diff)?;
    let mse = g.mean(sq)?;
    let graph = g.finish(mse)?;

    let mut theta = init_params(spec, derive_seed(cfg.seed, 1)).into_vec();
    let mut adam = Adam::new(theta.len(), cfg.learning_rate);
    for epoch in 0..cfg.epochs {
        let eval = graph.evaluate(&[&theta], &[])?;
        let loss = eval.loss();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                total: loss,
                lf_mse: 0.0,
                hf_mse: loss,
                l2: 0.0,
            });
        }
        let grads = graph.backward(&eval, &[&theta], &[])?;
        adam.step(&mut theta, grads.nets[0].as_slice(), None);
    }

    let model = SingleFidelityModel {
        spec: spec.clone(),
        params: MlpParams::from_vec(spec, theta)?,
        norm,
    };
    let metrics = model.evaluate(hf_points)?;
    Ok((model, metrics))
}
