//! Loss assembly, full-batch Adam training, and evaluation.
//!
//! The training loss, with each fidelity in its own normalized units, is
//!
//! ```text
//! L = w_lf * MSE(NNL(x_i), y_lf_i)            over all low-fidelity nodes
//!   + w_hf * MSE(composite(x_j), y_hf_j)      over the high-fidelity training nodes
//!   + lambda * sum(NNH2 weights^2)            biases excluded
//! ```

mod adam;
mod baseline;
mod metrics;

pub use adam::Adam;
pub use baseline::{single_fidelity_baseline, SingleFidelityModel};
pub use metrics::{evaluate, Metrics};

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{GradVector, LossGraph, LossGraphBuilder, MlpParams, NodeId};
use crate::error::{Error, Result};
use crate::fieldio::{fit_normalization, FidelityPair, NormalizationMeta};
use crate::mpinn::{
    derive_seed, logistic, CompositionMode, MpinnConfig, MpinnModel, Network, OutputScale,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lf: f64,
    pub hf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lf: 1.0, hf: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the squared-weight penalty on NNH2.
    pub lambda_l2: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// When set, must match the model's composition mode.
    pub composition_mode: Option<CompositionMode>,
    /// Number of high-fidelity training nodes drawn (seeded) from the pair;
    /// `None` uses them all.
    pub hf_budget: Option<usize>,
    /// Let the high-fidelity term update NNL through its prediction. When
    /// false, NNL is fitted by the low-fidelity term alone and the
    /// correction networks see its output as a fixed input.
    pub hf_updates_nnl: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5000,
            learning_rate: 1e-3,
            lambda_l2: 1e-4,
            seed: 0,
            loss_weights: LossWeights::default(),
            composition_mode: None,
            hf_budget: None,
            hf_updates_nnl: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda_l2 >= 0.0 && self.lambda_l2.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_l2 must be non-negative, got {}",
                self.lambda_l2
            )));
        }
        let LossWeights { lf, hf } = self.loss_weights;
        if !(lf >= 0.0 && hf >= 0.0 && lf.is_finite() && hf.is_finite() && lf + hf > 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative with a positive sum, got ({lf}, {hf})"
            )));
        }
        Ok(())
    }

    fn check_mode(&self, model_mode: CompositionMode) -> Result<()> {
        match self.composition_mode {
            Some(mode) if mode != model_mode => Err(Error::Config(format!(
                "training composition mode {mode:?} disagrees with model mode {model_mode:?}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Indices of the high-fidelity training nodes: all of them, or a seeded
/// random subset of size `budget` (returned in ascending order).
pub fn select_hf_indices(n: usize, budget: Option<usize>, seed: u64) -> Result<Vec<usize>> {
    let mut all: Vec<usize> = (0..n).collect();
    let Some(budget) = budget else {
        return Ok(all);
    };
    if budget > n {
        return Err(Error::Config(format!(
            "hf_budget {budget} exceeds the {n} available high-fidelity nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4846));
    all.shuffle(&mut rng);
    all.truncate(budget);
    all.sort_unstable();
    Ok(all)
}

/// The weighted loss and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossComponents {
    pub lf_mse: f64,
    pub hf_mse: f64,
    /// Already multiplied by `lambda_l2`.
    pub l2: f64,
    pub total: f64,
}

impl LossComponents {
    fn is_finite(&self) -> bool {
        self.lf_mse.is_finite()
            && self.hf_mse.is_finite()
            && self.l2.is_finite()
            && self.total.is_finite()
    }
}

/// Normalized `(x1, x2, y)` training columns.
struct Columns {
    x1: Vec<f64>,
    x2: Vec<f64>,
    y: Vec<f64>,
}

impl Columns {
    fn new(
        norm: &NormalizationMeta,
        scale: &OutputScale,
        data: impl Iterator<Item = ([f64; 2], f64)>,
    ) -> Self {
        let mut c = Columns {
            x1: Vec::new(),
            x2: Vec::new(),
            y: Vec::new(),
        };
        for (x, y) in data {
            let xn = norm.normalize_node(&x);
            c.x1.push(xn[0]);
            c.x2.push(xn[1]);
            c.y.push(scale.normalize(y));
        }
        c
    }

    fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

fn training_columns(
    model: &MpinnModel,
    pair: &FidelityPair,
    hf_indices: &[usize],
) -> (Columns, Columns) {
    let norm = model.normalization();
    let lf = Columns::new(
        norm,
        &OutputScale::of(norm),
        pair.lf
            .nodes()
            .iter()
            .copied()
            .zip(pair.lf.values().iter().copied()),
    );
    let hf_nodes = pair.hf_on_lf_nodes.nodes();
    let hf_values = pair.hf_on_lf_nodes.values();
    let hf = Columns::new(
        norm,
        model.hf_scale(),
        hf_indices.iter().map(|&i| (hf_nodes[i], hf_values[i])),
    );
    (lf, hf)
}

/// z-score fit of the high-fidelity values used for training. Falls back
/// to `fallback` when they are constant or there are fewer than two.
fn fit_hf_scale(values: &[f64], fallback: OutputScale) -> OutputScale {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if values.len() >= 2 && std > 0.0 && std.is_finite() {
        OutputScale { mean, std }
    } else {
        log::warn!(
            "high-fidelity training values are degenerate; using the low-fidelity output scale"
        );
        fallback
    }
}

fn hf_indices_for(pair: &FidelityPair, cfg: &TrainConfig) -> Result<Vec<usize>> {
    let idx = select_hf_indices(pair.hf_on_lf_nodes.len(), cfg.hf_budget, cfg.seed)?;
    if idx.is_empty() && cfg.loss_weights.hf > 0.0 {
        return Err(Error::Config(
            "empty high-fidelity training set with a positive hf loss weight".into(),
        ));
    }
    Ok(idx)
}

/// Loss evaluated directly through the model's prediction path.
pub fn total_loss(
    model: &MpinnModel,
    pair: &FidelityPair,
    cfg: &TrainConfig,
) -> Result<LossComponents> {
    cfg.validate()?;
    cfg.check_mode(model.config().composition_mode)?;
    let hf_idx = hf_indices_for(pair, cfg)?;
    let (lf, hf) = training_columns(model, pair, &hf_idx);

    let mut lf_sum = 0.0;
    for i in 0..lf.y.len() {
        let e = model.low_normalized(&[lf.x1[i], lf.x2[i]])? - lf.y[i];
        lf_sum += e * e;
    }
    let lf_mse = lf_sum / lf.y.len() as f64;

    let mut hf_sum = 0.0;
    for j in 0..hf.y.len() {
        let e = model.branches_normalized(&[hf.x1[j], hf.x2[j]])?.high - hf.y[j];
        hf_sum += e * e;
    }
    let hf_mse = if hf.is_empty() {
        0.0
    } else {
        hf_sum / hf.y.len() as f64
    };

    let l2 = cfg.lambda_l2
        * model
            .params(Network::Nonlinear)
            .weight_norm_sq(&model.config().nnh2);
    let w = cfg.loss_weights;
    Ok(LossComponents {
        lf_mse,
        hf_mse,
        l2,
        total: w.lf * lf_mse + w.hf * hf_mse + l2,
    })
}

/// The loss as a differentiable graph over `[NNL, NNH1, NNH2]` and the
/// scalar `raw_alpha`.
struct LossProblem {
    graph: LossGraph,
    lf_mse: NodeId,
    hf_mse: Option<NodeId>,
    l2: NodeId,
}

impl LossProblem {
    fn build(config: &MpinnConfig, lf: Columns, hf: Columns, cfg: &TrainConfig) -> Result<Self> {
        let mut g = LossGraphBuilder::new(
            vec![config.nnl.clone(), config.nnh1.clone(), config.nnh2.clone()],
            1,
        )?;

        let lb = g.add_batch(vec![lf.x1, lf.x2, lf.y])?;
        let (lx1, lx2, ly) = (g.column(lb, 0)?, g.column(lb, 1)?, g.column(lb, 2)?);
        let low = g.net(0, 0, &[lx1, lx2])?;
        let diff = g.sub(low, ly)?;
        let sq = g.square(diff)?;
        let lf_mse = g.mean(sq)?;
        let w_lf = g.constant(cfg.loss_weights.lf)?;
        let mut total = g.mul(w_lf, lf_mse)?;

        let hf_mse = if hf.is_empty() {
            None
        } else {
            let hb = g.add_batch(vec![hf.x1, hf.x2, hf.y])?;
            let (hx1, hx2, hy) = (g.column(hb, 0)?, g.column(hb, 1)?, g.column(hb, 2)?);
            let mut low = g.net(0, 0, &[hx1, hx2])?;
            if !cfg.hf_updates_nnl {
                low = g.detach(low)?;
            }
            let lin = g.net(1, 0, &[hx1, hx2, low])?;
            let nonlin = g.net(2, 0, &[hx1, hx2, low])?;
            let pred = match config.composition_mode {
                CompositionMode::ConvexBlend => {
                    let raw = g.scalar(0)?;
                    let alpha = g.logistic(raw)?;
                    let one = g.constant(1.0)?;
                    let beta = g.sub(one, alpha)?;
                    let a = g.mul(alpha, lin)?;
                    let b = g.mul(beta, nonlin)?;
                    g.add(a, b)?
                }
                CompositionMode::Additive => {
                    let s = g.add(low, lin)?;
                    g.add(s, nonlin)?
                }
            };
            let diff = g.sub(pred, hy)?;
            let sq = g.square(diff)?;
            let hf_mse = g.mean(sq)?;
            let w_hf = g.constant(cfg.loss_weights.hf)?;
            let term = g.mul(w_hf, hf_mse)?;
            total = g.add(total, term)?;
            Some(hf_mse)
        };

        let wsq = g.weight_norm_sq(2)?;
        let lambda = g.constant(cfg.lambda_l2)?;
        let l2 = g.mul(lambda, wsq)?;
        total = g.add(total, l2)?;

        Ok(LossProblem {
            graph: g.finish(total)?,
            lf_mse,
            hf_mse,
            l2,
        })
    }

    fn components(&self, eval: &crate::diffmath::Evaluation) -> LossComponents {
        LossComponents {
            lf_mse: eval.value(self.lf_mse)[0],
            hf_mse: self.hf_mse.map_or(0.0, |n| eval.value(n)[0]),
            l2: eval.value(self.l2)[0],
            total: eval.loss(),
        }
    }
}

/// Flat training state `[NNL | NNH1 | NNH2 | raw_alpha]`.
struct Theta {
    values: Vec<f64>,
    bounds: [usize; 4],
}

impl Theta {
    fn from_model(model: &MpinnModel) -> Self {
        let mut values = Vec::new();
        let mut bounds = [0; 4];
        for (k, net) in Network::ALL.into_iter().enumerate() {
            values.extend_from_slice(model.params(net).as_slice());
            bounds[k + 1] = values.len();
        }
        values.push(model.raw_alpha());
        Theta { values, bounds }
    }

    fn nets(&self) -> [&[f64]; 3] {
        let b = self.bounds;
        [
            &self.values[b[0]..b[1]],
            &self.values[b[1]..b[2]],
            &self.values[b[2]..b[3]],
        ]
    }

    fn scalars(&self) -> &[f64] {
        &self.values[self.bounds[3]..]
    }

    fn raw_alpha(&self) -> f64 {
        self.values[self.bounds[3]]
    }

    fn into_model(self, template: &MpinnModel) -> Result<MpinnModel> {
        let cfg = template.config();
        let [a, b, c] = self.nets();
        MpinnModel::from_parts(
            cfg.clone(),
            MlpParams::from_vec(&cfg.nnl, a.to_vec())?,
            MlpParams::from_vec(&cfg.nnh1, b.to_vec())?,
            MlpParams::from_vec(&cfg.nnh2, c.to_vec())?,
            self.raw_alpha(),
            *template.normalization(),
            *template.hf_scale(),
        )
    }
}

/// Gradients of the training loss with respect to every trainable quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub nnl: GradVector,
    pub nnh1: GradVector,
    pub nnh2: GradVector,
    pub raw_alpha: f64,
}

/// Loss and reverse-mode gradients at the model's current parameters: the
/// exact gradient of [`total_loss`] when `cfg.hf_updates_nnl` is set,
/// otherwise with the high-fidelity path into NNL blocked.
pub fn loss_gradient(
    model: &MpinnModel,
    pair: &FidelityPair,
    cfg: &TrainConfig,
) -> Result<(LossComponents, ModelGradients)> {
    cfg.validate()?;
    cfg.check_mode(model.config().composition_mode)?;
    let hf_idx = hf_indices_for(pair, cfg)?;
    let (lf, hf) = training_columns(model, pair, &hf_idx);
    let problem = LossProblem::build(model.config(), lf, hf, cfg)?;
    let theta = Theta::from_model(model);
    let nets = theta.nets();
    let eval = problem.graph.evaluate(&nets, theta.scalars())?;
    let grads = problem.graph.backward(&eval, &nets, theta.scalars())?;
    let mut it = grads.nets.into_iter();
    Ok((
        problem.components(&eval),
        ModelGradients {
            nnl: it.next().expect("three networks"),
            nnh1: it.next().expect("three networks"),
            nnh2: it.next().expect("three networks"),
            raw_alpha: grads.scalars[0],
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub lf_mse: f64,
    pub hf_mse: f64,
    pub l2: f64,
    pub alpha: f64,
}

/// Loss trace of one training run. Record `e` holds the loss after `e`
/// optimizer steps, so a run of `n` epochs has `n + 1` records.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub final_alpha: f64,
    pub wall_time: Duration,
}

impl TrainReport {
    pub fn initial(&self) -> &EpochRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("report has at least one record")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        writeln!(w, "epoch,total,lf_mse,hf_mse,l2,alpha")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.epoch, r.total, r.lf_mse, r.hf_mse, r.l2, r.alpha
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(file)
    }
}

/// Fit normalization on the low-fidelity data, initialize from the seed,
/// and run `cfg.epochs` full-batch Adam steps on all parameters (and on
/// `raw_alpha` when it is trainable).
pub fn train(
    pair: &FidelityPair,
    config: &MpinnConfig,
    cfg: &TrainConfig,
) -> Result<(MpinnModel, TrainReport)> {
    let norm = fit_normalization(&pair.lf)?;
    let hf_idx = hf_indices_for(pair, cfg)?;
    let hf_values: Vec<f64> = hf_idx
        .iter()
        .map(|&i| pair.hf_on_lf_nodes.values()[i])
        .collect();
    let model = MpinnModel::init(config.clone(), norm, cfg.seed)?
        .with_hf_scale(fit_hf_scale(&hf_values, OutputScale::of(&norm)))?;
    train_from(model, pair, cfg)
}

/// Continue training from an existing model, keeping its normalization.
pub fn train_from(
    model: MpinnModel,
    pair: &FidelityPair,
    cfg: &TrainConfig,
) -> Result<(MpinnModel, TrainReport)> {
    let start = Instant::now();
    cfg.validate()?;
    cfg.check_mode(model.config().composition_mode)?;
    let hf_idx = hf_indices_for(pair, cfg)?;
    let (lf, hf) = training_columns(&model, pair, &hf_idx);
    let problem = LossProblem::build(model.config(), lf, hf, cfg)?;

    let mut theta = Theta::from_model(&model);
    let mut frozen = vec![false; theta.values.len()];
    let alpha_slot = theta.bounds[3];
    frozen[alpha_slot] = !model.config().alpha_trainable
        || model.config().composition_mode == CompositionMode::Additive;
    let mut adam = Adam::new(theta.values.len(), cfg.learning_rate);
    let mut grad_flat = vec![0.0; theta.values.len()];
    let mut records = Vec::with_capacity(cfg.epochs + 1);

    for epoch in 0..=cfg.epochs {
        let nets = theta.nets();
        let eval = problem.graph.evaluate(&nets, theta.scalars())?;
        let c = problem.components(&eval);
        if !c.is_finite() {
            return Err(Error::Diverged {
                epoch,
                total: c.total,
                lf_mse: c.lf_mse,
                hf_mse: c.hf_mse,
                l2: c.l2,
            });
        }
        records.push(EpochRecord {
            epoch,
            total: c.total,
            lf_mse: c.lf_mse,
            hf_mse: c.hf_mse,
            l2: c.l2,
            alpha: logistic(theta.raw_alpha()),
        });
        if epoch == cfg.epochs {
            break;
        }
        let grads = problem.graph.backward(&eval, &nets, theta.scalars())?;
        let mut at = 0;
        for g in grads
            .nets
            .iter()
            .map(GradVector::as_slice)
            .chain([grads.scalars.as_slice()])
        {
            grad_flat[at..at + g.len()].copy_from_slice(g);
            at += g.len();
        }
        adam.step(&mut theta.values, &grad_flat, Some(&frozen));
    }

    let trained = theta.into_model(&model)?;
    let report = TrainReport {
        records,
        final_alpha: trained.alpha(),
        wall_time: start.elapsed(),
    };
    Ok((trained, report))
}
