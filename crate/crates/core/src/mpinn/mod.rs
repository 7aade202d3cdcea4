//! The three-network multi-fidelity model.
//!
//! - `NNL` maps normalized coordinates to the normalized low-fidelity value.
//! - `NNH1` is a single affine layer on `(x1, x2, y_low)`: the linear
//!   correlation.
//! - `NNH2` is a small nonlinear network on the same triple.
//!
//! In [`CompositionMode::ConvexBlend`] the high-fidelity prediction is
//! `alpha * NNH1 + (1 - alpha) * NNH2` with `alpha = logistic(raw_alpha)`;
//! in [`CompositionMode::Additive`] the two corrections are added to the
//! low-fidelity prediction. All networks work in z-score space. Coordinates
//! and the low-fidelity output share one [`NormalizationMeta`]; the
//! high-fidelity output has its own [`OutputScale`].

mod persist;

pub use persist::{load_model, save_model, SCHEMA_VERSION};

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::diffmath::{init_params, mlp_forward, Activation, MlpParams, MlpSpec};
use crate::error::{Error, Result};
use crate::fieldio::{FieldDataset, Node, NormalizationMeta};

/// Recommended hidden-layer count for the nonlinear correction network.
pub const NNH2_DEPTH_BAND: RangeInclusive<usize> = 1..=2;
/// Recommended hidden-layer width for the nonlinear correction network.
pub const NNH2_WIDTH_BAND: RangeInclusive<usize> = 4..=20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    #[default]
    ConvexBlend,
    Additive,
}

impl std::str::FromStr for CompositionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convex_blend" => Ok(CompositionMode::ConvexBlend),
            "additive" => Ok(CompositionMode::Additive),
            other => Err(Error::Config(format!(
                "unknown composition mode `{other}` (expected convex_blend or additive)"
            ))),
        }
    }
}

/// The three sub-networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Network {
    Low,
    Linear,
    Nonlinear,
}

impl Network {
    pub const ALL: [Network; 3] = [Network::Low, Network::Linear, Network::Nonlinear];

    pub fn name(self) -> &'static str {
        match self {
            Network::Low => "NNL",
            Network::Linear => "NNH1",
            Network::Nonlinear => "NNH2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpinnConfig {
    pub nnl: MlpSpec,
    pub nnh1: MlpSpec,
    pub nnh2: MlpSpec,
    pub composition_mode: CompositionMode,
    pub alpha_trainable: bool,
}

impl Default for MpinnConfig {
    fn default() -> Self {
        MpinnConfig {
            nnl: MlpSpec {
                input_dim: 2,
                hidden_widths: vec![20, 20, 20],
                output_dim: 1,
                activation: Activation::Relu,
            },
            nnh1: MlpSpec {
                input_dim: 3,
                hidden_widths: vec![],
                output_dim: 1,
                activation: Activation::Identity,
            },
            nnh2: MlpSpec {
                input_dim: 3,
                hidden_widths: vec![10, 10],
                output_dim: 1,
                activation: Activation::Tanh,
            },
            composition_mode: CompositionMode::ConvexBlend,
            alpha_trainable: true,
        }
    }
}

impl MpinnConfig {
    /// Hard structural checks. Logs a warning (but succeeds) when NNH2 lies
    /// outside the recommended depth/width band.
    pub fn validate(&self) -> Result<()> {
        for (spec, name, input) in [
            (&self.nnl, "NNL", 2),
            (&self.nnh1, "NNH1", 3),
            (&self.nnh2, "NNH2", 3),
        ] {
            spec.validate()
                .map_err(|e| Error::InvalidSpec(format!("{name}: {e}")))?;
            if spec.input_dim != input {
                return Err(Error::InvalidSpec(format!(
                    "{name} input_dim must be {input}, got {}",
                    spec.input_dim
                )));
            }
            if spec.output_dim != 1 {
                return Err(Error::InvalidSpec(format!(
                    "{name} output_dim must be 1, got {}",
                    spec.output_dim
                )));
            }
        }
        if !self.nnh1.hidden_widths.is_empty() || self.nnh1.activation != Activation::Identity {
            return Err(Error::InvalidSpec(
                "NNH1 must be a single affine layer (no hidden layers, identity activation)".into(),
            ));
        }
        if let Some(msg) = self.nnh2_band_warning() {
            log::warn!("{msg}");
        }
        Ok(())
    }

    pub fn nnh2_band_warning(&self) -> Option<String> {
        let depth = self.nnh2.depth();
        let widths_ok = self
            .nnh2
            .hidden_widths
            .iter()
            .all(|w| NNH2_WIDTH_BAND.contains(w));
        if NNH2_DEPTH_BAND.contains(&depth) && widths_ok {
            None
        } else {
            Some(format!(
                "NNH2 has depth {depth} and widths {:?}; the recommended band is depth {}..={} and width {}..={}",
                self.nnh2.hidden_widths,
                NNH2_DEPTH_BAND.start(),
                NNH2_DEPTH_BAND.end(),
                NNH2_WIDTH_BAND.start(),
                NNH2_WIDTH_BAND.end()
            ))
        }
    }

    pub fn spec(&self, network: Network) -> &MlpSpec {
        match network {
            Network::Low => &self.nnl,
            Network::Linear => &self.nnh1,
            Network::Nonlinear => &self.nnh2,
        }
    }
}

/// Numerically stable logistic function.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// splitmix64; gives each sub-network its own seed stream.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// z-score parameters of one scalar output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputScale {
    pub mean: f64,
    pub std: f64,
}

impl OutputScale {
    /// The value statistics of `norm`.
    pub fn of(norm: &NormalizationMeta) -> Self {
        OutputScale {
            mean: norm.output_mean,
            std: norm.output_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.std.is_finite() {
            return Err(Error::NonFinite {
                context: "output scale".into(),
            });
        }
        if self.std <= 0.0 {
            return Err(Error::DegenerateField("output scale".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Intermediate values of one high-fidelity evaluation, all in normalized
/// units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branches {
    pub low: f64,
    pub linear: f64,
    pub nonlinear: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpinnModel {
    config: MpinnConfig,
    nnl: MlpParams,
    nnh1: MlpParams,
    nnh2: MlpParams,
    raw_alpha: f64,
    norm: NormalizationMeta,
    hf_scale: OutputScale,
}

impl MpinnModel {
    /// Seeded initial model with `raw_alpha = 0` (alpha = 0.5). The
    /// high-fidelity output scale starts equal to the low-fidelity one.
    pub fn init(config: MpinnConfig, norm: NormalizationMeta, seed: u64) -> Result<Self> {
        config.validate()?;
        let nnl = init_params(&config.nnl, derive_seed(seed, 1));
        let nnh1 = init_params(&config.nnh1, derive_seed(seed, 2));
        let nnh2 = init_params(&config.nnh2, derive_seed(seed, 3));
        MpinnModel::from_parts(config, nnl, nnh1, nnh2, 0.0, norm, OutputScale::of(&norm))
    }

    pub fn from_parts(
        config: MpinnConfig,
        nnl: MlpParams,
        nnh1: MlpParams,
        nnh2: MlpParams,
        raw_alpha: f64,
        norm: NormalizationMeta,
        hf_scale: OutputScale,
    ) -> Result<Self> {
        config.validate()?;
        norm.validate()?;
        hf_scale.validate()?;
        for (network, params) in Network::ALL.into_iter().zip([&nnl, &nnh1, &nnh2]) {
            MlpParams::from_vec(config.spec(network), params.as_slice().to_vec())
                .map_err(|e| Error::InvalidSpec(format!("{}: {e}", network.name())))?;
        }
        if !raw_alpha.is_finite() {
            return Err(Error::NonFinite {
                context: "raw_alpha".into(),
            });
        }
        Ok(MpinnModel {
            config,
            nnl,
            nnh1,
            nnh2,
            raw_alpha,
            norm,
            hf_scale,
        })
    }

    pub fn config(&self) -> &MpinnConfig {
        &self.config
    }

    /// Coordinate and low-fidelity output scaling.
    pub fn normalization(&self) -> &NormalizationMeta {
        &self.norm
    }

    pub fn hf_scale(&self) -> &OutputScale {
        &self.hf_scale
    }

    pub fn raw_alpha(&self) -> f64 {
        self.raw_alpha
    }

    pub fn alpha(&self) -> f64 {
        logistic(self.raw_alpha)
    }

    pub fn params(&self, network: Network) -> &MlpParams {
        match network {
            Network::Low => &self.nnl,
            Network::Linear => &self.nnh1,
            Network::Nonlinear => &self.nnh2,
        }
    }

    /// Replace one network's parameters.
    pub fn with_params(mut self, network: Network, params: MlpParams) -> Result<Self> {
        let params = MlpParams::from_vec(self.config.spec(network), params.into_vec())?;
        match network {
            Network::Low => self.nnl = params,
            Network::Linear => self.nnh1 = params,
            Network::Nonlinear => self.nnh2 = params,
        }
        Ok(self)
    }

    pub fn with_hf_scale(mut self, hf_scale: OutputScale) -> Result<Self> {
        hf_scale.validate()?;
        self.hf_scale = hf_scale;
        Ok(self)
    }

    pub fn with_raw_alpha(mut self, raw_alpha: f64) -> Result<Self> {
        if !raw_alpha.is_finite() {
            return Err(Error::NonFinite {
                context: "raw_alpha".into(),
            });
        }
        self.raw_alpha = raw_alpha;
        Ok(self)
    }

    fn eval(&self, network: Network, input: &[f64]) -> Result<f64> {
        let out = mlp_forward(self.config.spec(network), self.params(network), input)?[0];
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::NetworkOutput {
                network: network.name(),
            })
        }
    }

    /// Normalized low-fidelity prediction at normalized coordinates.
    pub fn low_normalized(&self, xn: &Node) -> Result<f64> {
        self.eval(Network::Low, xn)
    }

    /// Every branch of the composite at normalized coordinates.
    pub fn branches_normalized(&self, xn: &Node) -> Result<Branches> {
        let low = self.low_normalized(xn)?;
        let triple = [xn[0], xn[1], low];
        let linear = self.eval(Network::Linear, &triple)?;
        let nonlinear = self.eval(Network::Nonlinear, &triple)?;
        let high = match self.config.composition_mode {
            CompositionMode::ConvexBlend => {
                let a = self.alpha();
                a * linear + (1.0 - a) * nonlinear
            }
            CompositionMode::Additive => low + linear + nonlinear,
        };
        Ok(Branches {
            low,
            linear,
            nonlinear,
            high,
        })
    }

    fn check_node(x: &Node) -> Result<()> {
        if x[0].is_finite() && x[1].is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: "coordinates".into(),
            })
        }
    }

    pub fn predict_low(&self, x: &Node) -> Result<f64> {
        Self::check_node(x)?;
        let low = self.low_normalized(&self.norm.normalize_node(x))?;
        Ok(self.norm.denormalize_value(low))
    }

    pub fn compose_high(&self, x: &Node) -> Result<f64> {
        Self::check_node(x)?;
        let b = self.branches_normalized(&self.norm.normalize_node(x))?;
        Ok(self.hf_scale.denormalize(b.high))
    }

    /// High-fidelity prediction at every node, in order.
    pub fn predict_field(&self, nodes: &[Node]) -> Result<FieldDataset> {
        if nodes.is_empty() {
            return Err(Error::InvalidDataset("no nodes to predict on".into()));
        }
        let values = nodes
            .iter()
            .map(|x| self.compose_high(x))
            .collect::<Result<Vec<_>>>()?;
        FieldDataset::new("prediction", nodes.to_vec(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm() -> NormalizationMeta {
        NormalizationMeta {
            input_mean: [0.4, -1.0],
            input_std: [2.0, 0.5],
            output_mean: 101325.0,
            output_std: 250.0,
        }
    }

    /// Net whose output is the constant `c` regardless of input.
    fn constant_net(spec: &MlpSpec, c: f64) -> MlpParams {
        let mut p = vec![0.0; spec.param_count()];
        *p.last_mut().unwrap() = c;
        MlpParams::from_vec(spec, p).unwrap()
    }

    #[test]
    fn zero_low_net_gives_output_mean() {
        let cfg = MpinnConfig::default();
        let m = MpinnModel::init(cfg.clone(), norm(), 1)
            .unwrap()
            .with_params(Network::Low, MlpParams::zeros(&cfg.nnl))
            .unwrap();
        assert_eq!(m.predict_low(&[3.0, 7.0]).unwrap(), 101325.0);
        assert_eq!(
            m.predict_low(&[0.1, 0.2]).unwrap(),
            m.predict_low(&[0.1, 0.2]).unwrap()
        );
    }

    #[test]
    fn predict_low_matches_manual_composition() {
        let m = MpinnModel::init(MpinnConfig::default(), norm(), 5).unwrap();
        let n = norm();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let xn = [(x[0] - 0.4) / 2.0, (x[1] + 1.0) / 0.5];
            let raw = mlp_forward(&m.config().nnl, m.params(Network::Low), &xn).unwrap()[0];
            assert_eq!(
                m.predict_low(&x).unwrap(),
                raw * n.output_std + n.output_mean
            );
        }
    }

    #[test]
    fn convex_blend_midpoint() {
        let cfg = MpinnConfig::default();
        let m = MpinnModel::init(cfg.clone(), NormalizationMeta::identity(), 2)
            .unwrap()
            .with_params(Network::Linear, constant_net(&cfg.nnh1, 2.0))
            .unwrap()
            .with_params(Network::Nonlinear, constant_net(&cfg.nnh2, 4.0))
            .unwrap();
        assert_eq!(m.alpha(), 0.5);
        assert_eq!(m.compose_high(&[0.3, -0.7]).unwrap(), 3.0);
    }

    #[test]
    fn convex_blend_limits() {
        let cfg = MpinnConfig::default();
        let base = MpinnModel::init(cfg.clone(), norm(), 3).unwrap();
        let n = norm();
        let x = [0.25, -0.5];
        let xn = n.normalize_node(&x);
        let b = base.branches_normalized(&xn).unwrap();
        let lin = n.denormalize_value(b.linear);
        let nonlin = n.denormalize_value(b.nonlinear);
        assert_eq!(base.hf_scale(), &OutputScale::of(&n));

        for (raw, want) in [(40.0, lin), (-40.0, nonlin)] {
            let got = base
                .clone()
                .with_raw_alpha(raw)
                .unwrap()
                .compose_high(&x)
                .unwrap();
            assert!(((got - want) / want).abs() < 1e-9, "{got} vs {want}");
        }

        // alpha = 1 - 1e-12 with the nonlinear branch zeroed.
        let raw = ((1.0 - 1e-12) / 1e-12f64).ln();
        let m = base
            .with_params(Network::Nonlinear, MlpParams::zeros(&cfg.nnh2))
            .unwrap()
            .with_raw_alpha(raw)
            .unwrap();
        let got = m.compose_high(&x).unwrap();
        assert!(((got - lin) / lin).abs() < 1e-9);
    }

    #[test]
    fn additive_with_zero_corrections_is_low_prediction() {
        let cfg = MpinnConfig {
            composition_mode: CompositionMode::Additive,
            ..MpinnConfig::default()
        };
        let m = MpinnModel::init(cfg.clone(), NormalizationMeta::identity(), 9)
            .unwrap()
            .with_params(Network::Linear, MlpParams::zeros(&cfg.nnh1))
            .unwrap()
            .with_params(Network::Nonlinear, MlpParams::zeros(&cfg.nnh2))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            assert_eq!(m.compose_high(&x).unwrap(), m.predict_low(&x).unwrap());
        }
    }

    #[test]
    fn high_output_uses_its_own_scale() {
        let cfg = MpinnConfig::default();
        let scale = OutputScale {
            mean: -3.0,
            std: 0.125,
        };
        let m = MpinnModel::init(cfg.clone(), norm(), 6)
            .unwrap()
            .with_hf_scale(scale)
            .unwrap();
        let x = [0.9, 1.1];
        let b = m.branches_normalized(&norm().normalize_node(&x)).unwrap();
        let a = m.alpha();
        let want = (a * b.linear + (1.0 - a) * b.nonlinear) * 0.125 - 3.0;
        assert_eq!(m.compose_high(&x).unwrap(), want);
        // low-fidelity prediction is unaffected
        let m0 = MpinnModel::init(cfg, norm(), 6).unwrap();
        assert_eq!(m.predict_low(&x).unwrap(), m0.predict_low(&x).unwrap());
        assert!(m
            .with_hf_scale(OutputScale {
                mean: 0.0,
                std: 0.0
            })
            .is_err());
    }

    #[test]
    fn predict_field_order_and_errors() {
        let m = MpinnModel::init(MpinnConfig::default(), norm(), 4).unwrap();
        let nodes = vec![[0.0, 0.0], [1.0, 0.5], [-2.0, 3.0], [0.3, 0.3]];
        let f = m.predict_field(&nodes).unwrap();
        assert_eq!(f.nodes(), nodes.as_slice());
        for (x, v) in nodes.iter().zip(f.values()) {
            assert_eq!(*v, m.compose_high(x).unwrap());
        }
        let perm = [2, 0, 3, 1];
        let permuted: Vec<Node> = perm.iter().map(|&i| nodes[i]).collect();
        let g = m.predict_field(&permuted).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(g.values()[k], f.values()[i]);
        }
        assert_eq!(
            m.predict_field(&nodes[..1]).unwrap().values(),
            &[m.compose_high(&nodes[0]).unwrap()]
        );
        assert!(m.predict_field(&[]).is_err());
        assert!(m.compose_high(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn non_finite_branch_names_network() {
        let cfg = MpinnConfig::default();
        // NNH1 = 1e308 * y_low + 1e308 overflows once y_low = 10.
        let mut q = vec![0.0; cfg.nnh1.param_count()];
        q[2] = 1e308;
        q[3] = 1e308;
        let m = MpinnModel::init(cfg.clone(), NormalizationMeta::identity(), 1)
            .unwrap()
            .with_params(Network::Linear, MlpParams::from_vec(&cfg.nnh1, q).unwrap())
            .unwrap()
            .with_params(Network::Low, constant_net(&cfg.nnl, 10.0))
            .unwrap();
        match m.compose_high(&[0.0, 0.0]) {
            Err(Error::NetworkOutput { network }) => assert_eq!(network, "NNH1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = MpinnConfig::default();
        assert!(cfg.validate().is_ok());
        assert!(cfg.nnh2_band_warning().is_none());

        cfg.nnh2.hidden_widths = vec![32, 32, 32];
        assert!(cfg.validate().is_ok());
        assert!(cfg.nnh2_band_warning().is_some());

        let mut bad = MpinnConfig::default();
        bad.nnh1.hidden_widths = vec![4];
        assert!(bad.validate().is_err());
        let mut bad = MpinnConfig::default();
        bad.nnl.input_dim = 3;
        assert!(bad.validate().is_err());
        let mut bad = MpinnConfig::default();
        bad.nnh2.output_dim = 2;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = MpinnModel::init(MpinnConfig::default(), norm(), 1).unwrap();
        let b = MpinnModel::init(MpinnConfig::default(), norm(), 1).unwrap();
        let c = MpinnModel::init(MpinnConfig::default(), norm(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.raw_alpha(), 0.0);
    }
}
