//! Closed-form multi-fidelity test problems and a paired benchmark runner.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::MlpSpec;
use crate::error::{Error, Result};
use crate::fieldio::{FidelityPair, FieldDataset, Node};
use crate::mpinn::{derive_seed, MpinnConfig};
use crate::train::{evaluate, select_hf_indices, single_fidelity_baseline, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseField {
    /// `sin(pi x1) cos(pi x2)`
    Sinusoidal,
    /// `x1^2 - x1 x2 + 0.5 x2`
    Polynomial,
}

impl BaseField {
    pub fn eval(self, x: &Node) -> f64 {
        use std::f64::consts::PI;
        match self {
            BaseField::Sinusoidal => (PI * x[0]).sin() * (PI * x[1]).cos(),
            BaseField::Polynomial => x[0] * x[0] - x[0] * x[1] + 0.5 * x[1],
        }
    }
}

impl FromStr for BaseField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoidal" => Ok(BaseField::Sinusoidal),
            "polynomial" => Ok(BaseField::Polynomial),
            other => Err(Error::Config(format!("unknown base field '{other}'"))),
        }
    }
}

/// `y_hf(x) = rho * y_lf(x) + delta[0] + delta[1] x1 + delta[2] x2`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPairSpec {
    pub rho: f64,
    pub delta: [f64; 3],
    pub base_field: BaseField,
    pub n_lf: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for LinearPairSpec {
    fn default() -> Self {
        LinearPairSpec {
            rho: 2.0,
            delta: [3.0, 0.0, 0.0],
            base_field: BaseField::Polynomial,
            n_lf: 200,
            n_test: 500,
            seed: 0,
        }
    }
}

impl LinearPairSpec {
    pub fn lf(&self, x: &Node) -> f64 {
        self.base_field.eval(x)
    }

    pub fn delta_at(&self, x: &Node) -> f64 {
        self.delta[0] + self.delta[1] * x[0] + self.delta[2] * x[1]
    }

    pub fn hf(&self, x: &Node) -> f64 {
        self.rho * self.lf(x) + self.delta_at(x)
    }
}

/// Forrester-type pair on the unit square; `x2` does not enter either
/// function. With `degenerate` set the low-fidelity function equals the
/// high-fidelity one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearPairSpec {
    pub n_lf: usize,
    pub n_test: usize,
    pub seed: u64,
    pub degenerate: bool,
}

impl Default for NonlinearPairSpec {
    fn default() -> Self {
        NonlinearPairSpec {
            n_lf: 200,
            n_test: 500,
            seed: 0,
            degenerate: false,
        }
    }
}

/// `(6 x1 - 2)^2 sin(12 x1 - 4)`
pub fn forrester_hf(x: &Node) -> f64 {
    let a = 6.0 * x[0] - 2.0;
    a * a * (12.0 * x[0] - 4.0).sin()
}

/// `0.5 y_hf(x) + 10 (x1 - 0.5) - 5`
pub fn forrester_lf(x: &Node) -> f64 {
    0.5 * forrester_hf(x) + 10.0 * (x[0] - 0.5) - 5.0
}

impl NonlinearPairSpec {
    pub fn lf(&self, x: &Node) -> f64 {
        if self.degenerate {
            forrester_hf(x)
        } else {
            forrester_lf(x)
        }
    }

    pub fn hf(&self, x: &Node) -> f64 {
        forrester_hf(x)
    }
}

fn uniform_nodes(n: usize, seed: u64, stream: u64) -> Vec<Node> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
    (0..n)
        .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect()
}

fn make_pair(
    n_lf: usize,
    n_test: usize,
    seed: u64,
    lf: impl Fn(&Node) -> f64,
    hf: impl Fn(&Node) -> f64,
) -> Result<(FidelityPair, FieldDataset)> {
    if n_lf == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "node counts must be at least 1 (n_lf = {n_lf}, n_test = {n_test})"
        )));
    }
    let nodes = uniform_nodes(n_lf, seed, 10);
    let test = uniform_nodes(n_test, seed, 11);
    let lf_ds = FieldDataset::new("lf", nodes.clone(), nodes.iter().map(&lf).collect())?;
    let hf_ds = FieldDataset::new("hf", nodes.clone(), nodes.iter().map(&hf).collect())?;
    let truth = FieldDataset::new("truth", test.clone(), test.iter().map(&hf).collect())?;
    Ok((FidelityPair::new(lf_ds, hf_ds)?, truth))
}

/// Pre-aligned pair on `n_lf` random nodes plus held-out high-fidelity
/// truth on `n_test` further nodes.
pub fn gen_linear_pair(spec: &LinearPairSpec) -> Result<(FidelityPair, FieldDataset)> {
    if !spec.rho.is_finite() || spec.delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite {
            context: "linear pair coefficients".into(),
        });
    }
    make_pair(
        spec.n_lf,
        spec.n_test,
        spec.seed,
        |x| spec.lf(x),
        |x| spec.hf(x),
    )
}

pub fn gen_nonlinear_pair(spec: &NonlinearPairSpec) -> Result<(FidelityPair, FieldDataset)> {
    make_pair(
        spec.n_lf,
        spec.n_test,
        spec.seed,
        |x| spec.lf(x),
        |x| spec.hf(x),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchCase {
    Linear(LinearPairSpec),
    Nonlinear(NonlinearPairSpec),
}

impl BenchCase {
    /// The case with its sampling seed replaced.
    fn generate(&self, seed: u64) -> Result<(FidelityPair, FieldDataset)> {
        match self {
            BenchCase::Linear(s) => gen_linear_pair(&LinearPairSpec { seed, ..s.clone() }),
            BenchCase::Nonlinear(s) => gen_nonlinear_pair(&NonlinearPairSpec { seed, ..s.clone() }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BenchCase::Linear(_) => "linear",
            BenchCase::Nonlinear(_) => "nonlinear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    Mpinn,
    Baseline,
    Tie,
}

impl fmt::Display for Winner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Winner::Mpinn => "mpinn",
            Winner::Baseline => "baseline",
            Winner::Tie => "tie",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub seed: u64,
    pub mpinn_rel_l2: f64,
    pub baseline_rel_l2: f64,
    pub winner: Winner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub case: String,
    pub rows: Vec<BenchRow>,
}

impl BenchmarkTable {
    pub fn mpinn_wins(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.winner == Winner::Mpinn)
            .count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        writeln!(w, "seed,mpinn_rel_l2,baseline_rel_l2,winner")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.seed, r.mpinn_rel_l2, r.baseline_rel_l2, r.winner
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

    pub fn summary(&self) -> String {
        let mut s = format!("case: {}\n", self.case);
        s.push_str(&format!(
            "{:>6}  {:>14}  {:>14}  winner\n",
            "seed", "mpinn_rel_l2", "baseline_rel_l2"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:>6}  {:>14.6e}  {:>14.6e}  {}\n",
                r.seed, r.mpinn_rel_l2, r.baseline_rel_l2, r.winner
            ));
        }
        s.push_str(&format!(
            "mpinn wins {} of {} seeds\n",
            self.mpinn_wins(),
            self.rows.len()
        ));
        s
    }
}

/// Run the benchmark with a baseline network shaped like NNL.
pub fn run_benchmark(
    case: &BenchCase,
    config: &MpinnConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<BenchmarkTable> {
    run_benchmark_with(case, config, cfg, seeds, &config.nnl)
}

/// For each seed: generate the case with that seed, train the multi-fidelity
/// model and the baseline (both seeded with it) on the same high-fidelity
/// nodes, and compare held-out relative L2 errors.
pub fn run_benchmark_with(
    case: &BenchCase,
    config: &MpinnConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
    baseline_spec: &MlpSpec,
) -> Result<BenchmarkTable> {
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (pair, truth) = case.generate(seed)?;
        let run_cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let (model, _) = train(&pair, config, &run_cfg)?;
        let mpinn = evaluate(&model, &truth)?;

        let idx = select_hf_indices(pair.hf_on_lf_nodes.len(), run_cfg.hf_budget, seed)?;
        let hf_points = pair.hf_on_lf_nodes.subset(&idx)?;
        let (baseline, _) = single_fidelity_baseline(&hf_points, baseline_spec, &run_cfg)?;
        let base = baseline.evaluate(&truth)?;

        let (m, b) = match (mpinn.rel_l2, base.rel_l2) {
            (Some(m), Some(b)) => (m, b),
            _ => {
                return Err(Error::InvalidDataset(
                    "held-out truth is identically zero".into(),
                ))
            }
        };
        let winner = if m < b {
            Winner::Mpinn
        } else if b < m {
            Winner::Baseline
        } else {
            Winner::Tie
        };
        log::info!("seed {seed}: mpinn {m:.4e}, baseline {b:.4e}");
        rows.push(BenchRow {
            seed,
            mpinn_rel_l2: m,
            baseline_rel_l2: b,
            winner,
        });
    }
    Ok(BenchmarkTable {
        case: case.name().to_string(),
        rows,
    })
}
