use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mfsurrogate::bench::{run_benchmark, BenchCase, LinearPairSpec, NonlinearPairSpec};
use mfsurrogate::fieldio::{load_field_csv, load_nodes_csv, save_field_csv};
use mfsurrogate::gridalign::align_pair;
use mfsurrogate::mpinn::{load_model, save_model};
use mfsurrogate::{train, Error, FidelityPair, InterpMethod, Result};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Case;

/// High-fidelity training values given either raw or already on the
/// low-fidelity nodes.
pub enum HfSource {
    Raw(PathBuf),
    Aligned(PathBuf),
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn provenance_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".provenance");
    p.into()
}

pub fn align(
    lf_path: &Path,
    hf_path: &Path,
    method: Option<InterpMethod>,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let method = match method {
        Some(m) => m,
        None => cfg.interp_method()?,
    };
    let lf = load_field_csv(lf_path, &cfg.columns)?;
    let hf = load_field_csv(hf_path, &cfg.columns)?;
    let pair = align_pair(&lf, &hf, method)?;
    save_field_csv(&pair.hf_on_lf_nodes, out)?;

    let mut text = String::new();
    let _ = writeln!(text, "method={}", method_name(&method));
    if let InterpMethod::Idw { power, k } = method {
        let _ = writeln!(text, "power={power}");
        let _ = writeln!(text, "k={k}");
    }
    let _ = writeln!(text, "lf_path={}", lf_path.display());
    let _ = writeln!(text, "lf_sha256={}", sha256_file(lf_path)?);
    let _ = writeln!(text, "lf_nodes={}", lf.len());
    let _ = writeln!(text, "hf_path={}", hf_path.display());
    let _ = writeln!(text, "hf_sha256={}", sha256_file(hf_path)?);
    let _ = writeln!(text, "hf_nodes={}", hf.len());
    let sidecar = provenance_path(out);
    fs::write(&sidecar, text).map_err(|source| Error::File {
        path: sidecar.clone(),
        source,
    })?;

    println!(
        "aligned {} high-fidelity nodes onto {} low-fidelity nodes ({method}) -> {}",
        hf.len(),
        lf.len(),
        out.display()
    );
    Ok(())
}

fn method_name(m: &InterpMethod) -> &'static str {
    match m {
        InterpMethod::Nearest => "nearest",
        InterpMethod::Idw { .. } => "idw",
    }
}

pub fn train(
    lf_path: &Path,
    hf: &HfSource,
    config: Option<&Path>,
    out: &Path,
    report_path: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let mcfg = cfg.mpinn_config()?;
    let mut tcfg = cfg.train_config();
    if let Some(seed) = seed {
        tcfg.seed = seed;
    }
    if let Some(epochs) = epochs {
        tcfg.epochs = epochs;
    }
    tcfg.validate()?;

    let lf = load_field_csv(lf_path, &cfg.columns)?;
    let pair = match hf {
        HfSource::Raw(path) => {
            let raw = load_field_csv(path, &cfg.columns)?;
            align_pair(&lf, &raw, cfg.interp_method()?)?
        }
        HfSource::Aligned(path) => {
            let aligned = load_field_csv(path, &cfg.columns)?;
            FidelityPair::new(lf, aligned)?
        }
    };

    let (model, report) = train::train(&pair, &mcfg, &tcfg)?;
    save_model(&model, out)?;
    report.save_csv(report_path)?;

    let first = report.initial();
    let last = report.last();
    println!(
        "trained epochs={} total={} lf_mse={} hf_mse={} l2={} alpha={}",
        last.epoch, last.total, last.lf_mse, last.hf_mse, last.l2, last.alpha
    );
    println!(
        "initial total={} hf_mse={}; model -> {}; report -> {}",
        first.total,
        first.hf_mse,
        out.display(),
        report_path.display()
    );
    Ok(())
}

pub fn predict(
    model_path: &Path,
    nodes_path: &Path,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let model = load_model(model_path)?;
    let nodes = load_nodes_csv(nodes_path, &cfg.columns)?;
    let field = model.predict_field(&nodes)?;
    save_field_csv(&field, out)?;
    println!("predicted {} nodes -> {}", field.len(), out.display());
    Ok(())
}

pub fn evaluate(model_path: &Path, truth_path: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let model = load_model(model_path)?;
    let truth = load_field_csv(truth_path, &cfg.columns)?;
    let m = train::evaluate(&model, &truth)?;
    println!("metrics {m}");
    println!("nodes evaluated   {}", m.n);
    println!("mean squared err  {:.6e}", m.mse);
    println!("root mean sq err  {:.6e}", m.rmse);
    match m.rel_l2 {
        Some(r) => println!("relative L2 err   {r:.6e}"),
        None => println!("relative L2 err   undefined (reference field is all zero)"),
    }
    println!("max abs err       {:.6e}", m.max_abs_err);
    Ok(())
}

pub fn benchmark(case: Case, seeds: u64, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let cfg = RunConfig::load_or_default(config)?;
    let mcfg = cfg.mpinn_config()?;
    let mut tcfg = cfg.train_config();
    let (bench_case, budget) = match case {
        Case::Linear => (BenchCase::Linear(LinearPairSpec::default()), 10),
        Case::Nonlinear => (BenchCase::Nonlinear(NonlinearPairSpec::default()), 8),
    };
    tcfg.hf_budget = tcfg.hf_budget.or(Some(budget));
    let seeds: Vec<u64> = (0..seeds).collect();
    let table = run_benchmark(&bench_case, &mcfg, &tcfg, &seeds)?;
    print!("{}", table.summary());
    if let Some(path) = out {
        table.save_csv(path)?;
    }
    Ok(())
}
