use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use memlab::experiments::checks::run_all;
use memlab::experiments::{
    emit_grid, emit_records, prepare, run_single_with_model, sweep, AugConfig, GridSpec, RunConfig, SweepSpec,
    EMBEDDING_LAYER,
};
use memlab::model::{read_checkpoint, write_checkpoint};
use memlab::probe::{effective_k, normalized_invariance, probe_layers};
use memlab::synthdata::{
    materialize_augmentations, read_dataset_binary, read_dataset_csv, write_dataset_binary, write_dataset_csv,
    AugmentationSpec, LabelPolicy, LabeledDataset, ViewSet,
};
use memlab::train::{bias_limit_check, loss_decompose};
use serde::Serialize;

use crate::config::{load, prepare_out, snapshot, CliError};
use crate::{CliResult, Command, Common, DataFormat};

pub fn dispatch(command: Command) -> CliResult {
    match command {
        Command::GenData { common, seed, format } => gen_data(&common, seed, format),
        Command::Train { common, seed } => train(&common, seed),
        Command::Probe { common, checkpoint, data, test, seed } => probe(&common, &checkpoint, &data, &test, seed),
        Command::Sweep { common, seed } => run_sweep(&common, seed),
        Command::Grid { common, seed } => run_grid(&common, seed),
        Command::Decompose { common, checkpoint, data, seed } => decompose(&common, &checkpoint, &data, seed),
        Command::Check { out, seed, force } => check(out.as_deref(), seed, force),
    }
}

/// Loads the configuration, prepares the output directory and writes the
/// resolved snapshot before anything is computed.
fn setup<T: serde::de::DeserializeOwned + Serialize>(common: &Common, command: &str) -> Result<T, CliError> {
    let config: T = load(common.config.as_deref(), &common.sets)?;
    prepare_out(&common.out, common.force)?;
    fs::write(common.out.join("config.toml"), snapshot(&config, command)?)?;
    Ok(config)
}

fn writer(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult {
    let mut w = writer(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Run(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_dataset(path: &Path) -> Result<LabeledDataset<f64>, CliError> {
    let file = BufReader::new(File::open(path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?);
    let ds =
        if path.extension().is_some_and(|e| e == "bin") { read_dataset_binary(file)? } else { read_dataset_csv(file)? };
    Ok(ds)
}

fn gen_data(common: &Common, seed: u64, format: DataFormat) -> CliResult {
    let config: RunConfig = setup(common, &format!("memlab gen-data --seed {seed}"))?;
    let prep = prepare(&config, seed)?;
    for (name, ds) in [("train", &prep.train), ("test", &prep.test)] {
        match format {
            DataFormat::Csv => write_dataset_csv(ds, writer(&common.out, &format!("{name}.csv"))?)?,
            DataFormat::Binary => write_dataset_binary(ds, writer(&common.out, &format!("{name}.bin"))?)?,
        }
    }
    println!("wrote {} training and {} held-out samples", prep.train.len(), prep.test.len());
    Ok(())
}

fn train(common: &Common, seed: u64) -> CliResult {
    let config: RunConfig = setup(common, &format!("memlab train --seed {seed}"))?;
    let (record, model) = run_single_with_model(&config, seed)?;
    emit_records(std::slice::from_ref(&record), &common.out)?;
    let mut ckpt = writer(&common.out, "model.ckpt")?;
    write_checkpoint(&model, &mut ckpt)?;
    ckpt.flush()?;
    println!(
        "train_acc {} probe {} -> {} verdict {}",
        record.train_acc,
        record.probe_init.accuracy,
        record.probe_final.accuracy,
        record.verdict.verdict.as_str()
    );
    if record.failed {
        return Err(CliError::Run(format!(
            "training diverged: {}",
            record.history.aborted.as_deref().unwrap_or("unknown reason")
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ProbeRow {
    layer: String,
    label_source: &'static str,
    k: usize,
    accuracy: f64,
    n_fit: usize,
    n_eval: usize,
}

fn probe(common: &Common, checkpoint: &Path, data: &Path, test: &Path, seed: u64) -> CliResult {
    let config: RunConfig = setup(common, &format!("memlab probe --seed {seed}"))?;
    let model = read_checkpoint::<f64, _>(BufReader::new(File::open(checkpoint)?))?;
    let fit = read_dataset(data)?;
    let eval = read_dataset(test)?;
    let k = effective_k(config.probe.k_neighbors, fit.len());
    let mut w = csv::Writer::from_writer(writer(&common.out, "probes.csv")?);
    for (clean, random) in probe_layers(&model, &fit, &eval, k)? {
        for r in [clean, random] {
            println!("{:<12} {:<6} {:.4}", r.layer, r.label_source.as_str(), r.accuracy);
            w.serialize(ProbeRow {
                layer: r.layer,
                label_source: r.label_source.as_str(),
                k: r.k,
                accuracy: r.accuracy,
                n_fit: r.n_fit,
                n_eval: r.n_eval,
            })
            .map_err(|e| CliError::Run(e.to_string()))?;
        }
    }
    w.flush()?;
    let points = eval.inputs.slice(ndarray::s![..config.probe.invariance_points.min(eval.len()), ..]);
    let aug = AugmentationSpec::SubspaceNoise { d1: eval.d1, strength: eval.sigma };
    let p = &config.probe;
    let inv = normalized_invariance(&model, points, &aug, p.aug_pairs, p.cross_pairs, seed)?;
    println!("{EMBEDDING_LAYER} invariance {:.4}", inv.mean_i);
    write_json(&common.out, "invariance.json", &inv)
}

fn run_sweep(common: &Common, seed: Option<u64>) -> CliResult {
    let mut spec: SweepSpec = setup(common, "memlab sweep")?;
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    spec.validate()?;
    let records = sweep(&spec)?;
    emit_records(&records, &common.out)?;
    println!("{} runs written to {}", records.len(), common.out.display());
    let failed = records.iter().filter(|r| r.failed).count();
    if failed > 0 {
        return Err(CliError::Run(format!("{failed} runs diverged")));
    }
    Ok(())
}

fn run_grid(common: &Common, seed: Option<u64>) -> CliResult {
    let mut spec: GridSpec = setup(common, "memlab grid")?;
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    let grid = spec.run()?;
    emit_grid(&grid, &common.out)?;
    match grid.capacity_estimate {
        Some(c) => println!("empirical capacity n*B = {c}"),
        None => println!("the randomize arm memorized no cell in every seed"),
    }
    let failed = grid.records.iter().filter(|r| r.failed).count();
    if failed > 0 {
        return Err(CliError::Run(format!("{failed} runs diverged")));
    }
    Ok(())
}

/// Frozen views for decomposition: the configured materialized set if any,
/// otherwise label-preserving draws of the configured noise.
fn decompose_views(config: &RunConfig, ds: &LabeledDataset<f64>, seed: u64) -> Result<ViewSet<f64>, CliError> {
    let (strength, views, policy) = match &config.augmentation {
        AugConfig::SubspaceNoise { strength, views, policy } => {
            (*strength, views.unwrap_or(config.probe.decompose_views), *policy)
        }
        _ => (1.0, config.probe.decompose_views, LabelPolicy::Preserve),
    };
    let spec = AugmentationSpec::SubspaceNoise { d1: ds.d1, strength: strength * ds.sigma };
    match materialize_augmentations(ds, &spec, views, policy, seed)? {
        AugmentationSpec::Materialized(v) => Ok(v),
        _ => Err(CliError::Run("materialization returned a generative spec".into())),
    }
}

fn decompose(common: &Common, checkpoint: &Path, data: &Path, seed: u64) -> CliResult {
    let config: RunConfig = setup(common, &format!("memlab decompose --seed {seed}"))?;
    let model = read_checkpoint::<f64, _>(BufReader::new(File::open(checkpoint)?))?;
    let ds = read_dataset(data)?;
    let views = decompose_views(&config, &ds, seed)?;
    let report = loss_decompose(&model, &ds, &views)?;
    println!(
        "l_super {} = inv {} + bias {} (residual {:e})",
        report.l_super, report.inv_term, report.bias_term, report.residual
    );
    write_json(&common.out, "decomposition.json", &report)?;
    if ds.num_random_classes == ds.len() {
        let limit = bias_limit_check(&model, &ds, &views, 1e-3)?;
        write_json(&common.out, "bias_limit.json", &limit)?;
    }
    Ok(())
}

fn check(out: Option<&Path>, seed: u64, force: bool) -> CliResult {
    if let Some(dir) = out {
        prepare_out(dir, force)?;
        fs::write(dir.join("config.toml"), format!("# memlab check --seed {seed}\n"))?;
    }
    let reports = run_all(seed)?;
    for r in &reports {
        println!(
            "{:<26} {:>5} instances  max error {:.3e}  tolerance {:.0e}  {}",
            r.name,
            r.instances,
            r.max_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(dir) = out {
        write_json(dir, "check.json", &reports)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Run(format!("failed suites: {}", failed.join(", "))))
    }
}
