use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::RunRecord;
use super::sweep::{GridCell, GridResult};
use crate::error::Result;
use crate::synthdata::LabelPolicy;

/// One line of `records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub run_id: String,
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub n: usize,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    #[serde(rename = "C_prime")]
    pub c_prime: usize,
    pub noise_fraction: f64,
    pub strength: Option<f64>,
    #[serde(rename = "K_p")]
    pub k_p: Option<usize>,
    pub memorized: bool,
    pub verdict: String,
    pub train_acc: f64,
    pub probe_init: f64,
    pub probe_final: f64,
    pub inv_init: Option<f64>,
    pub inv_final: Option<f64>,
    pub l_super: f64,
    pub inv_term: f64,
    pub bias_term: f64,
    pub residual: f64,
    pub wall_time_s: Option<f64>,
}

impl From<&RunRecord> for RecordRow {
    fn from(r: &RunRecord) -> Self {
        let d = &r.decomposition_final;
        Self {
            run_id: r.run_id.clone(),
            axis: r.axis.clone(),
            value: r.value.clone(),
            seed: r.seed,
            n: r.n_train,
            b: r.config.augmentation.views_per_sample(),
            c_prime: r.c_prime,
            noise_fraction: r.config.labels.noise_fraction,
            strength: r.config.augmentation.strength(),
            k_p: r.config.patterns(),
            memorized: r.memorized,
            verdict: r.verdict.verdict.as_str().to_string(),
            train_acc: r.train_acc,
            probe_init: r.probe_init.accuracy,
            probe_final: r.probe_final.accuracy,
            inv_init: r.inv_init(),
            inv_final: r.inv_final(),
            l_super: d.l_super,
            inv_term: d.inv_term,
            bias_term: d.bias_term,
            residual: d.residual,
            wall_time_s: r.wall_time_s,
        }
    }
}

/// One line of `probes.csv`: a probe taken during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEventRow {
    pub run_id: String,
    /// `init`, `epoch` or `final`.
    pub event: String,
    pub epoch: usize,
    pub step: usize,
    pub train_acc_unaug: Option<f64>,
    pub probe_acc: f64,
    pub invariance: Option<f64>,
}

fn probe_events(r: &RunRecord) -> Vec<ProbeEventRow> {
    let row = |event: &str, epoch, step, acc, probe, inv| ProbeEventRow {
        run_id: r.run_id.clone(),
        event: event.into(),
        epoch,
        step,
        train_acc_unaug: acc,
        probe_acc: probe,
        invariance: inv,
    };
    let mut rows = vec![row("init", 0, 0, None, r.probe_init.accuracy, r.inv_init())];
    for e in &r.history.epochs {
        if let Some(p) = e.probe_acc {
            rows.push(row("epoch", e.epoch, e.step, Some(e.train_acc_unaug), p, e.invariance));
        }
    }
    let last_epoch = r.history.last().map_or(0, |e| e.epoch);
    rows.push(row("final", last_epoch, r.history.steps, Some(r.train_acc), r.probe_final.accuracy, r.inv_final()));
    rows
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.serialize(RecordRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<RecordRow>> {
    let mut rd = csv::Reader::from_reader(input);
    Ok(rd.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_probes_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["run_id", "event", "epoch", "step", "train_acc_unaug", "probe_acc", "invariance"])?;
    for r in records {
        for row in probe_events(r) {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Column names of `records.csv`, in order.
pub const RECORD_COLUMNS: [&str; 22] = [
    "run_id",
    "axis",
    "value",
    "seed",
    "n",
    "B",
    "C_prime",
    "noise_fraction",
    "strength",
    "K_p",
    "memorized",
    "verdict",
    "train_acc",
    "probe_init",
    "probe_final",
    "inv_init",
    "inv_final",
    "l_super",
    "inv_term",
    "bias_term",
    "residual",
    "wall_time_s",
];

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| x.to_string())
}

/// Per-axis plot data: one line per `(value, arm)` with seed means and
/// standard deviations, in first-appearance order.
pub fn write_axis_dat<W: Write>(records: &[&RunRecord], mut out: W) -> Result<()> {
    let mut groups: Vec<((String, String), Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let key = (r.value.clone(), r.arm.clone().unwrap_or_else(|| "-".into()));
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    writeln!(
        out,
        "# x arm C_prime seeds probe_init probe_init_sd probe_final probe_final_sd train_acc train_acc_sd inv_final memorized_frac"
    )?;
    for ((value, arm), g) in &groups {
        let col = |f: &dyn Fn(&RunRecord) -> f64| mean_sd(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (pi, pi_sd) = col(&|r| r.probe_init.accuracy);
        let (pf, pf_sd) = col(&|r| r.probe_final.accuracy);
        let (acc, acc_sd) = col(&|r| r.train_acc);
        let invs: Vec<f64> = g.iter().filter_map(|r| r.inv_final()).collect();
        let inv = (!invs.is_empty()).then(|| mean_sd(&invs).0);
        let mem = g.iter().filter(|r| r.memorized).count() as f64 / g.len() as f64;
        // Per-sample label spaces are plotted at their class count.
        let x = if value.parse::<f64>().is_ok() { value.clone() } else { g[0].c_prime.to_string() };
        writeln!(
            out,
            "{x} {arm} {} {} {pi} {pi_sd} {pf} {pf_sd} {acc} {acc_sd} {} {mem}",
            g[0].c_prime,
            g.len(),
            fmt_opt(inv)
        )?;
    }
    Ok(())
}

/// Grid plot data: one line per `(n, B, policy)` aggregated over seeds.
pub fn write_grid_dat<W: Write>(grid: &GridResult, mut out: W) -> Result<()> {
    writeln!(out, "# n B policy nB seeds memorized_frac benign_frac malign_frac train_acc probe_init probe_final")?;
    for (cells, policy) in [(&grid.cells, LabelPolicy::Preserve), (&grid.randomized, LabelPolicy::Randomize)] {
        let name = match policy {
            LabelPolicy::Preserve => "preserve",
            LabelPolicy::Randomize => "randomize",
        };
        let mut by_cell: BTreeMap<(usize, usize), Vec<&GridCell>> = BTreeMap::new();
        for c in cells {
            by_cell.entry((c.n, c.b)).or_default().push(c);
        }
        for ((n, b), g) in by_cell {
            let k = g.len() as f64;
            let frac = |f: &dyn Fn(&GridCell) -> bool| g.iter().filter(|c| f(c)).count() as f64 / k;
            let mean = |f: &dyn Fn(&GridCell) -> f64| g.iter().map(|c| f(c)).sum::<f64>() / k;
            writeln!(
                out,
                "{n} {b} {name} {} {} {} {} {} {} {} {}",
                n * b,
                g.len(),
                frac(&|c| c.memorized),
                frac(&|c| c.verdict == crate::probe::Verdict::Benign),
                frac(&|c| c.verdict == crate::probe::Verdict::Malign),
                mean(&|c| c.train_acc),
                mean(&|c| c.probe_init),
                mean(&|c| c.probe_final),
            )?;
        }
        writeln!(out)?;
        writeln!(out)?;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes `records.csv`, `probes.csv`, `history.csv`, `records.json` and
/// one `<axis>.dat` per swept axis into `dir`.
pub fn emit_records(records: &[RunRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_records_csv(records, create(dir, "records.csv")?)?;
    write_probes_csv(records, create(dir, "probes.csv")?)?;

    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(dir, "history.csv")?);
    w.write_record(["run_id", "epoch", "step", "train_loss", "train_loss_unaug", "train_acc_unaug"])?;
    for r in records {
        for e in &r.history.epochs {
            w.write_record([
                r.run_id.clone(),
                e.epoch.to_string(),
                e.step.to_string(),
                e.train_loss.to_string(),
                e.train_loss_unaug.to_string(),
                e.train_acc_unaug.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut json = create(dir, "records.json")?;
    serde_json::to_writer_pretty(&mut json, records)?;
    writeln!(json)?;
    json.flush()?;

    let mut axes: Vec<&str> = Vec::new();
    for r in records {
        if r.axis != "single" && r.axis != "grid" && !axes.contains(&r.axis.as_str()) {
            axes.push(&r.axis);
        }
    }
    for axis in axes {
        let group: Vec<&RunRecord> = records.iter().filter(|r| r.axis == axis).collect();
        let mut f = create(dir, &format!("{axis}.dat"))?;
        write_axis_dat(&group, &mut f)?;
        f.flush()?;
    }
    Ok(())
}

/// [`emit_records`] for the grid runs plus `grid.dat` and `grid.json`
/// (cells and capacity estimate).
pub fn emit_grid(grid: &GridResult, dir: &Path) -> Result<()> {
    emit_records(&grid.records, dir)?;
    let mut f = create(dir, "grid.dat")?;
    write_grid_dat(grid, &mut f)?;
    f.flush()?;
    #[derive(Serialize)]
    struct Summary<'a> {
        n_values: &'a [usize],
        b_values: &'a [usize],
        seeds: &'a [u64],
        capacity_estimate: Option<usize>,
        cells: &'a [GridCell],
        randomized: &'a [GridCell],
    }
    let mut json = create(dir, "grid.json")?;
    serde_json::to_writer_pretty(
        &mut json,
        &Summary {
            n_values: &grid.n_values,
            b_values: &grid.b_values,
            seeds: &grid.seeds,
            capacity_estimate: grid.capacity_estimate,
            cells: &grid.cells,
            randomized: &grid.randomized,
        },
    )?;
    writeln!(json)?;
    json.flush()?;
    Ok(())
}
