use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ecoscale_core::analysis::{
    compare_oscnn, count_flops, first_stage_ratio_exact, ratio_closed_form,
};
use ecoscale_core::data::{self, Dataset, Split};
use ecoscale_core::kernel_plan::stage_plan;
use ecoscale_core::metrics::{win_rank, MetricsTable, ScoreBoard};
use ecoscale_core::model::{build_model, weights, Variant};
use ecoscale_core::train::{evaluate, fit_with, TrainingLog};
use ecoscale_core::Scalar;

use crate::config::{Precision, RunConfig, SplitRule};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Kernel plan for one cover length, or for a hierarchy of downsampled stages.
pub fn plan(
    length: Option<usize>,
    initial_cover: Option<usize>,
    factors: Option<&[usize]>,
    strict: bool,
) -> Result<String> {
    let plan = match (length, initial_cover) {
        (Some(l), None) => {
            if factors.is_some() {
                return Err(CliError::Usage(
                    "--factors goes with --initial-cover, not --length".into(),
                ));
            }
            stage_plan(l, &[1], strict)?
        }
        (None, Some(c)) => stage_plan(c, factors.unwrap_or(&[1]), strict)?,
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "give either --length or --initial-cover".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --length or --initial-cover is required".into(),
            ))
        }
    };
    let mut out = plan.to_table();
    for (i, s) in plan.stages.iter().enumerate() {
        if s.escalated() {
            let base = ecoscale_core::KernelSet::with_max_prime(s.base_p_k)?;
            let gaps = ecoscale_core::kernel_plan::stage_coverage(&base).gaps_up_to(s.cover_length);
            let gaps: Vec<usize> = gaps.into_iter().collect();
            let _ = writeln!(
                out,
                "stage {}: p_k={} leaves gaps {{{}}} within l_i={}, escalated to p_k={}",
                i + 1,
                s.base_p_k,
                join(&gaps),
                s.cover_length,
                s.p_k()
            );
        }
    }
    out.push('\n');
    out.push_str(&plan.to_key_values());
    Ok(out)
}

/// Complexity report for the configured model, the three variants side by
/// side, and the first-stage ratio against full-width branches.
pub fn analyze(
    config: &RunConfig,
    input_length: Option<usize>,
    out: Option<&Path>,
) -> Result<String> {
    let spec = config.model_spec()?;
    let len = input_length.unwrap_or(spec.input_length);
    let report = count_flops(&spec, len)?;
    if let Some(path) = out {
        write_file(path, report.to_csv().as_bytes())?;
    }
    let mut text = report.to_table();

    let _ = writeln!(
        text,
        "\nvariant          params        macs            flops"
    );
    for v in Variant::ALL {
        let r = count_flops(&config.model.clone().with_variant(v).to_spec()?, len)?;
        let _ = writeln!(
            text,
            "{:<14} {:>10} ({:>7.3}M) {:>14} ({:>8.3}G flops)",
            v.as_str(),
            r.total_params(),
            r.total_params() as f64 / 1e6,
            r.total_macs(),
            r.total_flops() as f64 / 1e9
        );
    }

    let first = spec
        .stages
        .first()
        .and_then(|s| s.plan.as_ref().map(|p| (p.p_k(), s.channels)));
    if let Some((p_k, c)) = first {
        let cmp = compare_oscnn(p_k, c, len, false);
        if let (Ok(cmp), Ok(exact)) = (cmp, first_stage_ratio_exact(p_k, c)) {
            let _ = writeln!(
                text,
                "\nfirst stage p_k={p_k} C={c}: weights {} vs full-width {}; ratio {exact}, closed form {:.5}",
                cmp.ecoscale.total_params(),
                cmp.oscnn.total_params(),
                ratio_closed_form(p_k)
            );
        }
    }
    let _ = writeln!(
        text,
        "\nanalyzed {} at length {len}: {} params ({:.3}M), {} flops ({:.3}G)",
        spec.variant,
        report.total_params(),
        report.total_params() as f64 / 1e6,
        report.total_flops(),
        report.total_flops() as f64 / 1e9
    );
    Ok(text)
}

pub fn gen_data(config: &RunConfig, out: &Path) -> Result<String> {
    let ds = data::generate(&config.data)?;
    data::write_dataset(out, &ds)?;
    Ok(format!(
        "wrote {} records ({} leads x {} samples, {} labels) to {}",
        ds.len(),
        ds.leads,
        ds.length,
        ds.num_classes,
        out.display()
    ))
}

fn check_dataset(config: &RunConfig, ds: &Dataset, path: &Path) -> Result<()> {
    let m = &config.model;
    if (ds.leads, ds.length, ds.num_classes) != (m.leads, m.input_length, m.num_classes) {
        return Err(CliError::Usage(format!(
            "{}: dataset is {} leads x {} samples with {} labels, config expects {} x {} with {}",
            path.display(),
            ds.leads,
            ds.length,
            ds.num_classes,
            m.leads,
            m.input_length,
            m.num_classes
        )));
    }
    Ok(())
}

fn split_of(config: &RunConfig, ds: &Dataset) -> Result<Split> {
    let ids = ds.ids();
    Ok(match config.split {
        SplitRule::Fractions(a, b, c) => data::split(&ids, (a, b, c), config.split_seed())?,
        SplitRule::Sizes(a, b, c) => data::split_sizes(&ids, (a, b, c), config.split_seed())?,
    })
}

fn load_checked(config: &RunConfig, path: &Path) -> Result<Dataset> {
    let ds = data::read_dataset(path)?;
    check_dataset(config, &ds, path)?;
    Ok(ds)
}

pub fn train(
    config: &RunConfig,
    data_path: &Path,
    out: &Path,
    log: Option<&Path>,
) -> Result<String> {
    let ds = load_checked(config, data_path)?;
    let split = split_of(config, &ds)?;
    let log_path = log
        .map(Path::to_path_buf)
        .unwrap_or_else(|| with_suffix(out, "log.csv"));
    match config.precision {
        Precision::F32 => train_as::<f32>(config, &ds, &split, out, &log_path),
        Precision::F64 => train_as::<f64>(config, &ds, &split, out, &log_path),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn train_as<S: Scalar>(
    config: &RunConfig,
    ds: &Dataset,
    split: &Split,
    out: &Path,
    log_path: &Path,
) -> Result<String> {
    let (train_set, val_set) = (ds.subset(&split.train)?, ds.subset(&split.val)?);
    let spec = config.model_spec()?;
    let mut model = build_model::<S>(&spec, config.init_seed())?;
    let io_err = |e| CliError::Io {
        path: log_path.to_path_buf(),
        source: e,
    };
    let mut log = BufWriter::new(File::create(log_path).map_err(io_err)?);
    writeln!(log, "{}", TrainingLog::HEADER).map_err(io_err)?;
    let mut write_err = None;
    let result = fit_with(&mut model, &train_set, &val_set, &config.train, |r| {
        let res = writeln!(log, "{}", TrainingLog::csv_line(r)).and_then(|_| log.flush());
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(e));
    }
    weights::save(&model, out)?;
    Ok(format!(
        "trained {} for {} epochs on {} records: best epoch {} val macro-F1 {:.4}; weights {}, log {}",
        spec.variant,
        config.train.epochs,
        train_set.len(),
        result.best_epoch,
        result.best_val_macro_f1,
        out.display(),
        log_path.display()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for SplitPart {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            "all" => Ok(SplitPart::All),
            other => Err(format!(
                "unknown split {other:?} (expected train, val, test or all)"
            )),
        }
    }
}

/// Metrics of saved weights on one part of the configured split.
pub fn eval(
    config: &RunConfig,
    weights_path: &Path,
    data_path: &Path,
    threshold: f64,
    part: SplitPart,
    out: Option<&Path>,
) -> Result<String> {
    let ds = load_checked(config, data_path)?;
    let subset = match part {
        SplitPart::All => ds,
        other => {
            let s = split_of(config, &ds)?;
            let ids = match other {
                SplitPart::Train => s.train,
                SplitPart::Val => s.val,
                _ => s.test,
            };
            ds.subset(&ids)?
        }
    };
    let table = match config.precision {
        Precision::F32 => eval_as::<f32>(config, weights_path, &subset, threshold)?,
        Precision::F64 => eval_as::<f64>(config, weights_path, &subset, threshold)?,
    };
    let csv = table.to_csv();
    match out {
        Some(path) => {
            write_file(path, csv.as_bytes())?;
            Ok(format!(
                "{}evaluated {} records at threshold {threshold}: macro P {:.4} R {:.4} F1 {:.4}; metrics {}",
                table.to_table(),
                subset.len(),
                table.macro_precision,
                table.macro_recall,
                table.macro_f1,
                path.display()
            ))
        }
        None => Ok(csv),
    }
}

fn eval_as<S: Scalar>(
    config: &RunConfig,
    weights_path: &Path,
    ds: &Dataset,
    threshold: f64,
) -> Result<MetricsTable> {
    let mut model = build_model::<S>(&config.model_spec()?, config.init_seed())?;
    weights::load_into(&mut model, weights_path)?;
    Ok(evaluate(&model, ds, threshold)?)
}

/// Win counts and average ranks over every metrics CSV in `runs`.
///
/// A file `NAME.csv` scores model `NAME`; `NAME.TASK.csv` scores it on task
/// `TASK`. Files without the metrics header are skipped.
pub fn report(runs: &Path, out: Option<&Path>) -> Result<String> {
    let io = |e| CliError::Io {
        path: runs.to_path_buf(),
        source: e,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(runs)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && Some(p.as_path()) != out)
        .collect();
    files.sort();

    let mut tables: BTreeMap<String, BTreeMap<String, MetricsTable>> = BTreeMap::new();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io {
            path: path.clone(),
            source: e,
        })?;
        if !text.starts_with("label,precision,recall,f1,support") {
            continue;
        }
        let stem = path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        let (model, task) = stem
            .split_once('.')
            .map_or((stem.as_str(), "default"), |(m, t)| (m, t));
        let table = MetricsTable::from_csv(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        tables
            .entry(model.to_string())
            .or_default()
            .insert(task.to_string(), table);
    }
    if tables.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no metrics CSVs found",
            runs.display()
        )));
    }

    let mut board = ScoreBoard::default();
    for (model, by_task) in &tables {
        let mut cells = BTreeMap::new();
        for (task, t) in by_task {
            for (i, s) in t.labels.iter().enumerate() {
                cells.insert(format!("{task}/{i}/precision"), s.precision);
                cells.insert(format!("{task}/{i}/recall"), s.recall);
                cells.insert(format!("{task}/{i}/f1"), s.f1);
            }
        }
        board.add_model(model.clone(), cells);
    }
    let wr = win_rank(&board)?;
    if let Some(path) = out {
        write_file(path, wr.to_csv().as_bytes())?;
    }

    let mut text = wr.to_table();
    let _ = writeln!(
        text,
        "\n{:<16} {:<10} {:>9} {:>9} {:>9}",
        "model", "task", "precision", "recall", "f1"
    );
    for (model, by_task) in &tables {
        for (task, t) in by_task {
            let _ = writeln!(
                text,
                "{model:<16} {task:<10} {:>9.4} {:>9.4} {:>9.4}",
                t.macro_precision, t.macro_recall, t.macro_f1
            );
        }
        if by_task.len() > 1 {
            let n = by_task.len() as f64;
            let mean = |f: fn(&MetricsTable) -> f64| by_task.values().map(f).sum::<f64>() / n;
            let _ = writeln!(
                text,
                "{model:<16} {:<10} {:>9.4} {:>9.4} {:>9.4}",
                "average",
                mean(|t| t.macro_precision),
                mean(|t| t.macro_recall),
                mean(|t| t.macro_f1)
            );
        }
    }
    let _ = writeln!(
        text,
        "\ncompared {} models over {} cells",
        wr.models.len(),
        wr.cells
    );
    Ok(text)
}
