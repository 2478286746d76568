//! The pipeline steps behind each subcommand.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qevo::evolution::{
    finetune_model, sensitivity_rank, EarlyStop, MutationConfig, SensitivityRanking,
};
use qevo::io::{
    load_csv, load_idx, load_model, load_schemes, make_teacher_fixture, save_csv, save_model,
    save_schemes, CsvSchema, DatasetHandle,
};
use qevo::netgraph::complexity;
use qevo::quantizer::quantize_model;
use qevo::{DatasetEvaluator, Evaluator, Metric, Model};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::logs::{read_ranking, write_history, write_ranking};
use crate::report::{table, EvalReport};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Quantize,
    Sensitivity,
    Finetune,
    Eval,
    Complexity,
    Fixture,
}

/// Written next to every run's outputs. Feeding it back as `--config`
/// (or to `replay`) repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: Step,
    pub config: RunConfig,
    pub dataset_id: Option<String>,
    /// Output files relative to the output directory.
    pub outputs: Vec<String>,
}

pub fn run_step(step: Step, cfg: &RunConfig, json: bool, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    let (dataset_id, outputs) = match step {
        Step::Quantize => cmd_quantize(cfg, out)?,
        Step::Sensitivity => cmd_sensitivity(cfg, out)?,
        Step::Finetune => cmd_finetune(cfg, out)?,
        Step::Eval => cmd_eval(cfg, json, out)?,
        Step::Complexity => cmd_complexity(cfg, json, out)?,
        Step::Fixture => cmd_fixture(cfg, out)?,
    };
    let manifest = RunManifest {
        tool: concat!("qevo ", env!("CARGO_PKG_VERSION")).into(),
        command: step,
        config: cfg.clone(),
        dataset_id,
        outputs,
    };
    write_json(&cfg.output_dir.join(MANIFEST_FILE), &manifest)
}

type StepOutput = (Option<String>, Vec<String>);

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io("<stdout>", e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn model_arg(cfg: &RunConfig) -> Result<Model> {
    Ok(load_model(cfg.require(&cfg.model, "model")?)?)
}

fn load_dataset(cfg: &RunConfig) -> Result<DatasetHandle> {
    let ds = match cfg.data.as_slice() {
        [csv] => load_csv(
            csv,
            &CsvSchema {
                label_column: cfg.label_column.clone(),
                feature_columns: cfg.feature_columns.clone(),
                num_classes: cfg.num_classes,
            },
        )?,
        [images, labels] => load_idx(images, labels)?,
        [] => return Err(CliError::Config("missing `data`".into())),
        _ => {
            return Err(CliError::Config(
                "`data` takes one CSV file or IDX images plus labels".into(),
            ))
        }
    };
    match cfg.eval_subset_size {
        Some(n) => Ok(ds.subsample(n, cfg.require_seed("eval_subset_size")?)?),
        None => Ok(ds),
    }
}

/// Agreement is measured against the float model when one is given,
/// otherwise the dataset labels are taken to be teacher labels.
fn evaluator(cfg: &RunConfig, ds: &DatasetHandle) -> Result<DatasetEvaluator> {
    let eval = match (&cfg.float_model, cfg.metric) {
        (Some(path), Metric::Agreement) => {
            DatasetEvaluator::agreement(&load_model(path)?, ds.inputs.clone())?
        }
        _ => DatasetEvaluator::new(ds.inputs.clone(), ds.labels.clone(), cfg.metric)?,
    };
    Ok(eval.with_threshold(cfg.threshold))
}

fn cmd_quantize(cfg: &RunConfig, out: &mut dyn Write) -> Result<StepOutput> {
    let model = model_arg(cfg)?;
    let (quantized, schemes) = quantize_model(&model, cfg.total_bits)?;
    save_model(cfg.output_dir.join("model.qemodel"), &quantized)?;
    save_schemes(cfg.output_dir.join("schemes.json"), &schemes)?;

    let rows: Vec<Vec<String>> = model
        .weighted_layers()
        .map(|(name, w)| {
            let s = &schemes[name];
            let q = quantized.layer_weights(name).expect("same layers");
            let err = w
                .data()
                .iter()
                .zip(q.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            vec![
                name.to_string(),
                s.total_bits().to_string(),
                s.int_bits().to_string(),
                s.frac_bits().to_string(),
                format!("{:e}", s.sigma()),
                format!("{err:e}"),
            ]
        })
        .collect();
    emit(
        out,
        &table(&["layer", "bits", "int", "frac", "sigma", "max_err"], &rows),
    )?;
    Ok((None, vec!["model.qemodel".into(), "schemes.json".into()]))
}

fn cmd_sensitivity(cfg: &RunConfig, out: &mut dyn Write) -> Result<StepOutput> {
    let model = model_arg(cfg)?;
    let ds = load_dataset(cfg)?;
    let eval = evaluator(cfg, &ds)?;
    let ranking = sensitivity_rank(&model, &eval, cfg.sensitivity_bits)?;
    write_ranking(&cfg.output_dir.join("ranking.csv"), &ranking)?;
    emit(out, &ranking_table(&ranking))?;
    Ok((Some(ds.id), vec!["ranking.csv".into()]))
}

fn ranking_table(ranking: &SensitivityRanking) -> String {
    let rows: Vec<Vec<String>> = ranking
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            vec![
                (i + 1).to_string(),
                e.layer.clone(),
                format!("{:.6}", e.metric),
            ]
        })
        .collect();
    table(&["rank", "layer", "metric"], &rows)
}

/// File-name-safe form of a layer name.
fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_finetune(cfg: &RunConfig, out: &mut dyn Write) -> Result<StepOutput> {
    let seed = cfg.require_seed("finetune")?;
    let model = model_arg(cfg)?;
    let schemes = load_schemes(cfg.require(&cfg.schemes, "schemes")?)?;
    let ds = load_dataset(cfg)?;
    let eval = evaluator(cfg, &ds)?;
    let float = cfg.float_model.as_ref().map(load_model).transpose()?;

    let ranking = match (&cfg.ranking, &float) {
        (Some(path), _) => read_ranking(path)?,
        (None, Some(f)) => sensitivity_rank(f, &eval, cfg.sensitivity_bits)?,
        (None, None) => {
            return Err(CliError::Config(
                "finetune needs a `ranking` file or a `float_model` to rank with".into(),
            ))
        }
    };
    let early_stop = match cfg.max_drop {
        None => None,
        Some(max_drop) => {
            let reference_metric = match (cfg.reference_metric, &float) {
                (Some(r), _) => r,
                (None, Some(f)) => eval.evaluate(f)?,
                (None, None) => {
                    return Err(CliError::Config(
                        "`max_drop` needs `reference_metric` or `float_model`".into(),
                    ))
                }
            };
            Some(EarlyStop {
                reference_metric,
                max_drop,
            })
        }
    };

    let mutation = MutationConfig {
        p: cfg.p,
        population_size: cfg.population_size,
        iterations: cfg.iterations,
        seed,
        parallel: cfg.parallel,
        ..MutationConfig::default()
    };
    let start = Instant::now();
    let outcome = finetune_model(&model, &ranking, &schemes, &mutation, &eval, early_stop)?;
    let wall = start.elapsed().as_secs_f64();

    let mut outputs = vec!["model.qemodel".to_string(), "schemes.json".to_string()];
    save_model(cfg.output_dir.join("model.qemodel"), &outcome.model)?;
    save_schemes(cfg.output_dir.join("schemes.json"), &schemes)?;
    let history_dir = cfg.output_dir.join("history");
    fs::create_dir_all(&history_dir).map_err(|e| CliError::io(&history_dir, e))?;
    for (i, tuning) in outcome.layers.iter().enumerate() {
        let name = format!("history/{:02}_{}.csv", i + 1, slug(&tuning.layer));
        write_history(&cfg.output_dir.join(&name), &tuning.history)?;
        outputs.push(name);
    }
    let report = EvalReport::new(
        cfg.metric,
        outcome.final_metric,
        eval.len(),
        ds.id.clone(),
        Some(seed),
        wall,
    )?;
    write_json(&cfg.output_dir.join("report.json"), &report)?;
    outputs.push("report.json".into());

    let rows: Vec<Vec<String>> = outcome
        .layers
        .iter()
        .map(|t| {
            let fmt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.6}"));
            vec![
                t.layer.clone(),
                fmt(t.initial_fitness),
                fmt(t.best_fitness()),
            ]
        })
        .collect();
    let mut text = table(&["layer", "before", "after"], &rows);
    text.push_str(&format!(
        "{}: {:.6} -> {:.6}{}\n",
        cfg.metric,
        outcome.initial_metric,
        outcome.final_metric,
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    ));
    emit(out, &text)?;
    Ok((Some(ds.id), outputs))
}

fn cmd_eval(cfg: &RunConfig, json: bool, out: &mut dyn Write) -> Result<StepOutput> {
    let model = model_arg(cfg)?;
    let ds = load_dataset(cfg)?;
    let eval = evaluator(cfg, &ds)?;
    let start = Instant::now();
    let value = eval.evaluate(&model)?;
    let report = EvalReport::new(
        cfg.metric,
        value,
        eval.len(),
        ds.id.clone(),
        cfg.seed,
        start.elapsed().as_secs_f64(),
    )?;
    write_json(&cfg.output_dir.join("report.json"), &report)?;
    if json {
        emit(
            out,
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&report).expect("serializable")
            ),
        )?;
    } else {
        emit(out, &report.table())?;
    }
    Ok((Some(ds.id), vec!["report.json".into()]))
}

fn cmd_complexity(cfg: &RunConfig, json: bool, out: &mut dyn Write) -> Result<StepOutput> {
    let model = model_arg(cfg)?;
    let report = complexity(&model, cfg.total_bits, cfg.act_bits)?;
    write_json(&cfg.output_dir.join("complexity.json"), &report)?;
    if json {
        emit(
            out,
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&report).expect("serializable")
            ),
        )?;
        return Ok((None, vec!["complexity.json".into()]));
    }
    let rows: Vec<Vec<String>> = report
        .layers
        .iter()
        .map(|l| {
            vec![
                l.name.clone(),
                l.positions.to_string(),
                l.in_channels.to_string(),
                l.out_channels.to_string(),
                format!("{}x{}", l.kernel_h, l.kernel_w),
                l.mac_count.to_string(),
                l.memory_words.to_string(),
            ]
        })
        .collect();
    let mut text = table(&["layer", "P", "C", "D", "HxW", "macs", "memory"], &rows);
    text.push_str(&format!(
        "total macs {}  memory {} words\ncycle ratio {}w/{}a vs float: {}\n",
        report.total_macs,
        report.total_memory_words,
        report.weight_bits,
        report.act_bits,
        report.cycle_ratio
    ));
    emit(out, &text)?;
    Ok((None, vec!["complexity.json".into()]))
}

fn cmd_fixture(cfg: &RunConfig, out: &mut dyn Write) -> Result<StepOutput> {
    let seed = cfg.require_seed("fixture")?;
    let arch = cfg.require(&cfg.arch, "arch")?;
    let (model, ds) = make_teacher_fixture(arch, cfg.samples, seed)?;
    save_model(cfg.output_dir.join("model.qemodel"), &model)?;
    save_csv(cfg.output_dir.join("data.csv"), &ds)?;
    emit(
        out,
        &format!(
            "fixture {arch}: {} samples, {} classes, dataset {}\n",
            ds.len(),
            ds.num_classes,
            ds.id
        ),
    )?;
    Ok((Some(ds.id), vec!["model.qemodel".into(), "data.csv".into()]))
}

/// Loads a manifest and reruns its step, optionally into another directory.
pub fn replay(manifest: &Path, output_dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(manifest).map_err(|e| CliError::io(manifest, e))?;
    let mut m: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", manifest.display())))?;
    if let Some(dir) = output_dir {
        m.config.output_dir = dir;
    }
    run_step(m.command, &m.config, false, out)
}
