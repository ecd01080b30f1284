//! Command-line pipeline driver.
//!
//! Five subcommands cover the workflow: `data-gen`, `train`, `eval`,
//! `search`, `prune`. Every option resolves through three layers — built-in
//! defaults, then a `key=value` config file (`--config`), then flags — and
//! each config key mirrors its flag name exactly (flag `--spd-mode` is key
//! `spd-mode`). Before any work starts, the fully resolved configuration is
//! echoed to `<out>/run_config.txt`, so a run directory always records how
//! it was produced. Runs are write-once: a directory that already holds a
//! `run_config.txt` is refused.
//!
//! Failures print a single machine-parsable line `error[<class>]: <detail>`
//! and exit with a class-specific code: config 2, io 3, contract 4,
//! divergence 5.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricConfig, SpdMode};
use crate::model::{checkpoint, ArchitectureEncoding, ModelConfig};
use crate::pruning::{self, PruneContext, PruneThresholds};
use crate::report::{Plot, Series, PALETTE};
use crate::search::{self, SearchConfig, SearchSpace};
use crate::train::{self, TrainConfig};

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class().name());
            e.class().exit_code()
        }
    }
}

const USAGE: &str = "\
switchnas <command> [--flag value]...

commands:
  data-gen   generate a synthetic grouped dataset archive
  train      train one architecture and report its metrics
  eval       evaluate a checkpoint: metrics, per-group accuracy, routing traces
  search     multi-objective architecture search with surrogate guidance
  prune      iteratively remove the least-used experts from a checkpoint

common flags:
  --out DIR      output directory (required; refuses a reused directory)
  --seed N       global seed (default 0)
  --config FILE  key=value file; every key mirrors a flag 1:1

run `switchnas <command> --help` for the command's flags and defaults.";

fn dispatch(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        println!("{USAGE}");
        return Ok(());
    };
    if command == "--help" || command == "help" {
        println!("{USAGE}");
        return Ok(());
    }
    let rest = &args[1..];
    match command.as_str() {
        "data-gen" => cmd_data_gen(rest),
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "search" => cmd_search(rest),
        "prune" => cmd_prune(rest),
        other => Err(Error::Config(format!("unknown command {other:?}; try --help"))),
    }
}

// ---------------------------------------------------------------------------
// layered configuration
// ---------------------------------------------------------------------------

/// Fully resolved key→value options for one run.
#[derive(Debug)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn parse_flag_pairs(args: &[String]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!("expected --flag, got {arg:?}")));
        };
        let Some(value) = it.next() else {
            return Err(Error::Config(format!("flag --{key} is missing its value")));
        };
        map.insert(key.to_string(), value.clone());
    }
    Ok(map)
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(e, path))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1)));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

impl RunConfig {
    /// defaults < config file < flags; rejects keys outside `allowed`.
    fn resolve(args: &[String], defaults: &[(&str, String)], allowed: &[&str]) -> Result<RunConfig> {
        let flags = parse_flag_pairs(args)?;
        let mut values: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        if let Some(path) = flags.get("config") {
            for (k, v) in parse_config_file(Path::new(path))? {
                values.insert(k, v);
            }
        }
        for (k, v) in &flags {
            values.insert(k.clone(), v.clone());
        }
        for key in values.keys() {
            if key != "config" && !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown option {key:?}")));
            }
        }
        Ok(RunConfig { values })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing required option --{key}")))
    }

    fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Config(format!("--{key} {:?} is not an integer", self.values[key])))
    }

    fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Config(format!("--{key} {:?} is not an integer", self.values[key])))
    }

    fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Config(format!("--{key} {:?} is not a number", self.values[key])))
    }

    fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            other => Err(Error::Config(format!("--{key} {other:?} is not true|false"))),
        }
    }

    fn get_opt(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    /// Create the run directory and echo the resolved config into it.
    fn open_out_dir(&self) -> Result<PathBuf> {
        let out = PathBuf::from(self.get("out")?);
        let echo = out.join("run_config.txt");
        if echo.exists() {
            return Err(Error::Config(format!(
                "output directory {} already holds a run (run_config.txt exists)",
                out.display()
            )));
        }
        std::fs::create_dir_all(&out).map_err(|e| Error::io(e, &out))?;
        let mut text = String::new();
        for (k, v) in &self.values {
            if k != "config" {
                text.push_str(&format!("{k}={v}\n"));
            }
        }
        std::fs::write(&echo, text).map_err(|e| Error::io(e, &echo))?;
        Ok(out)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(e, path))
}

// ---------------------------------------------------------------------------
// shared option groups
// ---------------------------------------------------------------------------

fn metric_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("beta", metrics::DEFAULT_BETA.to_string()),
        ("spd-mode", "sum".to_string()),
        ("light-threshold", metrics::DEFAULT_LIGHT_THRESHOLD.to_string()),
    ]
}

fn metric_config(rc: &RunConfig) -> Result<MetricConfig> {
    Ok(MetricConfig {
        beta: rc.get_f64("beta")?,
        spd_mode: rc.get("spd-mode")?.parse::<SpdMode>()?,
        light_threshold: rc.get_f64("light-threshold")?,
        batch_size: 256,
    })
}

fn model_defaults() -> Vec<(&'static str, String)> {
    let m = ModelConfig::default();
    vec![
        ("d-model", m.d_model.to_string()),
        ("d-hidden", m.d_hidden.to_string()),
        ("n-heads", m.n_heads.to_string()),
        ("n-layers", m.n_layers.to_string()),
        ("patch-size", m.patch_size.to_string()),
        ("aux-coeff", m.aux_loss_coeff.to_string()),
        ("aux-enabled", m.aux_loss_enabled.to_string()),
    ]
}

fn model_config(rc: &RunConfig, ds: &data::Dataset) -> Result<ModelConfig> {
    let cfg = ModelConfig {
        d_model: rc.get_usize("d-model")?,
        d_hidden: rc.get_usize("d-hidden")?,
        n_heads: rc.get_usize("n-heads")?,
        n_layers: rc.get_usize("n-layers")?,
        n_classes: 2,
        image_h: ds.spec.image_h,
        image_w: ds.spec.image_w,
        image_c: ds.spec.image_c,
        patch_size: rc.get_usize("patch-size")?,
        aux_loss_coeff: rc.get_f64("aux-coeff")?,
        aux_loss_enabled: rc.get_bool("aux-enabled")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_defaults() -> Vec<(&'static str, String)> {
    let t = TrainConfig::default();
    vec![
        ("epochs", t.epochs.to_string()),
        ("batch-size", t.batch_size.to_string()),
        ("lr", t.learning_rate.to_string()),
    ]
}

fn load_dataset_arg(rc: &RunConfig) -> Result<data::Dataset> {
    data::load_dataset(Path::new(rc.get("dataset")?))
}

// ---------------------------------------------------------------------------
// data-gen
// ---------------------------------------------------------------------------

fn cmd_data_gen(args: &[String]) -> Result<()> {
    let spec_defaults = data::DatasetSpec::default();
    let mut defaults = vec![
        ("seed", "0".to_string()),
        ("train-count", spec_defaults.train_count.to_string()),
        ("val-count", spec_defaults.val_count.to_string()),
        ("test-count", spec_defaults.test_count.to_string()),
        ("image-h", spec_defaults.image_h.to_string()),
        ("image-w", spec_defaults.image_w.to_string()),
        ("lighting-min", spec_defaults.lighting_min.to_string()),
        ("lighting-max", spec_defaults.lighting_max.to_string()),
        ("sigma-train", spec_defaults.sigma_train.to_string()),
        ("sigma-test", spec_defaults.sigma_test.to_string()),
        ("contrast-jitter", spec_defaults.contrast_jitter.to_string()),
    ];
    defaults.push(("out", String::new()));
    let allowed: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
    let rc = RunConfig::resolve(args, &defaults, &allowed)?;
    let out = rc.open_out_dir()?;

    let spec = data::DatasetSpec {
        train_count: rc.get_usize("train-count")?,
        val_count: rc.get_usize("val-count")?,
        test_count: rc.get_usize("test-count")?,
        image_h: rc.get_usize("image-h")?,
        image_w: rc.get_usize("image-w")?,
        image_c: 1,
        group_weights: spec_defaults.group_weights.clone(),
        lighting_min: rc.get_f64("lighting-min")?,
        lighting_max: rc.get_f64("lighting-max")?,
        sigma_train: rc.get_f64("sigma-train")?,
        sigma_test: rc.get_f64("sigma-test")?,
        contrast_jitter: rc.get_f64("contrast-jitter")?,
        seed: rc.get_u64("seed")?,
    };
    let dataset = data::generate(&spec)?;
    data::save_dataset(&dataset, &out)?;
    println!(
        "wrote dataset archive to {} ({} train / {} val / {} test)",
        out.display(),
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(args: &[String]) -> Result<()> {
    let mut defaults = vec![
        ("seed", "0".to_string()),
        ("out", String::new()),
        ("dataset", String::new()),
        ("encoding", String::new()),
    ];
    defaults.extend(train_defaults());
    defaults.extend(model_defaults());
    defaults.extend(metric_defaults());
    let allowed: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
    let rc = RunConfig::resolve(args, &defaults, &allowed)?;

    let dataset = load_dataset_arg(&rc)?;
    let encoding = ArchitectureEncoding::parse(rc.get("encoding")?)?;
    let model_cfg = model_config(&rc, &dataset)?;
    let metric_cfg = metric_config(&rc)?;
    let train_cfg = TrainConfig {
        epochs: rc.get_usize("epochs")?,
        batch_size: rc.get_usize("batch-size")?,
        learning_rate: rc.get_f64("lr")?,
        seed: rc.get_u64("seed")?,
    };
    let out = rc.open_out_dir()?;

    let (model, stats) = train::train_new_model(model_cfg, encoding.clone(), &dataset.train, &train_cfg)?;
    let report = metrics::compute_report(&model, &dataset, &metric_cfg)?;
    checkpoint::save_checkpoint_file(&model, &out.join("model.ckpt"))?;
    let csv = format!(
        "{}\n{}\n",
        metrics::REPORT_CSV_HEADER,
        metrics::report_csv_row(&report, "model", &encoding.to_compact_string(), model.param_count())
    );
    write_file(&out.join("metrics.csv"), &csv)?;
    println!(
        "trained {} ({} params) in {} steps; test acc {:.4}, fairness {:.4} ({} mode)",
        encoding.to_compact_string(),
        model.param_count(),
        stats.steps,
        report.test_accuracy,
        report.fairness_score,
        report.spd_mode.name()
    );
    println!("wrote {} and metrics.csv", out.join("model.ckpt").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(args: &[String]) -> Result<()> {
    let mut defaults = vec![
        ("seed", "0".to_string()),
        ("out", String::new()),
        ("dataset", String::new()),
        ("checkpoint", String::new()),
    ];
    defaults.extend(metric_defaults());
    let allowed: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
    let rc = RunConfig::resolve(args, &defaults, &allowed)?;

    let dataset = load_dataset_arg(&rc)?;
    let model = checkpoint::load_checkpoint_file(Path::new(rc.get("checkpoint")?))?;
    let metric_cfg = metric_config(&rc)?;
    let out = rc.open_out_dir()?;

    let report = metrics::compute_report(&model, &dataset, &metric_cfg)?;
    let csv = format!(
        "{}\n{}\n",
        metrics::REPORT_CSV_HEADER,
        metrics::report_csv_row(
            &report,
            "model",
            &model.encoding.to_compact_string(),
            model.param_count()
        )
    );
    write_file(&out.join("metrics.csv"), &csv)?;

    let mut group_csv = String::from("group,count,accuracy\n");
    for g in 0..data::N_GROUPS {
        group_csv.push_str(&format!(
            "{},{},{:.6}\n",
            g + 1,
            report.group_accuracies.counts[g],
            report.group_accuracies.acc[g]
        ));
    }
    write_file(&out.join("group_accuracy.csv"), &group_csv)?;

    // Routing traces over the test split, one row per image.
    let n_layers = model.config.n_layers;
    let image_len = model.config.image_len();
    let mut trace_csv = String::from("image,group");
    for l in 0..n_layers {
        trace_csv.push_str(&format!(",layer_{l}"));
    }
    trace_csv.push('\n');
    let mut usage_counts: Vec<Vec<u64>> =
        model.blocks.iter().map(|b| vec![0u64; b.switch.router.n_experts()]).collect();
    let mut usage_tokens = vec![0u64; n_layers];
    let test = &dataset.test;
    let mut start = 0;
    while start < test.len() {
        let bsz = metric_cfg.batch_size.min(test.len() - start);
        let tape = crate::numerics::Tape::inference();
        let fwd = model.forward(&tape, &test.images[start * image_len..(start + bsz) * image_len], bsz)?;
        for (b, trace) in fwd.traces.iter().enumerate() {
            trace_csv.push_str(&format!("{},{}", start + b, test.groups[start + b]));
            for &e in &trace.experts {
                trace_csv.push_str(&format!(",{e}"));
            }
            trace_csv.push('\n');
        }
        for (layer, choices) in fwd.token_choices.iter().enumerate() {
            usage_tokens[layer] += choices.len() as u64;
            for &c in choices {
                usage_counts[layer][c] += 1;
            }
        }
        start += bsz;
    }
    write_file(&out.join("routing_traces.csv"), &trace_csv)?;

    let mut usage_csv = String::from("layer,expert,active,count,fraction\n");
    for (layer, counts) in usage_counts.iter().enumerate() {
        for (expert, &count) in counts.iter().enumerate() {
            usage_csv.push_str(&format!(
                "{layer},{expert},{},{count},{:.6}\n",
                model.blocks[layer].switch.router.active[expert],
                count as f64 / usage_tokens[layer] as f64
            ));
        }
    }
    write_file(&out.join("expert_usage.csv"), &usage_csv)?;

    for (layer, counts) in usage_counts.iter().enumerate() {
        let mut sorted: Vec<u64> = counts.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let top2: u64 = sorted.iter().take(2).sum();
        println!(
            "layer {layer}: top-2 expert share {:.3} over {} active experts",
            top2 as f64 / usage_tokens[layer] as f64,
            model.blocks[layer].switch.router.n_active()
        );
    }
    println!("test acc {:.4}, fairness {:.4} ({} mode), robustness {:.4}, overfitting {:+.4}",
        report.test_accuracy, report.fairness_score, report.spd_mode.name(), report.robustness, report.overfitting);
    println!("wrote metrics.csv, group_accuracy.csv, routing_traces.csv, expert_usage.csv under {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

fn cmd_search(args: &[String]) -> Result<()> {
    let sc = SearchConfig::default();
    let mut defaults = vec![
        ("seed", "0".to_string()),
        ("out", String::new()),
        ("dataset", String::new()),
        ("iterations", sc.iterations.to_string()),
        ("population", sc.initial_population.to_string()),
        ("candidates", sc.n_candidates.to_string()),
        ("select", sc.n_select.to_string()),
        ("workers", sc.workers.to_string()),
        ("min-params", String::new()),
        ("max-params", String::new()),
        ("max-experts", sc.space.max_experts.to_string()),
        ("exploration-bonus", "false".to_string()),
        ("resume", String::new()),
    ];
    defaults.extend(train_defaults());
    defaults.extend(model_defaults());
    defaults.extend(metric_defaults());
    let allowed: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
    let rc = RunConfig::resolve(args, &defaults, &allowed)?;

    let dataset = load_dataset_arg(&rc)?;
    let model_cfg = model_config(&rc, &dataset)?;
    let cfg = SearchConfig {
        seed: rc.get_u64("seed")?,
        initial_population: rc.get_usize("population")?,
        iterations: rc.get_usize("iterations")?,
        n_candidates: rc.get_usize("candidates")?,
        n_select: rc.get_usize("select")?,
        workers: rc.get_usize("workers")?,
        min_params: rc.get_opt("min-params").map(|v| v.parse()).transpose().map_err(|_| {
            Error::Config("--min-params is not an integer".to_string())
        })?,
        max_params: rc.get_opt("max-params").map(|v| v.parse()).transpose().map_err(|_| {
            Error::Config("--max-params is not an integer".to_string())
        })?,
        exploration_bonus: rc.get_bool("exploration-bonus")?,
        space: SearchSpace {
            n_layers: model_cfg.n_layers,
            max_experts: rc.get_usize("max-experts")?,
        },
        model: model_cfg,
        train: TrainConfig {
            epochs: rc.get_usize("epochs")?,
            batch_size: rc.get_usize("batch-size")?,
            learning_rate: rc.get_f64("lr")?,
            seed: 0,
        },
        metric: metric_config(&rc)?,
        surrogate: Default::default(),
    };
    let resume = rc.get_opt("resume").map(|p| search::load_state(Path::new(p))).transpose()?;
    let out = rc.open_out_dir()?;

    let state = search::run_search(&cfg, &dataset, Some(&out), resume)?;

    let front = state.pareto_front();
    let mut pareto_csv = String::from(metrics::REPORT_CSV_HEADER);
    pareto_csv.push('\n');
    for r in &front {
        pareto_csv.push_str(&metrics::report_csv_row(
            &r.report,
            &r.model_id,
            &r.encoding.to_compact_string(),
            r.param_count,
        ));
        pareto_csv.push('\n');
    }
    write_file(&out.join("pareto.csv"), &pareto_csv)?;

    // Accuracy-vs-fairness scatter with the front outlined.
    let archive_points: Vec<(f64, f64)> = state
        .archive
        .iter()
        .map(|r| (r.objectives.fairness, r.objectives.test_accuracy))
        .collect();
    let mut front_points: Vec<(f64, f64)> =
        front.iter().map(|r| (r.objectives.fairness, r.objectives.test_accuracy)).collect();
    front_points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let plot = Plot {
        title: "architecture search: test accuracy vs fairness".to_string(),
        x_label: format!("fairness ({} mode)", cfg.metric.spd_mode.name()),
        y_label: "test accuracy".to_string(),
        series: vec![
            Series {
                label: format!("archive ({})", state.archive.len()),
                points: archive_points,
                color: PALETTE[0],
                line: false,
                dashed: false,
            },
            Series {
                label: format!("pareto front ({})", front_points.len()),
                points: front_points,
                color: PALETTE[1],
                line: true,
                dashed: true,
            },
        ],
    };
    write_file(&out.join("pareto.svg"), &plot.render())?;

    println!(
        "search done: {} evaluated ({} failed), front size {}, {} iterations{}",
        state.archive.len(),
        state.failed.len(),
        front.len(),
        state.completed_iterations,
        if state.exhausted { " (space exhausted)" } else { "" }
    );
    println!("wrote search_state.json, pareto.csv, pareto.svg, checkpoints/ under {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// prune
// ---------------------------------------------------------------------------

fn cmd_prune(args: &[String]) -> Result<()> {
    let th = PruneThresholds::default();
    let mut defaults = vec![
        ("seed", "0".to_string()),
        ("out", String::new()),
        ("dataset", String::new()),
        ("checkpoint", String::new()),
        ("max-prune-iters", th.max_iterations.to_string()),
        ("acc-drop", th.max_acc_drop.to_string()),
        ("min-fairness", String::new()),
        ("recovery-epochs", "0".to_string()),
    ];
    defaults.extend(train_defaults());
    defaults.extend(metric_defaults());
    let allowed: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
    let rc = RunConfig::resolve(args, &defaults, &allowed)?;

    let dataset = load_dataset_arg(&rc)?;
    let mut model = checkpoint::load_checkpoint_file(Path::new(rc.get("checkpoint")?))?;
    let thresholds = PruneThresholds {
        max_acc_drop: rc.get_f64("acc-drop")?,
        min_fairness: rc.get_opt("min-fairness").map(|v| v.parse()).transpose().map_err(|_| {
            Error::Config("--min-fairness is not a number".to_string())
        })?,
        max_iterations: rc.get_usize("max-prune-iters")?,
        recovery_epochs: rc.get_usize("recovery-epochs")?,
    };
    let ctx = PruneContext {
        dataset: &dataset,
        thresholds,
        metric: metric_config(&rc)?,
        recovery_train: TrainConfig {
            epochs: 0,
            batch_size: rc.get_usize("batch-size")?,
            learning_rate: rc.get_f64("lr")?,
            seed: 0,
        },
        seed: rc.get_u64("seed")?,
    };
    let out = rc.open_out_dir()?;

    let log = pruning::prune_loop(&mut model, &ctx)?;
    checkpoint::save_checkpoint_file(&model, &out.join("pruned.ckpt"))?;
    write_file(&out.join("prune_log.csv"), &log.to_csv())?;

    // Iteration curves: the three metrics plus normalized parameter count.
    let mut acc = vec![(0.0, log.baseline.test_accuracy)];
    let mut fair = vec![(0.0, log.baseline.fairness_score)];
    let mut rob = vec![(0.0, log.baseline.robustness)];
    let mut size = vec![(0.0, 1.0)];
    for e in &log.entries {
        let x = e.iteration as f64;
        acc.push((x, e.report.test_accuracy));
        fair.push((x, e.report.fairness_score));
        rob.push((x, e.report.robustness));
        size.push((x, e.param_count as f64 / log.baseline_param_count as f64));
    }
    let mk = |label: &str, points: Vec<(f64, f64)>, color: &'static str| Series {
        label: label.to_string(),
        points,
        color,
        line: true,
        dashed: false,
    };
    let plot = Plot {
        title: "expert pruning trajectory".to_string(),
        x_label: "pruning iteration".to_string(),
        y_label: "metric value / size fraction".to_string(),
        series: vec![
            mk("test accuracy", acc, PALETTE[0]),
            mk("fairness", fair, PALETTE[1]),
            mk("robustness", rob, PALETTE[2]),
            mk("params (fraction of baseline)", size, PALETTE[3]),
        ],
    };
    write_file(&out.join("prune_curve.svg"), &plot.render())?;

    let final_params = model.param_count();
    println!(
        "pruned {} experts: {} -> {} params ({:.1}% reduction), stop: {:?}",
        log.entries.len(),
        log.baseline_param_count,
        final_params,
        100.0 * (1.0 - final_params as f64 / log.baseline_param_count as f64),
        log.stop
    );
    println!("wrote pruned.ckpt, prune_log.csv, prune_curve.svg under {}", out.display());
    Ok(())
}
