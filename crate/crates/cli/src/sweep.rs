//! Optimizer sweep for the trajectory model: every named config is trained
//! for every trial, then the final losses and trajectory metrics are tabulated
//! next to the reference numbers.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajplan_core::artifact::save_model;
use trajplan_core::eval::{aggregate, evaluate_corpus, sharp_turn_fraction, CorpusStats, Metric, TrajectoryStats};
use trajplan_core::tm::TrajectoryModel;
use trajplan_core::trainer::{train_tm, write_training_log, LossBreakdown, TmEpochLog, TmTrainConfig};
use trajplan_core::Error as CoreError;

use crate::commands::{write_with_sidecar, TmInputs};
use crate::config::{RunConfig, SweepSpec, TmConfig};
use crate::error::CliError;
use crate::reference;

/// Metrics shown in the trajectory-quality table, in reference order.
pub const TABLE_METRICS: [Metric; 5] =
    [Metric::InitDist, Metric::FinalDist, Metric::AvgSpacing, Metric::MaxSpacingDev, Metric::AvgAngle];

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub config: String,
    pub optimizer: String,
    pub trial: usize,
    pub seed: u64,
    /// `None` when training diverged; `error` then holds the message.
    pub final_loss: Option<LossBreakdown>,
    pub error: Option<String>,
    pub log: Vec<TmEpochLog>,
    pub model: Option<TrajectoryModel>,
    pub stats: Vec<TrajectoryStats>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    /// Sorted by (config order, trial).
    pub trials: Vec<TrialOutcome>,
    pub config_order: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSummary {
    pub trials: usize,
    pub converged: usize,
    pub mean: f64,
    pub std: f64,
}

/// Trial seeds drawn from the master seed; trial k gets the same seed in
/// every config so configs are compared on identical data order and init.
pub fn trial_seeds(master_seed: u64, trials: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..trials).map(|_| rng.random()).collect()
}

/// Trains every (config, trial) pair. Divergent trials are recorded, not fatal.
pub fn run_sweep(
    spec: &SweepSpec,
    tm_cfg: &TmConfig,
    inputs: &TmInputs,
    mut progress: impl FnMut(String),
) -> Result<SweepResult, CliError> {
    if spec.configs.is_empty() || spec.trials == 0 {
        return Err(CliError::Config("sweep needs at least one config and one trial".into()));
    }
    let seeds = trial_seeds(spec.master_seed, spec.trials);
    let mut result = SweepResult { config_order: spec.configs.iter().map(|c| c.name.clone()).collect(), ..Default::default() };
    for named in &spec.configs {
        for (trial, &seed) in seeds.iter().enumerate() {
            let train = TmTrainConfig { optimizer: named.optimizer, seed, ..tm_cfg.train.clone() };
            let tm = TrajectoryModel::new(tm_cfg.architecture.clone(), inputs.standardizer().clone(), seed)?;
            let mut outcome = TrialOutcome {
                config: named.name.clone(),
                optimizer: named.optimizer.label(),
                trial,
                seed,
                final_loss: None,
                error: None,
                log: Vec::new(),
                model: None,
                stats: Vec::new(),
            };
            match train_tm(tm, &inputs.endpoints, &inputs.fm, &inputs.im, &train, |_, _| Ok(())) {
                Ok((model, log)) => {
                    outcome.final_loss = log.last().map(|e| e.loss);
                    outcome.stats = evaluate_corpus(&model, &inputs.endpoints)?;
                    outcome.model = Some(model);
                    outcome.log = log;
                }
                Err(e @ (CoreError::Divergence(_) | CoreError::Numerical { .. })) => outcome.error = Some(e.to_string()),
                Err(e) => return Err(e.into()),
            }
            progress(match (&outcome.final_loss, &outcome.error) {
                (Some(l), _) => format!("config #{} trial {trial}: final loss {:.5}", named.name, l.total),
                (_, Some(e)) => format!("config #{} trial {trial}: {e}", named.name),
                _ => unreachable!("a trial either finishes or fails"),
            });
            result.trials.push(outcome);
        }
    }
    let order = result.config_order.clone();
    let rank = |name: &str| order.iter().position(|n| n == name).unwrap_or(usize::MAX);
    result.trials.sort_by_key(|t| (rank(&t.config), t.trial));
    Ok(result)
}

impl SweepResult {
    pub fn trials_of<'a>(&'a self, config: &'a str) -> impl Iterator<Item = &'a TrialOutcome> + 'a {
        self.trials.iter().filter(move |t| t.config == config)
    }

    pub fn final_loss(&self, config: &str, trial: usize) -> Option<f64> {
        self.trials_of(config).find(|t| t.trial == trial).and_then(|t| t.final_loss.map(|l| l.total))
    }

    /// Mean and population std of the final loss over converged trials.
    pub fn loss_summary(&self, config: &str) -> LossSummary {
        let losses: Vec<f64> = self.trials_of(config).filter_map(|t| t.final_loss.map(|l| l.total)).collect();
        let trials = self.trials_of(config).count();
        let n = losses.len() as f64;
        let mean = losses.iter().sum::<f64>() / n;
        let std = (losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n).sqrt();
        LossSummary { trials, converged: losses.len(), mean, std }
    }

    /// Trajectory metrics pooled over every converged trial of a config.
    pub fn pooled_stats(&self, config: &str) -> Vec<TrajectoryStats> {
        self.trials_of(config).flat_map(|t| t.stats.iter().copied()).collect()
    }
}

/// Per-config pooled corpus statistics and sharp-turn fraction.
pub struct QualityRow {
    pub config: String,
    pub corpus: Option<CorpusStats>,
    pub sharp_threshold: Option<f64>,
    pub sharp_fraction: Option<f64>,
}

pub fn quality_rows(result: &SweepResult, bins: usize, threshold: Option<f64>) -> Result<Vec<QualityRow>, CliError> {
    result
        .config_order
        .iter()
        .map(|name| {
            let stats = result.pooled_stats(name);
            if stats.is_empty() {
                return Ok(QualityRow { config: name.clone(), corpus: None, sharp_threshold: None, sharp_fraction: None });
            }
            let corpus = aggregate(&stats, bins)?;
            let thr = threshold.unwrap_or(corpus.get(Metric::MinAngle).mean);
            Ok(QualityRow {
                config: name.clone(),
                sharp_fraction: sharp_turn_fraction(&stats, thr),
                sharp_threshold: Some(thr),
                corpus: Some(corpus),
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

/// Final-loss table: one line per config.
pub fn format_loss_table(result: &SweepResult) -> String {
    let mut s = String::new();
    writeln!(s, "{:<4} {:<32} {:>7} {:>20} {:>10}", "#", "optimizer", "trials", "final loss", "reference").unwrap();
    for name in &result.config_order {
        let sum = result.loss_summary(name);
        let label = result.trials_of(name).next().map(|t| t.optimizer.clone()).unwrap_or_default();
        let loss = if sum.converged > 0 { format!("{:.4} ± {:.4}", sum.mean, sum.std) } else { "diverged".into() };
        let trials = format!("{}/{}", sum.converged, sum.trials);
        writeln!(s, "{:<4} {:<32} {:>7} {:>20} {:>10}", name, label, trials, loss, fmt_opt(reference::final_loss(name), 3))
            .unwrap();
    }
    s
}

/// Trajectory-quality table with a reference line under each config.
pub fn format_quality_table(rows: &[QualityRow]) -> String {
    let mut s = String::new();
    write!(s, "{:<4} {:<10}", "#", "source").unwrap();
    for m in TABLE_METRICS {
        write!(s, " {:>19}", m.name()).unwrap();
    }
    writeln!(s, " {:>8}", "sharp").unwrap();
    for row in rows {
        write!(s, "{:<4} {:<10}", row.config, "measured").unwrap();
        for m in TABLE_METRICS {
            let cell = row.corpus.as_ref().map(|c| format!("{:.3} ± {:.3}", c.get(m).mean, c.get(m).std));
            write!(s, " {:>19}", cell.unwrap_or_else(|| "-".into())).unwrap();
        }
        writeln!(s, " {:>8}", fmt_opt(row.sharp_fraction, 3)).unwrap();
        if let Some(refs) = reference::trajectory_metrics(&row.config) {
            write!(s, "{:<4} {:<10}", "", "reference").unwrap();
            for (mean, std) in refs {
                write!(s, " {:>19}", format!("{mean:.3} ± {std:.3}")).unwrap();
            }
            let sharp = (reference::SHARP_TURN_FRACTION.0 == row.config).then_some(reference::SHARP_TURN_FRACTION.1);
            writeln!(s, " {:>8}", fmt_opt(sharp, 3)).unwrap();
        }
    }
    s
}

/// Writes per-trial losses, the two summary tables, every trained model and
/// its training log under `dir`.
pub fn write_sweep_outputs(result: &SweepResult, dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let prov = cfg.provenance(cfg.sweep.master_seed)?;
    for t in &result.trials {
        let stem = format!("config{}_trial{}", t.config, t.trial);
        let trial_prov = cfg.provenance(t.seed)?;
        if let Some(model) = &t.model {
            std::fs::create_dir_all(dir.join("models"))?;
            save_model(model, Some(&trial_prov), dir.join("models").join(format!("{stem}.json")))?;
        }
        write_with_sidecar(&dir.join("logs").join(format!("{stem}.csv")), "tm_training_log", t.log.len(), &trial_prov, |w| {
            Ok(write_training_log(&t.log, w)?)
        })?;
    }

    write_with_sidecar(&dir.join("final_loss.csv"), "sweep_trials", result.trials.len(), &prov, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["config", "optimizer", "trial", "seed", "final_loss", "rectification", "initial", "final", "error"])?;
        for t in &result.trials {
            let l = t.final_loss;
            out.write_record([
                t.config.clone(),
                t.optimizer.clone(),
                t.trial.to_string(),
                t.seed.to_string(),
                opt(l.map(|l| l.total)),
                opt(l.map(|l| l.rectification)),
                opt(l.map(|l| l.initial)),
                opt(l.map(|l| l.final_)),
                t.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    })?;

    write_with_sidecar(&dir.join("table_final_loss.csv"), "sweep_final_loss", result.config_order.len(), &prov, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["config", "optimizer", "trials", "converged", "final_loss_mean", "final_loss_std", "reference_final_loss"])?;
        for name in &result.config_order {
            let s = result.loss_summary(name);
            let label = result.trials_of(name).next().map(|t| t.optimizer.clone()).unwrap_or_default();
            let ok = s.converged > 0;
            out.write_record([
                name.clone(),
                label,
                s.trials.to_string(),
                s.converged.to_string(),
                opt(ok.then_some(s.mean)),
                opt(ok.then_some(s.std)),
                opt(reference::final_loss(name)),
            ])?;
        }
        out.flush()?;
        Ok(())
    })?;

    let rows = quality_rows(result, cfg.eval.bins, cfg.eval.sharp_turn_threshold)?;
    write_with_sidecar(&dir.join("table_quality.csv"), "sweep_trajectory_quality", 2 * rows.len(), &prov, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["config".to_string(), "source".to_string(), "count".to_string()];
        for m in TABLE_METRICS {
            header.push(format!("{}_mean", m.name()));
            header.push(format!("{}_std", m.name()));
        }
        header.extend(["sharp_turn_threshold".to_string(), "sharp_turn_fraction".to_string()]);
        out.write_record(&header)?;
        for row in &rows {
            let mut rec = vec![row.config.clone(), "measured".into()];
            rec.push(row.corpus.as_ref().map(|c| c.count.to_string()).unwrap_or_default());
            for m in TABLE_METRICS {
                rec.push(opt(row.corpus.as_ref().map(|c| c.get(m).mean)));
                rec.push(opt(row.corpus.as_ref().map(|c| c.get(m).std)));
            }
            rec.push(opt(row.sharp_threshold));
            rec.push(opt(row.sharp_fraction));
            out.write_record(&rec)?;
            if let Some(refs) = reference::trajectory_metrics(&row.config) {
                let mut rec = vec![row.config.clone(), "reference".into(), String::new()];
                for (mean, std) in refs {
                    rec.push(mean.to_string());
                    rec.push(std.to_string());
                }
                rec.push(String::new());
                let sharp = (reference::SHARP_TURN_FRACTION.0 == row.config).then_some(reference::SHARP_TURN_FRACTION.1);
                rec.push(opt(sharp));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    })?;

    print!("{}", format_loss_table(result));
    print!("{}", format_quality_table(&rows));
    Ok(())
}
