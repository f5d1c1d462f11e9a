//! One function per subcommand. Inputs default to the files the producing
//! command writes into the output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use trajplan_core::artifact::{
    load_model, read_jsonl, save_model, sidecar_path, write_jsonl, DatasetMeta, ModelArtifact, Provenance,
};
use trajplan_core::eval::{
    aggregate, sharp_turn_fraction, trajectory_stats, write_aggregate_csv, write_histograms_csv,
    write_trajectory_stats_csv, CorpusStats, Metric, TrajectoryStats,
};
use trajplan_core::fm_im::{train_fm, train_im, ForwardModel, InverseModel, Standardizer, TrainReport};
use trajplan_core::kinematics::{
    extract_endpoints, record_trajectories, sample_babbling, uniform_config, EndpointPair, Transition,
};
use trajplan_core::tm::{tm_infer, tm_infer_batch, PredictedTrajectory, TrajectoryModel};
use trajplan_core::trainer::{train_tm, write_training_log};
use trajplan_core::Error as CoreError;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::reference;
use crate::sweep::{run_sweep, write_sweep_outputs};

pub const TRANSITIONS: &str = "transitions.jsonl";
pub const TRAJECTORIES: &str = "trajectories.jsonl";
pub const ENDPOINTS: &str = "endpoints.jsonl";
pub const FM_MODEL: &str = "fm.json";
pub const IM_MODEL: &str = "im.json";
pub const TM_MODEL: &str = "tm.json";
pub const PREDICTIONS: &str = "predictions.jsonl";

/// A generated trajectory together with the endpoints it was asked for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(flatten)]
    pub pair: EndpointPair,
    pub trajectory: PredictedTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub trials: usize,
    pub mean_us: f64,
    pub std_us: f64,
    pub reference_mean_us: f64,
    pub reference_std_us: f64,
    #[serde(flatten)]
    pub provenance: Provenance,
}

/// Writes `path` through `write` and a provenance sidecar next to it.
pub fn write_with_sidecar<F>(path: &Path, kind: &str, count: usize, prov: &Provenance, write: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<(), CliError>,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    write(&mut w)?;
    w.flush()?;
    let meta = DatasetMeta { kind: kind.to_string(), count, provenance: prov.clone() };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

fn ensure_input(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    ensure_input(path)?;
    Ok(read_jsonl(path)?)
}

fn read_model<M: ModelArtifact>(path: &Path) -> Result<M, CliError> {
    ensure_input(path)?;
    Ok(load_model::<M>(path)?.0)
}

fn prepare_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn or_default(path: Option<PathBuf>, cfg: &RunConfig, name: &str) -> PathBuf {
    path.unwrap_or_else(|| cfg.out_path(name))
}

pub fn babble(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    prepare_out(cfg)?;
    let arm = cfg.arm()?;
    let b = &cfg.babbling;
    let transitions = sample_babbling(&arm, b.n, b.delta_bound, b.seed)?;
    let path = cfg.out_path(TRANSITIONS);
    write_jsonl(&transitions, &path, "transition", &cfg.provenance(b.seed)?)?;
    println!("wrote {} transitions to {}", transitions.len(), path.display());
    Ok(path)
}

pub fn record(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    prepare_out(cfg)?;
    let arm = cfg.arm()?;
    let r = &cfg.recording;
    let trajectories = record_trajectories(&arm, r.n, r.horizon, r.init_noise, r.seed)?;
    let endpoints = extract_endpoints(&trajectories)?;
    let prov = cfg.provenance(r.seed)?;
    write_jsonl(&trajectories, cfg.out_path(TRAJECTORIES), "trajectory", &prov)?;
    let path = cfg.out_path(ENDPOINTS);
    write_jsonl(&endpoints, &path, "endpoint_pair", &prov)?;
    println!("wrote {} trajectories and endpoint pairs to {}", trajectories.len(), cfg.out_dir.display());
    Ok(path)
}

fn write_report(cfg: &RunConfig, name: &str, report: &TrainReport, prov: &Provenance) -> Result<(), CliError> {
    write_with_sidecar(&cfg.out_path(name), "mlp_training_log", report.epochs.len(), prov, |w| {
        Ok(report.write_csv(w)?)
    })
}

pub fn train_forward(cfg: &RunConfig, data: Option<PathBuf>) -> Result<ForwardModel, CliError> {
    let transitions: Vec<Transition> = read_records(&or_default(data, cfg, TRANSITIONS))?;
    prepare_out(cfg)?;
    let (model, report) = train_fm(&transitions, &cfg.fm)?;
    let prov = cfg.provenance(cfg.fm.seed)?;
    save_model(&model, Some(&prov), cfg.out_path(FM_MODEL))?;
    write_report(cfg, "fm_train.csv", &report, &prov)?;
    if let Some(m) = report.final_mae() {
        println!(
            "forward model: held-out ef MAE {:.5} m, theta MAE {:.5} rad",
            m.ef.unwrap_or(f64::NAN),
            m.theta.unwrap_or(f64::NAN)
        );
    }
    Ok(model)
}

pub fn train_inverse(cfg: &RunConfig, data: Option<PathBuf>) -> Result<InverseModel, CliError> {
    let transitions: Vec<Transition> = read_records(&or_default(data, cfg, TRANSITIONS))?;
    prepare_out(cfg)?;
    let (model, report) = train_im(&transitions, &cfg.im)?;
    let prov = cfg.provenance(cfg.im.seed)?;
    save_model(&model, Some(&prov), cfg.out_path(IM_MODEL))?;
    write_report(cfg, "im_train.csv", &report, &prov)?;
    if let Some(m) = report.final_mae() {
        println!("inverse model: held-out action MAE {:.5} rad", m.action.unwrap_or(f64::NAN));
    }
    Ok(model)
}

/// Frozen models and training endpoints shared by `train-tm` and `sweep`.
pub struct TmInputs {
    pub fm: ForwardModel,
    pub im: InverseModel,
    pub endpoints: Vec<EndpointPair>,
}

impl TmInputs {
    pub fn load(cfg: &RunConfig, fm: Option<PathBuf>, im: Option<PathBuf>, endpoints: Option<PathBuf>) -> Result<Self, CliError> {
        let fm: ForwardModel = read_model(&or_default(fm, cfg, FM_MODEL))?;
        let im: InverseModel = read_model(&or_default(im, cfg, IM_MODEL))?;
        let endpoints = read_records(&or_default(endpoints, cfg, ENDPOINTS))?;
        Ok(TmInputs { fm, im, endpoints })
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.fm.standardizer
    }
}

pub fn train_trajectory(cfg: &RunConfig, inputs: &TmInputs) -> Result<TrajectoryModel, CliError> {
    prepare_out(cfg)?;
    let tm_cfg = &cfg.tm;
    let prov = cfg.provenance(tm_cfg.init_seed)?;
    let tm = TrajectoryModel::new(tm_cfg.architecture.clone(), inputs.standardizer().clone(), tm_cfg.init_seed)?;
    let ckpt_dir = cfg.out_path("checkpoints");
    let every = tm_cfg.checkpoint_every;
    let (tm, log) = train_tm(tm, &inputs.endpoints, &inputs.fm, &inputs.im, &tm_cfg.train, |e, model| {
        println!(
            "epoch {:>3}  loss {:.5}  (rect {:.5}, initial {:.5}, final {:.5})  goal dist {:.4} m",
            e.epoch, e.loss.total, e.loss.rectification, e.loss.initial, e.loss.final_, e.goal_distance
        );
        if every > 0 && e.epoch % every == 0 {
            fs::create_dir_all(&ckpt_dir)?;
            save_model(model, Some(&prov), ckpt_dir.join(format!("tm_epoch{:04}.json", e.epoch)))?;
        }
        Ok(())
    })?;
    save_model(&tm, Some(&prov), cfg.out_path(TM_MODEL))?;
    write_with_sidecar(&cfg.out_path("tm_log.csv"), "tm_training_log", log.len(), &prov, |w| {
        Ok(write_training_log(&log, w)?)
    })?;
    Ok(tm)
}

/// Restricts a sweep to the named configs, keeping their configured order.
pub fn select_configs(cfg: &mut RunConfig, names: &[String]) -> Result<(), CliError> {
    for n in names {
        if !cfg.sweep.configs.iter().any(|c| &c.name == n) {
            return Err(CliError::Config(format!("no sweep config named {n:?}")));
        }
    }
    cfg.sweep.configs.retain(|c| names.contains(&c.name));
    Ok(())
}

pub fn sweep(cfg: &RunConfig, inputs: &TmInputs) -> Result<PathBuf, CliError> {
    prepare_out(cfg)?;
    let result = run_sweep(&cfg.sweep, &cfg.tm, inputs, |line| println!("{line}"))?;
    let dir = cfg.out_path("sweep");
    write_sweep_outputs(&result, &dir, cfg)?;
    println!("sweep tables written to {}", dir.display());
    Ok(dir)
}

pub fn infer(cfg: &RunConfig, tm: Option<PathBuf>, endpoints: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let tm_path = or_default(tm, cfg, TM_MODEL);
    let (model, prov) = {
        ensure_input(&tm_path)?;
        load_model::<TrajectoryModel>(&tm_path)?
    };
    let endpoints: Vec<EndpointPair> = read_records(&or_default(endpoints, cfg, ENDPOINTS))?;
    prepare_out(cfg)?;
    let mut out = Vec::with_capacity(endpoints.len());
    for chunk in endpoints.chunks(256) {
        let pairs: Vec<_> = chunk.iter().map(|p| (&p.s0, &p.s_goal)).collect();
        for (trajectory, pair) in tm_infer_batch(&model, &pairs)?.into_iter().zip(chunk) {
            out.push(Prediction { pair: pair.clone(), trajectory });
        }
    }
    let prov = match prov {
        Some(p) => p,
        None => cfg.provenance(cfg.tm.init_seed)?,
    };
    let path = cfg.out_path(PREDICTIONS);
    write_jsonl(&out, &path, "prediction", &prov)?;
    println!("wrote {} predicted trajectories to {}", out.len(), path.display());
    Ok(path)
}

/// Prediction files under `input`: the file itself, or every `.jsonl` file
/// of a directory in name order.
fn prediction_files(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    ensure_input(input)?;
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Scores predicted trajectories and writes per-trajectory metrics,
/// histograms and the corpus summary.
pub fn eval(cfg: &RunConfig, input: Option<PathBuf>) -> Result<CorpusStats, CliError> {
    let input = or_default(input, cfg, PREDICTIONS);
    let mut predictions: Vec<Prediction> = Vec::new();
    for f in prediction_files(&input)? {
        predictions.extend(read_jsonl::<Prediction>(&f)?);
    }
    if predictions.is_empty() {
        return Err(CoreError::EmptyCorpus.into());
    }
    let stats = predictions
        .iter()
        .map(|p| trajectory_stats(&p.trajectory, &p.pair.s0, &p.pair.s_goal))
        .collect::<Result<Vec<TrajectoryStats>, _>>()?;
    let corpus = aggregate(&stats, cfg.eval.bins)?;
    let threshold = cfg.eval.sharp_turn_threshold.unwrap_or(corpus.get(Metric::MinAngle).mean);
    let sharp = sharp_turn_fraction(&stats, threshold).expect("corpus is nonempty");

    let dir = cfg.out_path("eval");
    let prov = cfg.provenance(cfg.tm.init_seed)?;
    write_with_sidecar(&dir.join("trajectory_stats.csv"), "trajectory_stats", stats.len(), &prov, |w| {
        Ok(write_trajectory_stats_csv(&stats, w)?)
    })?;
    write_with_sidecar(&dir.join("histograms.csv"), "metric_histograms", Metric::ALL.len(), &prov, |w| {
        Ok(write_histograms_csv(&corpus, w)?)
    })?;
    write_with_sidecar(&dir.join("summary.csv"), "corpus_summary", 1, &prov, |w| {
        Ok(write_aggregate_csv(&[("corpus".to_string(), &corpus)], w)?)
    })?;
    write_with_sidecar(&dir.join("sharp_turns.csv"), "sharp_turns", 1, &prov, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["threshold_deg", "count", "fraction"])?;
        let count = stats.iter().filter(|s| s.min_angle < threshold).count();
        out.write_record([threshold.to_string(), count.to_string(), sharp.to_string()])?;
        out.flush()?;
        Ok(())
    })?;

    println!("{} trajectories", corpus.count);
    for m in Metric::ALL {
        let s = corpus.get(m);
        println!("  {:<16} {:>10.4} ± {:.4}", m.name(), s.mean, s.std);
    }
    println!("  sharp turns below {threshold:.1} deg: {:.1}%", 100.0 * sharp);
    Ok(corpus)
}

/// Times single-trajectory inference. Without a model file the configured
/// architecture is benchmarked with random weights; latency does not depend
/// on the weight values.
pub fn bench(cfg: &RunConfig, tm: Option<PathBuf>) -> Result<BenchReport, CliError> {
    let arm = cfg.arm()?;
    let seed = cfg.bench.seed;
    let model = match tm {
        Some(path) => read_model::<TrajectoryModel>(&path)?,
        None => TrajectoryModel::new(cfg.tm.architecture.clone(), Standardizer::identity(arm.dof()), seed)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pair = || -> Result<_, CliError> {
        let a = arm.state(uniform_config(&arm, &mut rng))?;
        let b = arm.state(uniform_config(&arm, &mut rng))?;
        Ok((a, b))
    };
    let pairs = (0..cfg.bench.trials).map(|_| pair()).collect::<Result<Vec<_>, _>>()?;
    tm_infer(&model, &pairs[0].0, &pairs[0].1)?;
    let mut times = Vec::with_capacity(pairs.len());
    for (s0, sg) in &pairs {
        let t = Instant::now();
        let traj = tm_infer(&model, s0, sg)?;
        times.push(t.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(traj);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n).sqrt();
    let report = BenchReport {
        trials: times.len(),
        mean_us: mean,
        std_us: std,
        reference_mean_us: reference::LATENCY_US.0,
        reference_std_us: reference::LATENCY_US.1,
        provenance: cfg.provenance(seed)?,
    };
    prepare_out(cfg)?;
    fs::write(cfg.out_path("bench.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "single-trajectory inference: {:.1} us ± {:.1} us over {} trials (reference {:.0} us ± {:.0} us)",
        mean, std, report.trials, report.reference_mean_us, report.reference_std_us
    );
    Ok(report)
}
