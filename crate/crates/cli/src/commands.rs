//! Subcommand implementations. Each writes its artifacts under `RunConfig::out`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use moldgnn::graphdata::{BondMask, PreparedDataset, SplitSpec, Trajectory, WindowSample};
use moldgnn::metrics::{evaluate_into, BondMaskSource, MetricsAccumulator, MetricsReport};
use moldgnn::model::{init_params, rollout};
use moldgnn::numerics::{derive_seed, Matrix};
use moldgnn::training::{
    finetune as finetune_checkpoint, loss_csv, train_with_progress, Checkpoint, FinetuneBudget,
    TrainConfig, TrainStart,
};
use moldgnn::{Error, Result};
use serde_json::json;

use crate::config::RunConfig;

pub const CHECKPOINT_FILE: &str = "checkpoint.mdgn";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const CROSS_FILE: &str = "cross.csv";
pub const PREDICTION_FILE: &str = "predicted.txt";
pub const ROLLOUT_FILE: &str = "rollout.csv";

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write(&cfg.out, CONFIG_FILE, &cfg.to_json()?)?;
    Ok(())
}

fn load_trajectories(cfg: &RunConfig) -> Result<Vec<Trajectory>> {
    if cfg.trajectories.is_empty() {
        return Err(Error::Config("at least one --trajectory is required".into()));
    }
    cfg.trajectories
        .iter()
        .map(|p| {
            let t = Trajectory::load(p)?;
            info!("{}: {} frames, {} atoms", p.display(), t.len(), t.atom_count());
            Ok(t)
        })
        .collect()
}

fn single_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    match cfg.checkpoints.as_slice() {
        [one] => Checkpoint::load(one),
        [] => Err(Error::Config("--checkpoint is required".into())),
        _ => Err(Error::Config(
            "several checkpoints given; use --cross-all to evaluate them all".into(),
        )),
    }
}

fn check_atoms(ck: &Checkpoint, traj: &Trajectory) -> Result<()> {
    if ck.params.config.atoms != traj.atom_count() {
        return Err(Error::Dataset(format!(
            "checkpoint expects {} atoms, {} has {}",
            ck.params.config.atoms,
            traj.source,
            traj.atom_count()
        )));
    }
    Ok(())
}

/// Held-out windows of one trajectory under the run's split settings.
fn test_windows(traj: &Trajectory, window: usize, spec: &SplitSpec) -> Result<Vec<WindowSample>> {
    let data = PreparedDataset::build(std::slice::from_ref(traj), window, spec)?;
    Ok(data.test.into_iter().next().unwrap_or_default())
}

/// Evaluates each trajectory's samples with its own per-frame bond masks.
fn evaluate_sets(
    ck: &Checkpoint,
    sets: &[(&Trajectory, &[WindowSample])],
) -> Result<(MetricsReport, Vec<MetricsReport>)> {
    let mut pooled = MetricsAccumulator::new();
    let mut each = Vec::new();
    for (traj, samples) in sets {
        let masks: Vec<BondMask> = traj.bond_masks()?;
        let acc = evaluate_into(&ck.params, &ck.normalizer, samples, BondMaskSource::PerFrame(&masks))?;
        each.push(acc.clone().finish()?);
        pooled.merge(acc);
    }
    Ok((pooled.finish()?, each))
}

fn summary_line(label: &str, r: &MetricsReport) -> String {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}%"));
    format!(
        "{label}: {} samples, MSE {:.3e} Å², MAE {:.4} Å, PE {:.3}% (bonded {}, non-bonded {}), S {:.4}",
        r.sample_count,
        r.mse,
        r.mae,
        r.pe_overall,
        opt(r.pe_bonded),
        opt(r.pe_nonbonded),
        r.s_mean
    )
}

fn report_json(r: &MetricsReport) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(r)?)
}

fn clamp(what: &str, requested: usize, available: usize) -> usize {
    if requested > available {
        warn!("{what} {requested} exceeds the {available} available; using {available}");
        available
    } else {
        requested
    }
}

fn progress(epochs: usize) -> impl FnMut(usize, f64) {
    let every = (epochs / 20).max(1);
    move |epoch, loss| {
        if epoch % every == 0 || epoch == epochs {
            info!("epoch {epoch}/{epochs}: mean training loss {loss:.6e}");
        }
    }
}

/// What a train run produced.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
}

/// Parse, window, split, train, and evaluate on the held-out windows.
///
/// With `init_checkpoint` set the run resumes that checkpoint until `epochs`
/// total epochs are complete.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let trajectories = load_trajectories(cfg)?;
    let resume = cfg.init_checkpoint.as_ref().map(Checkpoint::load).transpose()?;
    let window = resume.as_ref().map_or(cfg.window, |c| c.params.config.window);
    let data = PreparedDataset::build(&trajectories, window, &cfg.split_spec())?;
    info!(
        "{} training windows, {} test windows",
        data.manifest.train_count(),
        data.manifest.test_count()
    );

    let mut train_cfg = cfg.train_config();
    train_cfg.batch_size = clamp("batch size", train_cfg.batch_size, data.train.len());
    let start = match resume {
        Some(ck) => {
            check_atoms(&ck, &trajectories[0])?;
            info!("resuming from epoch {}", ck.epoch);
            TrainStart::Resume(ck)
        }
        None => {
            let model = cfg.model_config(trajectories[0].atom_count());
            model.validate()?;
            info!("model has {} parameters", model.parameter_count());
            TrainStart::Fresh {
                params: init_params(&model, derive_seed(cfg.seed, "init"))?,
                normalizer: data.manifest.normalizer,
            }
        }
    };
    prepare_out(cfg)?;
    write(&cfg.out, MANIFEST_FILE, &data.manifest.to_json()?)?;

    let ck = train_with_progress(&data.train, &train_cfg, start, progress(train_cfg.epochs))?;
    ck.save(cfg.out.join(CHECKPOINT_FILE))?;
    write(&cfg.out, LOSS_FILE, &loss_csv(&ck.loss_history))?;

    let sets: Vec<(&Trajectory, &[WindowSample])> = trajectories
        .iter()
        .zip(&data.test)
        .filter(|(_, t)| !t.is_empty())
        .map(|(tr, t)| (tr, t.as_slice()))
        .collect();
    if sets.is_empty() {
        warn!("no held-out windows; skipping evaluation");
        return Err(Error::Dataset("the split left no test windows to evaluate".into()));
    }
    let (report, each) = evaluate_sets(&ck, &sets)?;
    write(&cfg.out, METRICS_CSV, &report.records_csv())?;
    let per: Vec<serde_json::Value> = sets
        .iter()
        .zip(&each)
        .map(|((t, _), r)| Ok(json!({"trajectory": t.source, "metrics": report_json(r)?})))
        .collect::<Result<_>>()?;
    let doc = json!({"test": report_json(&report)?, "per_trajectory": per});
    write(&cfg.out, METRICS_JSON, &serde_json::to_string_pretty(&doc)?)?;
    println!("{}", summary_line("test", &report));
    Ok(TrainOutcome {
        checkpoint: ck,
        report,
    })
}

#[derive(Debug)]
pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    pub zero_shot: MetricsReport,
    pub finetuned: MetricsReport,
}

/// Finetunes `init_checkpoint` on the first training windows of one new trajectory.
///
/// Both the base (zero-shot) and the finetuned model are evaluated on the
/// same held-out windows of the new trajectory.
pub fn finetune(cfg: &RunConfig) -> Result<FinetuneOutcome> {
    let base_path = cfg
        .init_checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("finetune needs --init-checkpoint".into()))?;
    let base = Checkpoint::load(base_path)?;
    let trajectories = load_trajectories(cfg)?;
    let [traj] = trajectories.as_slice() else {
        return Err(Error::Config("finetune takes exactly one --trajectory".into()));
    };
    check_atoms(&base, traj)?;
    let window = base.params.config.window;
    let mut data = PreparedDataset::build(std::slice::from_ref(traj), window, &cfg.split_spec())?;
    data.manifest.normalizer = base.normalizer;
    let test = data.test.remove(0);
    if test.is_empty() {
        return Err(Error::Dataset("the split left no test windows to evaluate".into()));
    }

    let budget = FinetuneBudget {
        samples: clamp("sample budget", cfg.sample_budget, data.train.len()),
        epochs: cfg.epoch_budget,
    };
    let train_cfg = TrainConfig {
        batch_size: clamp("batch size", cfg.batch_size, budget.samples),
        ..cfg.train_config()
    };
    prepare_out(cfg)?;
    write(&cfg.out, MANIFEST_FILE, &data.manifest.to_json()?)?;
    info!(
        "finetuning on {} windows for {} epochs from {}",
        budget.samples,
        budget.epochs,
        base_path.display()
    );
    let tuned = finetune_checkpoint(&base, &data.train, budget, &train_cfg)?;
    if let Some(l) = tuned.loss_history.last() {
        info!("final mean training loss {l:.6e}");
    }
    tuned.save(cfg.out.join(CHECKPOINT_FILE))?;
    write(&cfg.out, LOSS_FILE, &loss_csv(&tuned.loss_history))?;

    let sets = [(traj, test.as_slice())];
    let (zero_shot, _) = evaluate_sets(&base, &sets)?;
    let (finetuned, _) = evaluate_sets(&tuned, &sets)?;
    write(&cfg.out, METRICS_CSV, &finetuned.records_csv())?;
    let doc = json!({
        "zero_shot": report_json(&zero_shot)?,
        "finetuned": report_json(&finetuned)?,
        "provenance": tuned.provenance,
    });
    write(&cfg.out, METRICS_JSON, &serde_json::to_string_pretty(&doc)?)?;
    let mut table = String::from("model,mse,mae,pe,pe_bonded,pe_nonbonded,s\n");
    for (label, r) in [("zero_shot", &zero_shot), ("finetuned", &finetuned)] {
        table.push_str(&metrics_row(label, r));
    }
    write(&cfg.out, COMPARISON_FILE, &table)?;
    println!("{}", summary_line("zero-shot", &zero_shot));
    println!("{}", summary_line("finetuned", &finetuned));
    Ok(FinetuneOutcome {
        checkpoint: tuned,
        zero_shot,
        finetuned,
    })
}

fn metrics_row(label: &str, r: &MetricsReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    format!(
        "{label},{},{},{},{},{},{}\n",
        r.mse,
        r.mae,
        r.pe_overall,
        opt(r.pe_bonded),
        opt(r.pe_nonbonded),
        r.s_mean
    )
}

#[derive(Debug)]
pub enum EvalOutcome {
    Single(MetricsReport),
    /// `cross[i][j]`: checkpoint `i` on trajectory `j`.
    Cross(Vec<Vec<MetricsReport>>),
}

/// Evaluates on held-out windows. In cross mode checkpoint `i` pairs with every trajectory `j`.
pub fn eval(cfg: &RunConfig) -> Result<EvalOutcome> {
    let trajectories = load_trajectories(cfg)?;
    let spec = cfg.split_spec();
    if cfg.cross_all {
        if cfg.checkpoints.len() != trajectories.len() {
            return Err(Error::Config(format!(
                "--cross-all needs one checkpoint per trajectory, got {} checkpoints and {} trajectories",
                cfg.checkpoints.len(),
                trajectories.len()
            )));
        }
        let models = cfg
            .checkpoints
            .iter()
            .map(Checkpoint::load)
            .collect::<Result<Vec<_>>>()?;
        prepare_out(cfg)?;
        let mut grid = Vec::new();
        let mut csv = String::from("model,trajectory,model_index,trajectory_index,mse,mae,pe,pe_bonded,pe_nonbonded,s\n");
        for (i, ck) in models.iter().enumerate() {
            let mut row = Vec::new();
            for (j, traj) in trajectories.iter().enumerate() {
                check_atoms(ck, traj)?;
                let test = test_windows(traj, ck.params.config.window, &spec)?;
                let (r, _) = evaluate_sets(ck, &[(traj, test.as_slice())])?;
                let label = format!(
                    "{},{},{i},{j}",
                    cfg.checkpoints[i].display(),
                    traj.source
                );
                csv.push_str(&metrics_row(&label, &r));
                info!("{}", summary_line(&format!("model {i} on trajectory {j}"), &r));
                row.push(r);
            }
            grid.push(row);
        }
        write(&cfg.out, CROSS_FILE, &csv)?;
        let doc: Vec<Vec<serde_json::Value>> = grid
            .iter()
            .map(|row| row.iter().map(report_json).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        write(&cfg.out, METRICS_JSON, &serde_json::to_string_pretty(&json!({"cross": doc}))?)?;
        println!("wrote {}x{} cross-evaluation to {}", grid.len(), grid.len(), cfg.out.join(CROSS_FILE).display());
        return Ok(EvalOutcome::Cross(grid));
    }

    let ck = single_checkpoint(cfg)?;
    let mut tests = Vec::new();
    for traj in &trajectories {
        check_atoms(&ck, traj)?;
        tests.push(test_windows(traj, ck.params.config.window, &spec)?);
    }
    prepare_out(cfg)?;
    let sets: Vec<(&Trajectory, &[WindowSample])> = trajectories
        .iter()
        .zip(&tests)
        .map(|(t, w)| (t, w.as_slice()))
        .collect();
    let (report, each) = evaluate_sets(&ck, &sets)?;
    write(&cfg.out, METRICS_CSV, &report.records_csv())?;
    let per: Vec<serde_json::Value> = sets
        .iter()
        .zip(&each)
        .map(|((t, _), r)| Ok(json!({"trajectory": t.source, "metrics": report_json(r)?})))
        .collect::<Result<_>>()?;
    let doc = json!({"test": report_json(&report)?, "per_trajectory": per});
    write(&cfg.out, METRICS_JSON, &serde_json::to_string_pretty(&doc)?)?;
    println!("{}", summary_line("test", &report));
    Ok(EvalOutcome::Single(report))
}

/// Writes matrices as `frame K` followed by `N` rows of space-separated values.
pub fn format_frames(first_frame: usize, frames: &[Matrix]) -> String {
    let mut out = String::new();
    for (k, m) in frames.iter().enumerate() {
        let _ = writeln!(out, "frame {}", first_frame + k);
        for i in 0..m.rows() {
            let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

/// Predicted Å distance matrices, the first one at frame `start + W`.
pub fn predict(cfg: &RunConfig) -> Result<Vec<Matrix>> {
    let ck = single_checkpoint(cfg)?;
    let trajectories = load_trajectories(cfg)?;
    let [traj] = trajectories.as_slice() else {
        return Err(Error::Config("predict takes exactly one --trajectory".into()));
    };
    check_atoms(&ck, traj)?;
    if cfg.horizon == 0 {
        return Err(Error::Config("--horizon must be at least 1".into()));
    }
    let w = ck.params.config.window;
    if cfg.start + w > traj.len() {
        return Err(Error::Config(format!(
            "seed window {}..{} runs past the {} frames of {}",
            cfg.start,
            cfg.start + w,
            traj.len(),
            traj.source
        )));
    }
    let seed: Vec<Matrix> = traj.snapshots[cfg.start..cfg.start + w]
        .iter()
        .map(|s| s.adjacency.clone())
        .collect();
    let predicted = rollout(&ck.params, &ck.normalizer, &seed, cfg.horizon)?;
    prepare_out(cfg)?;
    let first = cfg.start + w;
    write(&cfg.out, PREDICTION_FILE, &format_frames(first, &predicted))?;

    let mut csv = String::from("step,frame,mse,mae\n");
    for (k, p) in predicted.iter().enumerate() {
        let Some(truth) = traj.snapshots.get(first + k) else { break };
        let (mut sq, mut abs, mut n) = (0.0, 0.0, 0usize);
        for i in 0..p.rows() {
            for j in i + 1..p.cols() {
                let d = p.get(i, j) - truth.adjacency.get(i, j);
                sq += d * d;
                abs += d.abs();
                n += 1;
            }
        }
        let _ = writeln!(csv, "{},{},{},{}", k + 1, first + k, sq / n as f64, abs / n as f64);
    }
    write(&cfg.out, ROLLOUT_FILE, &csv)?;
    println!(
        "wrote {} predicted frames to {}",
        predicted.len(),
        cfg.out.join(PREDICTION_FILE).display()
    );
    Ok(predicted)
}
