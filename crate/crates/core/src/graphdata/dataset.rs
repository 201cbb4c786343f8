//! Trajectories, sliding windows, train/test splits and the dataset manifest.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::graph::{classify_bonds, frame_to_snapshot, BondMask, Normalizer, Snapshot};
use super::xyz::{parse_trajectory, Frame};

/// A parsed trajectory together with its raw (Å) distance graphs.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub source: String,
    pub frames: Vec<Frame>,
    pub snapshots: Vec<Arc<Snapshot>>,
}

impl Trajectory {
    pub fn from_frames(source: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Dataset("trajectory has no frames".into()));
        }
        let snapshots = frames
            .iter()
            .map(|f| frame_to_snapshot(f).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory {
            source: source.into(),
            frames,
            snapshots,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let frames = parse_trajectory(BufReader::new(file)).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })?;
        Trajectory::from_frames(path.display().to_string(), frames)
    }

    pub fn atom_count(&self) -> usize {
        self.frames[0].atom_count()
    }

    pub fn elements(&self) -> &[String] {
        &self.frames[0].elements
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Bond classification of every frame, indexed by frame index.
    pub fn bond_masks(&self) -> Result<Vec<BondMask>> {
        self.frames.iter().map(classify_bonds).collect()
    }

    pub fn windows(&self, window: usize) -> Result<Vec<WindowSample>> {
        make_windows(&self.snapshots, window)
    }
}

/// `W` consecutive input snapshots and the snapshot that follows them.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub inputs: Vec<Arc<Snapshot>>,
    pub target: Arc<Snapshot>,
}

impl WindowSample {
    pub fn window(&self) -> usize {
        self.inputs.len()
    }

    pub fn atom_count(&self) -> usize {
        self.target.atom_count()
    }

    pub fn target_frame(&self) -> usize {
        self.target.frame_index
    }
}

/// Every overlapping window: sample `i` has inputs `[i, i + W)` and target `i + W`.
pub fn make_windows(snapshots: &[Arc<Snapshot>], window: usize) -> Result<Vec<WindowSample>> {
    if window == 0 {
        return Err(Error::Config("window size must be positive".into()));
    }
    if snapshots.len() <= window {
        return Err(Error::Dataset(format!(
            "{} snapshots cannot form a window of {window} plus a target",
            snapshots.len()
        )));
    }
    for pair in snapshots.windows(2) {
        if pair[1].frame_index != pair[0].frame_index + 1 {
            return Err(Error::Dataset(format!(
                "snapshots are not consecutive: frame {} followed by {}",
                pair[0].frame_index, pair[1].frame_index
            )));
        }
    }
    Ok((0..snapshots.len() - window)
        .map(|i| WindowSample {
            inputs: snapshots[i..i + window].to_vec(),
            target: snapshots[i + window].clone(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Chronological,
    Shuffled,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chronological" => Ok(SplitMode::Chronological),
            "shuffled" => Ok(SplitMode::Shuffled),
            other => Err(Error::Config(format!(
                "unknown split mode {other:?} (expected chronological or shuffled)"
            ))),
        }
    }
}

/// How windows of one trajectory are divided into train and test sets.
///
/// With no explicit counts the first `⌊ratio·n⌋` (ordered) samples train and
/// the rest test. `train_count` / `test_count` override the sizes; samples
/// beyond `train_count + test_count` are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratio: f64,
    pub mode: SplitMode,
    pub seed: u64,
    #[serde(default)]
    pub train_count: Option<usize>,
    #[serde(default)]
    pub test_count: Option<usize>,
}

impl SplitSpec {
    pub fn chronological(ratio: f64) -> Self {
        SplitSpec {
            ratio,
            mode: SplitMode::Chronological,
            seed: 0,
            train_count: None,
            test_count: None,
        }
    }
}

/// Train and test sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<Split> {
    if n == 0 {
        return Err(Error::Dataset("cannot split an empty sample list".into()));
    }
    if !(spec.ratio > 0.0 && spec.ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must lie in (0, 1), got {}",
            spec.ratio
        )));
    }
    let order: Vec<usize> = match spec.mode {
        SplitMode::Chronological => (0..n).collect(),
        SplitMode::Shuffled => Rng::new(spec.seed).permutation(n),
    };
    // The epsilon keeps products like 0.8 * 4990 = 3992.0000000000005 from
    // flooring differently than exact arithmetic would.
    let default_train = ((spec.ratio * n as f64) + 1e-9).floor() as usize;
    let n_train = spec.train_count.unwrap_or(default_train);
    if n_train > n {
        return Err(Error::Config(format!(
            "train count {n_train} exceeds the {n} available samples"
        )));
    }
    let n_test = spec.test_count.unwrap_or(n - n_train);
    if n_train + n_test > n {
        return Err(Error::Config(format!(
            "train count {n_train} plus test count {n_test} exceeds the {n} available samples"
        )));
    }
    Ok(Split {
        train: order[..n_train].to_vec(),
        test: order[n_train..n_train + n_test].to_vec(),
    })
}

/// Splits a sample list according to `spec`, cloning the selected items.
pub fn split_train_test<T: Clone>(samples: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let split = split_indices(samples.len(), spec)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok((pick(&split.train), pick(&split.test)))
}

/// Split of one trajectory's windows, as recorded in a [`DatasetManifest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySplit {
    pub trajectory: String,
    pub frames: usize,
    pub windows: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Everything needed to rebuild a windowed train/test dataset exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub window: usize,
    pub split: SplitSpec,
    pub normalizer: Normalizer,
    pub trajectories: Vec<TrajectorySplit>,
}

impl DatasetManifest {
    pub fn train_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.train.len()).sum()
    }

    pub fn test_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.test.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Windowed samples of several trajectories, split per trajectory and pooled.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub manifest: DatasetManifest,
    /// Training windows of every trajectory, in trajectory order.
    pub train: Vec<WindowSample>,
    /// Test windows grouped per trajectory (same order as the manifest).
    pub test: Vec<Vec<WindowSample>>,
}

impl PreparedDataset {
    /// Windows each trajectory, splits it with `spec`, pools the training
    /// windows and fits the normalizer on the training targets and inputs.
    /// A trajectory's split depends only on its window count and the seed, not
    /// on its position in the list, so it can be rebuilt on its own.
    pub fn build(trajectories: &[Trajectory], window: usize, spec: &SplitSpec) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Dataset("no trajectories given".into()));
        }
        let n_atoms = trajectories[0].atom_count();
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut records = Vec::new();
        let per_traj = SplitSpec {
            seed: crate::numerics::derive_seed(spec.seed, "split"),
            ..*spec
        };
        for traj in trajectories {
            if traj.atom_count() != n_atoms {
                return Err(Error::Dataset(format!(
                    "{} has {} atoms but {} has {n_atoms}",
                    traj.source,
                    traj.atom_count(),
                    trajectories[0].source
                )));
            }
            let windows = traj.windows(window)?;
            let split = split_indices(windows.len(), &per_traj)?;
            train.extend(split.train.iter().map(|&i| windows[i].clone()));
            test.push(split.test.iter().map(|&i| windows[i].clone()).collect());
            records.push(TrajectorySplit {
                trajectory: traj.source.clone(),
                frames: traj.len(),
                windows: windows.len(),
                train: split.train,
                test: split.test,
            });
        }
        if train.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        let normalizer = fit_on_samples(&train)?;
        Ok(PreparedDataset {
            manifest: DatasetManifest {
                window,
                split: *spec,
                normalizer,
                trajectories: records,
            },
            train,
            test,
        })
    }
}

/// Normalizer over every snapshot touched by the given samples.
pub fn fit_on_samples(samples: &[WindowSample]) -> Result<Normalizer> {
    Normalizer::fit(
        samples
            .iter()
            .flat_map(|s| s.inputs.iter().chain(std::iter::once(&s.target)))
            .map(|a| a.as_ref()),
    )
}
