//! Evaluation: edge-weight errors by bond class and Laplacian spectral similarity.
//!
//! All quantities are computed in Å (denormalized) units.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::{BondMask, Normalizer, WindowSample};
use crate::model::{predict_batch, ModelParams};
use crate::numerics::{sym_eigenvalues, Matrix};
use crate::training::Checkpoint;

/// Fraction of the Laplacian spectrum's energy the compared eigenvalues must cover.
pub const ENERGY_FRACTION: f64 = 0.9;

const EVAL_CHUNK: usize = 128;

/// Running sums over edges; merged in a fixed order so pooled results are reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EdgeErrorSums {
    pub squared: f64,
    pub absolute: f64,
    pub percent: f64,
    pub edges: usize,
    pub bonded_percent: f64,
    pub bonded_edges: usize,
    pub nonbonded_percent: f64,
    pub nonbonded_edges: usize,
}

impl EdgeErrorSums {
    pub fn merge(&mut self, other: &EdgeErrorSums) {
        self.squared += other.squared;
        self.absolute += other.absolute;
        self.percent += other.percent;
        self.edges += other.edges;
        self.bonded_percent += other.bonded_percent;
        self.bonded_edges += other.bonded_edges;
        self.nonbonded_percent += other.nonbonded_percent;
        self.nonbonded_edges += other.nonbonded_edges;
    }

    pub fn summary(&self) -> EdgeErrors {
        let mean = |s: f64, n: usize| if n == 0 { None } else { Some(s / n as f64) };
        EdgeErrors {
            mse: mean(self.squared, self.edges).unwrap_or(0.0),
            mae: mean(self.absolute, self.edges).unwrap_or(0.0),
            pe: mean(self.percent, self.edges).unwrap_or(0.0),
            pe_bonded: mean(self.bonded_percent, self.bonded_edges),
            pe_nonbonded: mean(self.nonbonded_percent, self.nonbonded_edges),
        }
    }
}

/// Per-edge means; a class percent error is `None` when the class has no edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeErrors {
    pub mse: f64,
    pub mae: f64,
    pub pe: f64,
    pub pe_bonded: Option<f64>,
    pub pe_nonbonded: Option<f64>,
}

pub fn edge_error_sums(predicted: &Matrix, target: &Matrix, mask: &BondMask) -> Result<EdgeErrorSums> {
    if predicted.shape() != target.shape() || !target.is_square() {
        return Err(Error::ShapeMismatch {
            op: "edge_errors",
            left: predicted.shape(),
            right: target.shape(),
        });
    }
    let n = target.rows();
    if mask.atom_count() != n {
        return Err(Error::Dataset(format!(
            "bond mask covers {} atoms, graphs have {n}",
            mask.atom_count()
        )));
    }
    let mut s = EdgeErrorSums::default();
    for i in 0..n {
        for j in i + 1..n {
            let wt = target.get(i, j);
            if !(wt > 0.0) {
                return Err(Error::Dataset(format!(
                    "true edge weight ({i}, {j}) is {wt}; percent error needs positive weights"
                )));
            }
            let err = (wt - predicted.get(i, j)).abs();
            let pe = 100.0 * err / wt;
            s.squared += err * err;
            s.absolute += err;
            s.percent += pe;
            s.edges += 1;
            if mask.is_bonded(i, j) {
                s.bonded_percent += pe;
                s.bonded_edges += 1;
            } else {
                s.nonbonded_percent += pe;
                s.nonbonded_edges += 1;
            }
        }
    }
    Ok(s)
}

/// MSE (Å²), MAE (Å) and percent error `100·|w_t − w_p| / w_t` over unique edges.
pub fn edge_errors(predicted: &Matrix, target: &Matrix, mask: &BondMask) -> Result<EdgeErrors> {
    Ok(edge_error_sums(predicted, target, mask)?.summary())
}

/// Combinatorial Laplacian `L = D − A`.
pub fn laplacian(adjacency: &Matrix) -> Result<Matrix> {
    crate::graphdata::validate_adjacency(adjacency)?;
    if let Some(w) = adjacency.as_slice().iter().find(|&&w| w < 0.0) {
        return Err(Error::InvalidMatrix(format!(
            "Laplacian needs nonnegative weights, found {w}"
        )));
    }
    let n = adjacency.rows();
    let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).iter().sum()).collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i == j {
            degree[i]
        } else {
            -adjacency.get(i, j)
        }
    }))
}

/// Smallest `k ≥ 1` whose leading eigenvalues (descending) hold `fraction` of the total.
pub fn energy_rank(descending: &[f64], fraction: f64) -> usize {
    let total: f64 = descending.iter().sum();
    let mut acc = 0.0;
    for (k, &l) in descending.iter().enumerate() {
        acc += l;
        if acc >= fraction * total {
            return k + 1;
        }
    }
    descending.len()
}

/// Spectral similarity from two descending Laplacian spectra.
pub fn spectral_distance(l1: &[f64], l2: &[f64]) -> f64 {
    let k = energy_rank(l1, ENERGY_FRACTION).max(energy_rank(l2, ENERGY_FRACTION));
    l1.iter()
        .zip(l2)
        .take(k)
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Sum of squared differences of the leading Laplacian eigenvalues of two graphs.
///
/// Each graph's `k` is the smallest count of descending eigenvalues holding 90%
/// of its spectral energy; the larger of the two is used. Identical graphs give 0.
pub fn eigen_similarity(g1: &Matrix, g2: &Matrix) -> Result<f64> {
    if g1.shape() != g2.shape() {
        return Err(Error::ShapeMismatch {
            op: "eigen_similarity",
            left: g1.shape(),
            right: g2.shape(),
        });
    }
    let l1 = sym_eigenvalues(&laplacian(g1)?)?;
    let l2 = sym_eigenvalues(&laplacian(g2)?)?;
    Ok(spectral_distance(&l1, &l2))
}

/// Which bond classification applies to each evaluated sample.
#[derive(Debug, Clone, Copy)]
pub enum BondMaskSource<'a> {
    /// One mask for every sample.
    Fixed(&'a BondMask),
    /// Masks indexed by the target snapshot's frame index.
    PerFrame(&'a [BondMask]),
}

impl<'a> BondMaskSource<'a> {
    fn mask_for(&self, sample: &WindowSample) -> Result<&'a BondMask> {
        match *self {
            BondMaskSource::Fixed(m) => Ok(m),
            BondMaskSource::PerFrame(masks) => masks.get(sample.target_frame()).ok_or_else(|| {
                Error::Dataset(format!(
                    "no bond mask for frame {} ({} masks available)",
                    sample.target_frame(),
                    masks.len()
                ))
            }),
        }
    }
}

/// Metrics of one evaluated window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_index: usize,
    pub target_frame: usize,
    pub mse: f64,
    pub mae: f64,
    pub pe: f64,
    pub pe_bonded: Option<f64>,
    pub pe_nonbonded: Option<f64>,
    pub s: f64,
}

/// Aggregate metrics over an evaluation set.
///
/// MSE, MAE and percent errors pool every edge of every sample; `s_mean` is
/// the arithmetic mean of per-sample similarities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub pe_overall: f64,
    pub pe_bonded: Option<f64>,
    pub pe_nonbonded: Option<f64>,
    pub s_mean: f64,
    pub sample_count: usize,
    pub bonded_edges: usize,
    pub nonbonded_edges: usize,
    /// Predicted distances below zero, floored at zero for the similarity only.
    pub negative_predictions: usize,
    #[serde(skip)]
    pub records: Vec<SampleRecord>,
}

/// Collects per-sample results and produces a [`MetricsReport`].
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    sums: EdgeErrorSums,
    s_total: f64,
    negative: usize,
    records: Vec<SampleRecord>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one predicted/true pair (both in Å). The sample index is assigned sequentially.
    pub fn push(
        &mut self,
        predicted: &Matrix,
        target: &Matrix,
        target_frame: usize,
        mask: &BondMask,
    ) -> Result<()> {
        let (sums, s, negative) = score(predicted, target, mask)?;
        self.add(sums, s, negative, target_frame);
        Ok(())
    }

    fn add(&mut self, sums: EdgeErrorSums, s: f64, negative: usize, target_frame: usize) {
        let e = sums.summary();
        self.records.push(SampleRecord {
            sample_index: self.records.len(),
            target_frame,
            mse: e.mse,
            mae: e.mae,
            pe: e.pe,
            pe_bonded: e.pe_bonded,
            pe_nonbonded: e.pe_nonbonded,
            s,
        });
        self.sums.merge(&sums);
        self.s_total += s;
        self.negative += negative;
    }

    /// Appends another accumulator's samples after this one's.
    pub fn merge(&mut self, other: MetricsAccumulator) {
        let offset = self.records.len();
        self.sums.merge(&other.sums);
        self.s_total += other.s_total;
        self.negative += other.negative;
        self.records
            .extend(other.records.into_iter().map(|mut r| {
                r.sample_index += offset;
                r
            }));
    }

    pub fn finish(self) -> Result<MetricsReport> {
        if self.records.is_empty() {
            return Err(Error::Dataset("no samples were evaluated".into()));
        }
        let e = self.sums.summary();
        Ok(MetricsReport {
            mse: e.mse,
            mae: e.mae,
            pe_overall: e.pe,
            pe_bonded: e.pe_bonded,
            pe_nonbonded: e.pe_nonbonded,
            s_mean: self.s_total / self.records.len() as f64,
            sample_count: self.records.len(),
            bonded_edges: self.sums.bonded_edges,
            nonbonded_edges: self.sums.nonbonded_edges,
            negative_predictions: self.negative,
            records: self.records,
        })
    }
}

fn score(predicted: &Matrix, target: &Matrix, mask: &BondMask) -> Result<(EdgeErrorSums, f64, usize)> {
    let sums = edge_error_sums(predicted, target, mask)?;
    let negative = predicted.as_slice().iter().filter(|&&w| w < 0.0).count() / 2;
    let s = if negative > 0 {
        eigen_similarity(&predicted.map(|w| w.max(0.0)), target)?
    } else {
        eigen_similarity(predicted, target)?
    };
    Ok((sums, s, negative))
}

/// Predicts every sample, denormalizes, and scores it against the raw target.
pub fn evaluate_into(
    params: &ModelParams,
    normalizer: &Normalizer,
    samples: &[WindowSample],
    masks: BondMaskSource<'_>,
) -> Result<MetricsAccumulator> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty sample list".into()));
    }
    let chunks: Vec<Vec<(EdgeErrorSums, f64, usize, usize)>> = samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<Vec<_>> {
            let refs: Vec<&WindowSample> = chunk.iter().collect();
            let (inputs, _) = crate::training::normalized_batch(&refs, normalizer);
            let windows: Vec<&[Matrix]> = inputs.iter().map(|w| w.as_slice()).collect();
            let preds = predict_batch(params, &windows)?;
            chunk
                .iter()
                .zip(preds)
                .map(|(s, p)| {
                    let p = normalizer.denormalize_matrix(&p);
                    let (sums, sim, neg) = score(&p, &s.target.adjacency, masks.mask_for(s)?)?;
                    Ok((sums, sim, neg, s.target_frame()))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut acc = MetricsAccumulator::new();
    for (sums, s, neg, frame) in chunks.into_iter().flatten() {
        acc.add(sums, s, neg, frame);
    }
    Ok(acc)
}

pub fn evaluate(
    params: &ModelParams,
    normalizer: &Normalizer,
    samples: &[WindowSample],
    masks: BondMaskSource<'_>,
) -> Result<MetricsReport> {
    evaluate_into(params, normalizer, samples, masks)?.finish()
}

pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    samples: &[WindowSample],
    masks: BondMaskSource<'_>,
) -> Result<MetricsReport> {
    evaluate(&checkpoint.params, &checkpoint.normalizer, samples, masks)
}

/// Scores the trivial predictor that repeats the last input snapshot.
pub fn evaluate_persistence(samples: &[WindowSample], masks: BondMaskSource<'_>) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new();
    for s in samples {
        let last = &s.inputs.last().expect("windows are nonempty").adjacency;
        acc.push(last, &s.target.adjacency, s.target_frame(), masks.mask_for(s)?)?;
    }
    acc.finish()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// One row per sample: `sample_index,mse,mae,pe,pe_bonded,pe_nonbonded,s`.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("sample_index,mse,mae,pe,pe_bonded,pe_nonbonded,s\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.sample_index,
                r.mse,
                r.mae,
                r.pe,
                opt(r.pe_bonded),
                opt(r.pe_nonbonded),
                r.s
            ));
        }
        out
    }

    /// Aggregate summary (per-sample records excluded).
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
