//! Complete distance graphs, weight normalization and bond classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::xyz::Frame;

/// Pairs closer than this are treated as coincident atoms.
pub const MIN_PAIR_DISTANCE: f64 = 0.1;

/// Tolerance factor on the sum of covalent radii for the bonded cutoff.
pub const BOND_TOLERANCE: f64 = 1.2;

/// One time step as a weighted complete graph.
///
/// `adjacency[i][j]` is the distance between atoms `i` and `j` (Å for raw
/// snapshots, dimensionless once normalized). Symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub adjacency: Matrix,
    pub frame_index: usize,
}

impl Snapshot {
    pub fn atom_count(&self) -> usize {
        self.adjacency.rows()
    }

    /// Checks the structural invariants: square, exactly symmetric, zero diagonal, finite.
    pub fn validate(&self) -> Result<()> {
        validate_adjacency(&self.adjacency)
    }
}

pub(crate) fn validate_adjacency(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidMatrix(format!(
            "adjacency must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::InvalidMatrix("adjacency has non-finite entries".into()));
    }
    let n = a.rows();
    for i in 0..n {
        if a.get(i, i) != 0.0 {
            return Err(Error::InvalidMatrix(format!(
                "adjacency diagonal entry {i} is {} (self loops are not allowed)",
                a.get(i, i)
            )));
        }
        for j in i + 1..n {
            if a.get(i, j) != a.get(j, i) {
                return Err(Error::InvalidMatrix(format!(
                    "adjacency is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Pairwise Euclidean distance matrix of a frame.
pub fn frame_to_snapshot(frame: &Frame) -> Result<Snapshot> {
    let n = frame.atom_count();
    let mut adjacency = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = frame.distance(i, j);
            if !d.is_finite() {
                return Err(Error::InvalidFrame {
                    frame: frame.index,
                    msg: format!("non-finite distance between atoms {i} and {j}"),
                });
            }
            if d <= MIN_PAIR_DISTANCE {
                return Err(Error::InvalidFrame {
                    frame: frame.index,
                    msg: format!("atoms {i} and {j} coincide (distance {d:.4} Å)"),
                });
            }
            adjacency.set(i, j, d);
            adjacency.set(j, i, d);
        }
    }
    Ok(Snapshot {
        adjacency,
        frame_index: frame.index,
    })
}

/// Min-max scaling of edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub w_min: f64,
    pub w_max: f64,
}

impl Normalizer {
    pub fn new(w_min: f64, w_max: f64) -> Result<Self> {
        if !(w_min.is_finite() && w_max.is_finite() && w_max > w_min && w_min > 0.0) {
            return Err(Error::Dataset(format!(
                "invalid normalizer range [{w_min}, {w_max}]"
            )));
        }
        Ok(Normalizer { w_min, w_max })
    }

    /// Global min/max over the off-diagonal entries of all snapshots.
    pub fn fit<'a, I>(snapshots: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Snapshot>,
    {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut any = false;
        for s in snapshots {
            any = true;
            let a = &s.adjacency;
            for i in 0..a.rows() {
                for j in i + 1..a.cols() {
                    lo = lo.min(a.get(i, j));
                    hi = hi.max(a.get(i, j));
                }
            }
        }
        if !any {
            return Err(Error::Dataset("cannot fit a normalizer to zero snapshots".into()));
        }
        if !(hi > lo) {
            return Err(Error::Dataset(format!(
                "degenerate edge-weight range: min {lo} equals max {hi}"
            )));
        }
        Normalizer::new(lo, hi)
    }

    pub fn span(&self) -> f64 {
        self.w_max - self.w_min
    }

    pub fn scale(&self, x: f64) -> f64 {
        (x - self.w_min) / self.span()
    }

    pub fn unscale(&self, y: f64) -> f64 {
        y * self.span() + self.w_min
    }

    /// Maps off-diagonal entries into `[0, 1]` for the fitted range; the diagonal stays zero.
    pub fn normalize_matrix(&self, a: &Matrix) -> Matrix {
        map_off_diagonal(a, |x| self.scale(x))
    }

    pub fn denormalize_matrix(&self, a: &Matrix) -> Matrix {
        map_off_diagonal(a, |y| self.unscale(y))
    }

    pub fn normalize(&self, s: &Snapshot) -> Snapshot {
        Snapshot {
            adjacency: self.normalize_matrix(&s.adjacency),
            frame_index: s.frame_index,
        }
    }

    pub fn denormalize(&self, s: &Snapshot) -> Snapshot {
        Snapshot {
            adjacency: self.denormalize_matrix(&s.adjacency),
            frame_index: s.frame_index,
        }
    }
}

fn map_off_diagonal(a: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| if i == j { 0.0 } else { f(a.get(i, j)) })
}

/// Covalent radius in Å for the supported elements.
pub fn covalent_radius(symbol: &str) -> Option<f64> {
    Some(match symbol {
        "H" => 0.31,
        "B" => 0.84,
        "C" => 0.76,
        "N" => 0.71,
        "O" => 0.66,
        "F" => 0.57,
        "Si" => 1.11,
        "P" => 1.07,
        "S" => 1.05,
        "Cl" => 1.02,
        "Br" => 1.20,
        _ => return None,
    })
}

/// Symmetric boolean bonded/non-bonded classification of atom pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BondMask {
    n: usize,
    bonded: Vec<bool>,
}

impl BondMask {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bonded = vec![false; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let b = f(i, j);
                bonded[i * n + j] = b;
                bonded[j * n + i] = b;
            }
        }
        BondMask { n, bonded }
    }

    /// Every distinct pair non-bonded.
    pub fn none(n: usize) -> Self {
        BondMask::from_fn(n, |_, _| false)
    }

    pub fn atom_count(&self) -> usize {
        self.n
    }

    pub fn is_bonded(&self, i: usize, j: usize) -> bool {
        self.bonded[i * self.n + j]
    }

    pub fn bonded_pairs(&self) -> usize {
        (0..self.n)
            .map(|i| (i + 1..self.n).filter(|&j| self.is_bonded(i, j)).count())
            .sum()
    }
}

/// Bonded iff `distance ≤ 1.2 · (r_cov(i) + r_cov(j))`.
pub fn classify_bonds(frame: &Frame) -> Result<BondMask> {
    let radii = frame
        .elements
        .iter()
        .map(|s| covalent_radius(s).ok_or_else(|| Error::UnknownElement(s.clone())))
        .collect::<Result<Vec<f64>>>()?;
    Ok(BondMask::from_fn(frame.atom_count(), |i, j| {
        frame.distance(i, j) <= BOND_TOLERANCE * (radii[i] + radii[j])
    }))
}
