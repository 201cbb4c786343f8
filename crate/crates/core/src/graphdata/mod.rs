//! Molecular trajectories as sequences of complete distance graphs.

mod dataset;
mod graph;
mod xyz;

pub use dataset::{
    fit_on_samples, make_windows, split_indices, split_train_test, DatasetManifest,
    PreparedDataset, Split, SplitMode, SplitSpec, Trajectory, TrajectorySplit, WindowSample,
};
pub use graph::{
    classify_bonds, covalent_radius, frame_to_snapshot, BondMask, Normalizer, Snapshot,
    BOND_TOLERANCE, MIN_PAIR_DISTANCE,
};
pub(crate) use graph::validate_adjacency;
pub use xyz::{parse_trajectory, write_trajectory, Frame};
