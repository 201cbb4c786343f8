//! Forward pass: graph convolution per snapshot, LSTM over the window, MLP decoder.
//!
//! Windows are processed as a batch. Column `b` of every LSTM state and of the
//! decoder output belongs to window `b`.

use crate::error::{Error, Result};
use crate::graphdata::{validate_adjacency, Normalizer};
use crate::numerics::{Matrix, Tape, Var};

use super::params::{
    GateVars, GcnParams, LstmParams, ModelConfig, ModelParams, NodeFeatures, ParamVars,
};

/// Symmetrically normalized filter `D̂^{-1/2} Â D̂^{-1/2}` with `Â = A + I`.
pub fn gcn_filter(adjacency: &Matrix) -> Result<Matrix> {
    validate_adjacency(adjacency)?;
    let n = adjacency.rows();
    let inv_sqrt_deg = (0..n)
        .map(|i| {
            let d = 1.0 + adjacency.row(i).iter().sum::<f64>();
            if d > 0.0 {
                Ok(1.0 / d.sqrt())
            } else {
                Err(Error::InvalidMatrix(format!(
                    "self-loop degree of vertex {i} is {d}; the filter needs positive degrees"
                )))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Matrix::from_fn(n, n, |i, j| {
        let a_hat = adjacency.get(i, j) + if i == j { 1.0 } else { 0.0 };
        inv_sqrt_deg[i] * a_hat * inv_sqrt_deg[j]
    }))
}

/// Filter applied to the node features: the constant left factor of `filter · Z · W`.
pub fn propagated_features(adjacency: &Matrix, features: NodeFeatures) -> Result<Matrix> {
    let filter = gcn_filter(adjacency)?;
    match features {
        NodeFeatures::Adjacency => filter.matmul(adjacency),
        NodeFeatures::Identity => Ok(filter),
    }
}

/// Node embeddings `ReLU(D̂^{-1/2} Â D̂^{-1/2} Z W)` of one normalized snapshot (`N x F_g`).
pub fn gcn_forward(adjacency: &Matrix, params: &GcnParams, features: NodeFeatures) -> Result<Matrix> {
    if adjacency.rows() != params.weight.rows() {
        return Err(Error::ShapeMismatch {
            op: "gcn_forward",
            left: adjacency.shape(),
            right: params.weight.shape(),
        });
    }
    let mut tape = Tape::new();
    let p = tape.constant(propagated_features(adjacency, features)?);
    let w = tape.constant(params.weight.clone());
    let out = record_gcn(&mut tape, p, w)?;
    Ok(tape.value(out).clone())
}

fn record_gcn(tape: &mut Tape, propagated: Var, weight: Var) -> Result<Var> {
    let z = tape.matmul(propagated, weight)?;
    Ok(tape.relu(z))
}

/// Hidden and cell state, one column per sequence in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Matrix,
    pub c: Matrix,
}

impl LstmState {
    pub fn zeros(features: usize, batch: usize) -> Self {
        LstmState {
            h: Matrix::zeros(features, batch),
            c: Matrix::zeros(features, batch),
        }
    }
}

/// One LSTM update on the tape. Returns `(h_t, c_t)`.
fn record_lstm_step(
    tape: &mut Tape,
    gates: &[GateVars; 4],
    h_prev: Var,
    c_prev: Var,
    x: Var,
) -> Result<(Var, Var)> {
    let hx = tape.concat_rows(h_prev, x)?;
    let pre = |g: &GateVars, tape: &mut Tape| -> Result<Var> {
        let wx = tape.matmul(g.weight, hx)?;
        tape.add_column(wx, g.bias)
    };
    let f = pre(&gates[0], tape)?;
    let f = tape.sigmoid(f);
    let i = pre(&gates[1], tape)?;
    let i = tape.sigmoid(i);
    let m = pre(&gates[2], tape)?;
    let m = tape.tanh(m);
    let o = pre(&gates[3], tape)?;
    let o = tape.sigmoid(o);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, m)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One LSTM cell update for inputs `x` (`D_in x B`) from state `prev` (`F_l x B`).
pub fn lstm_cell_step(x: &Matrix, prev: &LstmState, params: &LstmParams) -> Result<LstmState> {
    let f = params.features();
    if x.rows() != params.input_width()
        || prev.h.shape() != (f, x.cols())
        || prev.c.shape() != (f, x.cols())
    {
        return Err(Error::ShapeMismatch {
            op: "lstm_cell_step",
            left: x.shape(),
            right: prev.h.shape(),
        });
    }
    let mut tape = Tape::new();
    let gate = |tape: &mut Tape, g: &super::params::GateParams| GateVars {
        weight: tape.constant(g.weight.clone()),
        bias: tape.constant(g.bias.clone()),
    };
    let gates = [
        gate(&mut tape, &params.forget),
        gate(&mut tape, &params.input),
        gate(&mut tape, &params.modulation),
        gate(&mut tape, &params.output),
    ];
    let h = tape.constant(prev.h.clone());
    let c = tape.constant(prev.c.clone());
    let xv = tape.constant(x.clone());
    let (h, c) = record_lstm_step(&mut tape, &gates, h, c, xv)?;
    Ok(LstmState {
        h: tape.value(h).clone(),
        c: tape.value(c).clone(),
    })
}

fn check_window(config: &ModelConfig, window: &[Matrix]) -> Result<()> {
    if window.len() != config.window {
        return Err(Error::Dataset(format!(
            "window has {} snapshots, model expects {}",
            window.len(),
            config.window
        )));
    }
    for a in window {
        if a.shape() != (config.atoms, config.atoms) {
            return Err(Error::Dataset(format!(
                "snapshot is {}x{}, model expects {} atoms",
                a.rows(),
                a.cols(),
                config.atoms
            )));
        }
    }
    Ok(())
}

/// Records the full predictor for a batch of normalized windows and returns
/// the decoder output (`N(N−1)/2 x B`, upper-triangle edges in row-major order).
pub fn record_forward(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &ModelConfig,
    windows: &[&[Matrix]],
) -> Result<Var> {
    if windows.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    for w in windows {
        check_window(config, w)?;
    }
    let batch = windows.len();
    let n = config.atoms;

    let mut h = tape.constant(Matrix::zeros(config.lstm_features, batch));
    let mut c = tape.constant(Matrix::zeros(config.lstm_features, batch));
    for t in 0..config.window {
        // Stack the per-window propagated features so one product covers the batch.
        let mut stacked = Vec::with_capacity(batch * n * n);
        for w in windows {
            stacked.extend_from_slice(propagated_features(&w[t], config.node_features)?.as_slice());
        }
        let p = tape.constant(Matrix::from_vec(batch * n, n, stacked)?);
        let x = record_gcn(tape, p, vars.gcn)?;
        // Rows b*N..(b+1)*N hold window b; row-major flattening per window.
        let x = tape.reshape(x, batch, config.embedding_width())?;
        let x = tape.transpose(x);
        let (h_next, c_next) = record_lstm_step(tape, &vars.gates, h, c, x)?;
        h = h_next;
        c = c_next;
    }

    let mut y = c;
    let last = vars.mlp.len() - 1;
    for (k, layer) in vars.mlp.iter().enumerate() {
        let z = tape.matmul(layer.weight, y)?;
        let z = tape.add_column(z, layer.bias)?;
        y = if k < last { tape.relu(z) } else { z };
    }
    Ok(y)
}

/// Predicted normalized adjacency for each window of the batch.
pub fn predict_batch(params: &ModelParams, windows: &[&[Matrix]]) -> Result<Vec<Matrix>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let out = record_forward(&mut tape, &vars, &params.config, windows)?;
    let y = tape.value(out);
    let n = params.config.atoms;
    Ok((0..windows.len())
        .map(|b| {
            let edges: Vec<f64> = (0..y.rows()).map(|e| y.get(e, b)).collect();
            unpack_upper(&edges, n)
        })
        .collect())
}

/// Predicted normalized adjacency of the snapshot following `window`.
pub fn predict_next(params: &ModelParams, window: &[Matrix]) -> Result<Matrix> {
    Ok(predict_batch(params, &[window])?.remove(0))
}

/// Autoregressive rollout in Å: each prediction is appended to the window and
/// the oldest snapshot dropped before the next step. Returned frames are raw
/// predictions; the copy fed back is floored at 0 in normalized units so the
/// filter's degrees stay positive.
pub fn rollout(
    params: &ModelParams,
    normalizer: &Normalizer,
    seed_window: &[Matrix],
    horizon: usize,
) -> Result<Vec<Matrix>> {
    if horizon == 0 {
        return Err(Error::Config("rollout horizon must be at least 1".into()));
    }
    if seed_window.len() != params.config.window {
        return Err(Error::Dataset(format!(
            "seed window has {} snapshots, model expects {}",
            seed_window.len(),
            params.config.window
        )));
    }
    let mut window: Vec<Matrix> = seed_window.iter().map(|a| normalizer.normalize_matrix(a)).collect();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = predict_next(params, &window)?;
        out.push(normalizer.denormalize_matrix(&next));
        window.remove(0);
        window.push(next.map(|w| w.max(0.0)));
    }
    Ok(out)
}

/// Strict upper triangle in row-major order.
pub fn pack_upper(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(a.get(i, j));
        }
    }
    out
}

/// Symmetric zero-diagonal matrix from its strict upper triangle.
pub fn unpack_upper(edges: &[f64], n: usize) -> Matrix {
    debug_assert_eq!(edges.len(), n * (n - 1) / 2);
    let mut a = Matrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            a.set(i, j, edges[k]);
            a.set(j, i, edges[k]);
            k += 1;
        }
    }
    a
}
