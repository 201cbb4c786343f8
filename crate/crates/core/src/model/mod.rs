//! The GCN → LSTM → MLP next-snapshot predictor.
//!
//! Each normalized snapshot `A_t` of a window is embedded by one graph
//! convolution `X_t = ReLU(D̂^{-1/2} Â D̂^{-1/2} Z W)` that shares `W` across
//! time. The row-major flattening of `X_t` drives an LSTM cell from a zero
//! state; after the last step the cell state `c_W` (not the hidden state) is
//! decoded by an MLP into the `N(N−1)/2` unique edges of the next snapshot.
//! The output matrix is assembled from those edges, so it is symmetric with a
//! zero diagonal by construction.

mod forward;
mod params;

pub use forward::{
    gcn_filter, gcn_forward, lstm_cell_step, pack_upper, predict_batch, predict_next,
    propagated_features, record_forward, rollout, unpack_upper, LstmState,
};
pub use params::{
    init_params, DenseParams, DenseVars, GateParams, GateVars, GcnParams, LstmParams, MlpParams,
    ModelConfig, ModelParams, NodeFeatures, ParamVars, GATE_NAMES,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sigmoid, Matrix, Rng};

    fn random_adjacency(rng: &mut Rng, n: usize) -> Matrix {
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.uniform(0.0, 1.0);
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        a
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            atoms: 4,
            window: 3,
            gcn_features: 3,
            lstm_features: 5,
            mlp_hidden: vec![8],
            node_features: NodeFeatures::Adjacency,
        }
    }

    #[test]
    fn zero_adjacency_gives_zero_embedding() {
        let params = init_params(&small_config(), 1).unwrap();
        let x = gcn_forward(&Matrix::zeros(4, 4), &params.gcn, NodeFeatures::Adjacency).unwrap();
        assert_eq!(x, Matrix::zeros(4, 3));
    }

    #[test]
    fn two_node_filter() {
        let f = gcn_filter(&Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        for v in f.as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    /// Scalar transcription of the graph convolution with `Z = A`.
    fn scalar_gcn(a: &Matrix, w: &Matrix) -> Matrix {
        let n = a.rows();
        let f = w.cols();
        let a_hat = |i: usize, j: usize| a.get(i, j) + if i == j { 1.0 } else { 0.0 };
        let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a_hat(i, j)).sum()).collect();
        let mut out = Matrix::zeros(n, f);
        for i in 0..n {
            for c in 0..f {
                let mut acc = 0.0;
                for j in 0..n {
                    let filt = a_hat(i, j) / (deg[i].sqrt() * deg[j].sqrt());
                    for k in 0..n {
                        acc += filt * a.get(j, k) * w.get(k, c);
                    }
                }
                out.set(i, c, acc.max(0.0));
            }
        }
        out
    }

    #[test]
    fn gcn_matches_scalar_oracle_with_identity_weight() {
        let mut rng = Rng::new(19);
        let a = random_adjacency(&mut rng, 19);
        let params = GcnParams {
            weight: Matrix::identity(19),
        };
        let got = gcn_forward(&a, &params, NodeFeatures::Adjacency).unwrap();
        let want = scalar_gcn(&a, &params.weight);
        for (g, w) in got.as_slice().iter().zip(want.as_slice()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_rejects_invalid_adjacency() {
        let params = GcnParams {
            weight: Matrix::identity(2),
        };
        let asym = Matrix::from_rows(&[[0.0, 1.0], [0.5, 0.0]]);
        assert!(gcn_forward(&asym, &params, NodeFeatures::Adjacency).is_err());
        let diag = Matrix::from_rows(&[[1.0, 1.0], [1.0, 0.0]]);
        assert!(gcn_forward(&diag, &params, NodeFeatures::Adjacency).is_err());
    }

    fn zero_lstm(f: usize, d: usize) -> LstmParams {
        let gate = || GateParams {
            weight: Matrix::zeros(f, f + d),
            bias: Matrix::zeros(f, 1),
        };
        LstmParams {
            forget: gate(),
            input: gate(),
            modulation: gate(),
            output: gate(),
        }
    }

    #[test]
    fn zero_network_keeps_zero_state() {
        let p = zero_lstm(3, 2);
        let s = lstm_cell_step(&Matrix::column(&[0.3, -0.7]), &LstmState::zeros(3, 1), &p).unwrap();
        assert_eq!(s.c, Matrix::zeros(3, 1));
        assert_eq!(s.h, Matrix::zeros(3, 1));
    }

    #[test]
    fn saturated_forget_gate_copies_cell_state() {
        let mut p = zero_lstm(3, 2);
        p.forget.bias = Matrix::filled(3, 1, 50.0);
        let prev = LstmState {
            h: Matrix::zeros(3, 1),
            c: Matrix::column(&[0.25, -1.5, 3.0]),
        };
        let s = lstm_cell_step(&Matrix::column(&[1.0, 2.0]), &prev, &p).unwrap();
        assert_eq!(s.c, prev.c);
    }

    /// Scalar transcription of the gate equations for a single sequence.
    fn scalar_lstm(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
        let f = h.len();
        let hx: Vec<f64> = h.iter().chain(x).copied().collect();
        let gate = |g: &GateParams, r: usize| -> f64 {
            let mut acc = g.bias.get(r, 0);
            for (k, v) in hx.iter().enumerate() {
                acc += g.weight.get(r, k) * v;
            }
            acc
        };
        let mut h_new = vec![0.0; f];
        let mut c_new = vec![0.0; f];
        for r in 0..f {
            let ft = sigmoid(gate(&p.forget, r));
            let it = sigmoid(gate(&p.input, r));
            let ct = gate(&p.modulation, r).tanh();
            let ot = sigmoid(gate(&p.output, r));
            c_new[r] = ft * c[r] + it * ct;
            h_new[r] = ot * c_new[r].tanh();
        }
        (h_new, c_new)
    }

    #[test]
    fn lstm_matches_scalar_oracle() {
        let mut rng = Rng::new(23);
        let (f, d) = (3, 2);
        let mut gate = || GateParams {
            weight: rng.uniform_matrix(f, f + d, -1.0, 1.0),
            bias: rng.uniform_matrix(f, 1, -1.0, 1.0),
        };
        let p = LstmParams {
            forget: gate(),
            input: gate(),
            modulation: gate(),
            output: gate(),
        };
        let x = [0.4, -0.9];
        let h = [0.1, -0.2, 0.3];
        let c = [0.5, 0.0, -0.7];
        let prev = LstmState {
            h: Matrix::column(&h),
            c: Matrix::column(&c),
        };
        let got = lstm_cell_step(&Matrix::column(&x), &prev, &p).unwrap();
        let (wh, wc) = scalar_lstm(&x, &h, &c, &p);
        for r in 0..f {
            assert!((got.h.get(r, 0) - wh[r]).abs() < 1e-12);
            assert!((got.c.get(r, 0) - wc[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_dimension_mismatch() {
        let p = zero_lstm(3, 2);
        assert!(lstm_cell_step(&Matrix::column(&[1.0]), &LstmState::zeros(3, 1), &p).is_err());
        assert!(lstm_cell_step(&Matrix::column(&[1.0, 2.0]), &LstmState::zeros(2, 1), &p).is_err());
    }

    #[test]
    fn reference_shapes() {
        let cfg = ModelConfig::reference(19);
        assert_eq!(cfg.embedding_width(), 1216);
        assert_eq!(cfg.gate_input_width(), 1344);
        assert_eq!(cfg.edge_count(), 171);
        // 19·64 + 4·(128·1344 + 128) + (256·128 + 256) + (171·256 + 171)
        assert_eq!(cfg.parameter_count(), 766_827);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = small_config();
        let a = init_params(&cfg, 99).unwrap();
        let b = init_params(&cfg, 99).unwrap();
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            let xb: Vec<u64> = x.as_slice().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_ne!(a, init_params(&cfg, 100).unwrap());
        for (name, t) in a.tensor_names().iter().zip(a.tensors()) {
            if name.ends_with("weight") {
                let bound = (6.0 / (t.rows() + t.cols()) as f64).sqrt();
                assert!(t.max_abs() <= bound, "{name}");
            }
        }
        assert_eq!(a.lstm.forget.bias, Matrix::filled(5, 1, 1.0));
        assert_eq!(a.lstm.input.bias, Matrix::zeros(5, 1));
        assert_eq!(a.mlp.layers[1].bias, Matrix::zeros(6, 1));
        assert_eq!(a.parameter_count(), cfg.parameter_count());
    }

    #[test]
    fn init_rejects_zero_sizes() {
        let mut cfg = small_config();
        cfg.lstm_features = 0;
        assert!(init_params(&cfg, 0).is_err());
        let mut cfg = small_config();
        cfg.mlp_hidden = vec![0];
        assert!(init_params(&cfg, 0).is_err());
    }

    #[test]
    fn prediction_is_symmetric_with_zero_diagonal() {
        let cfg = small_config();
        let params = init_params(&cfg, 5).unwrap();
        let mut rng = Rng::new(8);
        let window: Vec<Matrix> = (0..3).map(|_| random_adjacency(&mut rng, 4)).collect();
        let y = predict_next(&params, &window).unwrap();
        assert_eq!(y.shape(), (4, 4));
        for i in 0..4 {
            assert_eq!(y.get(i, i), 0.0);
            for j in 0..4 {
                assert_eq!(y.get(i, j), y.get(j, i));
            }
        }
    }

    #[test]
    fn rollout_steps() {
        let params = init_params(&small_config(), 5).unwrap();
        let norm = crate::graphdata::Normalizer::new(1.0, 3.0).unwrap();
        let mut rng = Rng::new(10);
        let raw: Vec<Matrix> = (0..3)
            .map(|_| random_adjacency(&mut rng, 4).map(|w| 1.0 + 2.0 * w))
            .map(|a| Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { a.get(i, j) }))
            .collect();
        let one = rollout(&params, &norm, &raw, 1).unwrap();
        let normalized: Vec<Matrix> = raw.iter().map(|a| norm.normalize_matrix(a)).collect();
        let direct = norm.denormalize_matrix(&predict_next(&params, &normalized).unwrap());
        assert_eq!(one, vec![direct]);
        let three = rollout(&params, &norm, &raw, 3).unwrap();
        assert_eq!(three.len(), 3);
        assert_eq!(three[0], one[0]);
        assert!(rollout(&params, &norm, &raw, 0).is_err());
        assert!(rollout(&params, &norm, &raw[..2], 1).is_err());
    }

    #[test]
    fn batched_prediction_matches_single() {
        let cfg = small_config();
        let params = init_params(&cfg, 5).unwrap();
        let mut rng = Rng::new(9);
        let windows: Vec<Vec<Matrix>> = (0..4)
            .map(|_| (0..3).map(|_| random_adjacency(&mut rng, 4)).collect())
            .collect();
        let refs: Vec<&[Matrix]> = windows.iter().map(|w| w.as_slice()).collect();
        let batch = predict_batch(&params, &refs).unwrap();
        for (w, b) in windows.iter().zip(&batch) {
            let single = predict_next(&params, w).unwrap();
            for (x, y) in single.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn wrong_window_or_atom_count() {
        let cfg = small_config();
        let params = init_params(&cfg, 5).unwrap();
        let short = vec![Matrix::zeros(4, 4); 2];
        assert!(predict_next(&params, &short).is_err());
        let wrong_n = vec![Matrix::zeros(5, 5); 3];
        assert!(predict_next(&params, &wrong_n).is_err());
    }

    #[test]
    fn doubling_window_keeps_parameter_shapes() {
        let cfg = small_config();
        let mut doubled = cfg.clone();
        doubled.window *= 2;
        assert_eq!(cfg.tensor_layout(), doubled.tensor_layout());
    }

    #[test]
    fn pack_unpack() {
        let a = Matrix::from_rows(&[[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]]);
        assert_eq!(pack_upper(&a), vec![1.0, 2.0, 3.0]);
        assert_eq!(unpack_upper(&[1.0, 2.0, 3.0], 3), a);
    }

    #[test]
    fn identity_features_option() {
        let mut cfg = small_config();
        cfg.node_features = NodeFeatures::Identity;
        let params = init_params(&cfg, 1).unwrap();
        // With Z = I a zero graph still produces ReLU(W).
        let x = gcn_forward(&Matrix::zeros(4, 4), &params.gcn, NodeFeatures::Identity).unwrap();
        assert_eq!(x, params.gcn.weight.map(|v| v.max(0.0)));
    }
}
