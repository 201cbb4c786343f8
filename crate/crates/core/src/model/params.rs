use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Tape, Var};

/// Node feature matrix fed to the graph convolution alongside the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NodeFeatures {
    /// Each vertex is described by its row of normalized distances.
    #[default]
    Adjacency,
    /// One-hot vertex identity.
    Identity,
}

/// Architecture hyperparameters. Parameter shapes are a pure function of these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub atoms: usize,
    pub window: usize,
    pub gcn_features: usize,
    pub lstm_features: usize,
    pub mlp_hidden: Vec<usize>,
    #[serde(default)]
    pub node_features: NodeFeatures,
}

impl ModelConfig {
    /// Window 10, 64 graph-convolution features, 128 LSTM features, one hidden MLP layer of 256.
    pub fn reference(atoms: usize) -> Self {
        ModelConfig {
            atoms,
            window: 10,
            gcn_features: 64,
            lstm_features: 128,
            mlp_hidden: vec![256],
            node_features: NodeFeatures::Adjacency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms < 2 {
            return Err(Error::Config(format!("model needs at least 2 atoms, got {}", self.atoms)));
        }
        let sizes = [
            ("window", self.window),
            ("gcn_features", self.gcn_features),
            ("lstm_features", self.lstm_features),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.mlp_hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("MLP hidden sizes must be positive".into()));
        }
        Ok(())
    }

    /// Length of one flattened GCN embedding (`N · F_g`).
    pub fn embedding_width(&self) -> usize {
        self.atoms * self.gcn_features
    }

    /// Width of the concatenated `[h, x]` gate input.
    pub fn gate_input_width(&self) -> usize {
        self.lstm_features + self.embedding_width()
    }

    /// Number of unique edges, `N(N−1)/2`.
    pub fn edge_count(&self) -> usize {
        self.atoms * (self.atoms - 1) / 2
    }

    /// `(out, in)` of every MLP layer.
    pub fn mlp_layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.lstm_features];
        dims.extend(&self.mlp_hidden);
        dims.push(self.edge_count());
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    /// Name and shape of every parameter tensor, in storage order.
    pub fn tensor_layout(&self) -> Vec<(String, (usize, usize))> {
        let mut out = vec![("gcn.weight".to_string(), (self.atoms, self.gcn_features))];
        for gate in GATE_NAMES {
            out.push((
                format!("lstm.{gate}.weight"),
                (self.lstm_features, self.gate_input_width()),
            ));
            out.push((format!("lstm.{gate}.bias"), (self.lstm_features, 1)));
        }
        for (k, (o, i)) in self.mlp_layer_shapes().into_iter().enumerate() {
            out.push((format!("mlp.{k}.weight"), (o, i)));
            out.push((format!("mlp.{k}.bias"), (o, 1)));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_layout().iter().map(|(_, (r, c))| r * c).sum()
    }
}

pub const GATE_NAMES: [&str; 4] = ["forget", "input", "modulation", "output"];

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    /// `N x F_g`
    pub weight: Matrix,
}

/// Weight `F_l x (F_l + D_in)` acting on `[h_{t-1}, x_t]` and bias `F_l x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub forget: GateParams,
    pub input: GateParams,
    pub modulation: GateParams,
    pub output: GateParams,
}

impl LstmParams {
    pub fn features(&self) -> usize {
        self.forget.bias.rows()
    }

    pub fn input_width(&self) -> usize {
        self.forget.weight.cols() - self.features()
    }

    fn gates(&self) -> [&GateParams; 4] {
        [&self.forget, &self.input, &self.modulation, &self.output]
    }

    fn gates_mut(&mut self) -> [&mut GateParams; 4] {
        [
            &mut self.forget,
            &mut self.input,
            &mut self.modulation,
            &mut self.output,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `out x in`
    pub weight: Matrix,
    /// `out x 1`
    pub bias: Matrix,
}

/// ReLU between layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub gcn: GcnParams,
    pub lstm: LstmParams,
    pub mlp: MlpParams,
}

fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    rng.uniform_matrix(rows, cols, -bound, bound)
}

/// Glorot-uniform weights (`fan_in` = columns, `fan_out` = rows), zero biases
/// except the forget gate, whose bias starts at 1. Tensors are drawn in
/// storage order from one generator seeded with `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let gcn = GcnParams {
        weight: glorot(&mut rng, config.atoms, config.gcn_features),
    };
    let f = config.lstm_features;
    let width = config.gate_input_width();
    let mut gate = |bias: f64| GateParams {
        weight: glorot(&mut rng, f, width),
        bias: Matrix::filled(f, 1, bias),
    };
    let lstm = LstmParams {
        forget: gate(1.0),
        input: gate(0.0),
        modulation: gate(0.0),
        output: gate(0.0),
    };
    let layers = config
        .mlp_layer_shapes()
        .into_iter()
        .map(|(o, i)| DenseParams {
            weight: glorot(&mut rng, o, i),
            bias: Matrix::zeros(o, 1),
        })
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        gcn,
        lstm,
        mlp: MlpParams { layers },
    })
}

impl ModelParams {
    /// All parameter tensors in storage order (matches [`ModelConfig::tensor_layout`]).
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.gcn.weight];
        for g in self.lstm.gates() {
            out.push(&g.weight);
            out.push(&g.bias);
        }
        for l in &self.mlp.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.gcn.weight];
        for g in self.lstm.gates_mut() {
            out.push(&mut g.weight);
            out.push(&mut g.bias);
        }
        for l in &mut self.mlp.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.config.tensor_layout().into_iter().map(|(n, _)| n).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// Rebuilds parameters from tensors in storage order, checking every shape.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let layout = config.tensor_layout();
        if layout.len() != tensors.len() {
            return Err(Error::Corrupt(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != *shape {
                return Err(Error::Corrupt(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked above");
        let gcn = GcnParams { weight: next() };
        let mut gate = || GateParams {
            weight: next(),
            bias: next(),
        };
        let lstm = LstmParams {
            forget: gate(),
            input: gate(),
            modulation: gate(),
            output: gate(),
        };
        let layers = (0..config.mlp_layer_shapes().len())
            .map(|_| DenseParams {
                weight: next(),
                bias: next(),
            })
            .collect();
        Ok(ModelParams {
            config,
            gcn,
            lstm,
            mlp: MlpParams { layers },
        })
    }

    /// Puts every tensor on `tape` as a differentiable leaf (or as constants for inference).
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let mut put = |m: &Matrix| {
            if trainable {
                tape.leaf(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let gcn = put(&self.gcn.weight);
        let gates = self.lstm.gates().map(|g| GateVars {
            weight: put(&g.weight),
            bias: put(&g.bias),
        });
        let mlp = self
            .mlp
            .layers
            .iter()
            .map(|l| DenseVars {
                weight: put(&l.weight),
                bias: put(&l.bias),
            })
            .collect();
        ParamVars { gcn, gates, mlp }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

/// Tape handles of every parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub gcn: Var,
    /// forget, input, modulation, output
    pub gates: [GateVars; 4],
    pub mlp: Vec<DenseVars>,
}

impl ParamVars {
    /// Handles in storage order.
    pub fn in_order(&self) -> Vec<Var> {
        let mut out = vec![self.gcn];
        for g in &self.gates {
            out.push(g.weight);
            out.push(g.bias);
        }
        for l in &self.mlp {
            out.push(l.weight);
            out.push(l.bias);
        }
        out
    }
}
