//! EdgeConv networks: Siamese representation encoder, transformation
//! decoder and the masked regression loss.
//!
//! Per node i the edge convolution computes
//! `max_{j in N(i)} act(bn(θ·(x_j − x_i) + φ·x_i + b))`, with the elementwise
//! max taken across i's k neighbors.

use crate::error::{Error, Result};
use crate::graph::{knn_graph, KnnGraph};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{BnRunning, Tape, Var};
use crate::tensor::Tensor;
use crate::transforms::TransformKind;
use rand_chacha::ChaCha8Rng;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
}

/// One edge convolution: paired θ/φ weights, bias, batchnorm state.
#[derive(Debug, Clone)]
pub struct EdgeConvLayer<F> {
    pub theta: ParamId,
    pub phi: ParamId,
    pub bias: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub running: BnRunning<F>,
    pub activation: Activation,
    pub use_bn: bool,
    pub in_width: usize,
    pub out_width: usize,
}

impl<F: Scalar> EdgeConvLayer<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        prefix: &str,
        in_width: usize,
        out_width: usize,
        activation: Activation,
        use_bn: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let theta = store.register(
            format!("{prefix}.theta"),
            Tensor::uniform_init(vec![in_width, out_width], in_width, rng),
        );
        let phi = store.register(
            format!("{prefix}.phi"),
            Tensor::uniform_init(vec![in_width, out_width], in_width, rng),
        );
        let bias = store.register(format!("{prefix}.bias"), Tensor::zeros(vec![out_width]));
        let bn_gamma = store.register(
            format!("{prefix}.bn_gamma"),
            Tensor::new(vec![out_width], vec![F::one(); out_width]).unwrap(),
        );
        let bn_beta = store.register(format!("{prefix}.bn_beta"), Tensor::zeros(vec![out_width]));
        EdgeConvLayer {
            theta,
            phi,
            bias,
            bn_gamma,
            bn_beta,
            running: BnRunning::new(out_width),
            activation,
            use_bn,
            in_width,
            out_width,
        }
    }

    /// N×C_in node features in, N×C_out out, aggregating over `graph`.
    pub fn forward(
        &mut self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        features: Var,
        graph: &KnnGraph,
        train: bool,
    ) -> Result<Var> {
        let n = graph.num_nodes();
        let k = graph.k();
        let shape = tape.shape(features).to_vec();
        if shape.len() != 2 || shape[0] != n || shape[1] != self.in_width {
            return Err(Error::ShapeMismatch {
                op: "edgeconv_forward",
                lhs: shape,
                rhs: vec![n, self.in_width],
            });
        }
        let mut j_idx = Vec::with_capacity(n * k);
        let mut i_idx = Vec::with_capacity(n * k);
        for i in 0..n {
            for &j in graph.neighbors(i) {
                i_idx.push(i);
                j_idx.push(j);
            }
        }
        let xj = tape.gather_rows(features, &j_idx)?;
        let xi = tape.gather_rows(features, &i_idx)?;
        let diff = tape.subtract(xj, xi)?;
        let theta = tape.param(store, self.theta);
        let phi = tape.param(store, self.phi);
        let bias = tape.param(store, self.bias);
        let lhs = tape.matmul(diff, theta)?;
        let rhs = tape.matmul(xi, phi)?;
        let linear = tape.add(lhs, rhs)?;
        let bias_b = tape.broadcast(bias, &[n * k, self.out_width])?;
        let mut msg = tape.add(linear, bias_b)?;
        if self.use_bn {
            let gamma = tape.param(store, self.bn_gamma);
            let beta = tape.param(store, self.bn_beta);
            msg = tape.batchnorm(msg, gamma, beta, &mut self.running, train)?;
        }
        let activated = match self.activation {
            Activation::Relu => tape.relu(msg),
            Activation::LeakyRelu => tape.leaky_relu(msg, F::of(LEAKY_SLOPE)),
        };
        let stacked = tape.reshape(activated, vec![n, k, self.out_width])?;
        tape.max_over_axis(stacked, 1)
    }
}

/// Plain node-wise linear map.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        prefix: &str,
        in_width: usize,
        out_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.register(
            format!("{prefix}.weight"),
            Tensor::uniform_init(vec![in_width, out_width], in_width, rng),
        );
        let bias = store.register(format!("{prefix}.bias"), Tensor::zeros(vec![out_width]));
        Linear { weight, bias, in_width, out_width }
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let rows = tape.shape(x)[0];
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        let bb = tape.broadcast(b, &[rows, self.out_width])?;
        tape.add(y, bb)
    }
}

/// Encoder/decoder layer widths and graph settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    /// Output width per encoder EdgeConv layer; input is 3 coordinates.
    pub encoder_widths: Vec<usize>,
    /// Encoder layers whose outputs are concatenated into the representation.
    pub shortcut_layers: Vec<usize>,
    /// Output width per decoder EdgeConv layer; input is 2× the encoder
    /// feature width.
    pub decoder_widths: Vec<usize>,
    pub k: usize,
    pub dynamic_graph: bool,
}

impl ArchConfig {
    /// CPU-minutes scale: 3 encoder layers, shortcuts on all, F = 256.
    pub fn desk(k: usize, dynamic_graph: bool) -> Self {
        ArchConfig {
            encoder_widths: vec![64, 64, 128],
            shortcut_layers: vec![0, 1, 2],
            decoder_widths: vec![128, 64],
            k,
            dynamic_graph,
        }
    }

    /// Eight encoder layers with shortcuts on the first five (1024-d
    /// features), three decoder layers.
    pub fn full(k: usize, dynamic_graph: bool) -> Self {
        ArchConfig {
            encoder_widths: vec![64, 64, 128, 256, 512, 256, 256, 256],
            shortcut_layers: vec![0, 1, 2, 3, 4],
            decoder_widths: vec![512, 256, 128],
            k,
            dynamic_graph,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.shortcut_layers.iter().map(|&i| self.encoder_widths[i]).sum()
    }
}

/// Siamese encoder + transformation decoder with a shared parameter store.
#[derive(Debug, Clone)]
pub struct GraphTerModel<F> {
    pub store: ParamStore<F>,
    pub encoder: Vec<EdgeConvLayer<F>>,
    pub decoder: Vec<EdgeConvLayer<F>>,
    pub head: Linear,
    pub kind: TransformKind,
    pub arch: ArchConfig,
}

impl<F: Scalar> GraphTerModel<F> {
    pub fn new(kind: TransformKind, arch: ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        let mut encoder = Vec::new();
        let mut in_w = 3;
        for (li, &out_w) in arch.encoder_widths.iter().enumerate() {
            let act = if li == 0 { Activation::Relu } else { Activation::LeakyRelu };
            encoder.push(EdgeConvLayer::new(
                &mut store,
                &format!("encoder.{li}"),
                in_w,
                out_w,
                act,
                true,
                rng,
            ));
            in_w = out_w;
        }
        let feat = arch.feature_width();
        let mut decoder = Vec::new();
        let mut in_w = 2 * feat;
        for (li, &out_w) in arch.decoder_widths.iter().enumerate() {
            decoder.push(EdgeConvLayer::new(
                &mut store,
                &format!("decoder.{li}"),
                in_w,
                out_w,
                Activation::LeakyRelu,
                true,
                rng,
            ));
            in_w = out_w;
        }
        let head = Linear::new(&mut store, "decoder.head", in_w, kind.param_count(), rng);
        GraphTerModel { store, encoder, decoder, head, kind, arch }
    }

    /// Node-wise representation: concatenation of the shortcut layers'
    /// outputs. Both views go through these same layers (shared weights).
    pub fn encode(
        &mut self,
        tape: &mut Tape<F>,
        coords: Var,
        graph: &KnnGraph,
        train: bool,
    ) -> Result<Var> {
        let n = graph.num_nodes();
        let mut x = coords;
        let mut shortcut_outputs = Vec::new();
        let mut current_graph = graph.clone();
        for (li, layer) in self.encoder.iter_mut().enumerate() {
            if li > 0 && self.arch.dynamic_graph {
                // rebuild the neighborhood in feature space
                let feats = tape.values(x).to_vec();
                let width = tape.shape(x)[1];
                current_graph = knn_graph(&feats, n, width, self.arch.k)?;
            }
            x = layer.forward(tape, &self.store, x, &current_graph, train)?;
            if self.arch.shortcut_layers.contains(&li) {
                shortcut_outputs.push(x);
            }
        }
        tape.concat(&shortcut_outputs, 1)
    }

    /// Concatenate both views' features node-wise and decode per-node
    /// transformation parameters on the original view's graph.
    pub fn decode_transform(
        &mut self,
        tape: &mut Tape<F>,
        feat_orig: Var,
        feat_trans: Var,
        graph_orig: &KnnGraph,
        train: bool,
    ) -> Result<Var> {
        let combined = tape.concat(&[feat_orig, feat_trans], 1)?;
        let mut x = combined;
        for layer in self.decoder.iter_mut() {
            x = layer.forward(tape, &self.store, x, graph_orig, train)?;
        }
        self.head.forward(tape, &self.store, x)
    }

    /// Full pretext forward pass: Siamese encode both views, decode the
    /// node-wise parameters.
    pub fn forward_pretrain(
        &mut self,
        tape: &mut Tape<F>,
        orig: &Tensor<F>,
        transformed: &Tensor<F>,
        graph_orig: &KnnGraph,
        graph_trans: &KnnGraph,
        train: bool,
    ) -> Result<Var> {
        let xo = tape.constant(orig.clone());
        let xt = tape.constant(transformed.clone());
        let fo = self.encode(tape, xo, graph_orig, train)?;
        let ft = self.encode(tape, xt, graph_trans, train)?;
        self.decode_transform(tape, fo, ft, graph_orig, train)
    }

    /// Mean squared error over the sampled subset (masked rows only).
    pub fn transformation_loss(
        &self,
        tape: &mut Tape<F>,
        pred: Var,
        target: &Tensor<F>,
        row_mask: &[bool],
    ) -> Result<Var> {
        let t = tape.constant(target.clone());
        tape.masked_mse(pred, t, row_mask)
    }

    /// Named batchnorm running statistics, for checkpointing.
    pub fn bn_states(&self) -> Vec<(String, &BnRunning<F>)> {
        let mut out = Vec::new();
        for (li, layer) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{li}.bn_running"), &layer.running));
        }
        for (li, layer) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{li}.bn_running"), &layer.running));
        }
        out
    }

    pub fn bn_states_mut(&mut self) -> Vec<(String, &mut BnRunning<F>)> {
        let mut out = Vec::new();
        for (li, layer) in self.encoder.iter_mut().enumerate() {
            out.push((format!("encoder.{li}.bn_running"), &mut layer.running));
        }
        for (li, layer) in self.decoder.iter_mut().enumerate() {
            out.push((format!("decoder.{li}.bn_running"), &mut layer.running));
        }
        out
    }

    pub fn cast<G: Scalar>(&self) -> GraphTerModel<G> {
        let mut store = ParamStore::new();
        for (name, tensor) in self.store.iter() {
            store.register(name.to_string(), tensor.cast::<G>());
        }
        let cast_layers = |layers: &[EdgeConvLayer<F>]| {
            layers
                .iter()
                .map(|l| EdgeConvLayer {
                    theta: l.theta,
                    phi: l.phi,
                    bias: l.bias,
                    bn_gamma: l.bn_gamma,
                    bn_beta: l.bn_beta,
                    running: BnRunning {
                        mean: l.running.mean.iter().map(|v| G::of(v.as_f64())).collect(),
                        var: l.running.var.iter().map(|v| G::of(v.as_f64())).collect(),
                    },
                    activation: l.activation,
                    use_bn: l.use_bn,
                    in_width: l.in_width,
                    out_width: l.out_width,
                })
                .collect::<Vec<_>>()
        };
        GraphTerModel {
            store,
            encoder: cast_layers(&self.encoder),
            decoder: cast_layers(&self.decoder),
            head: self.head.clone(),
            kind: self.kind,
            arch: self.arch.clone(),
        }
    }
}
