//! Downstream heads trained on frozen encoder features: whole-cloud
//! classification and per-node part segmentation.

use crate::error::Result;
use crate::model::{Linear, LEAKY_SLOPE};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand_chacha::ChaCha8Rng;

pub const DROPOUT_RATE: f64 = 0.5;

/// Node-wise layers, global max+mean pooling, then fully-connected layers to
/// class scores with dropout in the last two.
#[derive(Debug, Clone)]
pub struct ClassifyHead<F> {
    pub store: ParamStore<F>,
    node_fcs: Vec<Linear>,
    global_fcs: Vec<Linear>,
    pub num_classes: usize,
    pub feat_width: usize,
    /// Single linear map on the pooled raw features instead of the MLP.
    pub linear_probe: bool,
}

impl<F: Scalar> ClassifyHead<F> {
    pub fn new(feat_width: usize, num_classes: usize, linear_probe: bool, rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        let mut node_fcs = Vec::new();
        let mut global_fcs = Vec::new();
        if linear_probe {
            global_fcs.push(Linear::new(&mut store, "probe.linear", 2 * feat_width, num_classes, rng));
        } else {
            let node_widths = [128usize, 128, 128];
            let mut in_w = feat_width;
            for (i, &w) in node_widths.iter().enumerate() {
                node_fcs.push(Linear::new(&mut store, &format!("classify.node{i}"), in_w, w, rng));
                in_w = w;
            }
            let global_widths = [128usize, 64];
            let mut in_w = 2 * in_w; // max + mean pooled
            for (i, &w) in global_widths.iter().enumerate() {
                global_fcs.push(Linear::new(&mut store, &format!("classify.global{i}"), in_w, w, rng));
                in_w = w;
            }
            global_fcs.push(Linear::new(&mut store, "classify.scores", in_w, num_classes, rng));
        }
        ClassifyHead { store, node_fcs, global_fcs, num_classes, feat_width, linear_probe }
    }

    /// N×F node features → 1×num_classes scores.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        features: Var,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let mut x = features;
        for fc in &self.node_fcs {
            x = fc.forward(tape, &self.store, x)?;
            x = tape.leaky_relu(x, F::of(LEAKY_SLOPE));
        }
        let width = tape.shape(x)[1];
        let maxed = tape.max_over_axis(x, 0)?;
        let meaned = tape.mean_over_axis(x, 0)?;
        let maxed = tape.reshape(maxed, vec![1, width])?;
        let meaned = tape.reshape(meaned, vec![1, width])?;
        let mut g = tape.concat(&[maxed, meaned], 1)?;
        let last = self.global_fcs.len() - 1;
        for (i, fc) in self.global_fcs.iter().enumerate() {
            // dropout ahead of the last two fully-connected layers
            if !self.linear_probe && i + 2 >= self.global_fcs.len() {
                g = tape.dropout(g, DROPOUT_RATE, train, rng)?;
            }
            g = fc.forward(tape, &self.store, g)?;
            if i != last {
                g = tape.leaky_relu(g, F::of(LEAKY_SLOPE));
            }
        }
        Ok(g)
    }
}

/// Node features concatenated with globally max-pooled features, then four
/// fully-connected layers to per-node part scores.
#[derive(Debug, Clone)]
pub struct SegmentHead<F> {
    pub store: ParamStore<F>,
    fcs: Vec<Linear>,
    pub num_parts: usize,
    pub feat_width: usize,
}

impl<F: Scalar> SegmentHead<F> {
    pub fn new(feat_width: usize, num_parts: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        let widths = [128usize, 64, 64];
        let mut fcs = Vec::new();
        let mut in_w = 2 * feat_width;
        for (i, &w) in widths.iter().enumerate() {
            fcs.push(Linear::new(&mut store, &format!("segment.fc{i}"), in_w, w, rng));
            in_w = w;
        }
        fcs.push(Linear::new(&mut store, "segment.scores", in_w, num_parts, rng));
        SegmentHead { store, fcs, num_parts, feat_width }
    }

    /// N×F node features → N×num_parts scores.
    pub fn forward(&self, tape: &mut Tape<F>, features: Var) -> Result<Var> {
        let n = tape.shape(features)[0];
        let width = tape.shape(features)[1];
        let global = tape.max_over_axis(features, 0)?;
        let global = tape.reshape(global, vec![1, width])?;
        let global = tape.broadcast(global, &[n, width])?;
        let mut x = tape.concat(&[features, global], 1)?;
        let last = self.fcs.len() - 1;
        for (i, fc) in self.fcs.iter().enumerate() {
            x = fc.forward(tape, &self.store, x)?;
            if i != last {
                x = tape.leaky_relu(x, F::of(LEAKY_SLOPE));
            }
        }
        Ok(x)
    }
}
