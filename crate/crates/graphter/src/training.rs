//! SGD with momentum and weight decay, cosine learning-rate annealing, and
//! the end-to-end pretext training loop.

use crate::config::RunConfig;
use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::graph::{knn_graph, rebuild_after_transform};
use crate::model::GraphTerModel;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::transforms::{apply_transform, sample_subset, sample_transform, target_params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

pub const MOMENTUM: f64 = 0.9;
pub const WEIGHT_DECAY: f64 = 1e-4;

/// Per-parameter velocity buffers plus the optimizer hyperparameters.
#[derive(Debug, Clone)]
pub struct SgdState<F> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<F>>,
}

impl<F: Scalar> SgdState<F> {
    pub fn new(store: &ParamStore<F>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        assert!((0.0..1.0).contains(&momentum) && weight_decay >= 0.0);
        let velocity = store.ids().map(|id| vec![F::zero(); store.tensor(id).numel()]).collect();
        SgdState { lr, momentum, weight_decay, velocity }
    }
}

/// One update: g' = g + wd·w; v ← momentum·v + g'; w ← w − lr·v.
pub fn sgd_step<F: Scalar>(store: &mut ParamStore<F>, state: &mut SgdState<F>) -> Result<()> {
    let lr = F::of(state.lr);
    let mom = F::of(state.momentum);
    let wd = F::of(state.weight_decay);
    for (slot, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let grad = store
            .grad(id)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("sgd_step: missing grad for '{}'", store.name(id)))
            })?
            .to_vec();
        let velocity = &mut state.velocity[slot];
        let weights = store.tensor_mut(id).values_mut();
        for i in 0..weights.len() {
            let g = grad[i] + wd * weights[i];
            velocity[i] = mom * velocity[i] + g;
            weights[i] = weights[i] - lr * velocity[i];
        }
    }
    Ok(())
}

/// lr = lr_min + ½(lr_max − lr_min)(1 + cos(π·epoch/total)).
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if epoch > total_epochs || total_epochs == 0 {
        return Err(Error::InvalidArgument(format!(
            "cosine_lr: epoch {epoch} outside 0..={total_epochs}"
        )));
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub wall_ms: u64,
}

/// Per-batch pipeline: sample mask → sample transform → apply → rebuild both
/// graphs → Siamese encode → decode → masked MSE → backward → SGD step.
/// Masks and transforms are drawn fresh for every batch element.
pub fn pretrain<F: Scalar>(
    config: &RunConfig,
    train_clouds: &[PointCloud<F>],
    model: &mut GraphTerModel<F>,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if train_clouds.is_empty() {
        return Err(Error::InvalidArgument("pretrain: empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut state = SgdState::new(&model.store, config.lr_max, MOMENTUM, WEIGHT_DECAY);
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let start = Instant::now();
        state.lr = cosine_lr(epoch, config.epochs, config.lr_max, config.lr_min)?;
        let mut order: Vec<usize> = (0..train_clouds.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let mut batch_losses = Vec::with_capacity(batch.len());
            for &ci in batch {
                let cloud = &train_clouds[ci];
                let n = cloud.num_points();
                let mask = sample_subset(cloud, config.mode, config.rate, &mut rng)?;
                let transform =
                    sample_transform::<F>(config.kind, config.strategy, mask, &mut rng);
                let transformed = apply_transform(cloud, &transform)?;
                let graph_orig = knn_graph(&cloud.coords, n, 3, config.k)?;
                let graph_trans = rebuild_after_transform(&transformed.coords, n, 3, config.k)?;
                let orig_t = crate::tensor::Tensor::new(vec![n, 3], cloud.coords.clone())?;
                let trans_t = crate::tensor::Tensor::new(vec![n, 3], transformed.coords.clone())?;
                let pred = model.forward_pretrain(
                    &mut tape,
                    &orig_t,
                    &trans_t,
                    &graph_orig,
                    &graph_trans,
                    true,
                )?;
                let (targets, row_mask) = target_params(&transform, n);
                let loss = model.transformation_loss(&mut tape, pred, &targets, &row_mask)?;
                batch_losses.push(loss);
            }
            let mut total = batch_losses[0];
            for &l in &batch_losses[1..] {
                total = tape.add(total, l)?;
            }
            let batch_loss = tape.scale(total, F::of(1.0 / batch_losses.len() as f64));
            let loss_value = tape.values(batch_loss)[0].as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("pretrain epoch {epoch} batch {batches} loss"),
                });
            }
            model.store.clear_grads();
            tape.backward(batch_loss)?;
            tape.write_param_grads(&mut model.store);
            sgd_step(&mut model.store, &mut state)?;
            epoch_loss += loss_value;
            batches += 1;
        }
        metrics.push(EpochMetrics {
            epoch,
            lr: state.lr,
            mean_loss: epoch_loss / batches as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok(metrics)
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,lr,mean_loss,wall_ms\n");
    for m in metrics {
        out.push_str(&format!("{},{},{},{}\n", m.epoch, m.lr, m.mean_loss, m.wall_ms));
    }
    out
}
