//! Frozen-encoder downstream protocols: classification probe, per-node part
//! segmentation with mIoU, and the ablation grid.

use crate::config::RunConfig;
use crate::data::{Dataset, PointCloud, Split};
use crate::error::{Error, Result};
use crate::graph::knn_graph;
use crate::heads::{ClassifyHead, SegmentHead};
use crate::model::GraphTerModel;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::training::{sgd_step, SgdState, MOMENTUM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hex digest over every parameter and batchnorm running buffer, bit-exact.
pub fn encoder_checksum<F: Scalar>(model: &GraphTerModel<F>) -> String {
    let mut hasher = Sha256::new();
    for (name, tensor) in model.store.iter() {
        hasher.update(name.as_bytes());
        for v in tensor.values() {
            hasher.update(v.as_f64().to_bits().to_le_bytes());
        }
    }
    for (name, running) in model.bn_states() {
        hasher.update(name.as_bytes());
        for v in running.mean.iter().chain(running.var.iter()) {
            hasher.update(v.as_f64().to_bits().to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Eval-mode node features for one cloud (N×F). The encoder is not mutated.
pub fn extract_features<F: Scalar>(
    model: &mut GraphTerModel<F>,
    cloud: &PointCloud<F>,
) -> Result<Tensor<F>> {
    let n = cloud.num_points();
    let graph = knn_graph(&cloud.coords, n, 3, model.arch.k)?;
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![n, 3], cloud.coords.clone())?);
    let f = model.encode(&mut tape, x, &graph, false)?;
    Ok(tape.tensor(f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    /// confusion[gt][pred]
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<f64>,
    pub overall: f64,
}

/// Argmax classification accuracy; ties go to the lowest class index.
pub fn accuracy(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<ProbeResult> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "accuracy: {} score rows vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (row, &label) in scores.iter().zip(labels) {
        if label >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "accuracy: label {label} out of range 0..{num_classes}"
            )));
        }
        if row.len() != num_classes {
            return Err(Error::InvalidArgument(format!(
                "accuracy: score row has {} entries, expected {num_classes}",
                row.len()
            )));
        }
        let mut pred = 0;
        for (c, &s) in row.iter().enumerate() {
            if s > row[pred] {
                pred = c;
            }
        }
        confusion[label][pred] += 1;
    }
    let total: usize = confusion.iter().map(|r| r.iter().sum::<usize>()).sum();
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let per_class = (0..num_classes)
        .map(|c| {
            let row_total: usize = confusion[c].iter().sum();
            if row_total == 0 { 0.0 } else { confusion[c][c] as f64 / row_total as f64 }
        })
        .collect();
    Ok(ProbeResult {
        confusion,
        per_class,
        overall: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyUnionPolicy {
    /// A part absent from both ground truth and prediction scores IoU 1.
    CountAsOne,
    /// Average only over parts occurring in ground truth or prediction.
    SkipAbsent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegResult {
    pub shape_ious: Vec<f64>,
    /// Indexed by category; NaN-free (categories with no shapes are skipped).
    pub category_ious: Vec<(usize, f64)>,
    pub mean_iou: f64,
}

/// Part-segmentation mIoU. For each part of a shape's category,
/// IoU = |pred∩gt| / |pred∪gt|; shape IoU averages those; mIoU averages over
/// all test shapes.
pub fn miou(
    pred: &[Vec<usize>],
    gt: &[Vec<usize>],
    category: &[usize],
    parts_per_category: &[usize],
    policy: EmptyUnionPolicy,
) -> Result<SegResult> {
    if pred.len() != gt.len() || pred.len() != category.len() {
        return Err(Error::InvalidArgument(format!(
            "miou: {} pred / {} gt / {} category entries",
            pred.len(),
            gt.len(),
            category.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("miou: no shapes".into()));
    }
    let mut shape_ious = Vec::with_capacity(pred.len());
    let mut per_category: Vec<Vec<f64>> = vec![Vec::new(); parts_per_category.len()];
    for (si, ((p, g), &cat)) in pred.iter().zip(gt).zip(category).enumerate() {
        let num_parts = *parts_per_category
            .get(cat)
            .ok_or_else(|| Error::InvalidArgument(format!("miou: unknown category {cat}")))?;
        if p.len() != g.len() {
            return Err(Error::InvalidArgument(format!(
                "miou: shape {si} has {} predictions vs {} labels",
                p.len(),
                g.len()
            )));
        }
        let mut part_ious = Vec::with_capacity(num_parts);
        for part in 0..num_parts {
            let mut inter = 0usize;
            let mut union = 0usize;
            for (&pl, &gl) in p.iter().zip(g) {
                let in_p = pl == part;
                let in_g = gl == part;
                if in_p && in_g {
                    inter += 1;
                }
                if in_p || in_g {
                    union += 1;
                }
            }
            if union == 0 {
                if policy == EmptyUnionPolicy::CountAsOne {
                    part_ious.push(1.0);
                }
            } else {
                part_ious.push(inter as f64 / union as f64);
            }
        }
        // SkipAbsent can leave no parts at all; treat that as a perfect shape
        let shape_iou = if part_ious.is_empty() {
            1.0
        } else {
            part_ious.iter().sum::<f64>() / part_ious.len() as f64
        };
        shape_ious.push(shape_iou);
        per_category[cat].push(shape_iou);
    }
    let category_ious = per_category
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(c, v)| (c, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let mean_iou = shape_ious.iter().sum::<f64>() / shape_ious.len() as f64;
    Ok(SegResult { shape_ious, category_ious, mean_iou })
}

fn assert_frozen<F: Scalar>(model: &GraphTerModel<F>, before: &str, what: &str) -> Result<()> {
    let after = encoder_checksum(model);
    if after != before {
        return Err(Error::InvalidArgument(format!(
            "{what}: encoder weights changed during probe training"
        )));
    }
    Ok(())
}

/// Precompute eval-mode features for a list of cloud indices.
fn features_for<F: Scalar>(
    model: &mut GraphTerModel<F>,
    data: &Dataset<F>,
    indices: &[usize],
) -> Result<Vec<Tensor<F>>> {
    indices.iter().map(|&i| extract_features(model, &data.clouds[i])).collect()
}

fn labels_for<F: Scalar>(data: &Dataset<F>, indices: &[usize]) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&i| {
            data.clouds[i]
                .class_label
                .ok_or_else(|| Error::InvalidArgument(format!("cloud {i} has no class label")))
        })
        .collect()
}

/// Train a classification head on frozen encoder features and evaluate it on
/// the test split. The encoder is checksum-asserted unchanged.
pub fn train_classify_probe<F: Scalar>(
    model: &mut GraphTerModel<F>,
    data: &Dataset<F>,
    config: &RunConfig,
    linear_probe: bool,
) -> Result<(ClassifyHead<F>, ProbeResult)> {
    let before = encoder_checksum(model);
    let train_idx = data.split_indices(Split::Train);
    let test_idx = data.split_indices(Split::Test);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidArgument("probe: empty train or test split".into()));
    }
    let num_classes = data.num_classes();
    let feat_width = model.arch.feature_width();
    let train_feats = features_for(model, data, &train_idx)?;
    let train_labels = labels_for(data, &train_idx)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x70b3));
    let mut head = ClassifyHead::<F>::new(feat_width, num_classes, linear_probe, &mut rng);
    let mut state = SgdState::new(&head.store, config.probe_lr, MOMENTUM, 0.0);
    let batch = config.batch_size.max(1);
    for _epoch in 0..config.probe_epochs {
        let mut order: Vec<usize> = (0..train_feats.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch) {
            let mut tape = Tape::new();
            let mut score_rows = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &si in chunk {
                let f = tape.constant(train_feats[si].clone());
                score_rows.push(head.forward(&mut tape, f, true, &mut rng)?);
                labels.push(train_labels[si]);
            }
            let scores = if score_rows.len() == 1 {
                score_rows[0]
            } else {
                tape.concat(&score_rows, 0)?
            };
            let logp = tape.log_softmax(scores, 1)?;
            let loss = tape.nll_loss(logp, &labels)?;
            head.store.clear_grads();
            tape.backward(loss)?;
            tape.write_param_grads(&mut head.store);
            sgd_step(&mut head.store, &mut state)?;
        }
    }
    assert_frozen(model, &before, "train_classify_probe")?;

    let result = eval_classify_probe(model, &head, data, &test_idx)?;
    assert_frozen(model, &before, "train_classify_probe")?;
    Ok((head, result))
}

/// Eval-mode accuracy of a classification head on the given cloud indices.
pub fn eval_classify_probe<F: Scalar>(
    model: &mut GraphTerModel<F>,
    head: &ClassifyHead<F>,
    data: &Dataset<F>,
    indices: &[usize],
) -> Result<ProbeResult> {
    let num_classes = data.num_classes();
    let labels = labels_for(data, indices)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in eval mode
    let mut score_rows = Vec::with_capacity(indices.len());
    for &i in indices {
        let feats = extract_features(model, &data.clouds[i])?;
        let mut tape = Tape::new();
        let f = tape.constant(feats);
        let s = head.forward(&mut tape, f, false, &mut rng)?;
        score_rows.push(tape.values(s).iter().map(|v| v.as_f64()).collect());
    }
    accuracy(&score_rows, &labels, num_classes)
}

/// Train a segmentation head on frozen encoder features and evaluate mIoU on
/// the test split. The head is shared across categories and sized to the
/// largest part count; predictions are restricted to each shape's own parts.
pub fn train_segment_probe<F: Scalar>(
    model: &mut GraphTerModel<F>,
    data: &Dataset<F>,
    config: &RunConfig,
    parts_per_category: &[usize],
) -> Result<(SegmentHead<F>, SegResult)> {
    let before = encoder_checksum(model);
    let train_idx = data.split_indices(Split::Train);
    let test_idx = data.split_indices(Split::Test);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidArgument("probe: empty train or test split".into()));
    }
    let max_parts = *parts_per_category
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidArgument("probe: no categories".into()))?;
    let feat_width = model.arch.feature_width();
    let train_feats = features_for(model, data, &train_idx)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5e6));
    let mut head = SegmentHead::<F>::new(feat_width, max_parts, &mut rng);
    let mut state = SgdState::new(&head.store, config.probe_lr, MOMENTUM, 0.0);
    for _epoch in 0..config.probe_epochs {
        let mut order: Vec<usize> = (0..train_feats.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for &si in &order {
            let cloud = &data.clouds[train_idx[si]];
            let labels = cloud.part_labels.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("cloud '{}' has no part labels", cloud.id))
            })?;
            let mut tape = Tape::new();
            let f = tape.constant(train_feats[si].clone());
            let scores = head.forward(&mut tape, f)?;
            let logp = tape.log_softmax(scores, 1)?;
            let loss = tape.nll_loss(logp, labels)?;
            head.store.clear_grads();
            tape.backward(loss)?;
            tape.write_param_grads(&mut head.store);
            sgd_step(&mut head.store, &mut state)?;
        }
    }
    assert_frozen(model, &before, "train_segment_probe")?;

    let result =
        eval_segment_probe(model, &head, data, &test_idx, parts_per_category)?;
    assert_frozen(model, &before, "train_segment_probe")?;
    Ok((head, result))
}

/// Eval-mode mIoU of a segmentation head; each node's prediction is the
/// argmax over its shape's category parts only.
pub fn eval_segment_probe<F: Scalar>(
    model: &mut GraphTerModel<F>,
    head: &SegmentHead<F>,
    data: &Dataset<F>,
    indices: &[usize],
    parts_per_category: &[usize],
) -> Result<SegResult> {
    let mut preds = Vec::with_capacity(indices.len());
    let mut gts = Vec::with_capacity(indices.len());
    let mut categories = Vec::with_capacity(indices.len());
    for &i in indices {
        let cloud = &data.clouds[i];
        let cat = cloud
            .class_label
            .ok_or_else(|| Error::InvalidArgument(format!("cloud '{}' has no class label", cloud.id)))?;
        let num_parts = *parts_per_category
            .get(cat)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown category {cat}")))?;
        let gt = cloud
            .part_labels
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("cloud '{}' has no part labels", cloud.id)))?;
        let feats = extract_features(model, cloud)?;
        let mut tape = Tape::new();
        let f = tape.constant(feats);
        let s = head.forward(&mut tape, f)?;
        let vals = tape.values(s);
        let width = tape.shape(s)[1];
        let n = cloud.num_points();
        let mut pred = Vec::with_capacity(n);
        for node in 0..n {
            let row = &vals[node * width..node * width + num_parts];
            let mut best = 0;
            for (p, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = p;
                }
            }
            pred.push(best);
        }
        preds.push(pred);
        gts.push(gt);
        categories.push(cat);
    }
    miou(&preds, &gts, &categories, parts_per_category, EmptyUnionPolicy::CountAsOne)
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

use crate::transforms::{SampleMode, Strategy, TransformKind};

#[derive(Debug, Clone, PartialEq)]
pub struct AblateCell {
    pub kind: TransformKind,
    pub strategy: Strategy,
    pub mode: SampleMode,
    /// Percent of nodes sampled, e.g. 25 for rate 0.25.
    pub rate_percent: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateRow {
    pub cell: AblateCell,
    pub metric: String,
    /// NaN marks a failed cell; serialized as "failed".
    pub value: f64,
}

/// Cross product of the requested axes, one deterministic seed per cell.
pub fn ablation_cells(
    kinds: &[TransformKind],
    strategies: &[Strategy],
    modes: &[SampleMode],
    rate_percents: &[u32],
    master_seed: u64,
) -> Vec<AblateCell> {
    let mut cells = Vec::new();
    let mut index = 0u64;
    for &kind in kinds {
        for &mode in modes {
            for &strategy in strategies {
                for &rate_percent in rate_percents {
                    let seed = master_seed
                        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                        .wrapping_add(index.wrapping_mul(0xa24b_aed4_963e_e407));
                    cells.push(AblateCell { kind, strategy, mode, rate_percent, seed });
                    index += 1;
                }
            }
        }
    }
    cells
}

/// Pretrain + classify-probe for one grid cell; the metric is test accuracy.
pub fn run_ablate_cell<F: Scalar>(template: &RunConfig, cell: &AblateCell) -> Result<f64> {
    let config = RunConfig {
        kind: cell.kind,
        strategy: cell.strategy,
        mode: cell.mode,
        rate: cell.rate_percent as f64 / 100.0,
        seed: cell.seed,
        ..template.clone()
    };
    config.validate()?;
    let data = crate::data::make_dataset::<F>(&config.dataset_config())?;
    let train_clouds: Vec<_> =
        data.split_indices(Split::Train).into_iter().map(|i| data.clouds[i].clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = GraphTerModel::<F>::new(config.kind, config.arch_config(), &mut rng);
    crate::training::pretrain(&config, &train_clouds, &mut model)?;
    let (_, result) = train_classify_probe(&mut model, &data, &config, false)?;
    Ok(result.overall)
}

/// Run every cell; failed cells are kept in the table with value "failed".
pub fn ablation_grid<F: Scalar>(template: &RunConfig, cells: &[AblateCell]) -> Vec<AblateRow> {
    cells
        .iter()
        .map(|cell| AblateRow {
            cell: cell.clone(),
            metric: "accuracy".to_string(),
            value: run_ablate_cell::<F>(template, cell).unwrap_or(f64::NAN),
        })
        .collect()
}

pub fn results_csv(rows: &[AblateRow]) -> String {
    let mut out = String::from("kind,strategy,mode,rate,seed,metric,value\n");
    for row in rows {
        let value =
            if row.value.is_nan() { "failed".to_string() } else { format!("{}", row.value) };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.cell.kind, row.cell.strategy, row.cell.mode, row.cell.rate_percent, row.cell.seed,
            row.metric, value
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;
    use std::collections::HashSet;

    #[test]
    fn accuracy_all_correct_and_three_of_four() {
        let scores = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 1.0],
            vec![0.5, 0.4],
        ];
        let r = accuracy(&scores, &[0, 1, 0, 0], 2).unwrap();
        assert_eq!(r.overall, 1.0);
        let r = accuracy(&scores, &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(r.overall, 0.75);
        assert_eq!(r.confusion[1][0], 1);
    }

    #[test]
    fn accuracy_ties_go_to_lowest_class() {
        let r = accuracy(&[vec![0.5, 0.5, 0.5]], &[0], 3).unwrap();
        assert_eq!(r.overall, 1.0);
        let r = accuracy(&[vec![0.5, 0.5, 0.5]], &[2], 3).unwrap();
        assert_eq!(r.overall, 0.0);
    }

    #[test]
    fn accuracy_label_out_of_range_is_error() {
        assert!(accuracy(&[vec![1.0, 0.0]], &[2], 2).is_err());
    }

    #[test]
    fn accuracy_random_scores_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 10_000;
        let scores: Vec<Vec<f64>> =
            (0..n).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let r = accuracy(&scores, &labels, 4).unwrap();
        // 3σ for Binomial(10⁴, 0.25)
        let sigma = (0.25 * 0.75 / n as f64).sqrt();
        assert!((r.overall - 0.25).abs() < 3.0 * sigma, "accuracy {}", r.overall);
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<Vec<f64>> =
            (0..50).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..50).map(|_| rng.gen_range(0..3)).collect();
        let base = accuracy(&scores, &labels, 3).unwrap();
        let mut perm: Vec<usize> = (0..50).collect();
        for i in (1..50).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let pscores: Vec<Vec<f64>> = perm.iter().map(|&i| scores[i].clone()).collect();
        let plabels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let permuted = accuracy(&pscores, &plabels, 3).unwrap();
        assert_eq!(base.overall, permuted.overall);
    }

    #[test]
    fn miou_perfect_prediction_is_one() {
        let labels = vec![vec![0, 1, 2, 0, 1, 2]];
        let r = miou(&labels, &labels, &[0], &[3], EmptyUnionPolicy::CountAsOne).unwrap();
        assert_eq!(r.mean_iou, 1.0);
        assert_eq!(r.shape_ious, vec![1.0]);
    }

    #[test]
    fn miou_hand_case() {
        let gt = vec![vec![0, 0, 0, 0, 1, 1, 1, 1]];
        let pred = vec![vec![0, 0, 0, 1, 1, 1, 1, 1]];
        let r = miou(&pred, &gt, &[0], &[2], EmptyUnionPolicy::CountAsOne).unwrap();
        assert_eq!(r.mean_iou, 0.775);
    }

    #[test]
    fn miou_empty_union_part_counts_as_one() {
        // category has 3 parts; part 2 appears nowhere
        let gt = vec![vec![0, 0, 1, 1]];
        let pred = vec![vec![0, 0, 1, 1]];
        let one = miou(&pred, &gt, &[0], &[3], EmptyUnionPolicy::CountAsOne).unwrap();
        assert_eq!(one.mean_iou, 1.0);
        let skip = miou(&pred, &gt, &[0], &[3], EmptyUnionPolicy::SkipAbsent).unwrap();
        assert_eq!(skip.mean_iou, 1.0);
        // imperfect on present parts: skipping the absent part changes the mean
        let pred = vec![vec![0, 1, 1, 1]];
        let one = miou(&pred, &gt, &[0], &[3], EmptyUnionPolicy::CountAsOne).unwrap();
        let skip = miou(&pred, &gt, &[0], &[3], EmptyUnionPolicy::SkipAbsent).unwrap();
        assert!(one.mean_iou > skip.mean_iou);
    }

    #[test]
    fn miou_unknown_category_is_error() {
        assert!(miou(&[vec![0]], &[vec![0]], &[5], &[2], EmptyUnionPolicy::CountAsOne).is_err());
    }

    /// Independent oracle: sets of node indices per part, counted with HashSet.
    fn set_count_oracle(pred: &[usize], gt: &[usize], num_parts: usize) -> f64 {
        let mut ious = Vec::new();
        for part in 0..num_parts {
            let ps: HashSet<usize> =
                pred.iter().enumerate().filter(|(_, &l)| l == part).map(|(i, _)| i).collect();
            let gs: HashSet<usize> =
                gt.iter().enumerate().filter(|(_, &l)| l == part).map(|(i, _)| i).collect();
            let union = ps.union(&gs).count();
            if union == 0 {
                ious.push(1.0);
            } else {
                ious.push(ps.intersection(&gs).count() as f64 / union as f64);
            }
        }
        ious.iter().sum::<f64>() / ious.len() as f64
    }

    #[test]
    fn miou_matches_set_count_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=16);
            let parts = rng.gen_range(1..=3usize);
            let gt: Vec<usize> = (0..n).map(|_| rng.gen_range(0..parts)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..parts)).collect();
            let expect = set_count_oracle(&pred, &gt, parts);
            let r = miou(
                &[pred],
                &[gt],
                &[0],
                &[parts],
                EmptyUnionPolicy::CountAsOne,
            )
            .unwrap();
            assert!((r.mean_iou - expect).abs() < 1e-12);
        }
    }

    fn tiny_dataset(seed: u64) -> Dataset<f32> {
        crate::data::make_dataset(&crate::data::DatasetConfig {
            classes: crate::data::ShapeKind::ALL.to_vec(),
            per_class: 4,
            n_points: 32,
            noise_sigma: 0.01,
            split_fraction: 0.75,
            seed,
        })
        .unwrap()
    }

    fn tiny_probe_config() -> RunConfig {
        RunConfig {
            data_per_class: 4,
            data_points: 32,
            k: 4,
            probe_epochs: 2,
            epochs: 1,
            ..Default::default()
        }
    }

    #[test]
    fn classify_probe_leaves_encoder_frozen() {
        let data = tiny_dataset(0);
        let config = tiny_probe_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = GraphTerModel::<f32>::new(
            TransformKind::Shearing,
            ArchConfig::desk(4, false),
            &mut rng,
        );
        let before = encoder_checksum(&model);
        train_classify_probe(&mut model, &data, &config, false).unwrap();
        assert_eq!(encoder_checksum(&model), before);
    }

    #[test]
    fn zero_probe_epochs_head_is_untrained_and_frozen() {
        let data = tiny_dataset(0);
        let config = RunConfig { probe_epochs: 0, ..tiny_probe_config() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = GraphTerModel::<f32>::new(
            TransformKind::Shearing,
            ArchConfig::desk(4, false),
            &mut rng,
        );
        let (head, _) = train_classify_probe(&mut model, &data, &config, false).unwrap();
        // head equals its initialization: rebuild with the same derived seed
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x70b3));
        let fresh = ClassifyHead::<f32>::new(
            model.arch.feature_width(),
            data.num_classes(),
            false,
            &mut rng,
        );
        for (a, b) in head.store.iter().zip(fresh.store.iter()) {
            assert_eq!(a.1.values(), b.1.values());
        }
    }

    #[test]
    fn probe_on_separable_features_reaches_full_accuracy() {
        // labels are a deterministic linear function of the pooled features:
        // use the raw coordinates as "features" via an identity-free path by
        // training the head directly on constructed per-class patterns.
        let num_classes = 3;
        let feat_width = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut head = ClassifyHead::<f64>::new(feat_width, num_classes, true, &mut rng);
        let mut state = SgdState::new(&head.store, 0.5, 0.0, 0.0);
        let make_feats = |class: usize| {
            let mut t = Tensor::<f64>::zeros(vec![5, feat_width]);
            for r in 0..5 {
                t.values_mut()[r * feat_width + class] = 1.0;
            }
            t
        };
        for _ in 0..200 {
            for class in 0..num_classes {
                let mut tape = Tape::new();
                let f = tape.constant(make_feats(class));
                let s = head.forward(&mut tape, f, true, &mut rng).unwrap();
                let logp = tape.log_softmax(s, 1).unwrap();
                let loss = tape.nll_loss(logp, &[class]).unwrap();
                head.store.clear_grads();
                tape.backward(loss).unwrap();
                tape.write_param_grads(&mut head.store);
                sgd_step(&mut head.store, &mut state).unwrap();
            }
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..num_classes {
            let mut tape = Tape::new();
            let f = tape.constant(make_feats(class));
            let s = head.forward(&mut tape, f, false, &mut rng).unwrap();
            rows.push(tape.values(s).to_vec());
            labels.push(class);
        }
        let r = accuracy(&rows, &labels, num_classes).unwrap();
        assert_eq!(r.overall, 1.0);
    }

    #[test]
    fn segment_probe_runs_and_reports_valid_ious() {
        let data = tiny_dataset(1);
        let config = tiny_probe_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = GraphTerModel::<f32>::new(
            TransformKind::Shearing,
            ArchConfig::desk(4, false),
            &mut rng,
        );
        let parts: Vec<usize> =
            crate::data::ShapeKind::ALL.iter().map(|k| k.num_parts()).collect();
        let before = encoder_checksum(&model);
        let (_, result) = train_segment_probe(&mut model, &data, &config, &parts).unwrap();
        assert_eq!(encoder_checksum(&model), before);
        assert!(result.mean_iou >= 0.0 && result.mean_iou <= 1.0);
        for &iou in &result.shape_ious {
            assert!((0.0..=1.0).contains(&iou));
        }
    }

    #[test]
    fn grid_has_cross_product_rows_and_deterministic_seeds() {
        let kinds = TransformKind::ALL;
        let cells = ablation_cells(
            &kinds,
            &[Strategy::Isotropic, Strategy::Anisotropic],
            &[SampleMode::Global, SampleMode::Local],
            &[25],
            7,
        );
        assert_eq!(cells.len(), 12);
        let again = ablation_cells(
            &kinds,
            &[Strategy::Isotropic, Strategy::Anisotropic],
            &[SampleMode::Global, SampleMode::Local],
            &[25],
            7,
        );
        assert_eq!(cells, again);
        let seeds: HashSet<u64> = cells.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 12);
    }

    #[test]
    fn rate_axis_shapes_table_three() {
        let cells = ablation_cells(
            &[TransformKind::Shearing],
            &[Strategy::Isotropic, Strategy::Anisotropic],
            &[SampleMode::Global, SampleMode::Local],
            &[25, 50, 75, 100],
            0,
        );
        assert_eq!(cells.len(), 16);
        let rows: Vec<AblateRow> = cells
            .iter()
            .map(|c| AblateRow { cell: c.clone(), metric: "accuracy".into(), value: 0.5 })
            .collect();
        let csv = results_csv(&rows);
        assert!(csv.starts_with("kind,strategy,mode,rate,seed,metric,value\n"));
        assert_eq!(csv.lines().count(), 17);
    }

    #[test]
    fn failed_cell_is_marked() {
        let row = AblateRow {
            cell: AblateCell {
                kind: TransformKind::Translation,
                strategy: Strategy::Isotropic,
                mode: SampleMode::Global,
                rate_percent: 25,
                seed: 1,
            },
            metric: "accuracy".into(),
            value: f64::NAN,
        };
        assert!(results_csv(&[row]).contains(",failed\n"));
    }
}
