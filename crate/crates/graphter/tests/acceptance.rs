//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use graphter::config::RunConfig;
use graphter::data::{
    load_cloud, make_dataset, save_cloud, CloudFormat, DatasetConfig, PointCloud, ShapeKind, Split,
};
use graphter::eval::{
    ablation_cells, ablation_grid, miou, results_csv, train_classify_probe, EmptyUnionPolicy,
};
use graphter::gradcheck::{gradcheck, registered_ops};
use graphter::graph::knn_graph;
use graphter::model::{ArchConfig, GraphTerModel};
use graphter::tape::Tape;
use graphter::tensor::Tensor;
use graphter::training::{cosine_lr, pretrain, sgd_step, SgdState};
use graphter::transforms::{
    apply_transform, rotation_matrix, sample_subset, sample_transform, NodeTransform, SampleMask,
    SampleMode, Strategy, TransformKind, ROTATION_RANGE_RAD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::time::Instant;

fn criterion(n: usize, name: &str, f: impl FnOnce() -> Result<String, String>) {
    match f() {
        Ok(detail) => println!("ACCEPTANCE {n} [{name}]: PASS ({detail})"),
        Err(m) => {
            println!("ACCEPTANCE {n} [{name}]: FAIL — {m}");
            panic!("criterion {n} ({name}) failed: {m}");
        }
    }
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_oracle() {
    criterion(1, "gradient oracle", || {
        let start = Instant::now();
        let mut worst_op = 0.0f64;
        for op in registered_ops() {
            let r = gradcheck(op, 5, 1e-4).map_err(|e| e.to_string())?;
            let max = r.per_trial_max_rel_err.iter().cloned().fold(0.0f64, f64::max);
            worst_op = worst_op.max(max);
            check(r.pass, format!("op '{op}' rel err {max:.3e} ≥ 1e-4"))?;
        }

        // end-to-end: full pretext loss on a 6-node, k=2 toy in f64
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(0xE2E);
        let coords: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cloud = PointCloud { coords, part_labels: None, class_label: None, id: "toy".into() };
        let mask = sample_subset(&cloud, SampleMode::Global, 0.5, &mut rng).unwrap();
        let transform =
            sample_transform::<f64>(TransformKind::Shearing, Strategy::Anisotropic, mask, &mut rng);
        let transformed = apply_transform(&cloud, &transform).unwrap();
        let g_orig = knn_graph(&cloud.coords, n, 3, 2).unwrap();
        let g_trans = knn_graph(&transformed.coords, n, 3, 2).unwrap();
        let orig_t = Tensor::new(vec![n, 3], cloud.coords.clone()).unwrap();
        let trans_t = Tensor::new(vec![n, 3], transformed.coords.clone()).unwrap();
        let (targets, row_mask) = graphter::transforms::target_params(&transform, n);

        let mut model = GraphTerModel::<f64>::new(
            TransformKind::Shearing,
            ArchConfig::desk(2, false),
            &mut rng,
        );
        let mut loss_of = |model: &mut GraphTerModel<f64>| -> f64 {
            let mut tape = Tape::new();
            let pred = model
                .forward_pretrain(&mut tape, &orig_t, &trans_t, &g_orig, &g_trans, true)
                .unwrap();
            let loss = model.transformation_loss(&mut tape, pred, &targets, &row_mask).unwrap();
            tape.values(loss)[0]
        };

        // analytic gradients for every parameter
        let mut tape = Tape::new();
        let pred = model
            .forward_pretrain(&mut tape, &orig_t, &trans_t, &g_orig, &g_trans, true)
            .unwrap();
        let loss = model.transformation_loss(&mut tape, pred, &targets, &row_mask).unwrap();
        model.store.clear_grads();
        tape.backward(loss).unwrap();
        tape.write_param_grads(&mut model.store);
        let ids: Vec<_> = model.store.ids().collect();
        let grads: Vec<Vec<f64>> =
            ids.iter().map(|&id| model.store.grad(id).unwrap().to_vec()).collect();

        // finite differences on a spread of coordinates across every tensor
        let h = 1e-6;
        let mut worst_e2e = 0.0f64;
        for (pi, &id) in ids.iter().enumerate() {
            let numel = model.store.tensor(id).numel();
            for &idx in &[0, numel / 3, numel - 1] {
                let orig = model.store.tensor(id).values()[idx];
                model.store.tensor_mut(id).values_mut()[idx] = orig + h;
                let up = loss_of(&mut model);
                model.store.tensor_mut(id).values_mut()[idx] = orig - h;
                let down = loss_of(&mut model);
                model.store.tensor_mut(id).values_mut()[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = grads[pi][idx];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                worst_e2e = worst_e2e.max(rel);
                check(
                    rel < 1e-3,
                    format!("end-to-end param {pi} idx {idx}: rel err {rel:.3e} ≥ 1e-3"),
                )?;
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        check(elapsed < 60.0, format!("runtime {elapsed:.1}s ≥ 60s"))?;
        Ok(format!(
            "ops worst {worst_op:.2e}, end-to-end worst {worst_e2e:.2e}, {elapsed:.1}s"
        ))
    });
}

// ---------------------------------------------------------------------------
// 2. kNN oracle
// ---------------------------------------------------------------------------

fn brute_force_knn(points: &[f64], n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = (0..3)
                        .map(|d| (points[i * 3 + d] - points[j * 3 + d]).powi(2))
                        .sum();
                    (d, j)
                })
                .collect();
            others.sort_by(|a, b| a.partial_cmp(b).unwrap());
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

#[test]
fn criterion_2_knn_oracle() {
    criterion(2, "kNN oracle", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
        for trial in 0..200 {
            let k = [1usize, 5, 20][trial % 3];
            let n = rng.gen_range(k + 1..=256);
            let points: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = knn_graph(&points, n, 3, k).map_err(|e| e.to_string())?;
            let oracle = brute_force_knn(&points, n, k);
            for i in 0..n {
                check(
                    g.neighbors(i) == &oracle[i][..],
                    format!("trial {trial} node {i}: {:?} vs oracle {:?}", g.neighbors(i), oracle[i]),
                )?;
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        check(elapsed < 30.0, format!("runtime {elapsed:.1}s ≥ 30s"))?;
        Ok(format!("200 clouds exact, {elapsed:.1}s"))
    });
}

// ---------------------------------------------------------------------------
// 3. Transformation algebra
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_transformation_algebra() {
    criterion(3, "transformation algebra", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA3);
        // 10⁴ sampled rotations orthonormal with unit determinant
        for _ in 0..10_000 {
            let a = rng.gen_range(-ROTATION_RANGE_RAD..=ROTATION_RANGE_RAD);
            let b = rng.gen_range(-ROTATION_RANGE_RAD..=ROTATION_RANGE_RAD);
            let c = rng.gen_range(-ROTATION_RANGE_RAD..=ROTATION_RANGE_RAD);
            let r = rotation_matrix(a, b, c);
            let mut max_dev = 0.0f64;
            for i in 0..3 {
                for j in 0..3 {
                    let mut dot = 0.0;
                    for d in 0..3 {
                        dot += r[i * 3 + d] * r[j * 3 + d];
                    }
                    let target = if i == j { 1.0 } else { 0.0 };
                    max_dev = max_dev.max((dot - target).abs());
                }
            }
            check(max_dev < 1e-9, format!("‖RRᵀ−I‖∞ = {max_dev:.2e}"))?;
            let det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6])
                + r[2] * (r[3] * r[7] - r[4] * r[6]);
            check((det - 1.0).abs() < 1e-9, format!("det = {det}"))?;
        }

        // sampled parameters inside the stated ranges; iso rows identical
        let cloud = {
            let coords: Vec<f64> = (0..64 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            PointCloud { coords, part_labels: None, class_label: None, id: "c".into() }
        };
        for kind in TransformKind::ALL {
            for strategy in [Strategy::Isotropic, Strategy::Anisotropic] {
                for _ in 0..50 {
                    let mask = sample_subset(&cloud, SampleMode::Global, 0.5, &mut rng).unwrap();
                    let t = sample_transform::<f64>(kind, strategy, mask, &mut rng);
                    let range = kind.param_range();
                    for &p in &t.params {
                        check(p.abs() <= range, format!("{kind} param {p} outside ±{range}"))?;
                    }
                    if strategy == Strategy::Isotropic {
                        let p = kind.param_count();
                        let first = &t.params[..p];
                        for row in t.params.chunks(p) {
                            check(row == first, "isotropic rows differ".to_string())?;
                        }
                    }
                }
            }
        }

        // zero-parameter transforms are exact identities
        for kind in TransformKind::ALL {
            let selected: Vec<usize> = (0..32).collect();
            let mask = SampleMask { selected: selected.clone(), mode: SampleMode::Global, rate: 0.5 };
            let t = NodeTransform::<f64> {
                kind,
                strategy: Strategy::Anisotropic,
                params: vec![0.0; selected.len() * kind.param_count()],
                mask,
            };
            let out = apply_transform(&cloud, &t).unwrap();
            check(out.coords == cloud.coords, format!("{kind}: zero params not identity"))?;
        }
        Ok("10⁴ rotations orthonormal; ranges, iso rows, zero-identity hold".into())
    });
}

// ---------------------------------------------------------------------------
// 4. Masked MSE semantics
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_masked_mse() {
    criterion(4, "masked MSE semantics", || {
        // perfect prediction → exactly zero
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap());
        let t = tape.constant(Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap());
        let loss = tape.masked_mse(p, t, &[true, true]).unwrap();
        check(tape.values(loss)[0] == 0.0, "perfect prediction loss not zero")?;

        // single node, prediction 0.3 vs target 0.1 → 0.04
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::new(vec![1, 1], vec![0.3]).unwrap());
        let t = tape.constant(Tensor::new(vec![1, 1], vec![0.1]).unwrap());
        let loss = tape.masked_mse(p, t, &[true]).unwrap();
        let v = tape.values(loss)[0];
        check((v - 0.04).abs() < 1e-15, format!("single-node case loss {v} ≠ 0.04"))?;

        // unmasked rows are ignored entirely
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::new(vec![2, 1], vec![0.3, 123.0]).unwrap());
        let t = tape.constant(Tensor::new(vec![2, 1], vec![0.1, -55.0]).unwrap());
        let loss = tape.masked_mse(p, t, &[true, false]).unwrap();
        check(
            (tape.values(loss)[0] - v).abs() == 0.0,
            "garbage in unmasked rows changed the loss",
        )?;
        Ok("zero / 0.04 / unmasked-ignored cases exact".into())
    });
}

// ---------------------------------------------------------------------------
// 5. Training sanity (desk-scale budget and loss decrease)
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_training_sanity() {
    criterion(5, "training sanity", || {
        let config = RunConfig::default(); // 64 clouds × 256 pts, 30 epochs
        let data = make_dataset::<f32>(&config.dataset_config()).unwrap();
        let train: Vec<_> =
            data.split_indices(Split::Train).into_iter().map(|i| data.clouds[i].clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = GraphTerModel::<f32>::new(config.kind, config.arch_config(), &mut rng);
        let start = Instant::now();
        let metrics = pretrain(&config, &train, &mut model).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed().as_secs_f64();
        let first = metrics.first().unwrap().mean_loss;
        let last = metrics.last().unwrap().mean_loss;
        check(elapsed < 900.0, format!("pretraining took {elapsed:.0}s ≥ 900s"))?;
        check(
            last < 0.5 * first,
            format!("final loss {last:.4} not < 0.5 × first {first:.4}"),
        )?;
        Ok(format!("{elapsed:.0}s, loss {first:.4} → {last:.4}"))
    });
}

// ---------------------------------------------------------------------------
// 6. Representation quality (pretrained ≥ random probe)
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_representation_quality() {
    criterion(6, "representation quality", || {
        let mut gaps = Vec::new();
        let mut pairs = Vec::new();
        for seed in 0..3u64 {
            let config = RunConfig {
                seed,
                epochs: 10,
                data_per_class: 8,
                data_points: 128,
                probe_epochs: 60,
                ..Default::default()
            };
            let data = make_dataset::<f32>(&config.dataset_config()).unwrap();
            let train: Vec<_> = data
                .split_indices(Split::Train)
                .into_iter()
                .map(|i| data.clouds[i].clone())
                .collect();

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pretrained =
                GraphTerModel::<f32>::new(config.kind, config.arch_config(), &mut rng);
            pretrain(&config, &train, &mut pretrained).map_err(|e| e.to_string())?;

            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
            let mut random =
                GraphTerModel::<f32>::new(config.kind, config.arch_config(), &mut rng);

            let (_, pr) = train_classify_probe(&mut pretrained, &data, &config, true)
                .map_err(|e| e.to_string())?;
            let (_, rr) = train_classify_probe(&mut random, &data, &config, true)
                .map_err(|e| e.to_string())?;
            gaps.push(pr.overall - rr.overall);
            pairs.push(format!("seed {seed}: {:.3} vs {:.3}", pr.overall, rr.overall));
        }
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        check(
            mean_gap > 0.0,
            format!("mean pretrained-vs-random gap {mean_gap:.4} not positive ({})", pairs.join("; ")),
        )?;
        Ok(format!("mean gap +{mean_gap:.3} ({})", pairs.join("; ")))
    });
}

// ---------------------------------------------------------------------------
// 7. mIoU oracle
// ---------------------------------------------------------------------------

fn set_count_oracle(pred: &[usize], gt: &[usize], num_parts: usize) -> f64 {
    let mut ious = Vec::new();
    for part in 0..num_parts {
        let ps: HashSet<usize> =
            pred.iter().enumerate().filter(|(_, &l)| l == part).map(|(i, _)| i).collect();
        let gs: HashSet<usize> =
            gt.iter().enumerate().filter(|(_, &l)| l == part).map(|(i, _)| i).collect();
        let union = ps.union(&gs).count();
        ious.push(if union == 0 {
            1.0
        } else {
            ps.intersection(&gs).count() as f64 / union as f64
        });
    }
    ious.iter().sum::<f64>() / ious.len() as f64
}

#[test]
fn criterion_7_miou_oracle() {
    criterion(7, "mIoU oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x107);
        for trial in 0..1000 {
            let n = rng.gen_range(1..=16);
            let parts = rng.gen_range(1..=3usize);
            let gt: Vec<usize> = (0..n).map(|_| rng.gen_range(0..parts)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..parts)).collect();
            let expect = set_count_oracle(&pred, &gt, parts);
            let r = miou(&[pred], &[gt], &[0], &[parts], EmptyUnionPolicy::CountAsOne)
                .map_err(|e| e.to_string())?;
            check(
                (r.mean_iou - expect).abs() < 1e-12,
                format!("trial {trial}: {} vs oracle {expect}", r.mean_iou),
            )?;
        }
        let gt = vec![vec![0, 0, 0, 0, 1, 1, 1, 1]];
        let pred = vec![vec![0, 0, 0, 1, 1, 1, 1, 1]];
        let r = miou(&pred, &gt, &[0], &[2], EmptyUnionPolicy::CountAsOne).unwrap();
        check(r.mean_iou == 0.775, format!("hand case: {} ≠ 0.775", r.mean_iou))?;
        Ok("1000 random instances + hand case 0.775 exact".into())
    });
}

// ---------------------------------------------------------------------------
// 8. Ablation harness
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_ablation_harness() {
    criterion(8, "ablation harness", || {
        let micro = RunConfig {
            epochs: 1,
            data_per_class: 2,
            data_points: 24,
            data_split: 0.5,
            k: 4,
            probe_epochs: 1,
            ..Default::default()
        };
        let strategies = [Strategy::Isotropic, Strategy::Anisotropic];
        let modes = [SampleMode::Global, SampleMode::Local];

        // Table 2 structure: 3 kinds × {global,local} × {iso,aniso}
        let cells2 = ablation_cells(&TransformKind::ALL, &strategies, &modes, &[25], micro.seed);
        check(cells2.len() == 12, format!("Table-2 grid has {} cells ≠ 12", cells2.len()))?;
        let csv_a = results_csv(&ablation_grid::<f32>(&micro, &cells2));
        let csv_b = results_csv(&ablation_grid::<f32>(&micro, &cells2));
        check(csv_a == csv_b, "repeated Table-2 run not byte-identical")?;
        check(csv_a.lines().count() == 13, "Table-2 CSV row count wrong")?;
        check(
            csv_a.lines().next() == Some("kind,strategy,mode,rate,seed,metric,value"),
            "CSV header wrong",
        )?;
        for kind in TransformKind::ALL {
            let rows = csv_a.lines().filter(|l| l.starts_with(&format!("{kind},"))).count();
            check(rows == 4, format!("{kind} has {rows} rows ≠ 4"))?;
        }

        // Table 3 structure: rates 25/50/75/100% × (strategy × mode)
        let cells3 = ablation_cells(
            &[TransformKind::Shearing],
            &strategies,
            &modes,
            &[25, 50, 75, 100],
            micro.seed,
        );
        check(cells3.len() == 16, format!("Table-3 grid has {} cells ≠ 16", cells3.len()))?;
        let csv_c = results_csv(&ablation_grid::<f32>(&micro, &cells3));
        let csv_d = results_csv(&ablation_grid::<f32>(&micro, &cells3));
        check(csv_c == csv_d, "repeated Table-3 run not byte-identical")?;
        for rate in [25, 50, 75, 100] {
            let rows = csv_c.lines().filter(|l| l.contains(&format!(",{rate},"))).count();
            check(rows == 4, format!("rate {rate}% has {rows} rows ≠ 4"))?;
        }
        check(!csv_a.contains("failed") && !csv_c.contains("failed"), "grid contains failed cells")?;
        Ok("Table-2 (12 rows) and Table-3 (16 rows) grids deterministic".into())
    });
}

// ---------------------------------------------------------------------------
// 9. Schedule / optimizer exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_schedule_optimizer_exactness() {
    criterion(9, "schedule/optimizer exactness", || {
        let lr_max = 0.05;
        let lr_min = 0.0005;
        let e0 = cosine_lr(0, 30, lr_max, lr_min).unwrap();
        let e30 = cosine_lr(30, 30, lr_max, lr_min).unwrap();
        let e15 = cosine_lr(15, 30, lr_max, lr_min).unwrap();
        check((e0 - lr_max).abs() < 1e-12, format!("cosine start {e0}"))?;
        check((e30 - lr_min).abs() < 1e-12, format!("cosine end {e30}"))?;
        let mid = (lr_max + lr_min) / 2.0;
        check((e15 - mid).abs() < 1e-12, format!("cosine midpoint {e15} ≠ {mid}"))?;

        // SGD hand arithmetic: w=1, g=2, lr=0.1 → 0.8; then momentum 0.9:
        // v=2, next g=2 → v=3.8, w = 0.8 − 0.38 = 0.42; decay-only: 1 − lr·wd·w
        let mut store = graphter::params::ParamStore::<f64>::new();
        let id = store.register("w", Tensor::scalar(1.0));
        let mut state = SgdState::new(&store, 0.1, 0.9, 0.0);
        store.accumulate_grad(id, &[2.0]);
        sgd_step(&mut store, &mut state).unwrap();
        check(store.tensor(id).values()[0] == 1.0 - 0.1 * 2.0, "first SGD step not exact")?;
        store.clear_grads();
        store.accumulate_grad(id, &[2.0]);
        sgd_step(&mut store, &mut state).unwrap();
        let expect = 0.8 - 0.1 * (0.9 * 2.0 + 2.0);
        check(store.tensor(id).values()[0] == expect, "momentum step not exact")?;

        let mut store = graphter::params::ParamStore::<f64>::new();
        let id = store.register("w", Tensor::scalar(2.0));
        let mut state = SgdState::new(&store, 0.5, 0.0, 0.1);
        store.accumulate_grad(id, &[0.0]);
        sgd_step(&mut store, &mut state).unwrap();
        check(store.tensor(id).values()[0] == 2.0 - 0.5 * 0.1 * 2.0, "decay step not exact")?;
        Ok("cosine endpoints/midpoint < 1e-12; SGD hand cases exact".into())
    });
}

// ---------------------------------------------------------------------------
// 10. Persistence
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_persistence() {
    criterion(10, "persistence", || {
        // checkpoint save → load → one more epoch reproduces in-memory bitwise
        let config = RunConfig {
            epochs: 1,
            data_per_class: 4,
            data_points: 32,
            k: 4,
            ..Default::default()
        };
        let data = make_dataset::<f32>(&config.dataset_config()).unwrap();
        let train: Vec<_> =
            data.split_indices(Split::Train).into_iter().map(|i| data.clouds[i].clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = GraphTerModel::<f32>::new(config.kind, config.arch_config(), &mut rng);
        pretrain(&config, &train, &mut model).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gter");
        graphter::checkpoint::save_model(&model, &path).map_err(|e| e.to_string())?;
        let mut loaded = graphter::checkpoint::load_model::<f32>(&path).map_err(|e| e.to_string())?;

        let resume = RunConfig { seed: 99, ..config.clone() };
        pretrain(&resume, &train, &mut model).unwrap();
        pretrain(&resume, &train, &mut loaded).unwrap();
        for (a, b) in model.store.ids().zip(loaded.store.ids()) {
            check(
                model.store.tensor(a).values() == loaded.store.tensor(b).values(),
                format!("post-resume weights differ for '{}'", model.store.name(a)),
            )?;
        }
        for ((_, ra), (_, rb)) in model.bn_states().into_iter().zip(loaded.bn_states()) {
            check(ra.mean == rb.mean && ra.var == rb.var, "post-resume BN stats differ")?;
        }

        // xyz / OFF round trips within 1e-8
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cloud = {
            let coords: Vec<f32> = (0..32 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let labels: Vec<usize> = (0..32).map(|_| rng.gen_range(0..3)).collect();
            PointCloud { coords, part_labels: Some(labels), class_label: None, id: "rt".into() }
        };
        for (format, name) in [(CloudFormat::XyzText, "rt.xyz"), (CloudFormat::Off, "rt.off")] {
            let p = dir.path().join(name);
            save_cloud(&cloud, &p, format).map_err(|e| e.to_string())?;
            let back: PointCloud<f32> = load_cloud(&p, format).map_err(|e| e.to_string())?;
            check(back.num_points() == cloud.num_points(), format!("{name}: point count"))?;
            for (a, b) in cloud.coords.iter().zip(&back.coords) {
                check((a - b).abs() < 1e-8, format!("{name}: coord {a} vs {b}"))?;
            }
            if format == CloudFormat::XyzText {
                check(back.part_labels == cloud.part_labels, "xyz: part labels lost")?;
            }
        }
        Ok("checkpoint resume bitwise; xyz/OFF round trips < 1e-8".into())
    });
}

// ---------------------------------------------------------------------------
// sanity: a dataset is available for the criteria that need one
// ---------------------------------------------------------------------------

#[test]
fn dataset_shapes_cover_all_classes() {
    let data = make_dataset::<f32>(&DatasetConfig {
        classes: ShapeKind::ALL.to_vec(),
        per_class: 2,
        n_points: 32,
        noise_sigma: 0.01,
        split_fraction: 0.5,
        seed: 0,
    })
    .unwrap();
    assert_eq!(data.clouds.len(), 8);
    assert_eq!(data.num_classes(), 4);
}
