//! Finite-difference audit of every registered op's backward rule.
//!
//! All checks run in f64 with central differences (step 1e-6). The output is
//! reduced to a scalar by projecting against a fixed random vector so one
//! backward pass covers every output element.

use crate::error::{Error, Result};
use crate::tape::{BnRunning, Tape, Var};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub op: String,
    pub tolerance: f64,
    pub per_trial_max_rel_err: Vec<f64>,
    pub pass: bool,
}

type BuildFn = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;
type ForwardFn = fn(&mut Tape<f64>, &[Var], &mut ChaCha8Rng) -> Result<Var>;

struct Case {
    name: &'static str,
    build: BuildFn,
    forward: ForwardFn,
    /// Scales the analytic gradient to fake a broken backward rule; used as a
    /// negative control in tests.
    corrupt_analytic: bool,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let numel = shape.iter().product();
    let values = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, values).unwrap()
}

/// Random values kept away from activation kinks so FD stays well-posed.
fn rand_tensor_off_kink(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let numel = shape.iter().product();
    let values = (0..numel)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, values).unwrap()
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "add",
            build: |rng| vec![rand_tensor(rng, vec![3, 4]), rand_tensor(rng, vec![3, 4])],
            forward: |tape, vars, _| tape.add(vars[0], vars[1]),
            corrupt_analytic: false,
        },
        Case {
            name: "subtract",
            build: |rng| vec![rand_tensor(rng, vec![3, 4]), rand_tensor(rng, vec![3, 4])],
            forward: |tape, vars, _| tape.subtract(vars[0], vars[1]),
            corrupt_analytic: false,
        },
        Case {
            name: "multiply",
            build: |rng| vec![rand_tensor(rng, vec![3, 4]), rand_tensor(rng, vec![3, 4])],
            forward: |tape, vars, _| tape.multiply(vars[0], vars[1]),
            corrupt_analytic: false,
        },
        Case {
            name: "matmul",
            build: |rng| vec![rand_tensor(rng, vec![3, 5]), rand_tensor(rng, vec![5, 4])],
            forward: |tape, vars, _| tape.matmul(vars[0], vars[1]),
            corrupt_analytic: false,
        },
        Case {
            name: "concat",
            build: |rng| vec![rand_tensor(rng, vec![3, 2]), rand_tensor(rng, vec![3, 4])],
            forward: |tape, vars, _| tape.concat(vars, 1),
            corrupt_analytic: false,
        },
        Case {
            name: "broadcast",
            build: |rng| vec![rand_tensor(rng, vec![1, 4])],
            forward: |tape, vars, _| tape.broadcast(vars[0], &[5, 4]),
            corrupt_analytic: false,
        },
        Case {
            name: "relu",
            build: |rng| vec![rand_tensor_off_kink(rng, vec![4, 4])],
            forward: |tape, vars, _| Ok(tape.relu(vars[0])),
            corrupt_analytic: false,
        },
        Case {
            name: "leaky_relu",
            build: |rng| vec![rand_tensor_off_kink(rng, vec![4, 4])],
            forward: |tape, vars, _| Ok(tape.leaky_relu(vars[0], 0.2)),
            corrupt_analytic: false,
        },
        Case {
            name: "max_over_axis",
            build: |rng| vec![rand_tensor(rng, vec![3, 5, 2])],
            forward: |tape, vars, _| tape.max_over_axis(vars[0], 1),
            corrupt_analytic: false,
        },
        Case {
            name: "mean_over_axis",
            build: |rng| vec![rand_tensor(rng, vec![3, 5, 2])],
            forward: |tape, vars, _| tape.mean_over_axis(vars[0], 1),
            corrupt_analytic: false,
        },
        Case {
            name: "batchnorm",
            build: |rng| {
                vec![
                    rand_tensor(rng, vec![8, 3]),
                    rand_tensor_off_kink(rng, vec![3]),
                    rand_tensor(rng, vec![3]),
                ]
            },
            forward: |tape, vars, _| {
                let mut running = BnRunning::new(3);
                tape.batchnorm(vars[0], vars[1], vars[2], &mut running, true)
            },
            corrupt_analytic: false,
        },
        Case {
            name: "dropout",
            build: |rng| vec![rand_tensor(rng, vec![6, 4])],
            forward: |tape, vars, rng| tape.dropout(vars[0], 0.4, true, rng),
            corrupt_analytic: false,
        },
        Case {
            name: "log_softmax",
            build: |rng| vec![rand_tensor(rng, vec![4, 5])],
            forward: |tape, vars, _| tape.log_softmax(vars[0], 1),
            corrupt_analytic: false,
        },
        Case {
            name: "gather_rows",
            build: |rng| vec![rand_tensor(rng, vec![6, 3])],
            forward: |tape, vars, rng| {
                let indices: Vec<usize> = (0..8).map(|_| rng.gen_range(0..6)).collect();
                tape.gather_rows(vars[0], &indices)
            },
            corrupt_analytic: false,
        },
        Case {
            name: "masked_mse",
            build: |rng| vec![rand_tensor(rng, vec![5, 3]), rand_tensor(rng, vec![5, 3])],
            forward: |tape, vars, _| {
                tape.masked_mse(vars[0], vars[1], &[true, false, true, true, false])
            },
            corrupt_analytic: false,
        },
        Case {
            name: "nll_loss",
            build: |rng| vec![rand_tensor(rng, vec![4, 3])],
            forward: |tape, vars, rng| {
                let logp = tape.log_softmax(vars[0], 1)?;
                let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
                tape.nll_loss(logp, &labels)
            },
            corrupt_analytic: false,
        },
        Case {
            name: "corrupted_relu",
            build: |rng| vec![rand_tensor_off_kink(rng, vec![4, 4])],
            forward: |tape, vars, _| Ok(tape.relu(vars[0])),
            corrupt_analytic: true,
        },
    ]
}

/// Names of ops covered by `gradcheck("all", ..)`.
pub fn registered_ops() -> Vec<&'static str> {
    cases().iter().filter(|c| !c.corrupt_analytic).map(|c| c.name).collect()
}

fn scalar_loss(
    case: &Case,
    inputs: &[Tensor<f64>],
    trial_seed: u64,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = (case.forward)(&mut tape, &vars, &mut rng)?;
    // project the output to a scalar with fixed random weights
    let numel = tape.values(out).len();
    let flat = tape.reshape(out, vec![1, numel])?;
    let w_vals: Vec<f64> = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new(vec![numel, 1], w_vals)?);
    let proj = tape.matmul(flat, w)?;
    let loss = tape.reshape(proj, vec![])?;
    let value = tape.values(loss)[0];
    tape.backward(loss)?;
    let grads = vars
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; 0]))
        .collect();
    Ok((value, Some(grads)))
}

fn loss_only(case: &Case, inputs: &[Tensor<f64>], trial_seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = (case.forward)(&mut tape, &vars, &mut rng)?;
    let numel = tape.values(out).len();
    let flat = tape.reshape(out, vec![1, numel])?;
    let w_vals: Vec<f64> = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new(vec![numel, 1], w_vals)?);
    let proj = tape.matmul(flat, w)?;
    Ok(tape.values(proj)[0])
}

pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3)
}

/// Check one registered op over `trials` random instances.
pub fn gradcheck(op_name: &str, trials: usize, tolerance: f64) -> Result<GradcheckReport> {
    let all = cases();
    let case = all
        .iter()
        .find(|c| c.name == op_name)
        .ok_or_else(|| Error::UnknownOp(op_name.to_string()))?;
    let mut per_trial = Vec::with_capacity(trials);
    for trial in 0..trials {
        let seed = 0x6774_0000 + trial as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = (case.build)(&mut rng);
        let (_, grads) = scalar_loss(case, &inputs, seed)?;
        let mut grads = grads.unwrap();
        if case.corrupt_analytic {
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= 1.05;
                }
            }
        }
        let mut max_rel: f64 = 0.0;
        for ti in 0..inputs.len() {
            for e in 0..inputs[ti].numel() {
                let orig = inputs[ti].values()[e];
                inputs[ti].values_mut()[e] = orig + FD_STEP;
                let up = loss_only(case, &inputs, seed)?;
                inputs[ti].values_mut()[e] = orig - FD_STEP;
                let down = loss_only(case, &inputs, seed)?;
                inputs[ti].values_mut()[e] = orig;
                let fd = (up - down) / (2.0 * FD_STEP);
                let analytic = if grads[ti].is_empty() { 0.0 } else { grads[ti][e] };
                max_rel = max_rel.max(relative_error(analytic, fd));
            }
        }
        per_trial.push(max_rel);
    }
    let pass = per_trial.iter().all(|&e| e < tolerance);
    Ok(GradcheckReport { op: op_name.to_string(), tolerance, per_trial_max_rel_err: per_trial, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_passes() {
        assert!(gradcheck("matmul", 10, 1e-4).unwrap().pass);
    }

    #[test]
    fn batchnorm_train_mode_passes() {
        assert!(gradcheck("batchnorm", 10, 1e-4).unwrap().pass);
    }

    #[test]
    fn corrupted_backward_fails() {
        assert!(!gradcheck("corrupted_relu", 5, 1e-4).unwrap().pass);
    }

    #[test]
    fn unknown_op_is_an_error() {
        assert!(matches!(gradcheck("nope", 1, 1e-4), Err(Error::UnknownOp(_))));
    }
}
