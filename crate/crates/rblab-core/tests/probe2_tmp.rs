use std::time::Instant;

use rblab_core::booldata::{generate, BoolDatasetConfig, FeatureKind, FeatureSpec, SplitSizes};
use rblab_core::linalg::Matrix;
use rblab_core::nn::{MlpConfig, MlpModel, Mode, Nonlinearity};
use rblab_core::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use rblab_core::rng::Rng64;

fn accuracy(model: &MlpModel, x: &Matrix, y: &Matrix) -> Vec<f64> {
    let trace = model.forward(x, Mode::Eval, None).unwrap();
    (0..y.cols())
        .map(|f| {
            (0..x.rows())
                .filter(|&i| (trace.logits.get(i, f) > 0.0) == (y.get(i, f) > 0.5))
                .count() as f64
                / x.rows() as f64
        })
        .collect()
}

fn run_case(
    n_inputs: usize,
    n_train: usize,
    batch: Option<usize>,
    max_steps: u64,
    seed: u64,
    tag: &str,
) {
    let config = BoolDatasetConfig {
        n_inputs,
        features: vec![
            FeatureSpec::linear(0, 4),
            FeatureSpec::of_kind(FeatureKind::SumMod2_4, 4),
        ],
        sizes: SplitSizes {
            train: n_train,
            validation: 512,
            test: 2048,
        },
        seed,
    };
    let data = generate(&config).unwrap();
    let mut model = MlpModel::init(MlpConfig {
        input_dim: n_inputs,
        hidden_sizes: vec![256, 128, 64, 64],
        output_dim: 2,
        nonlinearity: Nonlinearity::LeakyRelu,
        residual: false,
        dropout_rate: 0.0,
        init_scale: 1.0,
        seed: seed + 1,
    })
    .unwrap();
    let mut opt = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adam, 1e-3));
    let mut rng = Rng64::new(99);
    let t0 = Instant::now();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut offset = 0usize;
    let report = |step: u64| -> u64 {
        if batch.is_some() {
            400
        } else {
            100
        }
        .max(step / 20)
    };
    let mut next_report = 0u64;
    for step in 0..max_steps {
        let (xb, yb): (Matrix, Matrix) = match batch {
            None => (data.train.inputs.clone(), data.train.labels.clone()),
            Some(b) => {
                if offset >= n_train {
                    offset = 0;
                }
                if offset == 0 {
                    for i in (1..n_train).rev() {
                        let j = rng.below(i + 1);
                        order.swap(i, j);
                    }
                }
                let end = (offset + b).min(n_train);
                let idx = &order[offset..end];
                offset = end;
                let mut x = Matrix::zeros(idx.len(), n_inputs);
                let mut y = Matrix::zeros(idx.len(), 2);
                for (r, &i) in idx.iter().enumerate() {
                    x.row_mut(r).copy_from_slice(data.train.inputs.row(i));
                    y.row_mut(r).copy_from_slice(data.train.labels.row(i));
                }
                (x, y)
            }
        };
        let (_, grads) = model.loss_and_grads(&xb, &yb, &[1.0, 1.0], None).unwrap();
        let mut params = model.param_tensors_mut();
        opt.step(&mut params, &grads.tensors()).unwrap();
        if step >= next_report || step + 1 == max_steps {
            next_report = step + report(step);
            let acc = accuracy(&model, &data.test.inputs, &data.test.labels);
            println!(
                "{tag}: step {step} test easy {:.4} hard {:.4} ({:.0}s)",
                acc[0],
                acc[1],
                t0.elapsed().as_secs_f64()
            );
            if acc[0] >= 0.99 && acc[1] >= 0.99 {
                println!(
                    "{tag}: CONVERGED at step {step} ({:.0}s)",
                    t0.elapsed().as_secs_f64()
                );
                return;
            }
        }
    }
    println!("{tag}: NOT converged in {max_steps} steps");
}

#[test]
#[ignore]
fn probe_battery() {
    run_case(32, 16384, Some(512), 12_000, 7, "d32-n16k-b512");
    run_case(32, 4096, Some(512), 12_000, 7, "d32-n4k-b512");
    run_case(64, 32768, Some(512), 16_000, 7, "d64-n32k-b512");
    run_case(32, 4096, None, 20_000, 7, "d32-n4k-full");
}

#[test]
#[ignore]
fn probe_d64_verdict() {
    run_case(64, 4096, None, 40_000, 7, "d64-n4k-full-long");
}
