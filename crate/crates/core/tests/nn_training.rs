use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sas_core::nn::{cross_entropy_loss, init_rng, predict_proba, train_mlp, Layer, TrainSet};
use sas_core::synth::generate;
use sas_core::{Matrix, MlpConfig, MlpModel, SynthConfig, SynthKind, TrainConfig};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn random_model(rng: &mut ChaCha8Rng, dims: &[usize], weight_decay: f64) -> MlpModel {
    let layers = dims
        .windows(2)
        .map(|w| Layer {
            weight: random_matrix(rng, w[0], w[1]),
            bias: (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect(),
        })
        .collect();
    MlpModel::from_layers(layers, 0.0, weight_decay)
}

fn loss(model: &MlpModel, x: &Matrix, y: &[usize]) -> f64 {
    cross_entropy_loss(&model.logits(x), y, model)
}

/// Largest relative error between analytic and central-difference gradients.
fn gradient_check(model: &MlpModel, x: &Matrix, y: &[usize]) -> f64 {
    let (logits, cache) = model.forward(x, Some(&mut ChaCha8Rng::seed_from_u64(0)));
    let grads = model.backward(&cache, &logits, y);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut compare = |numeric: f64, analytic: f64| {
        let scale = numeric.abs().max(analytic.abs()).max(1e-6);
        worst = worst.max((numeric - analytic).abs() / scale);
    };
    for l in 0..model.num_layers() {
        let (rows, cols) = model.layers()[l].weight.shape();
        for idx in 0..rows * cols {
            let mut plus = model.clone();
            plus.layers_mut()[l].weight.as_mut_slice()[idx] += h;
            let mut minus = model.clone();
            minus.layers_mut()[l].weight.as_mut_slice()[idx] -= h;
            let numeric = (loss(&plus, x, y) - loss(&minus, x, y)) / (2.0 * h);
            compare(numeric, grads[l].weight.as_slice()[idx]);
        }
        for b in 0..cols {
            let mut plus = model.clone();
            plus.layers_mut()[l].bias[b] += h;
            let mut minus = model.clone();
            minus.layers_mut()[l].bias[b] -= h;
            let numeric = (loss(&plus, x, y) - loss(&minus, x, y)) / (2.0 * h);
            compare(numeric, grads[l].bias[b]);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for dims in [&[5usize, 3][..], &[5, 4, 3], &[5, 6, 4, 3]] {
        for _ in 0..5 {
            let x = random_matrix(&mut rng, 8, 5);
            let y: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
            let model = random_model(&mut rng, dims, 0.01);
            let err = gradient_check(&model, &x, &y);
            assert!(err < 1e-4, "{dims:?}: relative error {err}");
        }
    }
}

/// Straight-line forward pass with explicit loops.
fn reference_logits(model: &MlpModel, x: &Matrix) -> Matrix {
    let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
    let last = model.num_layers() - 1;
    for (l, layer) in model.layers().iter().enumerate() {
        h = h
            .iter()
            .map(|row| {
                (0..layer.output_dim())
                    .map(|j| {
                        let mut z = layer.bias[j];
                        for (i, v) in row.iter().enumerate() {
                            z += v * layer.weight[(i, j)];
                        }
                        if l < last {
                            z.max(0.0)
                        } else {
                            z
                        }
                    })
                    .collect()
            })
            .collect();
    }
    Matrix::from_rows(&h)
}

#[test]
fn forward_matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let model = random_model(&mut rng, &[4, 7, 3], 0.0);
        let x = random_matrix(&mut rng, 12, 4);
        assert!(model.logits(&x).max_abs_diff(&reference_logits(&model, &x)) < 1e-12);
    }
}

#[test]
fn penalty_increases_loss_for_nonzero_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let x = random_matrix(&mut rng, 6, 3);
        let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..2)).collect();
        let plain = random_model(&mut rng, &[3, 4, 2], 0.0);
        let penalized = MlpModel::from_layers(plain.layers().to_vec(), 0.0, 1e-3);
        assert!(loss(&penalized, &x, &y) > loss(&plain, &x, &y));
    }
}

#[test]
fn predict_proba_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = random_model(&mut rng, &[3, 5, 4], 0.0);
    let x = random_matrix(&mut rng, 50, 3);
    let p = predict_proba(&model, &x);
    let logits = model.logits(&x);
    for r in 0..50 {
        assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.row(r).iter().all(|&v| v >= 0.0));
        assert_eq!(sas_core::dense::argmax(p.row(r)), sas_core::dense::argmax(logits.row(r)));
    }
}

/// Two well-separated blobs of 50 points each.
fn separable_blobs(seed: u64) -> (Matrix, Vec<Option<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..100 {
        let c = i % 2;
        let centre = if c == 0 { 3.0 } else { -3.0 };
        rows.push(vec![centre + rng.random_range(-1.0..1.0), centre + rng.random_range(-1.0..1.0)]);
        labels.push(Some(c));
    }
    (Matrix::from_rows(&rows), labels)
}

fn fit(x: &Matrix, labels: &[Option<usize>], train: &TrainConfig, mlp: &MlpConfig) -> MlpModel {
    let all: Vec<usize> = (0..x.rows()).collect();
    let model = MlpModel::glorot(x.cols(), 2, mlp, &mut init_rng(train.seed));
    let set = TrainSet {
        features: x,
        labels,
        train: &all,
        val: &[],
    };
    train_mlp(model, &set, train).unwrap().model
}

#[test]
fn separable_blobs_are_fit_exactly() {
    let (x, labels) = separable_blobs(1);
    let train = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let model = fit(&x, &labels, &train, &MlpConfig::default());
    let logits = model.logits(&x);
    for (r, y) in labels.iter().enumerate() {
        assert_eq!(sas_core::dense::argmax(logits.row(r)), *y);
    }
}

#[test]
fn small_learning_rate_gives_monotone_loss() {
    let (x, labels) = separable_blobs(2);
    let all: Vec<usize> = (0..100).collect();
    let mlp = MlpConfig {
        weight_decay: 1e-3,
        ..MlpConfig::default()
    };
    let train = TrainConfig {
        learning_rate: 1e-3,
        epochs: 10,
        ..TrainConfig::default()
    };
    let model = MlpModel::glorot(2, 2, &mlp, &mut init_rng(0));
    let set = TrainSet {
        features: &x,
        labels: &labels,
        train: &all,
        val: &[],
    };
    let trace = train_mlp(model, &set, &train).unwrap().trace;
    assert_eq!(trace.len(), 10);
    for w in trace.windows(2) {
        assert!(w[1].train_loss <= w[0].train_loss, "{trace:?}");
    }
}

#[test]
fn training_is_bit_reproducible() {
    let (x, labels) = separable_blobs(3);
    let mlp = MlpConfig {
        dropout: 0.3,
        ..MlpConfig::default()
    };
    let train = TrainConfig {
        epochs: 50,
        batch_size: 16,
        seed: 77,
        ..TrainConfig::default()
    };
    let a = fit(&x, &labels, &train, &mlp);
    let b = fit(&x, &labels, &train, &mlp);
    for (la, lb) in a.layers().iter().zip(b.layers()) {
        assert_eq!(la.weight.as_slice(), lb.weight.as_slice());
        assert_eq!(la.bias, lb.bias);
    }
}

#[test]
fn mlp_on_xor_features() {
    // wide two-layer MLP on the raw XOR features
    let mlp = MlpConfig {
        num_layers: 2,
        hidden_dim: 16,
        ..MlpConfig::default()
    };
    let mut accs = Vec::new();
    for seed in 1..=5 {
        let ds = generate(&SynthConfig::new(SynthKind::Xor, seed)).unwrap();
        let labels: Vec<Option<usize>> = ds.labels.iter().copied().map(Some).collect();
        let set = TrainSet {
            features: &ds.features,
            labels: &labels,
            train: &ds.train,
            val: &[],
        };
        let train = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let model = MlpModel::glorot(2, 2, &mlp, &mut init_rng(seed));
        let model = train_mlp(model, &set, &train).unwrap().model;
        let logits = model.logits(&ds.features);
        let hits = ds
            .test
            .iter()
            .filter(|&&i| sas_core::dense::argmax(logits.row(i)) == Some(ds.labels[i]))
            .count();
        accs.push(hits as f64 / ds.test.len() as f64);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.708).abs() < 0.05, "mean {mean}: {accs:?}");
}
