use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sas_core::propagation::{final_labels, propagate, select_k};
use sas_core::synth::{build_homophily_graph, sample_points};
use sas_core::{build_graph, normalized_coupling, Graph, Matrix, PredictionMatrix, PropagationMode, SynthKind};

fn random_graph(rng: &mut ChaCha8Rng, n: usize, avg_degree: f64) -> Graph {
    let p = if n > 1 { avg_degree / (n - 1) as f64 } else { 0.0 };
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    build_graph(&edges, n).unwrap()
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Matrix {
    let mut m = Matrix::zeros(n, c);
    for i in 0..n {
        let row: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = row.iter().sum();
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v / total;
        }
    }
    m
}

/// Dense `Λ P0 + (I − Λ) S P` iteration with plain nested loops.
fn dense_oracle(graph: &Graph, p0: &Matrix, lambda: f64, k: usize) -> Matrix {
    let n = graph.num_nodes();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        let di = graph.degree(i) as f64 + 1.0;
        s[i][i] = 1.0 / di;
        for &j in graph.neighbors(i) {
            s[i][j] = 1.0 / (di * (graph.degree(j) as f64 + 1.0)).sqrt();
        }
    }
    let mut p = p0.clone();
    for _ in 0..k {
        let mut next = Matrix::zeros(n, p0.cols());
        for i in 0..n {
            for c in 0..p0.cols() {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += s[i][j] * p[(j, c)];
                }
                next[(i, c)] = lambda * p0[(i, c)] + (1.0 - lambda) * acc;
            }
        }
        p = next;
    }
    p
}

#[test]
fn propagate_matches_dense_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let n = rng.random_range(1..=64);
        let degree = rng.random_range(0.0..8.0);
        let graph = random_graph(&mut rng, n, degree);
        let coupling = normalized_coupling(&graph);
        let classes = rng.random_range(2..=5);
        let p0 = random_simplex(&mut rng, n, classes);
        let k = rng.random_range(1..=10);
        let alpha = rng.random_range(0.05..=1.0);
        for (mode, lambda) in [
            (PropagationMode::NoResidual, 0.0),
            (PropagationMode::Residual { alpha }, alpha),
        ] {
            let out = propagate(&PredictionMatrix::initial(p0.clone()), &coupling, mode, k);
            let diff = out.scores.max_abs_diff(&dense_oracle(&graph, &p0, lambda, k));
            assert!(diff < 1e-10, "case {case} {mode:?}: diff {diff}");
            assert_eq!(out.step, k);
        }
    }
}

#[test]
fn residual_entries_stay_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(2..=40);
        let graph = random_graph(&mut rng, n, 4.0);
        let coupling = normalized_coupling(&graph);
        let p0 = PredictionMatrix::initial(random_simplex(&mut rng, n, 3));
        let mode = PropagationMode::Residual {
            alpha: rng.random_range(0.01..=1.0),
        };
        let out = propagate(&p0, &coupling, mode, 30);
        assert!(out.scores.as_slice().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}

#[test]
fn no_residual_entries_bounded_by_row_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let n = rng.random_range(2..=40);
        let graph = random_graph(&mut rng, n, 4.0);
        let coupling = normalized_coupling(&graph);
        let max_row_sum = (0..n)
            .map(|i| coupling.row(i).map(|(_, v)| v).sum::<f64>())
            .fold(0.0, f64::max);
        let p0 = PredictionMatrix::initial(random_simplex(&mut rng, n, 3));
        let max_in = p0.scores.as_slice().iter().cloned().fold(0.0, f64::max);
        let out = propagate(&p0, &coupling, PropagationMode::NoResidual, 1);
        assert!(out.scores.as_slice().iter().all(|&v| v <= max_row_sum * max_in + 1e-12));
    }
}

fn connected_non_bipartite(seed: u64, n: usize, avg_degree: f64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let g = random_graph(&mut rng, n, avg_degree);
        if g.is_connected() && !g.is_bipartite() {
            return g;
        }
    }
}

#[test]
fn long_propagation_collapses_argmax() {
    for (seed, n, deg) in [(1, 10, 4.0), (2, 50, 6.0), (3, 50, 6.0)] {
        let graph = connected_non_bipartite(seed, n, deg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let p0 = PredictionMatrix::initial(random_simplex(&mut rng, n, 3));
        let out = propagate(&p0, &normalized_coupling(&graph), PropagationMode::NoResidual, 500);
        let labels = final_labels(&out);
        assert!(labels.iter().all(|&c| c == labels[0]), "n={n}: {labels:?}");
    }
}

/// Class-informative but noisy predictions on a homophily graph.
fn noisy_predictions(labels: &[usize], rng: &mut ChaCha8Rng, signal: f64) -> PredictionMatrix {
    let mut m = Matrix::zeros(labels.len(), 2);
    for (i, &y) in labels.iter().enumerate() {
        let bump = if rng.random::<f64>() < signal { 0.2 } else { -0.2 };
        m[(i, y)] = 0.5 + bump;
        m[(i, 1 - y)] = 0.5 - bump;
    }
    PredictionMatrix::initial(m)
}

fn accuracy_trace(intra_degree: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, labels) = sample_points(SynthKind::Gaussian, 600, &mut rng);
    let graph = build_homophily_graph(&labels, intra_degree, 0.8, &mut rng).unwrap();
    let p0 = noisy_predictions(&labels, &mut rng, 0.7);
    let truth: Vec<Option<usize>> = labels.iter().copied().map(Some).collect();
    let all: Vec<usize> = (0..labels.len()).collect();
    select_k(&p0, &normalized_coupling(&graph), PropagationMode::NoResidual, 20, 100, &truth, &all)
        .unwrap()
        .trace
}

#[test]
fn dense_graphs_over_smooth() {
    // overall degree 10 at homophily 0.8
    for seed in 0..3 {
        let trace = accuracy_trace(8.0, seed);
        let peak = trace.iter().cloned().fold(0.0, f64::max);
        assert!(trace[20] < peak, "seed {seed}: {trace:?}");
        assert!(peak > trace[0]);
    }
}
