use proptest::prelude::*;
use sas_core::{build_graph, normalized_coupling, Matrix};

/// Dense `D̃^{-1/2} (A + I) D̃^{-1/2}` straight from an edge list.
fn dense_coupling(edges: &[(usize, usize)], n: usize) -> Vec<Vec<f64>> {
    let mut adj = vec![vec![false; n]; n];
    for &(u, v) in edges {
        if u != v {
            adj[u][v] = true;
            adj[v][u] = true;
        }
    }
    let deg: Vec<f64> = adj.iter().map(|r| r.iter().filter(|&&b| b).count() as f64).collect();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || adj[i][j] {
                s[i][j] = 1.0 / ((deg[i] + 1.0) * (deg[j] + 1.0)).sqrt();
            }
        }
    }
    s
}

fn dense_times(s: &[Vec<f64>], x: &Matrix) -> Matrix {
    let n = s.len();
    let mut out = Matrix::zeros(n, x.cols());
    for i in 0..n {
        for j in 0..n {
            for c in 0..x.cols() {
                out[(i, c)] += s[i][j] * x[(j, c)];
            }
        }
    }
    out
}

fn graph_input() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, usize, Vec<f64>)> {
    (1usize..=64, 1usize..=4).prop_flat_map(|(n, d)| {
        (
            Just(n),
            prop::collection::vec((0..n, 0..n), 0..(3 * n)),
            Just(d),
            prop::collection::vec(-10.0f64..10.0, n * d),
        )
    })
}

proptest! {
    #[test]
    fn spmm_matches_dense_product((n, edges, d, x) in graph_input()) {
        let graph = build_graph(&edges, n).unwrap();
        let coupling = normalized_coupling(&graph);
        let x = Matrix::from_vec(n, d, x);
        let oracle = dense_times(&dense_coupling(&edges, n), &x);
        prop_assert!(coupling.spmm(&x).max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn coupling_entries_match_formula((n, edges, _d, _x) in graph_input()) {
        let coupling = normalized_coupling(&build_graph(&edges, n).unwrap());
        let oracle = dense_coupling(&edges, n);
        for i in 0..n {
            for j in 0..n {
                prop_assert!((coupling.get(i, j) - oracle[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn edge_order_and_orientation_do_not_matter((n, edges, _d, _x) in graph_input(), seed in any::<u64>()) {
        let graph = build_graph(&edges, n).unwrap();
        let mut shuffled: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (v, u)).collect();
        // deterministic rotation + reversal instead of a full shuffle
        let len = shuffled.len().max(1);
        shuffled.rotate_left((seed as usize) % len);
        shuffled.reverse();
        shuffled.extend_from_slice(&edges);
        prop_assert_eq!(build_graph(&shuffled, n).unwrap(), graph);
    }

    #[test]
    fn coupling_is_symmetric((n, edges, _d, _x) in graph_input()) {
        let dense = normalized_coupling(&build_graph(&edges, n).unwrap()).to_dense();
        prop_assert!(dense.max_abs_diff(&dense.transpose()) == 0.0);
    }
}

#[test]
fn power_apply_equals_repeated_spmm() {
    let edges: Vec<(usize, usize)> = (0..30).map(|i| (i, (i * 7 + 3) % 30)).collect();
    let coupling = normalized_coupling(&build_graph(&edges, 30).unwrap());
    let x = Matrix::from_vec(30, 2, (0..60).map(|v| (v as f64).sin()).collect());
    let mut step = x.clone();
    for k in 0..6 {
        assert!(coupling.power_apply(&x, k).max_abs_diff(&step) < 1e-10);
        step = coupling.spmm(&step);
    }
}
