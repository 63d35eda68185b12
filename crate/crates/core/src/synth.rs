//! Seeded two-class synthetic node-classification datasets: a noisy 2-D XOR and a
//! pair of overlapping Gaussians, each placed on a graph with a chosen edge
//! homophily.

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::Matrix;
use crate::graph::{Graph, GraphError};

pub const CLASS_A: usize = 0;
pub const CLASS_B: usize = 1;

/// Per-axis variance of each XOR component.
pub const XOR_VARIANCE: f64 = 0.75;
/// Per-axis variance of each Gaussian class.
pub const GAUSSIAN_VARIANCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(&'static str),
    #[error("labels must be binary, found class {class} at node {node}")]
    NonBinaryLabels { node: usize, class: usize },
    #[error("requested {requested} inter-class edges but only {capacity} pairs exist")]
    InterEdgeCapacity { requested: usize, capacity: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Xor,
    Gaussian,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Xor => "xor",
            SynthKind::Gaussian => "gaussian",
        }
    }
}

impl core::str::FromStr for SynthKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xor" => Ok(SynthKind::Xor),
            "gaussian" | "gauss" => Ok(SynthKind::Gaussian),
            _ => Err(SynthError::InvalidConfig("kind must be xor or gaussian")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n_train: usize,
    pub n_test: usize,
    /// Target fraction of edges joining same-class endpoints.
    pub homophily_ratio: f64,
    /// Expected degree inside each class's Erdős–Rényi graph.
    pub intra_avg_degree: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(kind: SynthKind, seed: u64) -> Self {
        Self {
            kind,
            n_train: 100,
            n_test: 1000,
            homophily_ratio: 0.8,
            intra_avg_degree: 3.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(SynthError::InvalidConfig("n_train and n_test must be at least 1"));
        }
        if !(self.homophily_ratio > 0.0 && self.homophily_ratio < 1.0) {
            return Err(SynthError::InvalidConfig("homophily_ratio must lie in (0, 1)"));
        }
        if !(self.intra_avg_degree >= 0.0) || !self.intra_avg_degree.is_finite() {
            return Err(SynthError::InvalidConfig("intra_avg_degree must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.n_train + self.n_test
    }
}

/// Features and labels without a graph. Training nodes come first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSamples {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub graph: Graph,
}

const FEATURE_STREAM: u64 = 2;
const GRAPH_STREAM: u64 = 3;
const GUESS_STREAM: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Balanced labels for a split of size `n`, shuffled.
fn balanced_labels<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

fn normal2<R: Rng + ?Sized>(rng: &mut R, mean: (f64, f64), variance: f64) -> (f64, f64) {
    let sd = libm::sqrt(variance);
    let z0: f64 = StandardNormal.sample(rng);
    let z1: f64 = StandardNormal.sample(rng);
    (mean.0 + sd * z0, mean.1 + sd * z1)
}

/// Draws `n` labeled points of `kind` from `rng`, labels balanced within ±1.
pub fn sample_points<R: Rng + ?Sized>(kind: SynthKind, n: usize, rng: &mut R) -> (Matrix, Vec<usize>) {
    let labels = balanced_labels(n, rng);
    let mut data = Vec::with_capacity(2 * n);
    let mut seen = [0usize; 2];
    for &y in &labels {
        // alternate mixture components so each class splits its points evenly
        let component = seen[y] % 2;
        seen[y] += 1;
        let (mean, variance) = match (kind, y, component) {
            (SynthKind::Xor, CLASS_A, 0) => ((1.0, 1.0), XOR_VARIANCE),
            (SynthKind::Xor, CLASS_A, _) => ((-1.0, -1.0), XOR_VARIANCE),
            (SynthKind::Xor, _, 0) => ((1.0, -1.0), XOR_VARIANCE),
            (SynthKind::Xor, _, _) => ((-1.0, 1.0), XOR_VARIANCE),
            (SynthKind::Gaussian, CLASS_A, _) => ((1.0, 1.0), GAUSSIAN_VARIANCE),
            (SynthKind::Gaussian, _, _) => ((-1.0, -1.0), GAUSSIAN_VARIANCE),
        };
        let (x0, x1) = normal2(rng, mean, variance);
        data.push(x0);
        data.push(x1);
    }
    (Matrix::from_vec(n, 2, data), labels)
}

fn gen_samples(config: &SynthConfig) -> Result<SynthSamples, SynthError> {
    config.validate()?;
    let mut rng = stream(config.seed, FEATURE_STREAM);
    let (train_x, train_y) = sample_points(config.kind, config.n_train, &mut rng);
    let (test_x, test_y) = sample_points(config.kind, config.n_test, &mut rng);
    let mut data = train_x.into_vec();
    data.extend(test_x.into_vec());
    let mut labels = train_y;
    labels.extend(test_y);
    let n = config.num_nodes();
    Ok(SynthSamples {
        features: Matrix::from_vec(n, 2, data),
        labels,
        train: (0..config.n_train).collect(),
        test: (config.n_train..n).collect(),
    })
}

/// Noisy XOR: class A from `N((1,1),Σ)` and `N((−1,−1),Σ)`, class B from
/// `N((1,−1),Σ)` and `N((−1,1),Σ)`, `Σ = 0.75·I`.
pub fn gen_xor(config: &SynthConfig) -> Result<SynthSamples, SynthError> {
    if config.kind != SynthKind::Xor {
        return Err(SynthError::InvalidConfig("gen_xor needs kind = xor"));
    }
    gen_samples(config)
}

/// Two Gaussians centred at `(1,1)` (class A) and `(−1,−1)` (class B), `Σ = 3·I`.
pub fn gen_gaussian(config: &SynthConfig) -> Result<SynthSamples, SynthError> {
    if config.kind != SynthKind::Gaussian {
        return Err(SynthError::InvalidConfig("gen_gaussian needs kind = gaussian"));
    }
    gen_samples(config)
}

/// `G(n, p)` on `members` via geometric skipping over the lower-triangular pairs.
fn erdos_renyi<R: Rng + ?Sized>(members: &[usize], p: f64, rng: &mut R, edges: &mut Vec<(usize, usize)>) {
    let n = members.len();
    if n < 2 || p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        for v in 1..n {
            for w in 0..v {
                edges.push((members[v], members[w]));
            }
        }
        return;
    }
    let log_q = libm::log(1.0 - p);
    let mut v = 1usize;
    let mut w: i64 = -1;
    while v < n {
        let r: f64 = rng.random();
        let skip = libm::floor(libm::log(1.0 - r) / log_q);
        w += 1 + skip as i64;
        while v < n && w >= v as i64 {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            edges.push((members[v], members[w as usize]));
        }
    }
}

/// Inter-class edge count that yields edge homophily `rho` given `intra` edges.
pub fn inter_edge_count(intra: usize, rho: f64) -> usize {
    libm::round(intra as f64 * (1.0 - rho) / rho) as usize
}

/// Intra-class `G(n, p)` graphs with `p = intra_avg_degree / (n_class − 1)`, then
/// `round(e (1−ρ)/ρ)` inter-class pairs drawn uniformly without replacement, where
/// `e` is the realized intra-class edge count.
pub fn build_homophily_graph<R: Rng + ?Sized>(
    labels: &[usize],
    intra_avg_degree: f64,
    homophily_ratio: f64,
    rng: &mut R,
) -> Result<Graph, SynthError> {
    if !(homophily_ratio > 0.0 && homophily_ratio < 1.0) {
        return Err(SynthError::InvalidConfig("homophily_ratio must lie in (0, 1)"));
    }
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (node, &class) in labels.iter().enumerate() {
        if class > 1 {
            return Err(SynthError::NonBinaryLabels { node, class });
        }
        classes[class].push(node);
    }
    let mut edges = Vec::new();
    for members in &classes {
        if members.len() > 1 {
            let p = intra_avg_degree / (members.len() - 1) as f64;
            erdos_renyi(members, p, rng, &mut edges);
        }
    }
    let requested = inter_edge_count(edges.len(), homophily_ratio);
    let (a, b) = (&classes[0], &classes[1]);
    let capacity = a.len() * b.len();
    if requested > capacity {
        return Err(SynthError::InterEdgeCapacity { requested, capacity });
    }
    for pair in index::sample(rng, capacity, requested).into_iter() {
        edges.push((a[pair / b.len()], b[pair % b.len()]));
    }
    Ok(Graph::from_edges(&edges, labels.len())?)
}

/// Features, labels, splits and the homophily graph over train and test nodes jointly.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    let samples = gen_samples(config)?;
    let mut rng = stream(config.seed, GRAPH_STREAM);
    let graph = build_homophily_graph(
        &samples.labels,
        config.intra_avg_degree,
        config.homophily_ratio,
        &mut rng,
    )?;
    Ok(SynthDataset {
        config: *config,
        features: samples.features,
        labels: samples.labels,
        train: samples.train,
        test: samples.test,
        graph,
    })
}

/// Bayes-optimal feature-only rule: `sign(x0·x1)` for XOR, `sign(x0 + x1)` for
/// Gaussian; positive maps to class A.
pub fn bayes_oracle(kind: SynthKind, features: &Matrix) -> Vec<usize> {
    assert_eq!(features.cols(), 2, "oracle expects 2-D features");
    features
        .row_iter()
        .map(|x| {
            let score = match kind {
                SynthKind::Xor => x[0] * x[1],
                SynthKind::Gaussian => x[0] + x[1],
            };
            if score > 0.0 {
                CLASS_A
            } else {
                CLASS_B
            }
        })
        .collect()
}

/// Uniform random binary guesses for every node, drawn from `seed`.
pub fn random_guesses(num_nodes: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, GUESS_STREAM);
    (0..num_nodes).map(|_| if rng.random::<bool>() { CLASS_A } else { CLASS_B }).collect()
}

/// Fraction of edges whose endpoints share a label; `None` for an edgeless graph.
pub fn measure_homophily(graph: &Graph, labels: &[usize]) -> Option<f64> {
    let (mut same, mut total) = (0usize, 0usize);
    for (u, v) in graph.edges() {
        total += 1;
        same += usize::from(labels[u] == labels[v]);
    }
    (total > 0).then(|| same as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn oracle_points() {
        let x = Matrix::from_rows(&[vec![2.0, 2.0], vec![2.0, -2.0], vec![-1.0, -3.0]]);
        assert_eq!(bayes_oracle(SynthKind::Xor, &x), vec![CLASS_A, CLASS_B, CLASS_A]);
        assert_eq!(bayes_oracle(SynthKind::Gaussian, &x), vec![CLASS_A, CLASS_B, CLASS_B]);
    }

    #[test]
    fn splits_are_balanced() {
        let cfg = SynthConfig {
            n_train: 101,
            n_test: 999,
            ..SynthConfig::new(SynthKind::Xor, 5)
        };
        let ds = generate(&cfg).unwrap();
        for split in [&ds.train, &ds.test] {
            let a = split.iter().filter(|&&i| ds.labels[i] == CLASS_A).count();
            let b = split.len() - a;
            assert!(a.abs_diff(b) <= 1);
        }
        assert_eq!(ds.graph.num_nodes(), 1100);
    }

    #[test]
    fn xor_sign_structure() {
        let cfg = SynthConfig {
            n_train: 2000,
            n_test: 2000,
            ..SynthConfig::new(SynthKind::Xor, 9)
        };
        let s = gen_xor(&cfg).unwrap();
        let mut sums = [0.0; 2];
        for (i, x) in s.features.row_iter().enumerate() {
            sums[s.labels[i]] += x[0] * x[1];
        }
        assert!(sums[CLASS_A] > 0.0);
        assert!(sums[CLASS_B] < 0.0);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let cfg = SynthConfig::new(SynthKind::Gaussian, 1);
        assert!(gen_xor(&cfg).is_err());
        assert!(gen_gaussian(&SynthConfig::new(SynthKind::Xor, 1)).is_err());
    }

    #[test]
    fn determinism() {
        let cfg = SynthConfig::new(SynthKind::Gaussian, 42);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 43, ..cfg };
        assert_ne!(generate(&cfg).unwrap().features, generate(&other).unwrap().features);
    }

    #[test]
    fn inter_edge_algebra() {
        assert_eq!(inter_edge_count(400, 0.8), 100);
        assert_eq!(inter_edge_count(1000, 0.5), 1000);
    }

    #[test]
    fn capacity_error() {
        // 2 nodes per class → 1 intra edge each, K_{2,2} has only 4 inter pairs
        let labels = [0, 0, 1, 1];
        let mut rng = stream(0, 0);
        let err = build_homophily_graph(&labels, 1.0, 0.2, &mut rng).unwrap_err();
        assert_eq!(
            err,
            SynthError::InterEdgeCapacity {
                requested: 8,
                capacity: 4
            }
        );
    }

    #[test]
    fn non_binary_labels_rejected() {
        let mut rng = stream(0, 0);
        let err = build_homophily_graph(&[0, 2], 1.0, 0.8, &mut rng).unwrap_err();
        assert_eq!(err, SynthError::NonBinaryLabels { node: 1, class: 2 });
    }

    #[test]
    fn complete_intra_graph_when_p_saturates() {
        let labels = [0, 0, 0, 1, 1, 1];
        let mut rng = stream(0, 0);
        let g = build_homophily_graph(&labels, 10.0, 0.999, &mut rng).unwrap();
        // two triangles, no inter edges at this ratio
        assert_eq!(g.num_edges(), 6);
        assert_eq!(measure_homophily(&g, &labels), Some(1.0));
    }

    #[test]
    fn homophily_of_edgeless_graph() {
        assert_eq!(measure_homophily(&Graph::edgeless(3), &[0, 1, 0]), None);
    }
}
