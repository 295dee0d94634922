#![allow(dead_code)]

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lipsfl::numerics::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// A small but complete experiment: synthetic blobs, a handful of clients,
/// a few rounds. `extra` holds top-level TOML lines that override the base.
pub fn tiny_config(method: &str, arch: &str, extra: &str) -> lipsfl::config::ExperimentConfig {
    let shape = if arch == "mlp" { "[8]" } else { "[1, 4, 4]" };
    let text = format!(
        r#"
seed = 11
method = "{method}"
arch = "{arch}"
n_clients = 4
samples_per_client = 20
test_per_client = 10
alpha = 0.5
rounds = 4
local_epochs = 2
batch_size = 8
metrics_t0 = 1

[dataset]
kind = "synthetic"
num_classes = 3
shape = {shape}
n_per_class = 60
class_separation = 3.0
"#
    );
    let mut table: toml::Table = text.parse().unwrap();
    table.extend(extra.parse::<toml::Table>().unwrap());
    lipsfl::config::parse_config(&table.to_string()).unwrap()
}

/// Labels only; every sample is a single zero feature.
pub fn label_dataset(num_classes: usize, per_class: usize) -> lipsfl::data::Dataset {
    let labels: Vec<usize> = (0..num_classes)
        .flat_map(|c| std::iter::repeat_n(c, per_class))
        .collect();
    let n = labels.len();
    lipsfl::data::Dataset::new(Tensor::zeros(&[n, 1]), labels, num_classes).unwrap()
}

pub fn entropy(hist: &[usize]) -> f64 {
    let n: usize = hist.iter().sum();
    hist.iter()
        .filter(|&&h| h > 0)
        .map(|&h| {
            let p = h as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

/// Mean class entropy of the clients' train splits.
pub fn mean_train_entropy(p: &lipsfl::data::Partition, d: &lipsfl::data::Dataset) -> f64 {
    let total: f64 = p
        .clients
        .iter()
        .map(|c| {
            entropy(&lipsfl::data::class_histogram(
                d.labels(),
                d.num_classes(),
                c.train.iter().copied(),
            ))
        })
        .sum();
    total / p.clients.len() as f64
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Checks the partition's structural invariants, returning the first
/// violation.
pub fn partition_violation(
    p: &lipsfl::data::Partition,
    n_total: usize,
    samples_per_client: usize,
    test_per_client: usize,
) -> Option<String> {
    let mut owner = vec![None; n_total];
    for (id, c) in p.clients.iter().enumerate() {
        if c.train.len() != samples_per_client {
            return Some(format!("client {id} has {} train samples", c.train.len()));
        }
        if c.test.len() != test_per_client {
            return Some(format!("client {id} has {} test samples", c.test.len()));
        }
        for &i in &c.train {
            if let Some(prev) = owner[i].replace(id) {
                return Some(format!("train index {i} shared by clients {prev} and {id}"));
            }
        }
        let mut test = c.test.clone();
        test.dedup();
        if test.len() != c.test.len() {
            return Some(format!("client {id} repeats a test index"));
        }
    }
    for (id, c) in p.clients.iter().enumerate() {
        if let Some(&i) = c.test.iter().find(|&&i| owner[i].is_some()) {
            return Some(format!("client {id} tests on train index {i}"));
        }
    }
    None
}
