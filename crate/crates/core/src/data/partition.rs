//! Dirichlet non-IID partitioning.
//!
//! Each client draws its own class-proportion vector `q ~ Dir(α·p)`, where
//! `p` is the empirical class prior of the pool, and then samples its train
//! and test indices by those proportions. Train indices are globally
//! disjoint; test indices come from whatever the train draws left over and
//! may repeat across clients (never within one client, never overlapping a
//! train index).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seeds::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// The client's sampled class proportions.
    pub proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub clients: Vec<ClientSplit>,
    pub alpha: f64,
    pub seed: u64,
}

/// Draws from `Dir(concentration)`, computed in log space so that tiny
/// concentrations (α·p ≈ 1e-3) do not underflow every component to zero.
/// Components with zero concentration get exactly zero mass.
pub fn sample_dirichlet(concentration: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    // Gamma(a) = Gamma(a + 1) · U^(1/a)
    let logs: Vec<f64> = concentration
        .iter()
        .map(|&a| {
            if a <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let g: f64 = Gamma::new(a + 1.0, 1.0)
                .expect("positive shape")
                .sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / a
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Rounds `weights · total` to integers summing exactly to `total`: floors
/// first, then hands the leftover units to the largest fractional parts
/// (ties to the lower index). Weights need not be normalized.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Class histogram of `labels[i]` for `i` in `indices`.
pub fn class_histogram(
    labels: &[usize],
    num_classes: usize,
    indices: impl IntoIterator<Item = usize>,
) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for i in indices {
        h[labels[i]] += 1;
    }
    h
}

/// Takes `want[c]` indices per class from `pools`. Any class that runs short
/// has its deficit re-spread over classes that still have samples, weighted
/// by `weights` restricted to them (or by remaining pool size if that
/// restriction has no mass). When `consume` is false the pools are left
/// intact and samples are drawn uniformly without replacement.
fn draw(
    pools: &mut [Vec<usize>],
    mut want: Vec<usize>,
    weights: &[f64],
    consume: bool,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let classes = pools.len();
    let mut taken: Vec<Vec<usize>> = vec![Vec::new(); classes];
    let mut available: Vec<Vec<usize>> = if consume { Vec::new() } else { pools.to_vec() };
    loop {
        let mut deficit = 0;
        for c in 0..classes {
            let pool = if consume {
                &mut pools[c]
            } else {
                &mut available[c]
            };
            if !consume {
                pool.shuffle(rng);
            }
            let k = want[c].min(pool.len());
            let start = pool.len() - k;
            taken[c].extend(pool.drain(start..));
            deficit += want[c] - k;
            want[c] = 0;
        }
        if deficit == 0 {
            break;
        }
        let pool_of = |c: usize| {
            if consume {
                pools[c].len()
            } else {
                available[c].len()
            }
        };
        let open: Vec<usize> = (0..classes).filter(|&c| pool_of(c) > 0).collect();
        if open.is_empty() {
            return Err(Error::Partition(format!(
                "sample pool exhausted with {deficit} draws outstanding"
            )));
        }
        let mut w: Vec<f64> = (0..classes)
            .map(|c| if pool_of(c) > 0 { weights[c] } else { 0.0 })
            .collect();
        if w.iter().sum::<f64>() <= 0.0 {
            w = (0..classes).map(|c| pool_of(c) as f64).collect();
        }
        want = largest_remainder(&w, deficit);
    }
    let mut out: Vec<usize> = taken.into_iter().flatten().collect();
    out.sort_unstable();
    Ok(out)
}

/// Splits `dataset` into `n_clients` low-data clients with Dirichlet class
/// skew. Randomness comes from the `Data` stream of `seed`.
pub fn dirichlet_partition(
    dataset: &Dataset,
    n_clients: usize,
    alpha: f64,
    samples_per_client: usize,
    test_per_client: usize,
    seed: u64,
) -> Result<Partition> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Partition(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if n_clients == 0 || samples_per_client == 0 {
        return Err(Error::Partition(
            "need at least one client and one sample each".into(),
        ));
    }
    if n_clients * (samples_per_client + test_per_client) > dataset.len() {
        return Err(Error::Partition(format!(
            "{n_clients} clients × ({samples_per_client} + {test_per_client}) samples exceed the {} available",
            dataset.len()
        )));
    }
    let mut rng = stream_rng(seed, Stream::Data, 0, 0);
    let k = dataset.num_classes();
    let counts = dataset.class_counts();
    let prior: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / dataset.len() as f64)
        .collect();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in dataset.labels().iter().enumerate() {
        pools[y].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    let concentration: Vec<f64> = prior.iter().map(|p| alpha * p).collect();
    let mut clients = Vec::with_capacity(n_clients);
    for _ in 0..n_clients {
        let q = sample_dirichlet(&concentration, &mut rng);
        let want = largest_remainder(&q, samples_per_client);
        let train = draw(&mut pools, want, &q, true, &mut rng)?;
        clients.push(ClientSplit {
            train,
            test: Vec::new(),
            proportions: q,
        });
    }
    for client in &mut clients {
        let want = largest_remainder(&client.proportions, test_per_client);
        client.test = draw(&mut pools, want, &client.proportions, false, &mut rng)?;
    }
    Ok(Partition {
        clients,
        alpha,
        seed,
    })
}
