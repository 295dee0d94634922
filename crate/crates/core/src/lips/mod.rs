//! Transient sensitivity-guided sparsity.
//!
//! Once every `k` rounds each client scores its middle-layer weights by
//! `|Δw · w|`, zeroes (or re-initializes) the lowest `τ(t)` fraction of each
//! layer, and then trains without any constraint. The mask lives for exactly
//! one application unless `hold_mask` re-applies it after every local step.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Ordered `(layer name, flat values)` pairs.
pub type LayerVectors = Vec<(String, Vec<f64>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    Sensitivity,
    Magnitude,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reinit {
    #[default]
    Zero,
    OriginalInit,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Sensitivity => "sensitivity",
            Criterion::Magnitude => "magnitude",
            Criterion::Random => "random",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sensitivity" => Ok(Criterion::Sensitivity),
            "magnitude" => Ok(Criterion::Magnitude),
            "random" => Ok(Criterion::Random),
            other => Err(Error::InvalidArgument(format!(
                "unknown mask criterion `{other}`"
            ))),
        }
    }
}

/// Per-layer `|Δw · w|`, aligned with the layers it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityScores {
    pub layers: LayerVectors,
}

impl SensitivityScores {
    pub fn get(&self, layer: &str) -> Option<&[f64]> {
        self.layers
            .iter()
            .find(|(n, _)| n == layer)
            .map(|(_, v)| v.as_slice())
    }
}

pub fn sensitivity_scores(
    w_current: &LayerVectors,
    delta_w: &LayerVectors,
) -> Result<SensitivityScores> {
    if w_current.len() != delta_w.len() {
        return Err(Error::shape(
            "sensitivity layers",
            &[w_current.len()],
            &[delta_w.len()],
        ));
    }
    let layers = w_current
        .iter()
        .zip(delta_w)
        .map(|((name, w), (dname, dw))| {
            if name != dname {
                return Err(Error::InvalidArgument(format!(
                    "sensitivity layer order differs: `{name}` vs `{dname}`"
                )));
            }
            if w.len() != dw.len() {
                return Err(Error::shape("sensitivity", &[w.len()], &[dw.len()]));
            }
            Ok((
                name.clone(),
                w.iter().zip(dw).map(|(a, b)| (a * b).abs()).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    Ok(SensitivityScores { layers })
}

/// `τ0 · (1 − t/T)`.
pub fn decayed_tau(t: usize, tau0: f64, total_rounds: usize) -> Result<f64> {
    if t > total_rounds {
        return Err(Error::RoundOutOfRange {
            round: t,
            total: total_rounds,
        });
    }
    if !(0.0..1.0).contains(&tau0) {
        return Err(Error::InvalidArgument(format!(
            "tau0 must lie in [0, 1), got {tau0}"
        )));
    }
    if total_rounds == 0 {
        return Ok(0.0);
    }
    Ok(tau0 * (1.0 - t as f64 / total_rounds as f64))
}

/// Number of positions a layer of `n` weights loses at ratio `tau`.
pub fn zero_count(tau: f64, n: usize) -> usize {
    ((tau * n as f64).floor() as usize).min(n)
}

/// Indices of the `z` smallest values, ties going to the lower index.
/// Returned in ascending index order.
pub fn lowest_indices(values: &[f64], z: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    let z = z.min(values.len());
    if z == 0 {
        return Vec::new();
    }
    let cmp = |a: &usize, b: &usize| values[*a].total_cmp(&values[*b]).then(a.cmp(b));
    order.select_nth_unstable_by(z - 1, cmp);
    let mut picked = order[..z].to_vec();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    pub layer: String,
    /// `true` keeps the weight, `false` masks it.
    pub keep: Vec<bool>,
}

impl LayerMask {
    pub fn zero_count(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    pub fn masked_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep
            .iter()
            .enumerate()
            .filter(|(_, k)| !**k)
            .map(|(i, _)| i)
    }
}

/// One client's mask for one masking event. Only in-scope layers appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityMask {
    pub layers: Vec<LayerMask>,
    pub tau_used: f64,
    pub criterion: Criterion,
}

impl SparsityMask {
    pub fn layer(&self, name: &str) -> Option<&LayerMask> {
        self.layers.iter().find(|m| m.layer == name)
    }
}

/// Checks that every scoped layer exists and is a middle weight layer.
pub fn validate_scope(model: &ModelParams, scope: &[String]) -> Result<()> {
    for name in scope {
        let layer = model.layer(name)?;
        if !layer.is_middle_weight_layer() {
            return Err(Error::OutOfScope(format!(
                "`{name}` cannot be masked: only middle weight layers are eligible"
            )));
        }
    }
    Ok(())
}

/// Builds a mask over `scope`. Sensitivity needs `scores`; magnitude reads
/// the weights of `model`; random draws from `rng`.
pub fn select_mask(
    model: &ModelParams,
    scores: Option<&SensitivityScores>,
    tau: f64,
    criterion: Criterion,
    scope: &[String],
    rng: &mut impl Rng,
) -> Result<SparsityMask> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "tau must lie in [0, 1), got {tau}"
        )));
    }
    validate_scope(model, scope)?;
    let mut layers = Vec::with_capacity(scope.len());
    for name in scope {
        let weights = model.layer(name)?.weight.data();
        let n = weights.len();
        let z = zero_count(tau, n);
        let masked = match criterion {
            Criterion::Sensitivity => {
                let s = scores.and_then(|s| s.get(name)).ok_or_else(|| {
                    Error::InvalidArgument(format!("no sensitivity scores for `{name}`"))
                })?;
                if s.len() != n {
                    return Err(Error::shape("select_mask", &[s.len()], &[n]));
                }
                lowest_indices(s, z)
            }
            Criterion::Magnitude => {
                let mags: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
                lowest_indices(&mags, z)
            }
            Criterion::Random => index::sample(rng, n, z).into_vec(),
        };
        let mut keep = vec![true; n];
        for i in masked {
            keep[i] = false;
        }
        layers.push(LayerMask {
            layer: name.clone(),
            keep,
        });
    }
    Ok(SparsityMask {
        layers,
        tau_used: tau,
        criterion,
    })
}

/// Writes the masked positions in place: `0.0` in zero mode, the snapshot
/// value in original-init mode.
pub fn apply_mask_in_place(
    model: &mut ModelParams,
    mask: &SparsityMask,
    reinit: Reinit,
    init_snapshot: Option<&ModelParams>,
) -> Result<()> {
    let snapshot = match reinit {
        Reinit::Zero => None,
        Reinit::OriginalInit => Some(init_snapshot.ok_or_else(|| {
            Error::InvalidArgument("original_init reinit needs an init snapshot".into())
        })?),
    };
    for lm in &mask.layers {
        let idx = model.layer_index(&lm.layer)?;
        let w = model.layers[idx].weight.data_mut();
        if w.len() != lm.keep.len() {
            return Err(Error::shape("apply_mask", &[w.len()], &[lm.keep.len()]));
        }
        match snapshot {
            None => lm.masked_indices().for_each(|i| w[i] = 0.0),
            Some(snap) => {
                let init = snap.layer(&lm.layer)?.weight.data();
                if init.len() != w.len() {
                    return Err(Error::shape(
                        "apply_mask snapshot",
                        &[init.len()],
                        &[w.len()],
                    ));
                }
                lm.masked_indices().for_each(|i| w[i] = init[i]);
            }
        }
    }
    Ok(())
}

pub fn apply_mask(
    model: &ModelParams,
    mask: &SparsityMask,
    reinit: Reinit,
    init_snapshot: Option<&ModelParams>,
) -> Result<ModelParams> {
    let mut next = model.clone();
    apply_mask_in_place(&mut next, mask, reinit, init_snapshot)?;
    Ok(next)
}

/// Flat weight vectors of the named layers.
pub fn layer_vectors(model: &ModelParams, names: &[String]) -> Result<LayerVectors> {
    names
        .iter()
        .map(|n| Ok((n.clone(), crate::model::layer_weight_vector(model, n)?)))
        .collect()
}

/// `after − before` per named layer.
pub fn weight_delta(
    before: &ModelParams,
    after: &ModelParams,
    names: &[String],
) -> Result<LayerVectors> {
    names
        .iter()
        .map(|n| {
            let b = before.layer(n)?.weight.data();
            let a = after.layer(n)?.weight.data();
            if a.len() != b.len() {
                return Err(Error::shape("weight delta", &[a.len()], &[b.len()]));
            }
            Ok((n.clone(), a.iter().zip(b).map(|(x, y)| x - y).collect()))
        })
        .collect()
}
