//! Deep ensembles: `M` structurally identical models trained on the same
//! data from different seeded initializations. The pointwise mean is the
//! prediction, the population standard deviation the heuristic uncertainty,
//! and `mean ± 1.96 σ` the uncalibrated interval the conformal layer fixes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::scalar::{from_f64, Scalar};
use crate::train::{train, Loss, TrainConfig, TrainError, TrainHistory};

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("an ensemble needs at least 2 members, got {got}")]
    TooFewMembers { got: usize },
    #[error("training member {member} failed: {source}")]
    Member {
        member: usize,
        #[source]
        source: TrainError,
    },
}

/// A homogeneous set of trained models; member `j` was initialized with
/// `member_seeds[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble<M> {
    pub members: Vec<M>,
    pub member_seeds: Vec<u64>,
}

impl<M> Ensemble<M> {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Pointwise ensemble mean and population standard deviation (divisor `M`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats<S> {
    pub mean: S,
    pub std: S,
}

fn run_members<S, M>(
    seeds: &[u64],
    results: Vec<Result<(M, TrainHistory<S>), TrainError>>,
) -> Result<(Ensemble<M>, Vec<TrainHistory<S>>), EnsembleError>
where
    S: Scalar,
    M: Model<S>,
{
    let mut members = Vec::with_capacity(results.len());
    let mut histories = Vec::with_capacity(results.len());
    for (j, res) in results.into_iter().enumerate() {
        // scan in member order so the reported failure index does not
        // depend on scheduling
        let (model, history) = res.map_err(|source| EnsembleError::Member { member: j, source })?;
        members.push(model);
        histories.push(history);
    }
    Ok((
        Ensemble {
            members,
            member_seeds: seeds.to_vec(),
        },
        histories,
    ))
}

/// Trains `count` members concurrently, member `j` seeded with
/// `base_seed + j`; the result is identical to the serial variant.
pub fn train_ensemble<S, M, L, F>(
    factory: &F,
    loss: &L,
    cfg: &TrainConfig,
    count: usize,
    base_seed: u64,
) -> Result<(Ensemble<M>, Vec<TrainHistory<S>>), EnsembleError>
where
    S: Scalar,
    M: Model<S> + Send,
    L: Loss<S, M> + Sync,
    F: Fn(u64) -> M + Sync,
{
    if count < 2 {
        return Err(EnsembleError::TooFewMembers { got: count });
    }
    let seeds: Vec<u64> = (0..count as u64).map(|j| base_seed + j).collect();
    let results: Vec<Result<(M, TrainHistory<S>), TrainError>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut model = factory(seed);
            train(&mut model, loss, cfg).map(|h| (model, h))
        })
        .collect();
    run_members(&seeds, results)
}

/// Sequential reference implementation of [`train_ensemble`].
pub fn train_ensemble_serial<S, M, L, F>(
    factory: &F,
    loss: &L,
    cfg: &TrainConfig,
    count: usize,
    base_seed: u64,
) -> Result<(Ensemble<M>, Vec<TrainHistory<S>>), EnsembleError>
where
    S: Scalar,
    M: Model<S>,
    L: Loss<S, M>,
    F: Fn(u64) -> M,
{
    if count < 2 {
        return Err(EnsembleError::TooFewMembers { got: count });
    }
    let seeds: Vec<u64> = (0..count as u64).map(|j| base_seed + j).collect();
    let results: Vec<Result<(M, TrainHistory<S>), TrainError>> = seeds
        .iter()
        .map(|&seed| {
            let mut model = factory(seed);
            train(&mut model, loss, cfg).map(|h| (model, h))
        })
        .collect();
    run_members(&seeds, results)
}

/// `mean = (1/M) sum_j y_j`, `std = sqrt((1/M) sum_j (y_j - mean)^2)` —
/// the population form with divisor `M`, not `M - 1`.
pub fn ensemble_stats<S: Scalar, M: Model<S>>(ens: &Ensemble<M>, x: &[S]) -> EnsembleStats<S> {
    assert!(!ens.members.is_empty(), "ensemble has no members");
    assert!(
        ens.members.iter().all(|m| m.out_width() == 1),
        "ensemble statistics are defined for scalar outputs"
    );
    let count = from_f64::<S>(ens.members.len() as f64);
    let outputs: Vec<S> = ens.members.iter().map(|m| m.forward(x)[0]).collect();
    let mean = outputs.iter().fold(S::zero(), |acc, &y| acc + y) / count;
    let var = outputs
        .iter()
        .fold(S::zero(), |acc, &y| acc + (y - mean) * (y - mean))
        / count;
    EnsembleStats {
        mean,
        std: var.sqrt(),
    }
}

/// The heuristic `mean ± kappa sigma` interval (`kappa = 1.96` in the
/// experiments).
pub fn sigma_interval<S: Scalar>(stats: &EnsembleStats<S>, kappa: S) -> (S, S) {
    let half = kappa * stats.std;
    (stats.mean - half, stats.mean + half)
}
