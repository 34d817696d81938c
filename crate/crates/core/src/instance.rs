//! Small random problem instances for tests, examples and self-checks.

use rand::Rng;

use crate::channel::ChannelRealization;
use crate::error::Result;
use crate::feature_model::FeatureStats;
use crate::linalg::{gaussian_matrix, rscale, CMat, Field};
use crate::objective::{project_power, Mcr2Params, PrecoderSet};
use crate::seeds;

/// A channel, feature statistics, objective parameters and a feasible precoder.
#[derive(Clone, Debug)]
pub struct Instance {
    pub chan: ChannelRealization,
    pub stats: FeatureStats,
    pub params: Mcr2Params,
    pub v: PrecoderSet,
}

/// Random class moments: `J` classes over `n` signal dimensions. Complex-mode
/// classes are improper, `x = L₁ w + L₂ r` with circular `w` and real `r`.
pub fn random_stats<R: Rng + ?Sized>(
    field: Field,
    device_dims: Vec<usize>,
    classes: usize,
    rng: &mut R,
) -> Result<FeatureStats> {
    let n: usize = device_dims.iter().sum();
    let priors = {
        let w: Vec<f64> = (0..classes).map(|_| rng.random_range(0.5..1.5)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let mut means = Vec::new();
    let mut covs = Vec::new();
    let mut relations = Vec::new();
    for _ in 0..classes {
        means.push(gaussian_matrix(n, 1, field, rng).column(0).into_owned());
        let l1 = rscale(&gaussian_matrix(n, n, field, rng), 0.5 / (n as f64).sqrt());
        match field {
            Field::Real => {
                let cov = &l1 * l1.adjoint();
                relations.push(cov.clone());
                covs.push(cov);
            }
            Field::Complex => {
                let l2 = rscale(&gaussian_matrix(n, n, field, rng), 0.3 / (n as f64).sqrt());
                covs.push(&l1 * l1.adjoint() + &l2 * l2.adjoint());
                relations.push(&l2 * l2.transpose());
            }
        }
    }
    FeatureStats::from_class_moments(field, device_dims, priors, means, covs, relations)
}

/// A random feasible precoder on the power boundary.
pub fn random_feasible<R: Rng + ?Sized>(
    tx_dims: &[usize],
    stats: &FeatureStats,
    budgets: &[f64],
    rng: &mut R,
) -> Result<PrecoderSet> {
    let blocks: Vec<CMat> = tx_dims
        .iter()
        .zip(&stats.device_dims)
        .map(|(&t, &n)| gaussian_matrix(t, n, stats.field, rng))
        .collect();
    let v = PrecoderSet::new(blocks, budgets.to_vec())?;
    Ok(scale_to_boundary(&v, stats))
}

/// Scales every block with non-zero power onto its budget boundary.
pub fn scale_to_boundary(v: &PrecoderSet, stats: &FeatureStats) -> PrecoderSet {
    let blocks = v
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let p = v.power(k, stats);
            if p > 0.0 {
                rscale(b, (v.budgets[k] / p).sqrt())
            } else {
                b.clone()
            }
        })
        .collect();
    project_power(
        &PrecoderSet {
            blocks,
            budgets: v.budgets.clone(),
        },
        stats,
    )
}

/// `K` devices with `N_t` antennas and 2 signal dimensions each, `N_r`
/// receive antennas, `T` slots, three classes, unit-variance Gaussian channel
/// with noise power 0.5, `ε = 1`, budgets 2.
pub fn random_instance(field: Field, devices: usize, tx: usize, rx: usize, slots: usize, seed: u64) -> Instance {
    random_instance_with(field, devices, tx, rx, slots, 2, 3, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn random_instance_with(
    field: Field,
    devices: usize,
    tx: usize,
    rx: usize,
    slots: usize,
    signal_dim: usize,
    classes: usize,
    seed: u64,
) -> Instance {
    let mut rng = seeds::rng(seed);
    let per_slot = (0..devices)
        .map(|_| (0..slots).map(|_| gaussian_matrix(rx, tx, field, &mut rng)).collect())
        .collect();
    let chan = ChannelRealization::new(field, per_slot, 0.5).expect("valid channel shapes");
    let stats = random_stats(field, vec![signal_dim; devices], classes, &mut rng).expect("valid moments");
    let params = Mcr2Params::new(1.0, &chan).expect("positive precision");
    let tx_dims: Vec<usize> = (0..devices).map(|k| chan.tx_dim(k)).collect();
    let v = random_feasible(&tx_dims, &stats, &vec![2.0; devices], &mut rng).expect("valid budgets");
    Instance { chan, stats, params, v }
}
