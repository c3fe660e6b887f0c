use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamStore;

/// Which scalar coordinates a gradient check perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinates {
    All,
    /// `count` coordinates drawn without replacement from the whole store.
    Sample { count: usize, seed: u64 },
}

/// Compares the gradients stored in `params` against central differences of
/// `loss`. Returns the largest relative error, with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(params: &ParamStore, mut loss: F, h: f64, coords: Coordinates) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut flat: Vec<(usize, usize)> = Vec::with_capacity(params.num_scalars());
    for (p, t) in params.values().iter().enumerate() {
        flat.extend((0..t.len()).map(|i| (p, i)));
    }
    let chosen: Vec<(usize, usize)> = match coords {
        Coordinates::All => flat,
        Coordinates::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = count.min(flat.len());
            let mut picks: Vec<usize> = sample(&mut rng, flat.len(), n).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|k| flat[k]).collect()
        }
    };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (p, i) in chosen {
        let orig = params.values()[p].data()[i];
        probe.values_mut_raw(p)[i] = orig + h;
        let up = loss(&probe);
        probe.values_mut_raw(p)[i] = orig - h;
        let down = loss(&probe);
        probe.values_mut_raw(p)[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = params.grads()[p].data()[i];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}

impl ParamStore {
    fn values_mut_raw(&mut self, p: usize) -> &mut [f64] {
        self.value_mut(super::ParamId(p)).data_mut()
    }
}
