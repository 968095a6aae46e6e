use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Attribution, Coalition, Game, Method};
use crate::error::{ensure_len, Error, Result};

/// Permutation-sampling estimate: the mean, over uniformly drawn player
/// orders, of each player's marginal contribution to its predecessors.
///
/// Deterministic for a given seed. Each permutation costs one batched call
/// of `m` prefix evaluations; `v(∅)` is evaluated once.
pub fn shapley_sampled<G: Game + ?Sized>(
    game: &mut G,
    permutations: usize,
    seed: u64,
) -> Result<Attribution> {
    if permutations == 0 {
        return Err(Error::Domain("permutation count must be at least 1".into()));
    }
    let m = game.num_players();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();

    let v_empty = game.value(Coalition::empty(m))?;
    let mut evaluations = 1;
    let mut v_grand = v_empty;

    // Welford accumulators per player.
    let mut mean = vec![0.0; m];
    let mut m2 = vec![0.0; m];
    let mut prefixes = Vec::with_capacity(m);
    for k in 0..permutations {
        order.shuffle(&mut rng);
        prefixes.clear();
        let mut c = Coalition::empty(m);
        for &p in &order {
            c = c.with(p);
            prefixes.push(c);
        }
        let values = game.values(&prefixes)?;
        ensure_len("game values", values.len(), m)?;
        evaluations += m;

        let n = (k + 1) as f64;
        let mut prev = v_empty;
        for (&p, &v) in order.iter().zip(&values) {
            let contribution = v - prev;
            prev = v;
            let delta = contribution - mean[p];
            mean[p] += delta / n;
            m2[p] += delta * (contribution - mean[p]);
        }
        v_grand = prev;
    }

    let std_errors = (permutations > 1).then(|| {
        let p = permutations as f64;
        m2.iter().map(|s| (s / (p - 1.0) / p).sqrt()).collect()
    });

    Ok(Attribution {
        phi: mean,
        v_empty,
        v_grand,
        method: Method::Sampled { permutations, seed },
        evaluations,
        std_errors,
    })
}
