use super::{full_mask, Attribution, Coalition, Game, Method, EXACT_PLAYER_LIMIT};
use crate::error::{ensure_len, Error, Result};

/// Coalitions are evaluated through [`Game::values`] in blocks of this size.
const EVAL_BLOCK: u64 = 1 << 16;

/// Shapley coefficient `|S|!(m−|S|−1)!/m!`, computed as `1 / (m·C(m−1, s))`.
pub fn shapley_weight(num_players: usize, coalition_size: usize) -> Result<f64> {
    if num_players == 0 || coalition_size >= num_players {
        return Err(Error::Domain(format!(
            "coalition size {coalition_size} out of range for {num_players} players"
        )));
    }
    let binom = binomial(num_players as u128 - 1, coalition_size as u128);
    Ok(1.0 / (num_players as f64 * binom as f64))
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (1..=k).fold(1u128, |acc, j| acc * (n - k + j) / j)
}

/// Exact Shapley values by full enumeration; every coalition is evaluated
/// exactly once.
pub fn shapley_exact<G: Game + ?Sized>(game: &mut G) -> Result<Attribution> {
    let m = game.num_players();
    let weights = (0..m)
        .map(|s| shapley_weight(m, s))
        .collect::<Result<Vec<_>>>()?;
    shapley_exact_with_weight(game, |_, s| weights[s])
}

/// Exact enumeration with a caller-supplied coefficient `weight(m, |S|)`.
/// Only useful for negative controls; [`shapley_exact`] is the real thing.
pub fn shapley_exact_with_weight<G, W>(game: &mut G, weight: W) -> Result<Attribution>
where
    G: Game + ?Sized,
    W: Fn(usize, usize) -> f64,
{
    let m = game.num_players();
    if m == 0 || m > EXACT_PLAYER_LIMIT {
        return Err(Error::Domain(format!(
            "exact enumeration supports 1..={EXACT_PLAYER_LIMIT} players, got {m}; use sampling"
        )));
    }
    let table = tabulate(game)?;
    let phi = shapley_from_table(m, &table, weight)?;
    Ok(Attribution {
        phi,
        v_empty: table[0],
        v_grand: table[full_mask(m) as usize],
        method: Method::Exact,
        evaluations: table.len(),
        std_errors: None,
    })
}

/// Evaluates every coalition once, indexed by mask.
pub(crate) fn tabulate<G: Game + ?Sized>(game: &mut G) -> Result<Vec<f64>> {
    let m = game.num_players();
    let total = 1u64 << m;
    let mut table = Vec::with_capacity(total as usize);
    let mut start = 0u64;
    while start < total {
        let end = (start + EVAL_BLOCK).min(total);
        let block: Vec<Coalition> = (start..end)
            .map(|mask| Coalition::new(mask, m))
            .collect::<Result<_>>()?;
        let values = game.values(&block)?;
        ensure_len("game values", values.len(), block.len())?;
        table.extend(values);
        start = end;
    }
    Ok(table)
}

/// `φ_i = Σ_{S∌i} weight(m, |S|)·(v(S∪{i}) − v(S))` over a full value table.
pub fn shapley_from_table<W>(num_players: usize, table: &[f64], weight: W) -> Result<Vec<f64>>
where
    W: Fn(usize, usize) -> f64,
{
    let m = num_players;
    if m == 0 || m > EXACT_PLAYER_LIMIT {
        return Err(Error::Domain(format!("unsupported player count {m}")));
    }
    ensure_len("value table", table.len(), 1 << m)?;
    let w: Vec<f64> = (0..m).map(|s| weight(m, s)).collect();
    let mut phi = vec![0.0; m];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in (0..table.len()).filter(|mask| mask & bit == 0) {
            let s = mask.count_ones() as usize;
            acc += w[s] * (table[mask | bit] - table[mask]);
        }
        *phi_i = acc;
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::{CountingGame, FnGame, TableGame};

    #[test]
    fn weight_examples() {
        assert_eq!(shapley_weight(1, 0).unwrap(), 1.0);
        // 0!·4!/5! = 24/120
        assert!((shapley_weight(5, 0).unwrap() - 0.2).abs() < 1e-15);
        // 2!·2!/5! = 4/120
        assert!((shapley_weight(5, 2).unwrap() - 1.0 / 30.0).abs() < 1e-15);
        assert!(shapley_weight(5, 5).is_err());
        assert!(shapley_weight(0, 0).is_err());
    }

    #[test]
    fn weight_matches_factorial_ratio() {
        let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>().max(1.0);
        for m in 1..=15 {
            for s in 0..m {
                let ratio = fact(s) * fact(m - s - 1) / fact(m);
                let w = shapley_weight(m, s).unwrap();
                assert!((w - ratio).abs() <= 1e-14 * ratio, "m={m} s={s}");
            }
        }
        // Large m stays finite where factorials would overflow.
        let w = shapley_weight(30, 15).unwrap();
        assert!(w > 0.0 && w.is_finite());
    }

    #[test]
    fn additive_game_returns_weights() {
        let mut g = TableGame::additive(&[1.0, 2.0, 3.0]).unwrap();
        let a = shapley_exact(&mut g).unwrap();
        for (p, c) in a.phi.iter().zip([1.0, 2.0, 3.0]) {
            assert!((p - c).abs() < 1e-12);
        }
    }

    #[test]
    fn two_player_hand_enumeration() {
        // φ1 = ½(1−0) + ½(4−2) = 1.5, φ2 = ½(2−0) + ½(4−1) = 2.5
        let mut g = TableGame::new(2, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let a = shapley_exact(&mut g).unwrap();
        assert_eq!(a.phi, vec![1.5, 2.5]);
        assert_eq!((a.v_empty, a.v_grand), (0.0, 4.0));
        assert_eq!(a.method, Method::Exact);
    }

    #[test]
    fn null_player_gets_zero() {
        let mut g = FnGame::new(4, |c: Coalition| {
            let base = c.without(3).mask() as f64;
            base * base * 0.1
        })
        .unwrap();
        let a = shapley_exact(&mut g).unwrap();
        assert!(a.phi[3].abs() < 1e-12);
    }

    #[test]
    fn evaluates_each_coalition_once() {
        for m in 1..=8 {
            let mut g = CountingGame::new(TableGame::additive(&vec![1.0; m]).unwrap());
            shapley_exact(&mut g).unwrap();
            assert_eq!(g.calls(), 1 << m);
            assert_eq!(g.distinct_calls(), 1 << m);
        }
    }

    #[test]
    fn too_many_players_is_refused() {
        let mut g = FnGame::new(31, |_| 0.0).unwrap();
        assert!(matches!(shapley_exact(&mut g), Err(Error::Domain(_))));
    }

    #[test]
    fn evaluation_failures_propagate() {
        let mut g = FnGame::new(3, |c: Coalition| if c.mask() == 5 { f64::NAN } else { 0.0 }).unwrap();
        match shapley_exact(&mut g) {
            Err(Error::Evaluation { mask, .. }) => assert_eq!(mask, 5),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }
}
