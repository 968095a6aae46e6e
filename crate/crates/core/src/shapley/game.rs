use std::collections::HashSet;

use rand::Rng;

use super::{check_players, full_mask, Coalition, EXACT_PLAYER_LIMIT};
use crate::error::{ensure_len, Error, Result};

/// A cooperative game: a value for every coalition of `num_players` players.
///
/// Evaluation is serial (`&mut self`); implementations backed by remote
/// models override [`Game::values`] to batch requests.
pub trait Game {
    fn num_players(&self) -> usize;

    fn value(&mut self, coalition: Coalition) -> Result<f64>;

    fn values(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        coalitions.iter().map(|&c| self.value(c)).collect()
    }
}

impl<G: Game + ?Sized> Game for &mut G {
    fn num_players(&self) -> usize {
        (**self).num_players()
    }

    fn value(&mut self, coalition: Coalition) -> Result<f64> {
        (**self).value(coalition)
    }

    fn values(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        (**self).values(coalitions)
    }
}

/// Game given by an explicit table indexed by coalition mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGame {
    num_players: usize,
    values: Vec<f64>,
}

impl TableGame {
    pub fn new(num_players: usize, values: Vec<f64>) -> Result<Self> {
        check_players(num_players)?;
        if num_players > EXACT_PLAYER_LIMIT {
            return Err(Error::Domain(format!(
                "table games hold at most {EXACT_PLAYER_LIMIT} players"
            )));
        }
        ensure_len("game table", values.len(), 1 << num_players)?;
        Ok(Self { num_players, values })
    }

    /// Uniform values in `[-1, 1)`, with `v(∅) = 0`.
    pub fn random<R: Rng + ?Sized>(num_players: usize, rng: &mut R) -> Result<Self> {
        let n = 1usize << num_players.min(EXACT_PLAYER_LIMIT);
        let mut values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        values[0] = 0.0;
        Self::new(num_players, values)
    }

    /// Additive game `v(S) = Σ_{i∈S} c_i`.
    pub fn additive(weights: &[f64]) -> Result<Self> {
        let m = weights.len();
        check_players(m)?;
        let values = (0..1u64 << m.min(EXACT_PLAYER_LIMIT))
            .map(|mask| {
                (0..m)
                    .filter(|&i| mask & (1 << i) != 0)
                    .map(|i| weights[i])
                    .sum()
            })
            .collect();
        Self::new(m, values)
    }

    pub fn table(&self) -> &[f64] {
        &self.values
    }

    /// Pointwise sum of two games on the same players.
    pub fn sum(&self, other: &TableGame) -> Result<TableGame> {
        ensure_len("game sum", other.values.len(), self.values.len())?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        TableGame::new(self.num_players, values)
    }
}

impl Game for TableGame {
    fn num_players(&self) -> usize {
        self.num_players
    }

    fn value(&mut self, coalition: Coalition) -> Result<f64> {
        ensure_len("coalition players", coalition.num_players(), self.num_players)?;
        Ok(self.values[coalition.mask() as usize])
    }
}

/// Game backed by a closure over coalitions.
pub struct FnGame<F> {
    num_players: usize,
    f: F,
}

impl<F: FnMut(Coalition) -> f64> FnGame<F> {
    pub fn new(num_players: usize, f: F) -> Result<Self> {
        check_players(num_players)?;
        Ok(Self { num_players, f })
    }
}

impl<F: FnMut(Coalition) -> f64> Game for FnGame<F> {
    fn num_players(&self) -> usize {
        self.num_players
    }

    fn value(&mut self, coalition: Coalition) -> Result<f64> {
        let v = (self.f)(coalition);
        if !v.is_finite() {
            return Err(Error::Evaluation {
                mask: coalition.mask(),
                source: Box::new(Error::Numeric(format!("value {v} is not finite"))),
            });
        }
        Ok(v)
    }
}

/// Wraps a game and records every evaluation it receives.
pub struct CountingGame<G> {
    inner: G,
    calls: usize,
    distinct: HashSet<u64>,
}

impl<G: Game> CountingGame<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            calls: 0,
            distinct: HashSet::new(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn distinct_calls(&self) -> usize {
        self.distinct.len()
    }

    pub fn into_inner(self) -> G {
        self.inner
    }
}

impl<G: Game> Game for CountingGame<G> {
    fn num_players(&self) -> usize {
        self.inner.num_players()
    }

    fn value(&mut self, coalition: Coalition) -> Result<f64> {
        self.calls += 1;
        self.distinct.insert(coalition.mask() & full_mask(self.inner.num_players()));
        self.inner.value(coalition)
    }

    fn values(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        self.calls += coalitions.len();
        self.distinct.extend(coalitions.iter().map(|c| c.mask()));
        self.inner.values(coalitions)
    }
}
