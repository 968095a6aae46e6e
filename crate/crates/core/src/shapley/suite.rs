//! Randomised axiom suite over table games.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::exact::{shapley_exact_with_weight, shapley_weight};
use super::{Game, TableGame, AXIOM_TOLERANCE, EXACT_COMPARISON_TOLERANCE};
use crate::error::{Error, Result};

/// Null-player payoffs are sums of exact zeros, so they get the tight bound.
pub const NULL_TOLERANCE: f64 = EXACT_COMPARISON_TOLERANCE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteConfig {
    pub games: usize,
    pub min_players: usize,
    pub max_players: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            games: 1000,
            min_players: 1,
            max_players: 10,
            seed: 0,
        }
    }
}

/// Worst residual per axiom over the suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SuiteReport {
    pub games: usize,
    pub max_efficiency: f64,
    pub max_null: f64,
    pub max_symmetry: f64,
    pub max_linearity: f64,
}

impl SuiteReport {
    pub fn efficiency_ok(&self) -> bool {
        self.max_efficiency < AXIOM_TOLERANCE
    }
    pub fn null_ok(&self) -> bool {
        self.max_null < NULL_TOLERANCE
    }
    pub fn symmetry_ok(&self) -> bool {
        self.max_symmetry < AXIOM_TOLERANCE
    }
    pub fn linearity_ok(&self) -> bool {
        self.max_linearity < AXIOM_TOLERANCE
    }
    pub fn passed(&self) -> bool {
        self.efficiency_ok() && self.null_ok() && self.symmetry_ok() && self.linearity_ok()
    }
}

/// Runs the suite with the true Shapley coefficients.
pub fn run_axiom_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    run_axiom_suite_with_weight(config, |m, s| shapley_weight(m, s).expect("size below player count"))
}

/// Runs the suite with a caller-supplied coefficient `weight(m, |S|)`.
///
/// Game `k` has `min_players + k mod (range width)` players. Each game checks
/// efficiency on a random game, null-player on a copy where one player is
/// made dummy, symmetry on a copy symmetrised over one pair, and linearity
/// on a random combination with a second game.
pub fn run_axiom_suite_with_weight<W>(config: &SuiteConfig, weight: W) -> Result<SuiteReport>
where
    W: Fn(usize, usize) -> f64,
{
    if config.min_players == 0 || config.min_players > config.max_players || config.max_players > 20 {
        return Err(Error::Domain(format!(
            "player range {}..={} must lie within 1..=20",
            config.min_players, config.max_players
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let span = config.max_players - config.min_players + 1;
    let mut report = SuiteReport {
        games: config.games,
        ..SuiteReport::default()
    };
    let phi = |game: &mut TableGame| shapley_exact_with_weight(game, &weight).map(|a| a.phi);

    for k in 0..config.games {
        let m = config.min_players + k % span;
        let mut u = TableGame::random(m, &mut rng)?;
        let phi_u = phi(&mut u)?;
        let total: f64 = phi_u.iter().sum();
        let gap = (total - (u.table()[(1 << m) - 1] - u.table()[0])).abs();
        report.max_efficiency = report.max_efficiency.max(gap);

        let dummy = rng.random_range(0..m);
        let mut nulled = remap(&u, |mask| mask & !(1 << dummy))?;
        report.max_null = report.max_null.max(phi(&mut nulled)?[dummy].abs());

        if m >= 2 {
            let i = rng.random_range(0..m);
            let j = (i + 1 + rng.random_range(0..m - 1)) % m;
            let table = u.table();
            let values = (0..1u64 << m)
                .map(|mask| table[mask as usize] + table[swap_bits(mask, i, j) as usize])
                .map(|v| v / 2.0)
                .collect();
            let mut sym = TableGame::new(m, values)?;
            let p = phi(&mut sym)?;
            report.max_symmetry = report.max_symmetry.max((p[i] - p[j]).abs());
        }

        let mut w = TableGame::random(m, &mut rng)?;
        let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let values = u.table().iter().zip(w.table()).map(|(x, y)| a * x + b * y).collect();
        let mut combo = TableGame::new(m, values)?;
        let phi_w = phi(&mut w)?;
        let phi_c = phi(&mut combo)?;
        for p in 0..m {
            let err = (phi_c[p] - (a * phi_u[p] + b * phi_w[p])).abs();
            report.max_linearity = report.max_linearity.max(err);
        }
        debug_assert_eq!(u.num_players(), m);
    }
    Ok(report)
}

fn remap(game: &TableGame, f: impl Fn(u64) -> u64) -> Result<TableGame> {
    let m = game.num_players();
    let values = (0..1u64 << m).map(|mask| game.table()[f(mask) as usize]).collect();
    TableGame::new(m, values)
}

fn swap_bits(mask: u64, i: usize, j: usize) -> u64 {
    let (bi, bj) = ((mask >> i) & 1, (mask >> j) & 1);
    if bi == bj {
        mask
    } else {
        mask ^ ((1 << i) | (1 << j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = run_axiom_suite(&SuiteConfig {
            games: 60,
            ..SuiteConfig::default()
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.max_null, 0.0);
    }

    #[test]
    fn uniform_weights_break_efficiency_only() {
        let report = run_axiom_suite_with_weight(
            &SuiteConfig {
                games: 30,
                ..SuiteConfig::default()
            },
            |m, _| 1.0 / (1u64 << (m - 1)) as f64,
        )
        .unwrap();
        assert!(!report.efficiency_ok());
        assert!(report.null_ok() && report.symmetry_ok() && report.linearity_ok());
    }

    #[test]
    fn bad_ranges_are_rejected() {
        for (lo, hi) in [(0, 3), (4, 3), (1, 21)] {
            let cfg = SuiteConfig {
                min_players: lo,
                max_players: hi,
                ..SuiteConfig::default()
            };
            assert!(run_axiom_suite(&cfg).is_err());
        }
    }

    #[test]
    fn swap_bits_examples() {
        assert_eq!(swap_bits(0b001, 0, 2), 0b100);
        assert_eq!(swap_bits(0b101, 0, 2), 0b101);
        assert_eq!(swap_bits(0b010, 0, 2), 0b010);
    }
}
