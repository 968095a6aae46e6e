use serde::{Deserialize, Serialize};

use super::exact::tabulate;
use super::{full_mask, Attribution, Coalition, Game, EXACT_COMPARISON_TOLERANCE};
use crate::error::{ensure_len, Result};

/// Above this many players, symmetric/null detection (cost `2^m`) is skipped.
pub const AXIOM_DETECTION_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCheck {
    pub i: usize,
    pub j: usize,
    /// `|φ_i − φ_j|`
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullCheck {
    pub player: usize,
    /// `|φ_player|`
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub efficiency_residual: f64,
    /// `None` when detection was refused for too many players.
    pub symmetric_pairs: Option<Vec<SymmetryCheck>>,
    pub null_players: Option<Vec<NullCheck>>,
}

impl AxiomReport {
    pub fn detection_skipped(&self) -> bool {
        self.symmetric_pairs.is_none()
    }

    pub fn max_symmetry_gap(&self) -> f64 {
        self.symmetric_pairs
            .iter()
            .flatten()
            .map(|c| c.gap)
            .fold(0.0, f64::max)
    }

    pub fn max_null_magnitude(&self) -> f64 {
        self.null_players
            .iter()
            .flatten()
            .map(|c| c.magnitude)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.efficiency_residual <= tolerance
            && self.max_symmetry_gap() <= tolerance
            && self.max_null_magnitude() <= tolerance
    }
}

/// Checks an attribution against the game it was computed for.
///
/// Efficiency is always measured against freshly evaluated `v(N)` and `v(∅)`.
/// Symmetric pairs and null players are detected exhaustively, which is only
/// attempted for at most [`AXIOM_DETECTION_LIMIT`] players.
pub fn check_axioms<G: Game + ?Sized>(game: &mut G, attribution: &Attribution) -> Result<AxiomReport> {
    let m = game.num_players();
    ensure_len("attribution", attribution.phi.len(), m)?;
    let phi = &attribution.phi;

    if m > AXIOM_DETECTION_LIMIT {
        let ends = game.values(&[Coalition::empty(m), Coalition::full(m)])?;
        return Ok(AxiomReport {
            efficiency_residual: (attribution.total() - (ends[1] - ends[0])).abs(),
            symmetric_pairs: None,
            null_players: None,
        });
    }

    let table = tabulate(game)?;
    let full = full_mask(m) as usize;
    let efficiency_residual = (attribution.total() - (table[full] - table[0])).abs();

    let same = |a: f64, b: f64| (a - b).abs() <= EXACT_COMPARISON_TOLERANCE;
    let mut null_players = Vec::new();
    for i in 0..m {
        let bit = 1usize << i;
        let is_null = (0..table.len())
            .filter(|s| s & bit == 0)
            .all(|s| same(table[s | bit], table[s]));
        if is_null {
            null_players.push(NullCheck {
                player: i,
                magnitude: phi[i].abs(),
            });
        }
    }

    let mut symmetric_pairs = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let (bi, bj) = (1usize << i, 1usize << j);
            let symmetric = (0..table.len())
                .filter(|s| s & (bi | bj) == 0)
                .all(|s| same(table[s | bi], table[s | bj]));
            if symmetric {
                symmetric_pairs.push(SymmetryCheck {
                    i,
                    j,
                    gap: (phi[i] - phi[j]).abs(),
                });
            }
        }
    }

    Ok(AxiomReport {
        efficiency_residual,
        symmetric_pairs: Some(symmetric_pairs),
        null_players: Some(null_players),
    })
}
