//! Cooperative-game core: coalitions as bitmasks, exact Shapley values by
//! full enumeration, a permutation-sampling estimator, and executable checks
//! for the efficiency, null-player and symmetry axioms.

mod axioms;
mod exact;
mod game;
mod sampled;
mod suite;

pub use axioms::{check_axioms, AxiomReport, NullCheck, SymmetryCheck, AXIOM_DETECTION_LIMIT};
pub use exact::{shapley_exact, shapley_exact_with_weight, shapley_from_table, shapley_weight};
pub use game::{CountingGame, FnGame, Game, TableGame};
pub use sampled::shapley_sampled;
pub use suite::{run_axiom_suite, run_axiom_suite_with_weight, SuiteConfig, SuiteReport, NULL_TOLERANCE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest player count for which exact enumeration is attempted.
pub const EXACT_PLAYER_LIMIT: usize = 30;
/// Largest player count a [`Coalition`] mask can hold.
pub const MAX_PLAYERS: usize = 63;
/// Residual bound for efficiency/symmetry/linearity checks on exact results.
pub const AXIOM_TOLERANCE: f64 = 1e-9;
/// Tolerance used when deciding that two game values are equal.
pub const EXACT_COMPARISON_TOLERANCE: f64 = 1e-12;

/// A subset of players `0..num_players`, bit `i` set when player `i` is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition {
    mask: u64,
    num_players: usize,
}

impl Coalition {
    pub fn new(mask: u64, num_players: usize) -> Result<Self> {
        check_players(num_players)?;
        if mask >> num_players != 0 {
            return Err(Error::Domain(format!(
                "mask {mask:#b} has players outside 0..{num_players}"
            )));
        }
        Ok(Self { mask, num_players })
    }

    pub fn empty(num_players: usize) -> Self {
        Self { mask: 0, num_players }
    }

    pub fn full(num_players: usize) -> Self {
        Self {
            mask: full_mask(num_players),
            num_players,
        }
    }

    pub fn from_members(members: &[usize], num_players: usize) -> Result<Self> {
        check_players(num_players)?;
        let mut mask = 0u64;
        for &i in members {
            if i >= num_players {
                return Err(Error::Domain(format!("player {i} out of range 0..{num_players}")));
            }
            mask |= 1 << i;
        }
        Ok(Self { mask, num_players })
    }

    pub fn mask(self) -> u64 {
        self.mask
    }

    pub fn num_players(self) -> usize {
        self.num_players
    }

    pub fn len(self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.mask == 0
    }

    pub fn contains(self, player: usize) -> bool {
        player < self.num_players && self.mask & (1 << player) != 0
    }

    pub fn with(self, player: usize) -> Self {
        debug_assert!(player < self.num_players);
        Self {
            mask: self.mask | (1 << player),
            ..self
        }
    }

    pub fn without(self, player: usize) -> Self {
        Self {
            mask: self.mask & !(1 << player),
            ..self
        }
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..self.num_players).filter(move |&i| self.mask & (1 << i) != 0)
    }
}

fn check_players(num_players: usize) -> Result<()> {
    if num_players == 0 || num_players > MAX_PLAYERS {
        return Err(Error::Domain(format!(
            "player count must be in 1..={MAX_PLAYERS}, got {num_players}"
        )));
    }
    Ok(())
}

pub(crate) fn full_mask(num_players: usize) -> u64 {
    if num_players >= 64 {
        u64::MAX
    } else {
        (1u64 << num_players) - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Exact,
    Sampled { permutations: usize, seed: u64 },
}

/// Per-player Shapley values together with the endpoint values they split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub phi: Vec<f64>,
    pub v_empty: f64,
    pub v_grand: f64,
    pub method: Method,
    /// Value-function calls issued by the estimator.
    pub evaluations: usize,
    /// Standard error of each sampled estimate; absent for exact results and
    /// single-permutation runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.phi.iter().sum()
    }

    /// `|Σφ − (v(N) − v(∅))|`.
    pub fn efficiency_residual(&self) -> f64 {
        (self.total() - (self.v_grand - self.v_empty)).abs()
    }
}
