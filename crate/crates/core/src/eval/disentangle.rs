//! Co-occurrence of ground-truth modes and winning mechanisms.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::competition::{episode_pair_losses, select_winners, MechanismBank};
use crate::dataset::Episode;
use crate::envs::{Domain, InteractionMode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DisentanglementMatrix {
    pub modes: Vec<InteractionMode>,
    /// `modes.len() x M`.
    pub counts: Vec<Vec<u64>>,
}

impl DisentanglementMatrix {
    pub fn new(modes: Vec<InteractionMode>, m: usize) -> Self {
        let counts = vec![vec![0; m]; modes.len()];
        Self { modes, counts }
    }

    pub fn mechanisms(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row-normalized probabilities; rows without counts are dropped.
    pub fn normalized(&self) -> Vec<(InteractionMode, Vec<f64>)> {
        self.modes
            .iter()
            .zip(&self.counts)
            .filter_map(|(&mode, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| (mode, row.iter().map(|&c| c as f64 / n as f64).collect()))
            })
            .collect()
    }

    /// Fraction of counts on an optimal one-to-one mode/mechanism matching.
    pub fn assignment_score(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        best_matching(&self.counts) as f64 / total as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode");
        for m in 0..self.mechanisms() {
            let _ = write!(s, ",{m}");
        }
        s.push('\n');
        for (mode, row) in self.modes.iter().zip(&self.counts) {
            s.push_str(mode.name());
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }
}

/// Maximum total weight of a one-to-one matching between rows and columns,
/// by exhaustive search over injections of the smaller side.
pub fn best_matching(counts: &[Vec<u64>]) -> u64 {
    let rows = counts.len();
    let cols = counts.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0;
    }
    let (small, large) = if rows <= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let cell = |s: usize, l: usize| {
        if rows <= cols {
            counts[s][l]
        } else {
            counts[l][s]
        }
    };
    fn search(
        s: usize,
        small: usize,
        large: usize,
        used: &mut [bool],
        cell: &dyn Fn(usize, usize) -> u64,
    ) -> u64 {
        if s == small {
            return 0;
        }
        let mut best = 0;
        for l in 0..large {
            if !used[l] {
                used[l] = true;
                best = best.max(cell(s, l) + search(s + 1, small, large, used, cell));
                used[l] = false;
            }
        }
        best
    }
    search(0, small, large, &mut vec![false; large], &cell)
}

/// Counts `(mode at window start, winning mechanism)` over every window of
/// every episode and object.
pub fn disentanglement_matrix(
    bank: &MechanismBank,
    episodes: &[Episode],
    horizon: usize,
    domain: Domain,
) -> Result<DisentanglementMatrix> {
    let modes = domain.modes();
    let per_episode = episodes
        .par_iter()
        .map(|ep| {
            let mut local = vec![vec![0u64; bank.len()]; modes.len()];
            for (t, tensor) in episode_pair_losses(bank, ep, horizon)?.iter().enumerate() {
                for (i, w) in select_winners(tensor).iter().enumerate() {
                    let mode = ep.mode(t, i);
                    let row = modes.iter().position(|&m| m == mode).ok_or_else(|| {
                        Error::Shape(format!(
                            "mode {} is outside the {:?} domain",
                            mode.name(),
                            domain
                        ))
                    })?;
                    local[row][w.mechanism] += 1;
                }
            }
            Ok(local)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = DisentanglementMatrix::new(modes, bank.len());
    for local in per_episode {
        for (row, add) in matrix.counts.iter_mut().zip(local) {
            for (c, a) in row.iter_mut().zip(add) {
                *c += a;
            }
        }
    }
    Ok(matrix)
}
