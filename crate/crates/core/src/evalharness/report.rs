use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{LabError, Result};

/// Outcome of a paired comparison of sampler `a` against sampler `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `(wins + ties / 2) / n`.
    pub win_ratio: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Two-sided sign test, ties excluded.
    pub p_value: f64,
}

/// Two-sided sign test p-value for `wins` against `losses` under a fair coin.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 || wins == losses {
        return 1.0;
    }
    let k = wins.min(losses) as u64;
    let binom = Binomial::new(0.5, n as u64).expect("p = 0.5 is valid");
    (2.0 * binom.cdf(k)).min(1.0)
}

impl EvalReport {
    /// Builds a report from per-item scores of `a` and `b`.
    pub fn from_scores(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(LabError::Shape {
                context: "paired scores",
                expected: vec![a.len()],
                actual: vec![b.len()],
            });
        }
        if a.is_empty() {
            return Err(LabError::argument("paired evaluation needs at least one item"));
        }
        let (mut wins, mut losses, mut ties) = (0, 0, 0);
        for (x, y) in a.iter().zip(b) {
            if !(x.is_finite() && y.is_finite()) {
                return Err(LabError::Numeric {
                    context: "paired score".into(),
                    value: if x.is_finite() { *y } else { *x },
                });
            }
            if x > y {
                wins += 1;
            } else if x < y {
                losses += 1;
            } else {
                ties += 1;
            }
        }
        let n = a.len();
        Ok(Self {
            n,
            wins,
            losses,
            ties,
            win_ratio: (2 * wins + ties) as f64 / (2 * n) as f64,
            mean_a: a.iter().sum::<f64>() / n as f64,
            mean_b: b.iter().sum::<f64>() / n as f64,
            p_value: sign_test(wins, losses),
        })
    }

    /// The same comparison seen from `b`.
    pub fn swapped(&self) -> Self {
        Self {
            wins: self.losses,
            losses: self.wins,
            win_ratio: (2 * self.losses + self.ties) as f64 / (2 * self.n) as f64,
            mean_a: self.mean_b,
            mean_b: self.mean_a,
            ..*self
        }
    }

    /// True when `a` wins more often than `b` at significance `level`.
    pub fn significantly_better(&self, level: f64) -> bool {
        self.wins > self.losses && self.p_value < level
    }
}
