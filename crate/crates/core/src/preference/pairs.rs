use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::model::{Condition, SAMPLE_DIM};
use crate::error::{LabError, Result};
use crate::preference::reward::RewardModel;
use crate::rng::SeedStream;

/// A sample together with the condition it was generated for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondSample {
    pub x: [f64; SAMPLE_DIM],
    pub c: Condition,
}

/// Ranked pair, winner first. Both samples share `condition`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub winner: [f64; SAMPLE_DIM],
    pub loser: [f64; SAMPLE_DIM],
    pub condition: usize,
}

impl PreferencePair {
    pub fn winner_sample(&self) -> CondSample {
        CondSample {
            x: self.winner,
            c: Condition::Class(self.condition),
        }
    }

    pub fn loser_sample(&self) -> CondSample {
        CondSample {
            x: self.loser,
            c: Condition::Class(self.condition),
        }
    }
}

/// Swaps winner and loser.
pub fn reverse_pair(r: &PreferencePair) -> PreferencePair {
    PreferencePair {
        winner: r.loser,
        loser: r.winner,
        condition: r.condition,
    }
}

pub fn reverse_pairs(pairs: &[PreferencePair]) -> Vec<PreferencePair> {
    pairs.iter().map(reverse_pair).collect()
}

/// Draws `n_pairs` same-condition sample pairs and ranks them by `scorer`.
/// Exact ties are discarded, so fewer pairs may come back.
pub fn make_pairs(
    samples: &[CondSample],
    scorer: &RewardModel,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    let mut groups: BTreeMap<usize, Vec<[f64; SAMPLE_DIM]>> = BTreeMap::new();
    for s in samples {
        let class = s
            .c
            .class()
            .ok_or_else(|| LabError::data("preference samples need a real condition"))?;
        groups.entry(class).or_default().push(s.x);
    }
    if groups.is_empty() {
        return Err(LabError::data("no samples to pair"));
    }
    if let Some((c, g)) = groups.iter().find(|(_, g)| g.len() < 2) {
        return Err(LabError::data(format!(
            "condition {c} has {} sample(s); pairing needs at least 2",
            g.len()
        )));
    }
    let keys: Vec<usize> = groups.keys().copied().collect();
    let mut rng = SeedStream::new(seed).rng("make_pairs", 0);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let c = keys[rng.random_range(0..keys.len())];
        let g = &groups[&c];
        let i = rng.random_range(0..g.len());
        let mut j = rng.random_range(0..g.len() - 1);
        if j >= i {
            j += 1;
        }
        let (w, l) = match scorer.compare(&g[i], &g[j], Condition::Class(c))? {
            Ordering::Greater => (g[i], g[j]),
            Ordering::Less => (g[j], g[i]),
            Ordering::Equal => continue,
        };
        pairs.push(PreferencePair {
            winner: w,
            loser: l,
            condition: c,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Permute condition ids across the batch.
    ShuffleCondition,
    /// Add isotropic Gaussian noise of std `strength` to each loser.
    CorruptLoser,
}

pub fn perturb_pairs(
    pairs: &[PreferencePair],
    mode: Perturbation,
    strength: f64,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(LabError::argument(format!(
            "perturbation strength must lie in [0, 1], got {strength}"
        )));
    }
    let mut rng = SeedStream::new(seed).rng("perturb_pairs", 0);
    let mut out = pairs.to_vec();
    match mode {
        Perturbation::ShuffleCondition => {
            // strength is the fraction of pairs taking part in the permutation
            let mut idx: Vec<usize> = (0..out.len())
                .filter(|_| strength >= 1.0 || rng.random::<f64>() < strength)
                .collect();
            let mut conds: Vec<usize> = idx.iter().map(|&i| out[i].condition).collect();
            conds.shuffle(&mut rng);
            for (i, c) in idx.drain(..).zip(conds) {
                out[i].condition = c;
            }
        }
        Perturbation::CorruptLoser => {
            if strength > 0.0 {
                for p in &mut out {
                    for v in &mut p.loser {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += strength * z;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn pairs_to_jsonl(pairs: &[PreferencePair]) -> Result<String> {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&serde_json::to_string(p)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[PreferencePair]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(pairs_to_jsonl(pairs)?.as_bytes())
        .map_err(|e| LabError::io(path, e))
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::mixture::MixtureLayout;
    use crate::preference::reward::synthetic_reward;

    fn layout() -> MixtureLayout {
        MixtureLayout::default()
    }

    fn dataset(n: usize, seed: u64) -> Vec<CondSample> {
        let l = layout();
        let mut rng = crate::rng::rng_from_seed(seed);
        (0..n)
            .map(|i| {
                let c = i % l.num_classes;
                CondSample {
                    x: l.sample(c, &mut rng).0,
                    c: Condition::Class(c),
                }
            })
            .collect()
    }

    #[test]
    fn two_samples_rank_by_score() {
        let l = layout();
        let good = l.preferred_mode(0);
        let bad = [good[0] + 0.5, good[1] + 0.4];
        let samples = [
            CondSample { x: bad, c: Condition::Class(0) },
            CondSample { x: good, c: Condition::Class(0) },
        ];
        let pairs = make_pairs(&samples, &RewardModel::analytic(l), 5, 0).unwrap();
        assert_eq!(pairs.len(), 5);
        assert!(pairs.iter().all(|p| p.winner == good && p.loser == bad));
    }

    #[test]
    fn identical_samples_only_tie() {
        let s = CondSample { x: [0.1, 0.2], c: Condition::Class(1) };
        let pairs = make_pairs(&[s, s, s], &RewardModel::analytic(layout()), 20, 1).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn emitted_pairs_rescore_strictly() {
        let l = layout();
        let pairs = make_pairs(&dataset(100, 4), &RewardModel::analytic(l), 50, 3).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            let w = synthetic_reward(&l, &p.winner, Condition::Class(p.condition)).unwrap();
            let s = synthetic_reward(&l, &p.loser, Condition::Class(p.condition)).unwrap();
            assert!(w > s);
        }
    }

    #[test]
    fn insufficient_samples() {
        let samples = [
            CondSample { x: [0.0, 0.0], c: Condition::Class(0) },
            CondSample { x: [1.0, 0.0], c: Condition::Class(0) },
            CondSample { x: [1.0, 1.0], c: Condition::Class(1) },
        ];
        let err = make_pairs(&samples, &RewardModel::analytic(layout()), 3, 0);
        assert!(matches!(err, Err(LabError::Data(_))));
        assert!(make_pairs(&[], &RewardModel::analytic(layout()), 3, 0).is_err());
    }

    #[test]
    fn reversal_is_an_involution() {
        let p = PreferencePair { winner: [1.0, 2.0], loser: [3.0, 4.0], condition: 2 };
        let r = reverse_pair(&p);
        assert_eq!((r.winner, r.loser, r.condition), (p.loser, p.winner, 2));
        assert_eq!(reverse_pair(&r), p);
    }

    #[test]
    fn perturbation_identities() {
        let l = layout();
        let pairs = make_pairs(&dataset(60, 5), &RewardModel::analytic(l), 40, 6).unwrap();
        assert_eq!(perturb_pairs(&pairs, Perturbation::CorruptLoser, 0.0, 1).unwrap(), pairs);
        let same: Vec<_> = pairs.iter().map(|p| PreferencePair { condition: 1, ..*p }).collect();
        assert_eq!(perturb_pairs(&same, Perturbation::ShuffleCondition, 1.0, 2).unwrap(), same);
        let shuffled = perturb_pairs(&pairs, Perturbation::ShuffleCondition, 1.0, 2).unwrap();
        let mut a: Vec<_> = pairs.iter().map(|p| p.condition).collect();
        let mut b: Vec<_> = shuffled.iter().map(|p| p.condition).collect();
        assert_ne!(a, b);
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(perturb_pairs(&pairs, Perturbation::CorruptLoser, 1.5, 0).is_err());
    }

    #[test]
    fn corruption_displacement_follows_chi_mean() {
        let l = layout();
        let pairs = make_pairs(&dataset(300, 7), &RewardModel::analytic(l), 100, 8).unwrap();
        let noisy = perturb_pairs(&pairs, Perturbation::CorruptLoser, 0.1, 9).unwrap();
        let mean: f64 = pairs
            .iter()
            .zip(&noisy)
            .map(|(a, b)| ((a.loser[0] - b.loser[0]).powi(2) + (a.loser[1] - b.loser[1]).powi(2)).sqrt())
            .sum::<f64>()
            / pairs.len() as f64;
        // chi with 2 dof has mean sqrt(pi/2)
        let chi_mean = 0.1 * (std::f64::consts::PI / 2.0).sqrt();
        assert!((mean / chi_mean - 1.0).abs() < 0.1, "{mean} vs {chi_mean}");
        assert!(noisy.iter().zip(&pairs).all(|(a, b)| a.winner == b.winner));
    }

    #[test]
    fn jsonl_round_trip() {
        let pairs = make_pairs(&dataset(30, 1), &RewardModel::analytic(layout()), 10, 2).unwrap();
        let text = pairs_to_jsonl(&pairs).unwrap();
        assert_eq!(text.lines().count(), pairs.len());
        assert!(text.lines().next().unwrap().starts_with("{\"winner\":["));
        let back: Vec<PreferencePair> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, pairs);
    }
}
