//! Shapley values over small cooperative games given as subset-utility
//! tables indexed by bitmask.
//!
//! The "literal" convention sums `(u(S ∪ {j}) - u(S)) / C(m-1, |S|)` over
//! all `S` without the `1/m` prefactor; `normalize` applies it, which gives
//! the textbook Shapley value.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Shapley values of all `players` from a table of `2^players` utilities.
pub fn shapley_from_table(table: &[f64], players: usize, normalize: bool) -> Vec<f64> {
    assert_eq!(table.len(), 1usize << players, "utility table size");
    let weights: Vec<f64> = (0..players.max(1))
        .map(|s| 1.0 / binomial(players.saturating_sub(1), s))
        .collect();
    (0..players)
        .map(|j| {
            let bit = 1usize << j;
            let mut acc = 0.0;
            for mask in 0..table.len() {
                if mask & bit != 0 {
                    continue;
                }
                let size = mask.count_ones() as usize;
                acc += (table[mask | bit] - table[mask]) * weights[size];
            }
            if normalize {
                acc / players as f64
            } else {
                acc
            }
        })
        .collect()
}

/// Monte Carlo estimate with per-player standard errors, in the same
/// convention as [`shapley_from_table`].
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// Permutation-sampling estimator: averages each player's marginal
/// contribution over `samples` uniformly random orderings.
pub fn monte_carlo_shapley<R, F>(
    players: usize,
    samples: usize,
    normalize: bool,
    rng: &mut R,
    mut utility: F,
) -> Result<McEstimate>
where
    R: Rng + ?Sized,
    F: FnMut(u64) -> Result<f64>,
{
    // Welford running mean and squared-deviation sum per player.
    let mut mean = vec![0.0; players];
    let mut m2 = vec![0.0; players];
    let mut order: Vec<usize> = (0..players).collect();
    let empty = utility(0)?;
    for k in 1..=samples {
        order.shuffle(rng);
        let mut mask = 0u64;
        let mut prev = empty;
        for &j in &order {
            mask |= 1 << j;
            let cur = utility(mask)?;
            let x = cur - prev;
            let delta = x - mean[j];
            mean[j] += delta / k as f64;
            m2[j] += delta * (x - mean[j]);
            prev = cur;
        }
    }
    let scale = if normalize { 1.0 } else { players as f64 };
    let count = samples.max(1) as f64;
    let mut values = Vec::with_capacity(players);
    let mut std_errors = Vec::with_capacity(players);
    for j in 0..players {
        let var = if samples > 1 { m2[j] / (count - 1.0) } else { 0.0 };
        values.push(mean[j] * scale);
        std_errors.push((var / count).sqrt() * scale);
    }
    Ok(McEstimate { values, std_errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(0, 0), 1.0);
        assert_eq!(binomial(11, 5), 462.0);
        assert_eq!(binomial(2, 3), 0.0);
    }

    #[test]
    fn two_player_hand_values() {
        // bit 0 = player 1, bit 1 = player 2.
        let table = [0.1, 0.5, 0.3, 1.0];
        let phi = shapley_from_table(&table, 2, false);
        assert!((phi[0] - 1.1).abs() < 1e-12);
        assert!((phi[1] - 0.7).abs() < 1e-12);
        let norm = shapley_from_table(&table, 2, true);
        assert!((norm[0] - 0.55).abs() < 1e-12);
        assert!((norm[0] + norm[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn single_player() {
        let phi = shapley_from_table(&[0.2, 0.7], 1, false);
        assert!((phi[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn literal_and_normalized_conventions() {
        let table = [0.0, 0.5, 0.3, 1.0];
        let lit = shapley_from_table(&table, 2, false);
        assert!((lit[0] - 1.2).abs() < 1e-12 && (lit[1] - 0.8).abs() < 1e-12);
        let norm = shapley_from_table(&table, 2, true);
        assert!((norm[0] - 0.6).abs() < 1e-12 && (norm[1] - 0.4).abs() < 1e-12);
        assert!((norm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_is_exact_for_additive_games() {
        let values = [0.3, -0.1, 0.25];
        let table: Vec<f64> = (0..8u64)
            .map(|m| (0..3).filter(|j| m >> j & 1 == 1).map(|j| values[j]).sum())
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let est = monte_carlo_shapley(3, 50, true, &mut rng, |m| Ok(table[m as usize])).unwrap();
        for j in 0..3 {
            assert!((est.values[j] - values[j]).abs() < 1e-12);
            assert!(est.std_errors[j] < 1e-12);
        }
    }
}
