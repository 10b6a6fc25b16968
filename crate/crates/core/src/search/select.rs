//! Fitness, adaptive parsimony, tournament selection and annealed acceptance.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

/// Exponentially decayed count of how often each complexity level occurs.
#[derive(Debug, Clone, PartialEq)]
pub struct Frecency {
    counts: Vec<f64>,
    total: f64,
}

impl Frecency {
    pub const DECAY: f64 = 0.99;

    /// Tracks complexities `0..=maxsize`.
    pub fn new(maxsize: u32) -> Self {
        Self {
            counts: vec![0.0; maxsize as usize + 1],
            total: 0.0,
        }
    }

    pub fn add(&mut self, complexity: u32) {
        if let Some(c) = self.counts.get_mut(complexity as usize) {
            *c += 1.0;
            self.total += 1.0;
        }
    }

    pub fn decay(&mut self) {
        self.counts.iter_mut().for_each(|c| *c *= Self::DECAY);
        self.total *= Self::DECAY;
    }

    /// Fraction of the decayed mass at `complexity`; 0 when empty.
    pub fn share(&self, complexity: u32) -> f64 {
        match self.counts.get(complexity as usize) {
            Some(&c) if self.total > 0.0 => c / self.total,
            _ => 0.0,
        }
    }

    pub fn count(&self, complexity: u32) -> f64 {
        self.counts.get(complexity as usize).copied().unwrap_or(0.0)
    }
}

/// `exp(scaling * share)`: at least 1, larger for crowded complexity levels.
pub fn adaptive_parsimony_penalty(complexity: u32, frecency: &Frecency, scaling: f64) -> f64 {
    (scaling * frecency.share(complexity)).exp()
}

/// `raw * multiplier + parsimony * complexity`; non-finite raw loss maps to
/// the worst possible fitness.
pub fn penalized_fitness(raw_loss: f64, complexity: u32, multiplier: f64, parsimony: f64) -> f64 {
    if !raw_loss.is_finite() {
        return f64::INFINITY;
    }
    let f = raw_loss * multiplier + parsimony * f64::from(complexity);
    if f.is_finite() {
        f
    } else {
        f64::INFINITY
    }
}

/// Always accepts improvements and ties. A worse candidate is accepted with
/// probability `exp(-(new - old) / (alpha * temperature))` when annealing is
/// on, never otherwise.
pub fn anneal_accept<R: Rng + ?Sized>(
    old_fit: f64,
    new_fit: f64,
    temperature: f64,
    alpha: f64,
    annealing: bool,
    rng: &mut R,
) -> bool {
    if new_fit <= old_fit {
        return true;
    }
    if !annealing || !new_fit.is_finite() {
        return false;
    }
    if !old_fit.is_finite() {
        return true;
    }
    let p = (-(new_fit - old_fit) / (alpha * temperature)).exp();
    rng.random::<f64>() < p
}

/// Rank weights `p (1 - p)^k` for `k < n`, renormalized by the sampler.
#[derive(Debug, Clone)]
pub struct Tournament {
    n: usize,
    ranks: WeightedIndex<f64>,
}

impl Tournament {
    pub fn new(n: usize, p: f64) -> Self {
        assert!(n >= 1 && p > 0.0 && p <= 1.0);
        let weights: Vec<f64> = (0..n).map(|k| p * (1.0 - p).powi(k as i32)).collect();
        Self {
            n,
            ranks: WeightedIndex::new(weights).expect("first weight is positive"),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Samples `n` members without replacement, orders them by `key`
    /// (smaller is better) and returns the index of the chosen rank.
    pub fn select<R, K, F>(&self, population: usize, key: F, rng: &mut R) -> usize
    where
        R: Rng + ?Sized,
        K: PartialOrd,
        F: Fn(usize) -> K,
    {
        let n = self.n.min(population);
        let mut entrants = rand::seq::index::sample(rng, population, n).into_vec();
        entrants.sort_by(|&a, &b| {
            key(a)
                .partial_cmp(&key(b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let rank = loop {
            let k = self.ranks.sample(rng);
            if k < n {
                break k;
            }
        };
        entrants[rank]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_frecency_and_zero_scaling_are_neutral() {
        let f = Frecency::new(20);
        for c in 0..25 {
            assert_eq!(adaptive_parsimony_penalty(c, &f, 20.0), 1.0);
        }
        let mut f = Frecency::new(20);
        f.add(3);
        assert_eq!(adaptive_parsimony_penalty(3, &f, 0.0), 1.0);
    }

    #[test]
    fn penalty_ratio_follows_share_gap() {
        let mut f = Frecency::new(20);
        for _ in 0..9 {
            f.add(5);
        }
        f.add(7);
        let ratio = adaptive_parsimony_penalty(5, &f, 20.0) / adaptive_parsimony_penalty(7, &f, 20.0);
        assert!((ratio / (20.0f64 * 0.8).exp() - 1.0).abs() < 1e-12);
        f.decay();
        assert!((f.share(5) - 0.9).abs() < 1e-12);
        assert!((f.count(5) - 9.0 * 0.99).abs() < 1e-12);
    }

    #[test]
    fn fitness_examples() {
        assert!((penalized_fitness(0.0, 5, 1.0, 0.0032) - 0.016).abs() < 1e-15);
        assert_eq!(penalized_fitness(f64::NAN, 5, 1.0, 0.0032), f64::INFINITY);
        assert_eq!(penalized_fitness(f64::INFINITY, 1, 1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn acceptance_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert!(anneal_accept(1.0, 0.5, 0.3, 0.1, true, &mut rng));
            assert!(anneal_accept(1.0, 1.0, 0.3, 0.1, false, &mut rng));
            assert!(!anneal_accept(1.0, 1.0001, 1.0, 0.1, false, &mut rng));
        }
    }

    #[test]
    fn annealed_acceptance_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let hits = (0..n).filter(|_| anneal_accept(1.0, 1.1, 1.0, 0.1, true, &mut rng)).count();
        let p = (-1.0f64).exp();
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * sd);
    }

    #[test]
    fn certain_tournament_picks_best() {
        let t = Tournament::new(10, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let pick = t.select(33, |i| i as f64, &mut rng);
            // The winner beats the other nine entrants, so it is rarely large.
            assert!(pick <= 23);
        }
        let t = Tournament::new(33, 1.0);
        for _ in 0..100 {
            assert_eq!(t.select(33, |i| (i as f64 - 7.0).abs(), &mut rng), 7);
        }
    }

    #[test]
    fn singleton_tournament_is_uniform() {
        let t = Tournament::new(1, 0.86);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 33_000;
        let mut counts = [0usize; 33];
        for _ in 0..n {
            counts[t.select(33, |i| i as f64, &mut rng)] += 1;
        }
        let p = 1.0 / 33.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - n as f64 * p).abs() < 4.0 * sd), "{counts:?}");
    }

    #[test]
    fn rank_zero_frequency_matches_closed_form() {
        // With n equal to the population size every rank is observable.
        let t = Tournament::new(10, 0.86);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trials = 100_000;
        let wins = (0..trials).filter(|_| t.select(10, |i| i as f64, &mut rng) == 0).count();
        let norm: f64 = (0..10).map(|k| 0.86 * 0.14f64.powi(k)).sum();
        let p = 0.86 / norm;
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((wins as f64 / trials as f64 - p).abs() < 3.0 * sd, "{wins}");
    }
}
