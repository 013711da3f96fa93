use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{apply_distortion, Classifier, Distortion, DistortionBudget, Input};
use crate::scalar::Scalar;

/// Schedule of the greedy attack.
#[derive(Clone, Debug, Serialize)]
pub struct AttackConfig {
    pub restarts: usize,
    pub steps: usize,
    /// Coordinates probed per step; every coordinate when the input is smaller.
    pub probes: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            restarts: 10,
            steps: 200,
            probes: 16,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

struct Attack<'a, T, F: Classifier<Input<T>> + ?Sized> {
    f: &'a F,
    x: &'a Input<T>,
    budget: &'a DistortionBudget<T>,
    steps: &'a [T],
    current: F::Output,
}

impl<T: Scalar, F: Classifier<Input<T>> + ?Sized> Attack<'_, T, F> {
    fn gamma(&self, offset: &[i64]) -> Distortion<T> {
        Distortion::new(
            offset
                .iter()
                .zip(self.steps)
                .map(|(k, s)| s.clone() * T::from_i64(*k).expect("offset fits scalar"))
                .collect(),
        )
    }

    /// `Some(objective)` while the output is unchanged, `None` once it flips.
    fn evaluate(&self, offset: &[i64]) -> Option<f64> {
        let moved = apply_distortion(self.x, &self.gamma(offset)).expect("dimensions checked");
        if self.f.classify(&moved) != self.current {
            return None;
        }
        Some(self.f.score_margin(&moved, &self.current).unwrap_or(0.0))
    }

    fn admits(&self, offset: &[i64]) -> bool {
        self.budget.admits(&self.gamma(offset))
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> Vec<i64> {
        let reach: Vec<i64> = self
            .steps
            .iter()
            .map(|s| (self.budget.lambda.as_f64() / s.as_f64()).floor() as i64)
            .collect();
        let mut offset: Vec<i64> = reach.iter().map(|r| rng.gen_range(-*r..=*r)).collect();
        while !self.admits(&offset) {
            for k in offset.iter_mut() {
                *k /= 2;
            }
        }
        offset
    }
}

/// Randomized coordinate-wise hill climbing for a distortion within
/// `budget` that changes `f`'s output on `x`.
///
/// Distortions move on the grid given by `steps` (one step per coordinate).
/// Each step probes a random subset of coordinates in both directions and
/// moves to the probe with the lowest [`Classifier::score_margin`]; for
/// classifiers without scores every probe ties and the search is a random
/// walk over the neighbourhood. Restart 0 starts from zero distortion, later
/// restarts from a random point in the ball. Deterministic given the seed.
/// A returned distortion has been re-checked against both conditions.
pub fn greedy_attack<T, F>(
    f: &F,
    x: &Input<T>,
    budget: &DistortionBudget<T>,
    steps: &[T],
    cfg: &AttackConfig,
) -> Option<Distortion<T>>
where
    T: Scalar,
    F: Classifier<Input<T>> + ?Sized,
{
    let d = x.dims();
    if steps.len() != d || budget.lambda <= T::zero() {
        return None;
    }
    let attack = Attack {
        f,
        x,
        budget,
        steps,
        current: f.classify(x),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let probes = cfg.probes.min(d).max(1);
    for restart in 0..cfg.restarts.max(1) {
        let mut offset = if restart == 0 {
            vec![0; d]
        } else {
            attack.random_start(&mut rng)
        };
        let Some(mut objective) = attack.evaluate(&offset) else {
            return finish(&attack, offset);
        };
        for _ in 0..cfg.steps {
            let coords: Vec<usize> = if probes == d {
                (0..d).collect()
            } else {
                sample(&mut rng, d, probes).into_vec()
            };
            let mut best: Option<(f64, Vec<i64>)> = None;
            let mut ties = 0u32;
            for &c in &coords {
                for dir in [-1i64, 1] {
                    let mut candidate = offset.clone();
                    candidate[c] += dir;
                    if !attack.admits(&candidate) {
                        continue;
                    }
                    let Some(score) = attack.evaluate(&candidate) else {
                        return finish(&attack, candidate);
                    };
                    match &best {
                        Some((b, _)) if score > *b => {}
                        Some((b, _)) if score == *b => {
                            // Reservoir choice among equally good probes.
                            ties += 1;
                            if rng.gen_range(0..=ties) == 0 {
                                best = Some((score, candidate));
                            }
                        }
                        _ => {
                            ties = 0;
                            best = Some((score, candidate));
                        }
                    }
                }
            }
            match best {
                Some((score, candidate)) if score <= objective => {
                    objective = score;
                    offset = candidate;
                }
                _ => break,
            }
        }
    }
    None
}

fn finish<T: Scalar, F: Classifier<Input<T>> + ?Sized>(attack: &Attack<'_, T, F>, offset: Vec<i64>) -> Option<Distortion<T>> {
    let gamma = attack.gamma(&offset);
    let moved = apply_distortion(attack.x, &gamma).ok()?;
    (attack.budget.admits(&gamma) && attack.f.classify(&moved) != attack.current).then_some(gamma)
}
