//! Classification as a sequential decision process. Each step presents one
//! training sample; the action is a predicted class and the reward is
//! `±λ[label]`. Misclassifying a minority sample ends the episode.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{majority_class, Dataset};
use crate::error::{Error, Result};

/// Per-class reward magnitudes and the minority set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    lambda: Vec<f64>,
    class_counts: Vec<usize>,
    minority: Vec<bool>,
}

impl ClassWeights {
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn n_classes(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_minority(&self, class: usize) -> bool {
        self.minority.get(class).copied().unwrap_or(false)
    }

    /// Sorted indices of the minority classes.
    pub fn minority_set(&self) -> Vec<usize> {
        (0..self.minority.len()).filter(|&k| self.minority[k]).collect()
    }

    pub fn majority(&self) -> usize {
        (0..self.minority.len()).find(|&k| !self.minority[k]).unwrap_or(0)
    }
}

/// Reciprocal class counts scaled to unit Euclidean norm. Every class except
/// the most frequent one (lowest index on ties) is a minority class.
pub fn compute_lambda(class_counts: &[usize]) -> Result<ClassWeights> {
    if class_counts.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two classes, got {}",
            class_counts.len()
        )));
    }
    if let Some(k) = class_counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {k} is absent from the training data")));
    }
    let recip: Vec<f64> = class_counts.iter().map(|&n| 1.0 / n as f64).collect();
    // Scale by the largest entry first so huge counts cannot underflow.
    let top = recip.iter().cloned().fold(0.0, f64::max);
    let norm = top * recip.iter().map(|r| (r / top).powi(2)).sum::<f64>().sqrt();
    let lambda = recip.iter().map(|r| r / norm).collect();
    let majority = majority_class(class_counts);
    Ok(ClassWeights {
        lambda,
        class_counts: class_counts.to_vec(),
        minority: (0..class_counts.len()).map(|k| k != majority).collect(),
    })
}

/// Reward for predicting `action` on a sample of class `label`, and whether
/// the episode terminates.
pub fn reward(action: usize, label: usize, weights: &ClassWeights) -> Result<(f64, bool)> {
    let k = weights.n_classes();
    if action >= k || label >= k {
        return Err(Error::InvalidInput(format!(
            "action {action} / label {label} out of range for {k} classes"
        )));
    }
    let lam = weights.lambda[label];
    if action == label {
        Ok((lam, false))
    } else {
        Ok((-lam, weights.minority[label]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    order: Vec<usize>,
    cursor: usize,
    terminated: bool,
    steps_taken: usize,
    cap: usize,
}

impl EpisodeState {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Dataset row currently presented, `None` once the episode is over.
    pub fn current(&self) -> Option<usize> {
        if self.terminated {
            None
        } else {
            self.order.get(self.cursor).copied()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub term: bool,
    pub label: usize,
    /// Row that follows in presentation order, if any. Present even on a
    /// terminal step when the shuffled order has rows left.
    pub next: Option<usize>,
}

/// Presents a dataset one sample at a time.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    data: &'a Dataset,
    weights: ClassWeights,
    step_cap: Option<usize>,
}

impl<'a> Environment<'a> {
    /// `step_cap` bounds the episode length; `None` means the dataset size.
    pub fn new(data: &'a Dataset, weights: ClassWeights, step_cap: Option<usize>) -> Result<Self> {
        if weights.n_classes() != data.n_classes() {
            return Err(Error::InvalidInput(format!(
                "weights cover {} classes, dataset has {}",
                weights.n_classes(),
                data.n_classes()
            )));
        }
        if step_cap == Some(0) {
            return Err(Error::InvalidConfig("episode step cap must be positive".into()));
        }
        Ok(Self {
            data,
            weights,
            step_cap,
        })
    }

    pub fn weights(&self) -> &ClassWeights {
        &self.weights
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Starts an episode over a fresh uniform permutation of the rows.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EpisodeState> {
        if self.data.is_empty() {
            return Err(Error::Data("cannot start an episode on an empty dataset".into()));
        }
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(rng);
        let cap = self.step_cap.unwrap_or(usize::MAX).min(order.len());
        Ok(EpisodeState {
            order,
            cursor: 0,
            terminated: false,
            steps_taken: 0,
            cap,
        })
    }

    /// Features of the sample currently presented.
    pub fn state(&self, episode: &EpisodeState) -> Option<&'a [f64]> {
        episode.current().map(|i| self.data.row(i))
    }

    pub fn step(&self, episode: &mut EpisodeState, action: usize) -> Result<StepOutcome> {
        let row = episode
            .current()
            .ok_or_else(|| Error::InvalidInput("step called on a finished episode".into()))?;
        let label = self.data.labels[row];
        let (r, missed_minority) = reward(action, label, &self.weights)?;
        episode.cursor += 1;
        episode.steps_taken += 1;
        let exhausted = episode.steps_taken >= episode.cap;
        let term = missed_minority || exhausted;
        episode.terminated = term;
        Ok(StepOutcome {
            reward: r,
            term,
            label,
            next: episode.order.get(episode.cursor).copied(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labelled(labels: &[usize], k: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![i as f64]).collect();
        Dataset::new(
            Matrix::from_rows(&rows).unwrap(),
            labels.to_vec(),
            vec!["i".into()],
            (0..k).map(|c| c.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn lambda_examples() {
        let w = compute_lambda(&[7, 7]).unwrap();
        for l in w.lambda() {
            assert!((l - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        }
        let w = compute_lambda(&[20, 1]).unwrap();
        let d = (1.0f64 / 400.0 + 1.0).sqrt();
        assert!((w.lambda()[0] - 0.05 / d).abs() < 1e-15);
        assert!((w.lambda()[1] - 1.0 / d).abs() < 1e-15);
        assert!((w.lambda()[0] - 0.04994).abs() < 5e-6);
        assert!((w.lambda()[1] - 0.99875).abs() < 5e-6);
        assert_eq!(w.minority_set(), vec![1]);
        assert!(compute_lambda(&[5, 0]).is_err());
        assert!(compute_lambda(&[5]).is_err());
    }

    #[test]
    fn lambda_largest_for_rarest_acute_group() {
        let prev = [0.288, 0.336, 0.087, 0.174, 0.113];
        let counts: Vec<usize> = prev.iter().map(|p| (p * 24_102.0f64).round() as usize).collect();
        let w = compute_lambda(&counts).unwrap();
        assert_eq!(crate::duelnet::argmax(w.lambda()), 2);
        assert_eq!(w.majority(), 1);
        assert_eq!(w.minority_set(), vec![0, 2, 3, 4]);
    }

    #[test]
    fn majority_ties_go_to_lowest_index() {
        let w = compute_lambda(&[10, 3, 10]).unwrap();
        assert_eq!(w.minority_set(), vec![1, 2]);
    }

    #[test]
    fn reward_examples() {
        let w = compute_lambda(&[20, 1]).unwrap();
        let (r, t) = reward(1, 1, &w).unwrap();
        assert!((r - 0.99875).abs() < 5e-6 && !t);
        let (r, t) = reward(0, 1, &w).unwrap();
        assert!((r + 0.99875).abs() < 5e-6 && t);
        let (r, t) = reward(1, 0, &w).unwrap();
        assert!((r + 0.04994).abs() < 5e-6 && !t);
        assert!(reward(2, 0, &w).is_err());
    }

    #[test]
    fn reset_is_seeded_bijection() {
        let ds = labelled(&[0; 16], 2);
        let w = compute_lambda(&[15, 1]).unwrap();
        let env = Environment::new(&ds, w, None).unwrap();
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.order(), b.order());
        let mut sorted = a.order().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());

        let mut seen = std::collections::HashSet::new();
        for seed in 0..100 {
            let e = env.reset(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(seen.insert(e.order().to_vec()), "repeat permutation at seed {seed}");
        }

        let empty = Dataset::new(Matrix::zeros(0, 1), vec![], vec!["i".into()], vec!["0".into(), "1".into()]).unwrap();
        let env = Environment::new(&empty, compute_lambda(&[1, 1]).unwrap(), None).unwrap();
        assert!(env.reset(&mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    /// Scripted agent over a fixed 10-sample order: labels and actions are
    /// chosen so every branch of the reward procedure fires.
    #[test]
    fn scripted_episode() {
        let labels = [0, 0, 1, 0, 0, 0, 0, 0, 0, 1];
        let ds = labelled(&labels, 2);
        let w = compute_lambda(&ds.class_counts()).unwrap();
        let lam = w.lambda().to_vec();
        let env = Environment::new(&ds, w, None).unwrap();
        let mut ep = env.reset(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        ep.order = (0..10).collect();

        // correct majority, wrong majority, correct minority, then a minority miss
        let script = [(0, lam[0], false), (1, -lam[0], false), (1, lam[1], false)];
        for (i, (action, r, term)) in script.into_iter().enumerate() {
            assert_eq!(env.state(&ep).unwrap(), &[i as f64]);
            let out = env.step(&mut ep, action).unwrap();
            assert_eq!((out.reward, out.term), (r, term));
            assert_eq!(out.next, Some(i + 1));
        }
        ep.order.swap(3, 9);
        let out = env.step(&mut ep, 0).unwrap();
        assert_eq!((out.reward, out.term), (-lam[1], true));
        assert!(ep.terminated());
        assert!(env.state(&ep).is_none());
        assert!(env.step(&mut ep, 0).is_err());
        assert_eq!(ep.steps_taken(), 4);
    }

    #[test]
    fn exhaustion_and_cap_terminate() {
        let labels = [0, 0, 0, 1];
        let ds = labelled(&labels, 2);
        let w = compute_lambda(&ds.class_counts()).unwrap();
        let env = Environment::new(&ds, w.clone(), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ep = env.reset(&mut rng).unwrap();
        let mut total = 0.0;
        let mut expected = 0.0;
        let mut last = None;
        while let Some(row) = ep.current() {
            let label = ds.labels[row];
            let out = env.step(&mut ep, label).unwrap();
            total += out.reward;
            expected += w.lambda()[label];
            last = Some(out);
        }
        let last = last.unwrap();
        assert!(last.term && last.reward > 0.0 && last.next.is_none());
        assert_eq!(ep.steps_taken(), 4);
        assert!((total - expected).abs() < 1e-12);

        let env = Environment::new(&ds, w, Some(2)).unwrap();
        let mut ep = env.reset(&mut rng).unwrap();
        let first = ds.labels[ep.current().unwrap()];
        assert!(!env.step(&mut ep, first).unwrap().term);
        let second = ds.labels[ep.current().unwrap()];
        assert!(env.step(&mut ep, second).unwrap().term);
        assert_eq!(ep.steps_taken(), 2);
    }

    mod props {
        use super::*;
        use proptest::collection::vec;
        use proptest::prelude::{prop_assert, proptest};

        proptest! {
            #[test]
            fn lambda_unit_norm_and_monotone(counts in vec(1usize..1_000_000, 2..12)) {
                let w = compute_lambda(&counts).unwrap();
                let norm: f64 = w.lambda().iter().map(|l| l * l).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-12);
                for i in 0..counts.len() {
                    prop_assert!(w.lambda()[i] > 0.0);
                    for j in 0..counts.len() {
                        if counts[i] < counts[j] {
                            prop_assert!(w.lambda()[i] > w.lambda()[j]);
                        }
                    }
                }
            }

            #[test]
            fn reward_magnitude_is_label_weight(counts in vec(1usize..1000, 2..6), a in 0usize..6, l in 0usize..6) {
                let k = counts.len();
                let (a, l) = (a % k, l % k);
                let w = compute_lambda(&counts).unwrap();
                let (r, _) = reward(a, l, &w).unwrap();
                let (r_ok, _) = reward(l, l, &w).unwrap();
                prop_assert!(r.abs() == w.lambda()[l] && r_ok == w.lambda()[l]);
            }

            #[test]
            fn episode_length_bounded(labels in vec(0usize..3, 3..40), cap in 1usize..50, seed in 0u64..1000, actions in vec(0usize..3, 40)) {
                let mut labels = labels;
                labels[0] = 0; labels[1] = 1; labels[2] = 2;
                let ds = labelled(&labels, 3);
                let env = Environment::new(&ds, compute_lambda(&ds.class_counts()).unwrap(), Some(cap)).unwrap();
                let mut ep = env.reset(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let mut steps = 0;
                while ep.current().is_some() {
                    let out = env.step(&mut ep, actions[steps]).unwrap();
                    steps += 1;
                    if out.term {
                        break;
                    }
                }
                prop_assert!(ep.terminated());
                prop_assert!(steps <= labels.len().min(cap));
                prop_assert!(env.step(&mut ep, 0).is_err());
            }
        }
    }
}
