use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::models::Batch;
use crate::envs::Episode;
use crate::error::{Error, Result};

/// Ring buffer of complete episodes; the oldest episode is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            episodes: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, ep: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(ep);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// Uniform over all (episode, start) pairs whose segment of `horizon`
    /// steps fits inside the episode. Returns the sampled pairs alongside.
    pub fn sample_segments(
        &self,
        rng: &mut ChaCha8Rng,
        batch: usize,
        horizon: usize,
    ) -> Result<Vec<(usize, usize)>> {
        let starts: Vec<usize> = self
            .episodes
            .iter()
            .map(|e| (e.len() + 1).saturating_sub(horizon))
            .collect();
        let total: usize = starts.iter().sum();
        if total == 0 || horizon == 0 {
            return Err(Error::Config(format!(
                "replay buffer holds no segment of length {horizon}"
            )));
        }
        Ok((0..batch)
            .map(|_| {
                let mut i = rng.random_range(0..total);
                let mut e = 0;
                while i >= starts[e] {
                    i -= starts[e];
                    e += 1;
                }
                (e, i)
            })
            .collect())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, batch: usize, horizon: usize) -> Result<Batch> {
        let picks = self.sample_segments(rng, batch, horizon)?;
        let first = &self.episodes[picks[0].0];
        let (ds, da) = (first.observations[0].len(), first.actions[0].len());
        let mut obs = vec![DMatrix::zeros(ds, batch); horizon + 1];
        let mut actions = vec![DMatrix::zeros(da, batch); horizon];
        let mut rewards = vec![vec![0.0; batch]; horizon];
        for (j, &(e, s)) in picks.iter().enumerate() {
            let ep = &self.episodes[e];
            for t in 0..=horizon {
                obs[t].set_column(j, &ep.observations[s + t]);
            }
            for t in 0..horizon {
                actions[t].set_column(j, &ep.actions[s + t]);
                rewards[t][j] = ep.rewards[s + t];
            }
        }
        Ok(Batch {
            obs,
            actions,
            rewards,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::SeedableRng;

    fn tagged_episode(tag: f64, len: usize) -> Episode {
        Episode {
            observations: (0..=len)
                .map(|t| DVector::from_vec(vec![tag, t as f64]))
                .collect(),
            actions: (0..len)
                .map(|t| DVector::from_vec(vec![t as f64]))
                .collect(),
            rewards: (0..len).map(|t| tag * 100.0 + t as f64).collect(),
        }
    }

    #[test]
    fn segments_stay_inside_episodes() {
        let mut buf = ReplayBuffer::new(3);
        for (tag, len) in [(1.0, 4), (2.0, 7), (3.0, 5), (4.0, 6)] {
            buf.push(tagged_episode(tag, len));
        }
        assert_eq!(buf.len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = buf.sample(&mut rng, 500, 5).unwrap();
        for j in 0..500 {
            let tag = b.obs[0][(0, j)];
            assert!(tag >= 2.0);
            let t0 = b.obs[0][(1, j)];
            for t in 0..=5 {
                assert_eq!(b.obs[t][(0, j)], tag);
                assert_eq!(b.obs[t][(1, j)], t0 + t as f64);
            }
            for t in 0..5 {
                assert_eq!(b.rewards[t][j], tag * 100.0 + t0 + t as f64);
            }
        }
    }

    #[test]
    fn too_long_horizon_is_an_error() {
        let mut buf = ReplayBuffer::new(2);
        buf.push(tagged_episode(1.0, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(&mut rng, 4, 4).is_err());
        assert!(buf.sample(&mut rng, 4, 3).is_ok());
    }
}
