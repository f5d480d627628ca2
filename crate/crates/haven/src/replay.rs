//! Episode replay storage with the two buffer views of the training loop.
//!
//! One `EpisodeRecord` is the single source of truth for both the low-level
//! view (per-step transitions carrying the macro action of the enclosing
//! segment) and the high-level view (per-segment macro transitions with
//! `R_T` as the segment reward sum), so the views can never disagree.
//! Intrinsic rewards are deliberately absent from the schema: they are
//! recomputed from the current value function at training time.

use std::collections::VecDeque;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("episode is not complete (not terminated)")]
    Incomplete,
    #[error("inconsistent episode: {0}")]
    Inconsistent(String),
}

/// One finished environment episode.
///
/// Lengths: `states` and `obs` hold `len + 1` entries (including the final
/// successor), `actions` and `rewards` hold `len`, and `macro_actions`
/// holds one joint macro action per `k`-step segment (empty for flat
/// variants, which never consult it).
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub states: Vec<Vec<f64>>,
    pub obs: Vec<Vec<Vec<f64>>>,
    pub macro_actions: Vec<Vec<usize>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub k: usize,
    pub terminated: bool,
}

impl EpisodeRecord {
    /// Number of environment steps.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_hierarchical(&self) -> bool {
        !self.macro_actions.is_empty()
    }

    /// Number of macro segments, `ceil(len / k)`.
    pub fn n_segments(&self) -> usize {
        self.len().div_ceil(self.k)
    }

    /// Joint macro action in force at low-level step `t`.
    pub fn macro_at(&self, t: usize) -> Option<&[usize]> {
        if self.macro_actions.is_empty() {
            None
        } else {
            Some(&self.macro_actions[t / self.k])
        }
    }

    /// Low-level step range `[start, end)` of segment `seg`.
    pub fn segment_bounds(&self, seg: usize) -> (usize, usize) {
        let start = seg * self.k;
        (start, ((seg + 1) * self.k).min(self.len()))
    }

    /// Segment reward sum `R_T`.
    pub fn macro_reward(&self, seg: usize) -> f64 {
        let (start, end) = self.segment_bounds(seg);
        crate::hierarchy::high_level_reward(&self.rewards[start..end])
    }

    /// Undiscounted episode return.
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    fn validate(&self) -> Result<(), ReplayError> {
        if !self.terminated {
            return Err(ReplayError::Incomplete);
        }
        let len = self.len();
        if len == 0 {
            return Err(ReplayError::Inconsistent("zero-length episode".into()));
        }
        if self.states.len() != len + 1 || self.obs.len() != len + 1 {
            return Err(ReplayError::Inconsistent(format!(
                "states/obs length {}/{} for {} steps",
                self.states.len(),
                self.obs.len(),
                len
            )));
        }
        if self.rewards.len() != len {
            return Err(ReplayError::Inconsistent("rewards length".into()));
        }
        if self.is_hierarchical() && self.macro_actions.len() != self.n_segments() {
            return Err(ReplayError::Inconsistent(format!(
                "{} macro actions for {} segments",
                self.macro_actions.len(),
                self.n_segments()
            )));
        }
        Ok(())
    }
}

/// A uniformly sampled batch of episodes plus its padding geometry.
pub struct EpisodeBatch {
    pub episodes: Vec<Rc<EpisodeRecord>>,
    pub max_len: usize,
    pub max_segments: usize,
}

impl EpisodeBatch {
    /// 1.0 for episodes still alive at low-level step `t`, else 0.0.
    pub fn mask_at(&self, t: usize) -> Vec<f64> {
        self.episodes
            .iter()
            .map(|e| if t < e.len() { 1.0 } else { 0.0 })
            .collect()
    }

    /// 1.0 for episodes that have a macro segment `seg`, else 0.0.
    pub fn macro_mask_at(&self, seg: usize) -> Vec<f64> {
        self.episodes
            .iter()
            .map(|e| if seg < e.n_segments() { 1.0 } else { 0.0 })
            .collect()
    }
}

/// FIFO ring of completed episodes with uniform sampling.
pub struct EpisodeBuffer {
    capacity: usize,
    episodes: VecDeque<Rc<EpisodeRecord>>,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize) -> EpisodeBuffer {
        assert!(capacity >= 1);
        EpisodeBuffer {
            capacity,
            episodes: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: EpisodeRecord) -> Result<(), ReplayError> {
        episode.validate()?;
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(Rc::new(episode));
        Ok(())
    }

    pub fn get(&self, i: usize) -> &Rc<EpisodeRecord> {
        &self.episodes[i]
    }

    /// Uniform sample of `batch_size` distinct episodes, or `None` while
    /// the buffer holds fewer than `batch_size` (training not ready).
    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha12Rng) -> Option<EpisodeBatch> {
        if self.episodes.len() < batch_size {
            return None;
        }
        // partial Fisher-Yates over an index vector
        let mut idx: Vec<usize> = (0..self.episodes.len()).collect();
        for i in 0..batch_size {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        let episodes: Vec<Rc<EpisodeRecord>> = idx[..batch_size]
            .iter()
            .map(|&i| Rc::clone(&self.episodes[i]))
            .collect();
        let max_len = episodes.iter().map(|e| e.len()).max().unwrap();
        let max_segments = episodes.iter().map(|e| e.n_segments()).max().unwrap();
        Some(EpisodeBatch {
            episodes,
            max_len,
            max_segments,
        })
    }
}
