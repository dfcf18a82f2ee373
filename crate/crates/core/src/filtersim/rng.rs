//! Counter-based per-path, per-agent, per-source noise streams.
//!
//! Every (seed, path, agent, source) tuple owns an independent ChaCha stream,
//! so draws are identical regardless of how paths are scheduled over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Distinct Brownian sources of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    /// Idiosyncratic state noise `W`.
    State = 0,
    /// Observation-correlated state noise `Wbar`.
    StateBar = 1,
    /// Auxiliary draws (perturbation directions, sweeps).
    Aux = 2,
}

/// Factory of derived substreams from a master seed.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    master: u64,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        RngStreams { master }
    }

    pub fn seed(&self) -> u64 {
        self.master
    }

    /// Stream for (path, agent, source); agent 0 is the leader.
    pub fn stream(&self, path: usize, agent: usize, source: NoiseSource) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        // 40 bits of path, 20 of agent, 4 of source: collision-free at any
        // population size this crate simulates.
        let id = ((path as u64) << 24) | ((agent as u64) << 4) | source as u64;
        rng.set_stream(id);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_independent() {
        let s = RngStreams::new(7);
        let a: Vec<f64> = s.stream(3, 1, NoiseSource::State).sample_iter(rand::distributions::Standard).take(8).collect();
        let b: Vec<f64> = s.stream(3, 1, NoiseSource::State).sample_iter(rand::distributions::Standard).take(8).collect();
        let c: Vec<f64> = s.stream(3, 2, NoiseSource::State).sample_iter(rand::distributions::Standard).take(8).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn master_seed_changes_all_streams() {
        let a: Vec<f64> = RngStreams::new(1)
            .stream(0, 0, NoiseSource::StateBar)
            .sample_iter(rand::distributions::Standard)
            .take(4)
            .collect();
        let b: Vec<f64> = RngStreams::new(2)
            .stream(0, 0, NoiseSource::StateBar)
            .sample_iter(rand::distributions::Standard)
            .take(4)
            .collect();
        assert_ne!(a, b);
    }
}
