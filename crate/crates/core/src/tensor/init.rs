use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};

/// Deterministic random stream shared by initialization, shuffling and
/// dropout. ChaCha8 output does not depend on platform or word size.
#[derive(Clone, Debug, PartialEq)]
pub struct Rng(ChaCha8Rng);

/// Serializable position of an [`Rng`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, as a decimal string since JSON numbers cannot hold u128.
    pub word_pos: String,
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// An independent generator derived from this one's seed, for work that
    /// must not shift the main sequence.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::from_seed(self.0.get_seed());
        inner.set_stream(stream);
        Rng(inner)
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.0.get_seed(),
            stream: self.0.get_stream(),
            word_pos: self.0.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> Option<Self> {
        let pos: u128 = state.word_pos.parse().ok()?;
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(pos);
        Some(Rng(inner))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<X>(&mut self, xs: &mut [X]) {
        for i in (1..xs.len()).rev() {
            let j = self.0.random_range(0..=i);
            xs.swap(i, j);
        }
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Uniform { lo: f64, hi: f64 },
    /// Zero-mean normal with standard deviation `1 / sqrt(fan_in)`.
    ScaledNormal { fan_in: usize },
}

/// Draws a tensor; values are sampled in `f64` and rounded, so `f32` and
/// `f64` draws from the same stream agree up to rounding.
pub fn random_init<T: Scalar>(rng: &mut Rng, shape: &[usize], scheme: Init) -> crate::Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let data = match scheme {
        Init::Uniform { lo, hi } => {
            crate::error::ensure!(
                lo <= hi,
                crate::Error::Config(format!("uniform range [{lo}, {hi}] is empty"))
            );
            (0..n).map(|_| T::of(lo + (hi - lo) * rng.uniform())).collect()
        }
        Init::ScaledNormal { fan_in } => {
            crate::error::ensure!(
                fan_in > 0,
                crate::Error::Config("fan_in must be positive".into())
            );
            let std = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| T::of(std * rng.normal())).collect()
        }
    };
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = random_init(&mut Rng::seed(9), &[4, 5], Init::ScaledNormal { fan_in: 5 }).unwrap();
        let b: Tensor<f32> = random_init(&mut Rng::seed(9), &[4, 5], Init::ScaledNormal { fan_in: 5 }).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn degenerate_uniform_is_constant() {
        let t: Tensor<f64> = random_init(&mut Rng::seed(1), &[10], Init::Uniform { lo: 0.0, hi: 0.0 }).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaled_normal_std_matches_fan_in() {
        let n = 100_000;
        let t: Tensor<f64> =
            random_init(&mut Rng::seed(3), &[n], Init::ScaledNormal { fan_in: 10_000 }).unwrap();
        let mean = t.mean();
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!((std - 0.01).abs() < 0.002, "std {std}");
    }

    #[test]
    fn state_round_trip_continues_sequence() {
        let mut rng = Rng::seed(42);
        for _ in 0..17 {
            rng.uniform();
        }
        let mut resumed = Rng::from_state(&rng.state()).unwrap();
        for _ in 0..10 {
            assert_eq!(rng.next_u64(), resumed.next_u64());
        }
    }

    #[test]
    fn fork_leaves_parent_untouched() {
        let a = Rng::seed(5);
        let mut b = a.clone();
        let mut f = a.fork(7);
        f.uniform();
        assert_eq!(a, Rng::seed(5));
        assert_ne!(f.next_u64(), b.next_u64());
    }
}
