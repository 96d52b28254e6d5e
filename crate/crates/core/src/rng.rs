//! Run-owned random number generator.
//!
//! ChaCha8 is counter based, so its full state is the seed plus a word
//! position. That pair is what checkpoints store.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::array::Array;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut rng = Self::seeded(state.seed);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.inner.get_word_pos(),
        }
    }

    /// Independent generator derived from this one's seed and a label.
    pub fn fork(&self, label: u64) -> Self {
        let mixed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .rotate_left(17)
            ^ label.wrapping_mul(0xD1B5_4A32_D192_ED03);
        Self::seeded(mixed)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal_array(&mut self, rows: usize, cols: usize, sigma: f64) -> Array {
        let data = (0..rows * cols).map(|_| sigma * self.normal()).collect();
        Array::from_parts(rows, cols, data)
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.inner);
        idx
    }
}
