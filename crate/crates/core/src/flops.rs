//! Floating-point operation tally.
//!
//! Convention: every scalar multiplication or addition is one FLOP.
//! Subtractions count as additions; divisions, square roots and
//! exponentials count as one multiplication each. Comparisons (max, ReLU,
//! clamps) are free.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounter {
    pub multiplies: u64,
    pub adds: u64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn mul(&mut self, n: usize) {
        self.multiplies += n as u64;
    }

    #[inline]
    pub fn add(&mut self, n: usize) {
        self.adds += n as u64;
    }

    /// `y = W x + b` with `W` of shape `rows x cols`.
    #[inline]
    pub fn affine(&mut self, rows: usize, cols: usize) {
        self.mul(rows * cols);
        self.add(rows * cols);
    }

    /// Inner product of two length-`n` vectors.
    #[inline]
    pub fn dot(&mut self, n: usize) {
        self.mul(n);
        self.add(n.saturating_sub(1));
    }

    pub fn total(&self) -> u64 {
        self.multiplies + self.adds
    }
}

impl AddAssign for FlopCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.multiplies += rhs.multiplies;
        self.adds += rhs.adds;
    }
}
