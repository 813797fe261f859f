//! Exact max-min over a uniform power grid, by branch and bound.
//!
//! The search space is every `eta` with entries in `{0, h, 2h, ..., 1}` and
//! per-AP sums at most 1. Boxes of grid points are pruned only when an upper
//! bound on their best min-SINR cannot beat the incumbent, so the result is
//! the same grid maximum an exhaustive enumeration would return.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::channel::FadingMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sinr::{AlphaMatrix, PowerControl};

pub(crate) struct GridSearch<'a> {
    b: &'a FadingMatrix,
    a: &'a AlphaMatrix,
    rho_d: f64,
    step: f64,
    steps: u32,
    m: usize,
    k: usize,
}

#[derive(Clone)]
struct Cell {
    bound: f64,
    lo: Vec<u32>,
    hi: Vec<u32>,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.bound.total_cmp(&other.bound) == Ordering::Equal
    }
}

impl Eq for Cell {}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound)
    }
}

pub(crate) fn grid_steps(step: f64) -> Result<u32> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 || n > 100_000.0 {
        return Err(Error::Config(format!("1 / grid step must be an integer, got step {step}")));
    }
    Ok(n as u32)
}

impl<'a> GridSearch<'a> {
    pub fn new(b: &'a FadingMatrix, a: &'a AlphaMatrix, rho_d: f64, step: f64) -> Result<Self> {
        let steps = grid_steps(step)?;
        Ok(Self {
            b,
            a,
            rho_d,
            step: 1.0 / steps as f64,
            steps,
            m: b.num_aps(),
            k: b.num_ues(),
        })
    }

    fn min_sinr_at(&self, units: &[u32]) -> f64 {
        let (mm, kk) = (self.m, self.k);
        let mut worst = f64::INFINITY;
        for k in 0..kk {
            let mut sig = 0.0;
            let mut interf = 0.0;
            for m in 0..mm {
                let row = &units[m * kk..(m + 1) * kk];
                let power: u32 = row.iter().sum();
                sig += (self.a.get(m, k) * row[k] as f64 * self.step).sqrt();
                interf += self.b.get(m, k) * power as f64 * self.step;
            }
            worst = worst.min(self.rho_d * sig * sig / (1.0 + self.rho_d * interf));
        }
        worst
    }

    fn upper_bound(&self, lo: &[u32], hi: &[u32]) -> f64 {
        let (mm, kk) = (self.m, self.k);
        let mut worst = f64::INFINITY;
        for k in 0..kk {
            let mut sig = 0.0;
            let mut interf = 0.0;
            for m in 0..mm {
                let lo_row = &lo[m * kk..(m + 1) * kk];
                let lo_sum: u32 = lo_row.iter().sum();
                let cap = self.steps - (lo_sum - lo_row[k]);
                let top = hi[m * kk + k].min(cap);
                sig += (self.a.get(m, k) * top as f64 * self.step).sqrt();
                interf += self.b.get(m, k) * lo_sum as f64 * self.step;
            }
            worst = worst.min(self.rho_d * sig * sig / (1.0 + self.rho_d * interf));
        }
        worst
    }

    fn rows_feasible(&self, units: &[u32]) -> bool {
        units.chunks(self.k).all(|row| row.iter().sum::<u32>() <= self.steps)
    }

    /// Best grid point and number of cells explored.
    pub fn run(&self) -> (Vec<u32>, f64, usize) {
        let dim = self.m * self.k;
        let lo = vec![0u32; dim];
        let hi = vec![self.steps; dim];
        // Equal split rounded down to the grid is a feasible start.
        let mut best: Vec<u32> = vec![self.steps / self.k as u32; dim];
        let mut best_val = self.min_sinr_at(&best);
        let mut heap = BinaryHeap::new();
        heap.push(Cell {
            bound: self.upper_bound(&lo, &hi),
            lo,
            hi,
        });
        let mut explored = 0usize;
        let slack = 1.0 + 1e-12;
        while let Some(cell) = heap.pop() {
            explored += 1;
            if cell.bound <= best_val * slack {
                break;
            }
            let (axis, width) = (0..dim)
                .map(|i| (i, cell.hi[i] - cell.lo[i]))
                .max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)))
                .unwrap();
            if width == 0 {
                // Single point: its bound is its value.
                let v = self.min_sinr_at(&cell.lo);
                if v > best_val {
                    best_val = v;
                    best = cell.lo.clone();
                }
                continue;
            }
            let mid = cell.lo[axis] + width / 2;
            let halves = [(cell.lo[axis], mid), (mid + 1, cell.hi[axis])];
            for (l, h) in halves {
                let mut lo = cell.lo.clone();
                let mut hi = cell.hi.clone();
                lo[axis] = l;
                hi[axis] = h;
                if !self.rows_feasible(&lo) {
                    continue;
                }
                let v = self.min_sinr_at(&lo);
                if v > best_val {
                    best_val = v;
                    best = lo.clone();
                }
                // Tighten the box to the per-AP simplex.
                for m in 0..self.m {
                    let row_lo: u32 = lo[m * self.k..(m + 1) * self.k].iter().sum();
                    for k in 0..self.k {
                        let i = m * self.k + k;
                        hi[i] = hi[i].min(self.steps - (row_lo - lo[i]));
                    }
                }
                let bound = self.upper_bound(&lo, &hi);
                if bound > best_val * slack {
                    heap.push(Cell { bound, lo, hi });
                }
            }
        }
        (best, best_val, explored)
    }

    pub fn to_power(&self, units: &[u32]) -> PowerControl {
        PowerControl::new(Matrix::from_fn(self.m, self.k, |m, k| {
            units[m * self.k + k] as f64 * self.step
        }))
    }

    /// Plain enumeration of every grid point; for cross-checking only.
    #[cfg(test)]
    pub fn exhaustive(&self) -> f64 {
        let dim = self.m * self.k;
        let mut units = vec![0u32; dim];
        let mut best = f64::NEG_INFINITY;
        loop {
            if self.rows_feasible(&units) {
                best = best.max(self.min_sinr_at(&units));
            }
            let mut i = 0;
            loop {
                if i == dim {
                    return best;
                }
                units[i] += 1;
                if units[i] <= self.steps {
                    break;
                }
                units[i] = 0;
                i += 1;
            }
        }
    }
}
