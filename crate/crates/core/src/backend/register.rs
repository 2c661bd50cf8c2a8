use num_complex::Complex64;

use super::gate::{Matrix2, Matrix4};
use super::QubitKey;

/// Amplitudes below this magnitude are flushed to zero after a projection.
pub(crate) const FLUSH: f64 = 1e-12;

/// A group of qubits sharing one amplitude vector.
///
/// Qubit `order[i]` occupies bit `i` (little-endian) of the amplitude index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRegister {
    amplitudes: Vec<Complex64>,
    order: Vec<QubitKey>,
}

impl StateRegister {
    pub fn fresh(key: QubitKey) -> Self {
        Self {
            amplitudes: vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            order: vec![key],
        }
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn order(&self) -> &[QubitKey] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn position(&self, key: QubitKey) -> Option<usize> {
        self.order.iter().position(|k| *k == key)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Tensor product `other ⊗ self`: `self` keeps the low bits, `other`
    /// takes the bits above.
    pub fn merge(self, other: StateRegister) -> StateRegister {
        let low = self.amplitudes.len();
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); low * other.amplitudes.len()];
        for (j, b) in other.amplitudes.iter().enumerate() {
            for (i, a) in self.amplitudes.iter().enumerate() {
                amplitudes[i | (j * low)] = a * b;
            }
        }
        let mut order = self.order;
        order.extend(other.order);
        StateRegister { amplitudes, order }
    }

    pub fn apply_1q(&mut self, pos: usize, m: &Matrix2) {
        let bit = 1usize << pos;
        for idx in 0..self.amplitudes.len() {
            if idx & bit != 0 {
                continue;
            }
            let a0 = self.amplitudes[idx];
            let a1 = self.amplitudes[idx | bit];
            self.amplitudes[idx] = m[0][0] * a0 + m[0][1] * a1;
            self.amplitudes[idx | bit] = m[1][0] * a0 + m[1][1] * a1;
        }
    }

    /// Applies `m` with `first` as the high bit of the 4x4 basis.
    pub fn apply_2q(&mut self, first: usize, second: usize, m: &Matrix4) {
        debug_assert_ne!(first, second);
        let fb = 1usize << first;
        let sb = 1usize << second;
        for idx in 0..self.amplitudes.len() {
            if idx & (fb | sb) != 0 {
                continue;
            }
            let slots = [idx, idx | sb, idx | fb, idx | fb | sb];
            let before = slots.map(|s| self.amplitudes[s]);
            for (row, slot) in slots.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (col, amp) in before.iter().enumerate() {
                    acc += m[row][col] * amp;
                }
                self.amplitudes[*slot] = acc;
            }
        }
    }

    /// Probability that the qubit at `pos` reads 1.
    pub fn prob_one(&self, pos: usize) -> f64 {
        let bit = 1usize << pos;
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Born-rule measurement driven by a uniform draw `u ∈ [0, 1)`.
    /// Collapses and renormalizes; returns the outcome.
    pub fn measure(&mut self, pos: usize, u: f64) -> u8 {
        let p1 = self.prob_one(pos).clamp(0.0, 1.0);
        let outcome = u8::from(u < p1);
        self.project(pos, outcome);
        outcome
    }

    /// Projects the qubit at `pos` onto `outcome` and renormalizes.
    pub fn project(&mut self, pos: usize, outcome: u8) {
        let bit = 1usize << pos;
        let want = if outcome == 1 { bit } else { 0 };
        let mut norm = 0.0;
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if i & bit != want {
                *a = Complex64::new(0.0, 0.0);
            } else {
                norm += a.norm_sqr();
            }
        }
        let scale = if norm > 0.0 { 1.0 / norm.sqrt() } else { 0.0 };
        for a in self.amplitudes.iter_mut() {
            *a *= scale;
            if a.norm() < FLUSH {
                *a = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Removes an already-collapsed qubit at `pos`, keeping the
    /// `2^(n-1)` amplitudes consistent with `outcome`.
    pub fn remove(&mut self, pos: usize, outcome: u8) {
        let bit = 1usize << pos;
        let want = if outcome == 1 { bit } else { 0 };
        let low_mask = bit - 1;
        let mut out = vec![Complex64::new(0.0, 0.0); self.amplitudes.len() / 2];
        for (i, a) in self.amplitudes.iter().enumerate() {
            if i & bit == want {
                let j = (i & low_mask) | ((i >> 1) & !low_mask);
                out[j] = *a;
            }
        }
        self.amplitudes = out;
        self.order.remove(pos);
    }
}
