//! Joint count statistics of the two parties, threshold decoding, and the
//! binary channel capacity.
//!
//! With a Schmidt-diagonal state and identical independent detectors, the
//! probability that the parties register `a` and `b` counts is
//! `P(a, b) = sum_n w_n K(a|n) K(b|n)`.

use rayon::prelude::*;

use crate::detector::CountKernel;
use crate::error::{Error, Result};
use crate::numerics::CompensatedSum;
use crate::states::PnesState;

/// `P(a, b)` for `a, b = 0..=s_max`, plus the mass lost to truncation of
/// either the state or the kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCountDistribution {
    p: Vec<f64>,
    dim: usize,
    tail_mass: f64,
}

impl JointCountDistribution {
    /// Builds from a row-major `dim x dim` matrix.
    pub fn from_matrix(p: Vec<f64>, dim: usize, tail_mass: f64) -> Result<Self> {
        if dim == 0 || p.len() != dim * dim {
            return Err(Error::Config(format!(
                "joint distribution needs {dim}x{dim} entries, got {}",
                p.len()
            )));
        }
        Ok(Self { p, dim, tail_mass })
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        if a >= self.dim || b >= self.dim {
            0.0
        } else {
            self.p[a * self.dim + b]
        }
    }

    /// Largest count index stored.
    pub fn s_max(&self) -> usize {
        self.dim - 1
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.p.iter().copied().collect::<CompensatedSum>().value()
    }

    /// Count distribution of the first party.
    pub fn marginal(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|a| {
                self.p[a * self.dim..(a + 1) * self.dim]
                    .iter()
                    .copied()
                    .collect::<CompensatedSum>()
                    .value()
            })
            .collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.dim {
            for b in 0..a {
                worst = worst.max((self.get(a, b) - self.get(b, a)).abs());
            }
        }
        worst
    }
}

/// Joint count distribution of the two detectors.
pub fn joint_distribution(
    state: &PnesState,
    kernel: &CountKernel,
) -> Result<JointCountDistribution> {
    let state_n_max = state.n_max();
    if kernel.n_max() < state_n_max {
        return Err(Error::TruncationMismatch {
            kernel_n_max: kernel.n_max(),
            state_n_max,
        });
    }
    let weights = state.weights().probs();
    // rows beyond the support of the occupied columns are identically zero
    let dim = kernel.support_end(state_n_max) + 1;

    let columns: Vec<Vec<f64>> = (0..=state_n_max)
        .map(|n| (0..dim).map(|s| kernel.get(s, n)).collect())
        .collect();

    let rows: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|a| {
            let mut row = vec![CompensatedSum::new(); dim];
            for (n, col) in columns.iter().enumerate() {
                let wa = weights[n] * col[a];
                if wa == 0.0 {
                    continue;
                }
                for (acc, kb) in row.iter_mut().zip(col) {
                    acc.add(wa * kb);
                }
            }
            row.iter().map(CompensatedSum::value).collect()
        })
        .collect();

    let mut p = Vec::with_capacity(dim * dim);
    for row in rows {
        p.extend(row);
    }

    // Column n keeps mass (1 - c_n)^2 in the stored block.
    let mut tail = CompensatedSum::new();
    tail.add(state.tail_mass());
    for (n, &w) in weights.iter().enumerate() {
        let c = kernel.column_tail()[n];
        tail.add(w * (2.0 * c - c * c));
    }
    JointCountDistribution::from_matrix(p, dim, tail.value())
}

/// Probabilities of the four decoded bit pairs `(i, j)`, party one first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMatrix {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
    pub threshold: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> f64 {
        self.p00 + self.p01 + self.p10 + self.p11
    }

    /// `(q0, q1)`: first party's bit distribution.
    pub fn first_marginal(&self) -> (f64, f64) {
        (self.p00 + self.p01, self.p10 + self.p11)
    }

    /// `(r0, r1)`: second party's bit distribution.
    pub fn second_marginal(&self) -> (f64, f64) {
        (self.p00 + self.p10, self.p01 + self.p11)
    }
}

/// Decodes bit 0 for `count <= threshold` and bit 1 otherwise. Mass lost to
/// truncation belongs to counts above every stored index, so it lands in
/// `p11`.
pub fn confusion_matrix(joint: &JointCountDistribution, threshold: usize) -> ConfusionMatrix {
    let mut cells = [CompensatedSum::new(); 4];
    for a in 0..joint.dim {
        for b in 0..joint.dim {
            let idx = (usize::from(a > threshold) << 1) | usize::from(b > threshold);
            cells[idx].add(joint.get(a, b));
        }
    }
    cells[3].add(joint.tail_mass);
    ConfusionMatrix {
        p00: cells[0].value(),
        p01: cells[1].value(),
        p10: cells[2].value(),
        p11: cells[3].value(),
        threshold,
    }
}

/// Two-dimensional prefix sums of the joint distribution so that every
/// threshold costs O(1).
struct ThresholdSums {
    /// `cum[a][b] = sum_{a' <= a, b' <= b} P(a', b')`, row-major.
    cum: Vec<f64>,
    dim: usize,
    tail: f64,
}

impl ThresholdSums {
    fn new(joint: &JointCountDistribution) -> Self {
        let dim = joint.dim;
        let mut cum = vec![0.0; dim * dim];
        let mut row_acc = vec![CompensatedSum::new(); dim];
        for a in 0..dim {
            for (b, acc) in row_acc.iter_mut().enumerate() {
                acc.add(joint.get(a, b));
            }
            // row a of cum is the running prefix over b of row_acc
            let mut prefix = CompensatedSum::new();
            for b in 0..dim {
                prefix.add(row_acc[b].value());
                cum[a * dim + b] = prefix.value();
            }
        }
        Self {
            cum,
            dim,
            tail: joint.tail_mass,
        }
    }

    fn at(&self, a: usize, b: usize) -> f64 {
        self.cum[a.min(self.dim - 1) * self.dim + b.min(self.dim - 1)]
    }

    fn confusion(&self, threshold: usize) -> ConfusionMatrix {
        let last = self.dim - 1;
        let total = self.at(last, last);
        let low_low = self.at(threshold, threshold);
        let low_any = self.at(threshold, last);
        let any_low = self.at(last, threshold);
        ConfusionMatrix {
            p00: low_low,
            p01: (low_any - low_low).max(0.0),
            p10: (any_low - low_low).max(0.0),
            p11: (total - low_any - any_low + low_low).max(0.0) + self.tail,
            threshold,
        }
    }
}

/// Mutual information of the decoded bit pair, in bits, with `0 log 0 = 0`.
pub fn mutual_information(cm: &ConfusionMatrix) -> f64 {
    let (q0, q1) = cm.first_marginal();
    let (r0, r1) = cm.second_marginal();
    let cells = [
        (cm.p00, q0, r0),
        (cm.p01, q0, r1),
        (cm.p10, q1, r0),
        (cm.p11, q1, r1),
    ];
    let mut acc = CompensatedSum::new();
    for (pij, qi, rj) in cells {
        if pij > 0.0 {
            acc.add(pij * (pij / (qi * rj)).log2());
        }
    }
    // a product distribution can come out at -1e-17
    acc.value().max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult {
    /// Bits per channel use.
    pub capacity: f64,
    pub optimal_threshold: usize,
    /// `(T, I2(T))` for every threshold examined.
    pub curve: Vec<(usize, f64)>,
    /// Probability mass outside the stored joint distribution.
    pub tail_mass: f64,
}

/// Smallest count whose cumulative single-detector mass exceeds `1 - tol`.
pub fn threshold_upper_bound(joint: &JointCountDistribution, tol: f64) -> usize {
    let mut acc = CompensatedSum::new();
    for (a, m) in joint.marginal().into_iter().enumerate() {
        acc.add(m);
        if acc.value() > 1.0 - tol {
            return a;
        }
    }
    joint.s_max()
}

/// Maximizes the mutual information over every integer threshold up to
/// [`threshold_upper_bound`]; ties go to the smallest threshold.
pub fn capacity(state: &PnesState, kernel: &CountKernel) -> Result<CapacityResult> {
    let joint = joint_distribution(state, kernel)?;
    Ok(capacity_from_joint(&joint, kernel.tol()))
}

pub fn capacity_from_joint(joint: &JointCountDistribution, tol: f64) -> CapacityResult {
    let t_hi = threshold_upper_bound(joint, tol);
    let sums = ThresholdSums::new(joint);
    let curve: Vec<(usize, f64)> = (0..=t_hi)
        .map(|t| (t, mutual_information(&sums.confusion(t))))
        .collect();
    let (optimal_threshold, capacity) =
        curve
            .iter()
            .copied()
            .fold((0, f64::NEG_INFINITY), |best, (t, i)| {
                if i > best.1 {
                    (t, i)
                } else {
                    best
                }
            });
    CapacityResult {
        capacity,
        optimal_threshold,
        curve,
        tail_mass: joint.tail_mass,
    }
}

/// Mutual information at a fixed threshold.
pub fn information_at_threshold(
    state: &PnesState,
    kernel: &CountKernel,
    threshold: usize,
) -> Result<CapacityResult> {
    let joint = joint_distribution(state, kernel)?;
    let i = mutual_information(&confusion_matrix(&joint, threshold));
    Ok(CapacityResult {
        capacity: i,
        optimal_threshold: threshold,
        curve: vec![(threshold, i)],
        tail_mass: joint.tail_mass,
    })
}
