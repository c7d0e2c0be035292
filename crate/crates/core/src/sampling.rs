//! Deterministic sample sets for certification and testing.
//!
//! All residual-based checks in this crate evaluate tensors over declared
//! sample sets. Points come from a seeded additive-recurrence
//! low-discrepancy sequence (a Kronecker sequence with per-axis irrational
//! strides), so identical seeds reproduce identical reports byte for byte.

/// SplitMix64 step; used to derive per-axis offsets from a single seed.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform value in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform value in `[lo, hi)`.
    pub fn next_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Per-axis strides from the generalized golden ratio: the unique positive
/// root of `x^{d+1} = x + 1` gives d mutually irrational fractions with
/// good equidistribution (R_d sequence).
fn strides(dim: usize) -> Vec<f64> {
    let d = dim as f64;
    let mut phi = 1.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d + 1.0));
    }
    (1..=dim).map(|i| (1.0 / phi).powi(i as i32) % 1.0).collect()
}

/// Low-discrepancy points in the axis-aligned box given by `windows`.
///
/// The seed perturbs the sequence offset only; the stride pattern is fixed
/// by the dimension. Every certification report records the seed used.
pub fn low_discrepancy_points(
    seed: u64,
    count: usize,
    windows: &[(f64, f64)],
) -> Vec<Vec<f64>> {
    let dim = windows.len();
    let alpha = strides(dim);
    let mut rng = SplitMix64::new(seed);
    let offsets: Vec<f64> = (0..dim).map(|_| rng.next_f64()).collect();
    (0..count)
        .map(|k| {
            (0..dim)
                .map(|d| {
                    let u = (offsets[d] + alpha[d] * (k as f64 + 1.0)).fract();
                    let (lo, hi) = windows[d];
                    lo + (hi - lo) * u
                })
                .collect()
        })
        .collect()
}

/// Points in the symmetric cube `[-half, half]^dim`.
pub fn cube_points(seed: u64, count: usize, dim: usize, half: f64) -> Vec<Vec<f64>> {
    low_discrepancy_points(seed, count, &vec![(-half, half); dim])
}
