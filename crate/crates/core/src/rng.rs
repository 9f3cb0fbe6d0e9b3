//! Deterministic random streams for parallel Monte Carlo.
//!
//! Every trajectory owns an [`RngStream`] seeded from `(master_seed,
//! trajectory_index)`, so the numbers a trajectory sees never depend on how
//! trajectories are scheduled across workers.
//!
//! The engine is MT19937 (32-bit). Uniform doubles use the 53-bit
//! `genrand_res53` construction and normals use the cosine branch of
//! Box-Muller, so each normal consumes exactly two uniforms.

use std::f64::consts::PI;

const N: usize = 624;
const M: usize = 397;
const MATRIX_A: u32 = 0x9908_b0df;
const UPPER_MASK: u32 = 0x8000_0000;
const LOWER_MASK: u32 = 0x7fff_ffff;

/// Golden-ratio increment shared by SplitMix64 and the index mixing.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Classic 32-bit Mersenne Twister.
#[derive(Clone)]
pub struct Mt19937 {
    state: [u32; N],
    index: usize,
}

impl Mt19937 {
    /// `init_genrand` seeding.
    pub fn new(seed: u32) -> Self {
        let mut state = [0u32; N];
        state[0] = seed;
        for i in 1..N {
            let prev = state[i - 1];
            state[i] = 1_812_433_253u32
                .wrapping_mul(prev ^ (prev >> 30))
                .wrapping_add(i as u32);
        }
        Mt19937 { state, index: N }
    }

    /// `init_by_array` seeding.
    pub fn from_key(key: &[u32]) -> Self {
        let mut mt = Mt19937::new(19_650_218);
        let len = key.len().max(1);
        let mut i = 1usize;
        let mut j = 0usize;
        for _ in 0..N.max(len) {
            let prev = mt.state[i - 1];
            let k = key.get(j).copied().unwrap_or(0);
            mt.state[i] = (mt.state[i] ^ (prev ^ (prev >> 30)).wrapping_mul(1_664_525))
                .wrapping_add(k)
                .wrapping_add(j as u32);
            i += 1;
            j += 1;
            if i >= N {
                mt.state[0] = mt.state[N - 1];
                i = 1;
            }
            if j >= len {
                j = 0;
            }
        }
        for _ in 0..N - 1 {
            let prev = mt.state[i - 1];
            mt.state[i] = (mt.state[i] ^ (prev ^ (prev >> 30)).wrapping_mul(1_566_083_941)).wrapping_sub(i as u32);
            i += 1;
            if i >= N {
                mt.state[0] = mt.state[N - 1];
                i = 1;
            }
        }
        mt.state[0] = 0x8000_0000;
        mt.index = N;
        mt
    }

    fn twist(&mut self) {
        for i in 0..N {
            let y = (self.state[i] & UPPER_MASK) | (self.state[(i + 1) % N] & LOWER_MASK);
            let mut next = self.state[(i + M) % N] ^ (y >> 1);
            if y & 1 != 0 {
                next ^= MATRIX_A;
            }
            self.state[i] = next;
        }
        self.index = 0;
    }

    pub fn next_u32(&mut self) -> u32 {
        if self.index >= N {
            self.twist();
        }
        let mut y = self.state[self.index];
        self.index += 1;
        y ^= y >> 11;
        y ^= (y << 7) & 0x9d2c_5680;
        y ^= (y << 15) & 0xefc6_0000;
        y ^= y >> 18;
        y
    }

    /// Uniform on [0, 1) with 53-bit resolution (`genrand_res53`).
    pub fn next_f64(&mut self) -> f64 {
        let a = (self.next_u32() >> 5) as f64;
        let b = (self.next_u32() >> 6) as f64;
        (a * 67_108_864.0 + b) * (1.0 / 9_007_199_254_740_992.0)
    }
}

/// One SplitMix64 output for the given input word.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trajectory seed word. Injective in `trajectory_index` for a fixed
/// master seed, since the index mixing multiplies by an odd constant and
/// SplitMix64 is a bijection on `u64`.
pub fn derived_seed(master_seed: u32, trajectory_index: u64) -> u64 {
    splitmix64(u64::from(master_seed) ^ trajectory_index.wrapping_mul(GOLDEN_GAMMA))
}

/// A random stream owned by a single trajectory.
#[derive(Clone)]
pub struct RngStream {
    master_seed: u32,
    trajectory_index: u64,
    engine: Mt19937,
    uniforms_drawn: u64,
}

/// Creates the stream for `trajectory_index` under `master_seed`.
///
/// The 64-bit derived seed is fed to the twister as a two-word key
/// (low word first), so distinct indices never share an engine state.
pub fn derive_stream(master_seed: u32, trajectory_index: u64) -> RngStream {
    let seed = derived_seed(master_seed, trajectory_index);
    let key = [seed as u32, (seed >> 32) as u32];
    RngStream {
        master_seed,
        trajectory_index,
        engine: Mt19937::from_key(&key),
        uniforms_drawn: 0,
    }
}

impl RngStream {
    pub fn master_seed(&self) -> u32 {
        self.master_seed
    }

    pub fn trajectory_index(&self) -> u64 {
        self.trajectory_index
    }

    /// Number of 53-bit uniforms consumed so far.
    pub fn uniforms_drawn(&self) -> u64 {
        self.uniforms_drawn
    }

    /// Uniform on [0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        self.uniforms_drawn += 1;
        self.engine.next_f64()
    }

    pub fn next_standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        box_muller(u1, u2)
    }

    /// Fills `out` with independent N(0, h) draws.
    pub fn fill_increment(&mut self, step_size: f64, out: &mut [f64]) {
        let scale = step_size.sqrt();
        for w in out.iter_mut() {
            *w = scale * self.next_standard_normal();
        }
    }
}

/// Cosine branch of Box-Muller for `u1` in (0, 1] and `u2` in [0, 1).
pub fn box_muller(u1: f64, u2: f64) -> f64 {
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Brownian increments over a uniform mesh, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrements {
    pub dim_noise: usize,
    pub step_size: f64,
    values: Vec<f64>,
}

impl BrownianIncrements {
    pub fn n_steps(&self) -> usize {
        self.values.len() / self.dim_noise
    }

    pub fn step(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim_noise..(n + 1) * self.dim_noise]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim_noise)
    }

    /// Componentwise sum of all increments, i.e. `W(T) - W(0)`.
    pub fn total(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim_noise];
        for step in self.iter() {
            for (s, w) in sum.iter_mut().zip(step) {
                *s += w;
            }
        }
        sum
    }
}

/// Draws `n_steps` increments of an `dim_noise`-dimensional Brownian motion.
pub fn brownian_path(stream: &mut RngStream, n_steps: usize, dim_noise: usize, step_size: f64) -> BrownianIncrements {
    assert!(n_steps >= 1 && dim_noise >= 1, "empty Brownian path");
    assert!(step_size > 0.0, "step size must be positive");
    let mut values = vec![0.0; n_steps * dim_noise];
    for chunk in values.chunks_exact_mut(dim_noise) {
        stream.fill_increment(step_size, chunk);
    }
    BrownianIncrements {
        dim_noise,
        step_size,
        values,
    }
}
