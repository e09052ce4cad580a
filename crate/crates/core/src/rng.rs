//! Counter-based noise keyed by `(seed, path index, draw index)`.
//!
//! Each path owns a ChaCha8 stream selected by its index, so path `i`
//! always sees the same variates no matter which worker generates it or in
//! which order. Normal variates come in Box–Muller pairs, two 64-bit words
//! per pair, so draw `j` sits at a fixed position of the stream.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Which sub-stream of a path to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// Brownian increments. Shared by every volatility control, which is
    /// what makes estimates across controls use common random numbers.
    Noise,
    /// Randomness private to a control (e.g. regime switching times).
    Control,
}

fn stream_id(path: u64, channel: Channel) -> u64 {
    match channel {
        Channel::Noise => path.wrapping_mul(2),
        Channel::Control => path.wrapping_mul(2).wrapping_add(1),
    }
}

fn unit_open(word: u64) -> f64 {
    // (0, 1]
    ((word >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn unit_half_open(word: u64) -> f64 {
    // [0, 1)
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential reader over one path's stream.
pub struct PathStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl PathStream {
    pub fn new(seed: u64, path: u64, channel: Channel) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(path, channel));
        Self { rng, spare: None }
    }

    /// Positions the stream at normal draw `index`.
    pub fn at_normal(seed: u64, path: u64, channel: Channel, index: u64) -> Self {
        let mut s = Self::new(seed, path, channel);
        // one pair = two u64 = four 32-bit words
        s.rng.set_word_pos(u128::from(index / 2) * 4);
        if index % 2 == 1 {
            s.next_normal();
        }
        s
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = unit_open(self.rng.next_u64());
        let u2 = unit_half_open(self.rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    /// Uniform on `[0, 1)`. Only meaningful on streams that are not also
    /// used for normals.
    pub fn next_uniform(&mut self) -> f64 {
        unit_half_open(self.rng.next_u64())
    }
}
