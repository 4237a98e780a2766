//! Counter-based uniform generator.
//!
//! Every draw is a pure function of `(seed, stream, index)`, so draws can be
//! produced in any order or in parallel and still agree bit-for-bit with a
//! serial run.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ 0x5851_F42D_4C95_7F2D),
        }
    }

    /// Derive an independent generator for a sub-stream.
    pub fn derive(&self, stream: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(stream.wrapping_add(GOLDEN))),
        }
    }

    pub fn bits(&self, stream: u64, index: u64) -> u64 {
        let a = mix64(self.key ^ stream.wrapping_mul(GOLDEN));
        mix64(a.wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03)) ^ (a >> 17))
    }

    /// Uniform draw strictly inside (0, 1).
    pub fn uniform(&self, stream: u64, index: u64) -> f64 {
        ((self.bits(stream, index) >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn stream(&self, stream: u64) -> Stream {
        Stream {
            rng: *self,
            stream,
            counter: 0,
        }
    }
}

/// Sequential view on one stream of a [`CounterRng`].
#[derive(Debug, Clone)]
pub struct Stream {
    rng: CounterRng,
    stream: u64,
    counter: u64,
}

impl Stream {
    pub fn next_uniform(&mut self) -> f64 {
        let u = self.rng.uniform(self.stream, self.counter);
        self.counter += 1;
        u
    }
}
