//! Deterministic pseudo-random numbers.
//!
//! Everything random in this crate (weight init, apple placement, epsilon
//! draws, replay sampling) flows through [`Rng64`], an xoshiro256++ generator
//! seeded via splitmix64. Keeping the generator in-crate guarantees that a
//! seed reproduces the exact same stream across builds and platforms, which
//! the serial/distributed equivalence tests rely on.

/// xoshiro256++ generator with a cached Gaussian for Box-Muller pairs.
#[derive(Debug, Clone)]
pub struct Rng64 {
    state: [u64; 4],
    spare_gauss: Option<f64>,
}

fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Rng64 {
    pub fn seeded(seed: u64) -> Self {
        let mut x = seed;
        let state = [
            splitmix64(&mut x),
            splitmix64(&mut x),
            splitmix64(&mut x),
            splitmix64(&mut x),
        ];
        Rng64 {
            state,
            spare_gauss: None,
        }
    }

    /// Derives an independent generator for a substream (e.g. one evaluation
    /// episode). Mixing both words through splitmix64 keeps streams disjoint
    /// even for adjacent indices.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut x = seed;
        let a = splitmix64(&mut x);
        let mut y = stream ^ 0xa0761d6478bd642f;
        let b = splitmix64(&mut y);
        Rng64::seeded(a ^ b.rotate_left(17))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    pub fn f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Rejection sampling keeps the draw unbiased.
    pub fn range(&mut self, n: usize) -> usize {
        assert!(n > 0, "range bound must be positive");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw (Box-Muller, pairs cached).
    pub fn gauss(&mut self) -> f64 {
        if let Some(g) = self.spare_gauss.take() {
            return g;
        }
        // 1 - f64() lands in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.f64();
        let u2 = self.f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_gauss = Some(r * theta.sin());
        r * theta.cos()
    }
}
