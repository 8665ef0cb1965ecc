//! Small deterministic PRNG used for corpus splits and label shuffles.
//!
//! Reproducibility across releases matters more here than statistical
//! sophistication: a split or an anonymization order must never change
//! underneath an existing record store. So instead of depending on an
//! external RNG crate whose stream might shift between versions, this
//! module pins two tiny, well-known algorithms — splitmix64 for seeding and
//! xoshiro256** for the stream — whose outputs are frozen by golden tests.

/// splitmix64: expands a 64-bit seed into a stream of 64-bit values.
/// Used only to seed [`Xoshiro256StarStar`].
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// xoshiro256**: the main generator. Seeded from four successive
/// splitmix64 outputs, per the generator authors' recommendation.
#[derive(Debug, Clone)]
pub struct Xoshiro256StarStar {
    s: [u64; 4],
}

impl Xoshiro256StarStar {
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        Xoshiro256StarStar {
            s: [sm.next_u64(), sm.next_u64(), sm.next_u64(), sm.next_u64()],
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }
}

/// In-place Fisher–Yates shuffle, iterating from the last index down and
/// picking `j = next_u64() % (i + 1)`. The modulo bias is negligible for
/// the slice sizes involved and keeps the algorithm trivial to reimplement
/// when checking the stream independently.
pub fn shuffle<T>(rng: &mut Xoshiro256StarStar, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// FNV-1a 64-bit hash. Used to derive per-query sub-seeds and stable
/// synthetic identifiers from strings.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}
