//! Row spaces over GF(2) with coding vectors packed into `u64` bitmasks.

/// Span of a set of GF(2) vectors of length ≤ 64, kept in echelon form
/// indexed by leading bit.
#[derive(Debug, Clone)]
pub struct Gf2Span {
    basis: [u64; 64],
    rank: usize,
}

impl Default for Gf2Span {
    fn default() -> Self {
        Self::new()
    }
}

impl Gf2Span {
    pub fn new() -> Self {
        Gf2Span {
            basis: [0; 64],
            rank: 0,
        }
    }

    fn reduce(&self, mut v: u64) -> u64 {
        while v != 0 {
            let lead = 63 - v.leading_zeros() as usize;
            let row = self.basis[lead];
            if row == 0 {
                break;
            }
            v ^= row;
        }
        v
    }

    /// Adds `v`; returns whether the rank grew.
    pub fn insert(&mut self, v: u64) -> bool {
        let r = self.reduce(v);
        if r == 0 {
            return false;
        }
        let lead = 63 - r.leading_zeros() as usize;
        self.basis[lead] = r;
        self.rank += 1;
        true
    }

    pub fn contains(&self, v: u64) -> bool {
        self.reduce(v) == 0
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// Mask of the unit vectors `e_i`, `i < width`, that lie in the span of `received`.
pub fn decodable_units(received: impl IntoIterator<Item = u64>, width: usize) -> u64 {
    let mut span = Gf2Span::new();
    for v in received {
        span.insert(v);
    }
    (0..width)
        .filter(|&i| span.contains(1u64 << i))
        .fold(0, |acc, i| acc | (1u64 << i))
}
