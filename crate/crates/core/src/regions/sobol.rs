//! Sobol low-discrepancy sequence in up to eight dimensions.
//!
//! Gray-code construction with the first eight dimensions of the
//! new-joe-kuo-6.21201 direction numbers. An optional random digital shift
//! (XOR of a seeded 32-bit word per coordinate) randomizes the sequence while
//! keeping its net structure.

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_SHIFT};

pub const MAX_DIM: usize = 8;
const BITS: usize = 32;

/// `(degree s, polynomial coefficients a, initial m_1..m_s)` for dimensions 2..=8.
/// Dimension 1 is the van der Corput sequence in base 2.
const JOE_KUO: [(u32, u32, &[u32]); MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
];

/// SHA-256 over the embedded table, checked when a generator is built.
const TABLE_SHA256: &str = "aa20452b2a50f12271a31e8b61e6f06830f08f23d8edf0e0685297a5f8566775";

fn table_digest() -> String {
    let mut h = Sha256::new();
    for (s, a, m) in JOE_KUO {
        h.update(s.to_le_bytes());
        h.update(a.to_le_bytes());
        for v in m {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = 1 << (BITS - 1 - i);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for i in 0..s.min(BITS) {
        v[i] = m[i] << (BITS - 1 - i);
    }
    for i in s..BITS {
        let mut x = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                x ^= v[i - k];
            }
        }
        v[i] = x;
    }
    v
}

#[derive(Debug, Clone)]
pub struct SobolGenerator {
    dim: usize,
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u64,
}

impl SobolGenerator {
    /// Unshifted sequence starting at the origin.
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::invalid(format!(
                "Sobol dimension {dim} unsupported (1..={MAX_DIM})"
            )));
        }
        let digest = table_digest();
        if digest != TABLE_SHA256 {
            return Err(Error::numeric(format!(
                "direction-number table checksum mismatch: {digest}"
            )));
        }
        Ok(SobolGenerator {
            dim,
            directions: (0..dim).map(direction_numbers).collect(),
            state: vec![0; dim],
            shift: vec![0; dim],
            index: 0,
        })
    }

    /// Sequence with a seeded random digital shift.
    pub fn with_shift(dim: usize, seed: u64) -> Result<Self> {
        let mut g = Self::new(dim)?;
        let mut rng = stream_rng(seed, STREAM_SHIFT);
        g.shift = (0..dim).map(|_| rng.gen()).collect();
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Index of the next point.
    pub fn index(&self) -> u64 {
        self.index
    }

    fn next_point(&mut self, out: &mut [f64]) {
        const SCALE: f64 = 1.0 / (1u64 << BITS) as f64;
        for ((o, s), sh) in out.iter_mut().zip(&self.state).zip(&self.shift) {
            *o = (s ^ sh) as f64 * SCALE;
        }
        // Gray-code update: flip the direction number at the lowest zero bit of the index.
        let c = (!self.index).trailing_zeros() as usize;
        if c < BITS {
            for (s, d) in self.state.iter_mut().zip(&self.directions) {
                *s ^= d[c];
            }
        }
        self.index += 1;
    }

    /// The next `n` points as a flat row-major vector of `n * dim` coordinates.
    pub fn take(&mut self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * self.dim];
        for row in out.chunks_exact_mut(self.dim) {
            self.next_point(row);
        }
        out
    }
}

/// The next `n` points of `gen`, one vector per point.
pub fn sobol_points(gen: &mut SobolGenerator, n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("point count must be at least 1"));
    }
    let d = gen.dim();
    Ok(gen.take(n).chunks_exact(d).map(<[f64]>::to_vec).collect())
}
