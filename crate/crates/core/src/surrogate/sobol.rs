//! Sobol low-discrepancy sequence with Joe–Kuo direction numbers
//! (`new-joe-kuo-6.21201`), generated in Gray-code order. Index 0 is the
//! origin.

use super::SurrogateError;

pub const MAX_DIMENSION: usize = 32;
const BITS: usize = 32;
const SCALE: f64 = 1.0 / 4_294_967_296.0;

/// `(degree s, coefficients a, initial m_1..m_s)` for dimensions 2..=32.
#[rustfmt::skip]
const JOE_KUO: [(u32, u32, &[u32]); MAX_DIMENSION - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
    (7, 7, &[1, 1, 3, 13, 7, 35, 63]),
    (7, 8, &[1, 3, 5, 9, 1, 25, 53]),
    (7, 14, &[1, 3, 1, 13, 9, 35, 107]),
    (7, 19, &[1, 3, 1, 5, 27, 61, 31]),
    (7, 21, &[1, 1, 5, 11, 19, 41, 61]),
    (7, 28, &[1, 3, 5, 3, 3, 13, 69]),
    (7, 31, &[1, 1, 7, 13, 1, 19, 1]),
    (7, 32, &[1, 3, 7, 5, 13, 19, 59]),
    (7, 37, &[1, 1, 3, 9, 25, 29, 41]),
    (7, 41, &[1, 3, 5, 13, 23, 1, 55]),
    (7, 42, &[1, 3, 7, 3, 13, 59, 17]),
];

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (31 - k);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for k in 0..s {
        v[k] = m[k] << (31 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for l in 1..s {
            if (a >> (s - 1 - l)) & 1 == 1 {
                x ^= v[k - l];
            }
        }
        v[k] = x;
    }
    v
}

/// Stateful generator over `[0,1)^d`.
#[derive(Clone, Debug)]
pub struct SobolStream {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl SobolStream {
    pub fn new(dimension: usize) -> Result<Self, SurrogateError> {
        if dimension == 0 || dimension > MAX_DIMENSION {
            return Err(SurrogateError::UnsupportedDimension(dimension));
        }
        Ok(Self {
            directions: (0..dimension).map(direction_numbers).collect(),
            state: vec![0; dimension],
            index: 0,
        })
    }

    pub fn dimension(&self) -> usize {
        self.directions.len()
    }

    /// Index of the point the next call to [`Self::next_point`] returns.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Jumps directly to point `index`.
    pub fn seek(&mut self, index: u64) {
        assert!(index < 1 << BITS, "Sobol index exhausted");
        let gray = index ^ (index >> 1);
        for (state, dirs) in self.state.iter_mut().zip(&self.directions) {
            *state = dirs
                .iter()
                .enumerate()
                .filter(|(k, _)| (gray >> k) & 1 == 1)
                .fold(0, |acc, (_, v)| acc ^ v);
        }
        self.index = index;
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let point = self.state.iter().map(|&x| x as f64 * SCALE).collect();
        let next = self.index + 1;
        assert!(next < 1 << BITS, "Sobol index exhausted");
        let bit = next.trailing_zeros() as usize;
        for (state, dirs) in self.state.iter_mut().zip(&self.directions) {
            *state ^= dirs[bit];
        }
        self.index = next;
        point
    }
}

impl Iterator for SobolStream {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        (self.index + 1 < 1 << BITS).then(|| self.next_point())
    }
}

/// Points `skip..skip + n` of the `d`-dimensional sequence.
pub fn sobol_points(d: usize, n: usize, skip: u64) -> Result<Vec<Vec<f64>>, SurrogateError> {
    let mut stream = SobolStream::new(d)?;
    stream.seek(skip);
    Ok((0..n).map(|_| stream.next_point()).collect())
}
