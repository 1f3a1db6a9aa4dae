use crate::oracle::{Actuation, CHAMBERS};
use crate::{Error, Result};

const PRIMES: [u64; 9] = [2, 3, 5, 7, 11, 13, 17, 19, 23];

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    out
}

/// Halton points with the first `dim` primes as bases. Point `i` uses
/// sequence index `skip + i + 1`, so the unskipped sequence starts at
/// `1/2, 1/3, …`.
pub fn halton(dim: usize, count: usize, skip: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > PRIMES.len() {
        return Err(Error::Invalid(format!(
            "halton dimension must be in 1..={}, got {dim}",
            PRIMES.len()
        )));
    }
    Ok((0..count)
        .map(|i| {
            let index = (skip + i + 1) as u64;
            PRIMES[..dim].iter().map(|&b| radical_inverse(index, b)).collect()
        })
        .collect())
}

/// All 2⁹ min/max combinations in lexicographic order (chamber 0 is the
/// most significant digit).
pub fn corner_actuations() -> Vec<Actuation> {
    (0..1usize << CHAMBERS)
        .map(|bits| {
            let v: [f64; CHAMBERS] = std::array::from_fn(|k| ((bits >> (CHAMBERS - 1 - k)) & 1) as f64);
            Actuation::new(v).expect("binary actuation is in range")
        })
        .collect()
}

pub fn halton_actuations(count: usize, skip: usize) -> Vec<Actuation> {
    halton(CHAMBERS, count, skip)
        .expect("chamber count is a valid halton dimension")
        .into_iter()
        .map(|p| Actuation::from_slice(&p).expect("halton points lie in [0,1)"))
        .collect()
}
