use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Standard deviation of the error distribution.
pub const ERROR_STD_DEV: f64 = 3.2;
/// Samples beyond this many standard deviations are rejected.
pub const ERROR_TAIL_CUT: f64 = 6.0;

pub fn ternary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i64> {
    (0..n).map(|_| rng.random_range(0..3i64) - 1).collect()
}

/// Rounded Gaussian, centred, truncated at `ERROR_TAIL_CUT` sigma.
pub fn gaussian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i64> {
    let normal = Normal::new(0.0, ERROR_STD_DEV).expect("valid standard deviation");
    let bound = ERROR_STD_DEV * ERROR_TAIL_CUT;
    (0..n)
        .map(|_| loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= bound {
                break x.round() as i64;
            }
        })
        .collect()
}

pub fn uniform_residues<R: Rng + ?Sized>(n: usize, moduli: &[u64], rng: &mut R) -> Vec<u64> {
    let mut out = Vec::with_capacity(n * moduli.len());
    for &q in moduli {
        out.extend((0..n).map(|_| rng.random_range(0..q)));
    }
    out
}
