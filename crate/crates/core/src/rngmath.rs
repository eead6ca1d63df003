//! Random streams and the small numeric kernels shared by every sampler:
//! exact Pólya-Gamma PG(1, c) draws, multivariate normal draws and dense
//! Cholesky factorization at neighbor-set scale.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Seeded, stream-addressable random source.
///
/// `(seed, stream_id)` fully determines the draw sequence. Backed by ChaCha8,
/// whose 64-bit stream selector gives independent sequences for distinct ids.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Derives an independent child stream from `(seed, stream_id, label)`
    /// without touching the parent's position.
    pub fn substream(&self, label: u64) -> RandomStream {
        let child_seed = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5851_F42D)));
        RandomStream::new(splitmix64(child_seed ^ splitmix64(label)), self.stream_id)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(&mut self.rng)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Gamma(shape, scale) draw.
    pub fn gamma(&mut self, shape: f64, scale: f64) -> f64 {
        Gamma::new(shape, scale)
            .expect("gamma parameters must be positive")
            .sample(&mut self.rng)
    }

    /// Inverse-gamma draw with the (shape, scale) parameterization:
    /// density proportional to x^(-shape-1) exp(-scale / x).
    pub fn inverse_gamma(&mut self, shape: f64, scale: f64) -> f64 {
        1.0 / self.gamma(shape, 1.0 / scale)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// A single PG(1, c) variate. Always strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct PgDraw(f64);

impl PgDraw {
    pub fn value(self) -> f64 {
        self.0
    }
}

const PG_TRUNC: f64 = 0.64;

/// Exact PG(1, c) draw; fails only on non-finite `c`.
pub fn sample_polya_gamma(c: f64, stream: &mut RandomStream) -> Result<PgDraw> {
    if !c.is_finite() {
        return Err(Error::invalid(format!("Polya-Gamma tilt must be finite, got {c}")));
    }
    Ok(PgDraw(pg_one(c, stream)))
}

/// Alternating-series accept/reject sampler for PG(1, c) (Devroye-style
/// proposal mixing a truncated exponential and a truncated inverse Gaussian).
/// Caller guarantees `c` is finite.
pub(crate) fn pg_one(c: f64, stream: &mut RandomStream) -> f64 {
    let z = 0.5 * c.abs();
    let k = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = truncated_exp_mass(z, k);
    loop {
        let x = if stream.uniform() < p_exp {
            PG_TRUNC + stream.exp1() / k
        } else {
            truncated_inverse_gauss(z, stream)
        };
        let mut s = series_coef(0, x);
        let y = stream.uniform() * s;
        let mut n = 0usize;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

fn series_coef(n: usize, x: f64) -> f64 {
    let h = n as f64 + 0.5;
    let kk = h * PI;
    if x > PG_TRUNC {
        kk * (-0.5 * kk * kk * x).exp()
    } else {
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + kk.ln() - 2.0 * h * h / x).exp()
    }
}

fn ln_normal_cdf(x: f64) -> f64 {
    (0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Probability of the truncated-exponential branch of the proposal.
fn truncated_exp_mass(z: f64, k: f64) -> f64 {
    let t = PG_TRUNC;
    let rt = (1.0 / t).sqrt();
    let b = rt * (t * z - 1.0);
    let a = -rt * (t * z + 1.0);
    let x0 = k.ln() + k * t;
    let xb = x0 - z + ln_normal_cdf(b);
    let xa = x0 + z + ln_normal_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian IG(1/z, 1) truncated to (0, PG_TRUNC).
fn truncated_inverse_gauss(z: f64, stream: &mut RandomStream) -> f64 {
    let t = PG_TRUNC;
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > t {
        loop {
            let e1 = loop {
                let e1 = stream.exp1();
                let e2 = stream.exp1();
                if e1 * e1 <= 2.0 * e2 / t {
                    break e1;
                }
            };
            let x = t / ((1.0 + t * e1) * (1.0 + t * e1));
            let accept = (-0.5 * z * z * x).exp();
            if stream.uniform() <= accept {
                return x;
            }
        }
    } else {
        loop {
            let n = stream.normal();
            let muy = mu * n * n;
            let mut x = mu + 0.5 * mu * muy - 0.5 * mu * (4.0 * muy + muy * muy).sqrt();
            if stream.uniform() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}

/// Draws from N(mean, L Lᵀ) given the lower Cholesky factor `L`.
pub fn sample_mvn(mean: &[f64], chol_lower: &Array2<f64>, stream: &mut RandomStream) -> Result<Vec<f64>> {
    let d = mean.len();
    if chol_lower.dim() != (d, d) {
        return Err(Error::invalid(format!(
            "mean has length {d} but factor is {:?}",
            chol_lower.dim()
        )));
    }
    let eps: Vec<f64> = (0..d).map(|_| stream.normal()).collect();
    Ok((0..d)
        .map(|i| mean[i] + (0..=i).map(|k| chol_lower[(i, k)] * eps[k]).sum::<f64>())
        .collect())
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, c) = a.dim();
    if n != c {
        return Err(Error::invalid(format!("cholesky needs a square matrix, got {n}x{c}")));
    }
    let mut buf: Vec<f64> = a.iter().copied().collect();
    chol_in_place(&mut buf, n)?;
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = buf[i * n + j];
        }
    }
    Ok(l)
}

/// In-place lower Cholesky on a row-major `n x n` buffer. Only the lower
/// triangle is read; the strict upper triangle is left untouched.
pub fn chol_in_place(a: &mut [f64], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let (head, tail) = a.split_at_mut((j + 1) * n);
        let row_j = &mut head[j * n..(j + 1) * n];
        let ajj = row_j[j];
        let d = ajj - dot4(&row_j[..j], &row_j[..j]);
        let scale = ajj.abs().max(f64::MIN_POSITIVE);
        if !(d > 1e-13 * scale) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        row_j[j] = d;
        let row_j = &row_j[..j];
        for row_i in tail.chunks_exact_mut(n) {
            row_i[j] = (row_i[j] - dot4(&row_i[..j], row_j)) / d;
        }
    }
    Ok(())
}

/// Dot product with four partial sums.
#[inline]
pub(crate) fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for t in 0..4 {
            acc[t] += x[t] * y[t];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

/// Solves `L x = b` in place for lower-triangular row-major `L`.
pub fn solve_lower_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i + 1];
        b[i] = (b[i] - dot4(&row[..i], &b[..i])) / row[i];
    }
}

/// Solves `Lᵀ x = b` in place for lower-triangular row-major `L`.
pub fn solve_lower_transpose_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Draws `x ~ N(P⁻¹ h, P⁻¹)` from the canonical (precision, information)
/// form. `precision` is overwritten with its Cholesky factor and the draw is
/// written into `info`.
pub fn sample_canonical_in_place(
    precision: &mut [f64],
    info: &mut [f64],
    n: usize,
    stream: &mut RandomStream,
) -> Result<()> {
    chol_in_place(precision, n)?;
    solve_lower_in_place(precision, n, info);
    for v in info.iter_mut() {
        *v += stream.normal();
    }
    solve_lower_transpose_in_place(precision, n, info);
    Ok(())
}

/// Logistic function clamped to the open unit interval.
#[inline]
pub fn inv_logit(eta: f64) -> f64 {
    const LO: f64 = 1e-300;
    const HI: f64 = 1.0 - f64::EPSILON / 2.0;
    let p = if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    };
    p.clamp(LO, HI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&Array2::eye(3)).unwrap();
        assert_eq!(l, Array2::<f64>::eye(3));
    }

    #[test]
    fn cholesky_two_by_two() {
        let l = cholesky(&array![[4.0, 2.0], [2.0, 3.0]]).unwrap();
        assert_abs_diff_eq!(l[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l[(1, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l[(1, 1)], 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
        let back = l.dot(&l.t());
        assert_abs_diff_eq!(back[(0, 1)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        match cholesky(&array![[1.0, 2.0], [2.0, 1.0]]) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn pg_rejects_non_finite() {
        let mut s = RandomStream::new(1, 0);
        assert!(sample_polya_gamma(f64::NAN, &mut s).is_err());
        assert!(sample_polya_gamma(f64::INFINITY, &mut s).is_err());
    }

    #[test]
    fn pg_draws_positive() {
        let mut s = RandomStream::new(7, 3);
        for &c in &[0.0, 0.1, -3.0, 40.0, 1e4] {
            for _ in 0..2000 {
                assert!(sample_polya_gamma(c, &mut s).unwrap().value() > 0.0);
            }
        }
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let draw = |seed, id| {
            let mut s = RandomStream::new(seed, id);
            (0..50).map(|_| s.next_u64()).collect::<Vec<_>>()
        };
        assert_eq!(draw(11, 2), draw(11, 2));
        assert_ne!(draw(11, 2), draw(11, 3));
        let parent = RandomStream::new(11, 2);
        let mut a = parent.substream(5);
        let mut b = parent.substream(5);
        assert_eq!(a.next_u64(), b.next_u64());
        assert_ne!(parent.substream(5).next_u64(), parent.substream(6).next_u64());
    }

    #[test]
    fn mvn_dimension_mismatch() {
        let mut s = RandomStream::new(1, 0);
        assert!(sample_mvn(&[0.0, 0.0], &Array2::eye(3), &mut s).is_err());
    }

    #[test]
    fn mvn_near_degenerate() {
        let mut s = RandomStream::new(3, 0);
        let l = array![[1e-4]];
        for _ in 0..10_000 {
            let x = sample_mvn(&[5.0], &l, &mut s).unwrap();
            assert!((x[0] - 5.0).abs() < 0.01);
        }
    }

    #[test]
    fn mvn_identity_variances() {
        let mut s = RandomStream::new(4, 0);
        let n = 100_000;
        let mut ss = [0.0; 2];
        let mut m = [0.0; 2];
        for _ in 0..n {
            let x = sample_mvn(&[0.0, 0.0], &Array2::eye(2), &mut s).unwrap();
            for k in 0..2 {
                m[k] += x[k];
                ss[k] += x[k] * x[k];
            }
        }
        for k in 0..2 {
            let mean = m[k] / n as f64;
            let var = ss[k] / n as f64 - mean * mean;
            assert!((var - 1.0).abs() < 0.02, "variance {var}");
        }
    }

    #[test]
    fn mvn_matches_covariance() {
        let cov = array![[4.0, 2.0], [2.0, 3.0]];
        let l = cholesky(&cov).unwrap();
        let mut s = RandomStream::new(5, 0);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_mvn(&[0.0, 0.0], &l, &mut s).unwrap()).collect();
        for a in 0..2 {
            for b in 0..2 {
                let c = draws.iter().map(|x| x[a] * x[b]).sum::<f64>() / n as f64;
                assert!((c - cov[(a, b)]).abs() < 0.05, "cov[{a},{b}] = {c}");
            }
        }
    }

    #[test]
    fn canonical_sampler_mean() {
        // precision diag(4, 1), info (8, -1) => mean (2, -1), variances (1/4, 1)
        let mut s = RandomStream::new(9, 0);
        let n = 50_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let mut p = vec![4.0, 0.0, 0.0, 1.0];
            let mut h = vec![8.0, -1.0];
            sample_canonical_in_place(&mut p, &mut h, 2, &mut s).unwrap();
            acc[0] += h[0];
            acc[1] += h[1];
        }
        assert!((acc[0] / n as f64 - 2.0).abs() < 0.01);
        assert!((acc[1] / n as f64 + 1.0).abs() < 0.02);
    }

    #[test]
    fn inv_logit_stays_open() {
        assert!(inv_logit(800.0) < 1.0);
        assert!(inv_logit(-800.0) > 0.0);
        assert_abs_diff_eq!(inv_logit(0.0), 0.5);
    }
}
