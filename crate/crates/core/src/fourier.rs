//! Trigonometric sums on equispaced frequency lattices `t_k = k * step`.
//!
//! Phasors are advanced by complex multiplication and re-seeded from
//! `sin_cos` every [`RESEED`] steps, which bounds the accumulated rotation
//! error to a few ulps per block.

use num_complex::Complex64;

const RESEED: usize = 64;

/// `out[w][k] = sum_j weights[w][j] * exp(i * k * step * points[j])` for
/// `k = 0..count`.
pub(crate) fn phasor_sums(
    points: &[f64],
    weights: &[&[f64]],
    step: f64,
    count: usize,
) -> Vec<Vec<Complex64>> {
    let theta: Vec<f64> = points.iter().map(|p| step * p).collect();
    let mut ph = Phasors::new(&theta);
    let mut out = vec![vec![Complex64::new(0.0, 0.0); count]; weights.len()];
    for k in 0..count {
        if k % RESEED == 0 && k > 0 {
            ph.reseed(&theta, k);
        }
        for (acc, wt) in out.iter_mut().zip(weights) {
            acc[k] = ph.weighted_sum(wt);
        }
        ph.advance();
    }
    out
}

/// `sum_k Re(exp(-i * k * step * u) * coef[k])`.
pub(crate) fn cosine_series(coef: &[Complex64], step: f64, u: f64) -> f64 {
    cosine_series_many(coef, step, &[u])[0]
}

/// [`cosine_series`] at every point of `us`.
pub(crate) fn cosine_series_many(coef: &[Complex64], step: f64, us: &[f64]) -> Vec<f64> {
    let theta: Vec<f64> = us.iter().map(|u| -step * u).collect();
    let mut ph = Phasors::new(&theta);
    let mut acc = vec![0.0; us.len()];
    for (k, ck) in coef.iter().enumerate() {
        if k % RESEED == 0 && k > 0 {
            ph.reseed(&theta, k);
        }
        for ((a, zr), zi) in acc.iter_mut().zip(&ph.re).zip(&ph.im) {
            *a += zr * ck.re - zi * ck.im;
        }
        ph.advance();
    }
    acc
}

/// Unit phasors `exp(i k theta_j)` in split real/imaginary storage.
struct Phasors {
    re: Vec<f64>,
    im: Vec<f64>,
    rot_re: Vec<f64>,
    rot_im: Vec<f64>,
}

impl Phasors {
    fn new(theta: &[f64]) -> Self {
        let (rot_im, rot_re) = theta.iter().map(|t| t.sin_cos()).unzip();
        Self {
            re: vec![1.0; theta.len()],
            im: vec![0.0; theta.len()],
            rot_re,
            rot_im,
        }
    }

    fn reseed(&mut self, theta: &[f64], k: usize) {
        for ((r, i), t) in self.re.iter_mut().zip(self.im.iter_mut()).zip(theta) {
            let (s, c) = (k as f64 * t).sin_cos();
            *r = c;
            *i = s;
        }
    }

    fn advance(&mut self) {
        let it = self
            .re
            .iter_mut()
            .zip(self.im.iter_mut())
            .zip(self.rot_re.iter().zip(&self.rot_im));
        for ((r, i), (cr, ci)) in it {
            let nr = *r * cr - *i * ci;
            *i = *r * ci + *i * cr;
            *r = nr;
        }
    }

    /// `sum_j w_j z_j`, accumulated in four fixed lanes.
    fn weighted_sum(&self, w: &[f64]) -> Complex64 {
        let mut sr = [0.0; 4];
        let mut si = [0.0; 4];
        let n = w.len() / 4 * 4;
        for ((wc, rc), ic) in w[..n]
            .chunks_exact(4)
            .zip(self.re[..n].chunks_exact(4))
            .zip(self.im[..n].chunks_exact(4))
        {
            for l in 0..4 {
                sr[l] += wc[l] * rc[l];
                si[l] += wc[l] * ic[l];
            }
        }
        let mut re = (sr[0] + sr[1]) + (sr[2] + sr[3]);
        let mut im = (si[0] + si[1]) + (si[2] + si[3]);
        for ((wj, r), i) in w[n..].iter().zip(&self.re[n..]).zip(&self.im[n..]) {
            re += wj * r;
            im += wj * i;
        }
        Complex64::new(re, im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phasor_sums_match_direct_evaluation() {
        let pts = [0.3, -2.7, 11.25, 40.0];
        let wa = [1.0, 0.5, -2.0, 0.25];
        let wb = [0.25; 4];
        let step = 1.0 / 1024.0;
        let out = phasor_sums(&pts, &[&wa, &wb], step, 1025);
        for k in [0usize, 1, 63, 64, 65, 500, 1024] {
            let t = k as f64 * step;
            let mut da = Complex64::new(0.0, 0.0);
            let mut db = Complex64::new(0.0, 0.0);
            for j in 0..pts.len() {
                let e = Complex64::new(0.0, t * pts[j]).exp();
                da += wa[j] * e;
                db += wb[j] * e;
            }
            assert!((out[0][k] - da).norm() < 1e-13, "k={k}");
            assert!((out[1][k] - db).norm() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn cosine_series_matches_direct_evaluation() {
        let coef: Vec<Complex64> = (0..300)
            .map(|k| Complex64::new((k as f64 * 0.1).cos(), (k as f64 * 0.37).sin()))
            .collect();
        let step = 0.01;
        for u in [0.0, 1.5, -17.3, 250.0] {
            let direct: f64 = coef
                .iter()
                .enumerate()
                .map(|(k, c)| (Complex64::new(0.0, -(k as f64) * step * u).exp() * c).re)
                .sum();
            assert!((cosine_series(&coef, step, u) - direct).abs() < 1e-11);
        }
        let us = [0.0, 1.5, -17.3, 250.0, 3.0];
        let many = cosine_series_many(&coef, step, &us);
        for (u, v) in us.iter().zip(many) {
            assert_eq!(v, cosine_series(&coef, step, *u));
        }
    }
}
