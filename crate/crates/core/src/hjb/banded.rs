//! Square band matrix with an in-place LU factorisation (no pivoting).
//!
//! The implicit-step matrices `I + h A` are nonsingular M-matrices for the
//! upwinded operator, so elimination without pivoting is stable and keeps
//! the fill inside the band.

use super::HjbError;

#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    #[inline]
    fn slot(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.ku, "({r}, {c}) outside band");
        r * self.width + (c + self.kl - r)
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let s = self.slot(r, c);
        self.data[s] += v;
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.n {
            let lo = r.saturating_sub(self.kl);
            let hi = (r + self.ku).min(self.n - 1);
            let row = &self.data[r * self.width..(r + 1) * self.width];
            let mut acc = 0.0;
            for c in lo..=hi {
                acc += row[c + self.kl - r] * x[c];
            }
            out[r] = acc;
        }
    }

    pub fn factor(mut self) -> Result<BandLu, HjbError> {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let pivot = self.data[k * w + kl];
            if !(pivot.abs() > 1e-14 * scale) {
                return Err(HjbError::SingularLinearSystem(format!("pivot {pivot:e} at row {k}")));
            }
            let r_hi = (k + kl).min(n - 1);
            let c_hi = (k + ku).min(n - 1);
            for r in k + 1..=r_hi {
                let lk = r * w + (k + kl - r);
                let l = self.data[lk] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[lk] = l;
                for c in k + 1..=c_hi {
                    let src = self.data[k * w + (c + kl - k)];
                    self.data[r * w + (c + kl - r)] -= l * src;
                }
            }
        }
        Ok(BandLu { m: self })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandLu {
    m: BandMatrix,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let BandMatrix { n, kl, ku, width, .. } = self.m;
        let d = &self.m.data;
        for r in 0..n {
            let lo = r.saturating_sub(kl);
            let mut acc = b[r];
            for c in lo..r {
                acc -= d[r * width + (c + kl - r)] * b[c];
            }
            b[r] = acc;
        }
        for r in (0..n).rev() {
            let hi = (r + ku).min(n - 1);
            let mut acc = b[r];
            for c in r + 1..=hi {
                acc -= d[r * width + (c + kl - r)] * b[c];
            }
            b[r] = acc / d[r * width + kl];
        }
    }
}
