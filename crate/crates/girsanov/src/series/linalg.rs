//! Dense square matrices on the series grid (row-major, rayon-parallel
//! multiply over output rows; the row split keeps results bit-deterministic
//! regardless of thread count).

use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Mat {
        Mat {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// self = a * b.
    pub fn mul_into(&mut self, a: &Mat, b: &Mat) {
        let n = self.n;
        assert!(a.n == n && b.n == n);
        self.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| {
                row.iter_mut().for_each(|v| *v = 0.0);
                let a_row = &a.data[i * n..(i + 1) * n];
                for (k, &aik) in a_row.iter().enumerate() {
                    if aik == 0.0 {
                        continue;
                    }
                    let b_row = &b.data[k * n..(k + 1) * n];
                    for (rj, &bkj) in row.iter_mut().zip(b_row.iter()) {
                        *rj += aik * bkj;
                    }
                }
            });
    }

    /// self += c * other.
    pub fn scaled_add(&mut self, c: f64, other: &Mat) {
        assert_eq!(self.n, other.n);
        for (s, o) in self.data.iter_mut().zip(other.data.iter()) {
            *s += c * o;
        }
    }

    /// self = (1-w) a + w b.
    pub fn blend_into(&mut self, a: &Mat, w: f64, b: &Mat) {
        assert!(self.n == a.n && self.n == b.n);
        for ((s, &x), &y) in self.data.iter_mut().zip(a.data.iter()).zip(b.data.iter()) {
            *s = (1.0 - w) * x + w * y;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiply_matches_hand_result() {
        let a = Mat {
            n: 2,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        let b = Mat {
            n: 2,
            data: vec![5.0, 6.0, 7.0, 8.0],
        };
        let mut c = Mat::zeros(2);
        c.mul_into(&a, &b);
        assert_eq!(c.data, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn blend_is_affine() {
        let a = Mat {
            n: 1,
            data: vec![2.0],
        };
        let b = Mat {
            n: 1,
            data: vec![6.0],
        };
        let mut c = Mat::zeros(1);
        c.blend_into(&a, 0.25, &b);
        assert_eq!(c.data[0], 3.0);
    }
}
