//! Small dense vector/matrix helpers over `f64` slices.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `y += alpha * x`
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn check_len(v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Unit vector along `a`, or an error when `‖a‖ < 1e-12`.
pub fn normalized(a: &[f64], context: &'static str) -> Result<Vec<f64>> {
    let n = norm(a);
    if n < ZERO_NORM {
        return Err(Error::ZeroNorm { context });
    }
    Ok(scaled(a, 1.0 / n))
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(b, a.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Err(Error::ZeroNorm { context: "cosine" });
    }
    Ok(dot(a, b) / (na * nb))
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Orthogonalize `v` against the orthonormal `frame` (two passes) and
/// normalize. Returns `None` when `v` lies (numerically) in the span.
pub fn orthonormalize_against(frame: &[Vec<f64>], v: &[f64]) -> Option<Vec<f64>> {
    let mut w = v.to_vec();
    for _ in 0..2 {
        for q in frame {
            let c = dot(&w, q);
            axpy(&mut w, -c, q);
        }
    }
    let n = norm(&w);
    if n < 1e-10 * norm(v).max(1.0) {
        return None;
    }
    Some(scaled(&w, 1.0 / n))
}

/// Extends an orthonormal frame by `count` random directions using
/// Gram–Schmidt with re-orthogonalization.
pub fn extend_orthonormal<R: Rng + ?Sized>(
    frame: &mut Vec<Vec<f64>>,
    dim: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if frame.len() + count > dim {
        return Err(Error::DimensionTooSmall {
            dim,
            required: frame.len() + count,
        });
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let candidate = gaussian_vec(rng, dim, 1.0);
        if let Some(q) = orthonormalize_against(frame, &candidate) {
            frame.push(q.clone());
            out.push(q);
        }
    }
    Ok(out)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        Self {
            rows,
            cols,
            data: gaussian_vec(rng, rows * cols, std),
        }
    }

    /// A `rows × cols` matrix (rows ≥ cols) with orthonormal columns.
    pub fn random_isometry<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Self> {
        let mut frame = Vec::with_capacity(cols);
        let columns = extend_orthonormal(&mut frame, rows, cols, rng)?;
        let mut m = Self::zeros(rows, cols);
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m.data[i * cols + j] = *v;
            }
        }
        Ok(m)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `M · x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Mᵀ · y`
    pub fn tmul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            if *yi != 0.0 {
                axpy(&mut out, *yi, self.row(i));
            }
        }
        out
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                axpy(dst, a, orow);
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn isometry_columns_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Matrix::random_isometry(12, 7, &mut rng).unwrap();
        for a in 0..7 {
            for b in 0..7 {
                let ca: Vec<f64> = (0..12).map(|i| m.data[i * 7 + a]).collect();
                let cb: Vec<f64> = (0..12).map(|i| m.data[i * 7 + b]).collect();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot(&ca, &cb) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transpose_product_matches_explicit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Matrix::gaussian(4, 3, 1.0, &mut rng);
        let y = vec![0.5, -1.0, 2.0, 0.25];
        let got = m.tmul_vec(&y);
        for j in 0..3 {
            let want: f64 = (0..4).map(|i| m.data[i * 3 + j] * y[i]).sum();
            assert!((got[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn cosine_of_zero_vector_is_an_error() {
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn frame_extension_refuses_overflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut frame = Vec::new();
        assert!(extend_orthonormal(&mut frame, 3, 4, &mut rng).is_err());
    }
}
