//! Seeded random projection to the denoising space.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::vecmath;

/// Default dimension of the denoising space.
pub const DEFAULT_DENOISE_DIM: usize = 128;

const PROJECTION_STREAM: u64 = 0x960f;

/// `out_dim × in_dim` Gaussian matrix with orthonormal rows (Gram-Schmidt).
#[derive(Clone, Debug, PartialEq)]
pub struct RandomProjection {
    in_dim: usize,
    rows: Vec<Vec<f64>>,
}

impl RandomProjection {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if out_dim == 0 || out_dim > in_dim {
            return Err(Error::ConfigInvalid(format!(
                "projection {in_dim} -> {out_dim} needs 1 <= out <= in"
            )));
        }
        let mut rng = RngStream::new(seed).fork(PROJECTION_STREAM);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(out_dim);
        while rows.len() < out_dim {
            let mut v = rng.normal_vec(in_dim);
            for r in &rows {
                let c = vecmath::dot(&v, r);
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= c * y);
            }
            // Nearly dependent draws are discarded and redrawn.
            if vecmath::l2_norm(&v) < 1e-6 {
                continue;
            }
            rows.push(vecmath::l2_normalize(&v)?);
        }
        Ok(RandomProjection { in_dim, rows })
    }

    pub fn out_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                actual: z.len(),
            });
        }
        Ok(self.rows.iter().map(|r| vecmath::dot(r, z)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_orthonormal() {
        let p = RandomProjection::new(40, 12, 3).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let d = vecmath::dot(&p.rows[i], &p.rows[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-9);
            }
        }
        assert_eq!(p, RandomProjection::new(40, 12, 3).unwrap());
        assert!(RandomProjection::new(4, 8, 0).is_err());
        assert_eq!(p.apply(&[1.0; 40]).unwrap().len(), 12);
    }
}
