//! Dense complex matrix exponential (Padé 13 with scaling and squaring).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<Complex64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `e^A` for a square complex matrix.
pub fn expm(a: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
    }
    if a.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Numeric("expm: non-finite entry".into()));
    }
    let norm = one_norm(a);
    let squarings = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let scaled = a.scale(0.5f64.powi(squarings));
    let id = DMatrix::<Complex64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |k: usize| Complex64::new(PADE13[k], 0.0);
    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9)) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1);
    let u = &scaled * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8)) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Numeric("expm: singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_rotation() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, -30.0),
        ]));
        let e = expm(&a).unwrap();
        assert!((e[(0, 0)] - Complex64::new(1f64.exp(), 0.0)).norm() < 1e-13);
        assert!((e[(1, 1)] - Complex64::new(0.0, -30.0).exp()).norm() < 1e-12);

        // exp(θ [[0,-1],[1,0]]) is a rotation.
        let th = 2.5;
        let r = DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(0.0, 0.0), Complex64::new(-th, 0.0), Complex64::new(th, 0.0), Complex64::new(0.0, 0.0)],
        );
        let e = expm(&r).unwrap();
        assert!((e[(0, 0)].re - th.cos()).abs() < 1e-13);
        assert!((e[(1, 0)].re - th.sin()).abs() < 1e-13);
    }

    #[test]
    fn nilpotent() {
        let mut a = DMatrix::<Complex64>::zeros(3, 3);
        a[(0, 1)] = Complex64::new(2.0, 0.0);
        a[(1, 2)] = Complex64::new(3.0, 0.0);
        let e = expm(&a).unwrap();
        assert!((e[(0, 2)] - Complex64::new(3.0, 0.0)).norm() < 1e-13);
        assert!((e[(0, 1)] - Complex64::new(2.0, 0.0)).norm() < 1e-13);
    }
}
