use super::Tensor;
use crate::error::{Error, Result};

/// Standard matrix product `a · b` for `a: [m, k]`, `b: [k, n]`.
///
/// Accumulates row by row in increasing `k`, so results are reproducible
/// bit-for-bit.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!("inner dimensions differ: [{m}×{k}] · [{k2}×{n}]")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub fn matmul_transpose_b(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!("inner dimensions differ: [{m}×{k}] · [{n}×{k2}]ᵀ")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(ar, &bd[j * k..(j + 1) * k]);
        }
    }
    Tensor::new(&[m, n], out)
}

/// `aᵀ · b` for `a: [k, m]`, `b: [k, n]`.
pub fn transpose_a_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!("inner dimensions differ: [{k}×{m}]ᵀ · [{k2}×{n}]")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let br = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let av = ad[p * m + i];
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const JACOBI_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

/// Eigenvalues of `xᵀx` for square `x`, ascending.
///
/// Computed with one-sided (Hestenes) cyclic Jacobi rotations applied to the
/// columns of `x` directly, so the Gram matrix is never formed and small
/// eigenvalues keep their relative accuracy. The eigenvalues are the squared
/// column norms of the orthogonalised matrix.
pub fn gram_eigenvalues(x: &Tensor) -> Result<Vec<f64>> {
    let (rows, n) = x.dims2()?;
    if rows != n {
        return Err(Error::dim(format!("gram_eigenvalues needs a square matrix, got {rows}×{n}")));
    }
    if !x.is_finite() {
        return Err(Error::Value("matrix has non-finite entries".into()));
    }
    // Column-major copy: cols[j] is column j.
    let xd = x.data();
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| xd[i * n + j]).collect())
        .collect();
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                let gamma = dot(cp, cq);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (va, vb) = (*a, *b);
                    *a = c * va - s * vb;
                    *b = s * va + c * vb;
                }
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        // Refresh the incrementally updated norms to stop drift.
        for (nrm, c) in norms.iter_mut().zip(&cols) {
            *nrm = dot(c, c);
        }
        if !rotated {
            break;
        }
    }
    let mut eig: Vec<f64> = norms.into_iter().map(|v| v.max(0.0)).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    fn random(m: usize, n: usize, rng: &mut SeededRng) -> Tensor {
        Tensor::new(&[m, n], (0..m * n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2).unwrap(), &a).unwrap(), a);
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
        let z = Tensor::zeros(&[2, 3]).unwrap();
        assert!(matmul(&a, &z).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(matmul(&a, &Tensor::zeros(&[3, 1]).unwrap()), Err(Error::Dimension(_))));
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let mut rng = SeededRng::new(1, 0);
        let a = random(4, 3, &mut rng);
        let b = random(5, 3, &mut rng);
        let bt = Tensor::from_rows(
            &(0..3).map(|j| (0..5).map(|i| b.get(&[i, j])).collect()).collect::<Vec<_>>(),
        )
        .unwrap();
        let ref_ab = matmul(&a, &bt).unwrap();
        let got = matmul_transpose_b(&a, &b).unwrap();
        for (x, y) in got.data().iter().zip(ref_ab.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = random(4, 2, &mut rng);
        let at = Tensor::from_rows(
            &(0..3).map(|j| (0..4).map(|i| a.get(&[i, j])).collect()).collect::<Vec<_>>(),
        )
        .unwrap();
        let ref_atc = matmul(&at, &c).unwrap();
        let got = transpose_a_matmul(&a, &c).unwrap();
        for (x, y) in got.data().iter().zip(ref_atc.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_of_identity_and_diagonal() {
        assert_eq!(gram_eigenvalues(&Tensor::identity(3).unwrap()).unwrap(), vec![1.0; 3]);
        let d = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ])
        .unwrap();
        assert_eq!(gram_eigenvalues(&d).unwrap(), vec![1.0, 4.0, 9.0]);
    }

    #[test]
    fn gram_errors() {
        assert!(matches!(
            gram_eigenvalues(&Tensor::zeros(&[2, 3]).unwrap()),
            Err(Error::Dimension(_))
        ));
        let mut t = Tensor::identity(2).unwrap();
        t.set(&[0, 1], f64::NAN);
        assert!(matches!(gram_eigenvalues(&t), Err(Error::Value(_))));
    }

    #[test]
    fn trace_equals_frobenius_norm() {
        let mut rng = SeededRng::new(8, 0);
        for n in [2, 7, 30] {
            let x = random(n, n, &mut rng);
            let s: f64 = gram_eigenvalues(&x).unwrap().iter().sum();
            assert!((s - x.sum_sq()).abs() <= 1e-10 * x.sum_sq());
        }
    }

    #[test]
    fn rank_deficient_matrix_has_zero_eigenvalue() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let e = gram_eigenvalues(&x).unwrap();
        assert!(e[0].abs() < 1e-12);
        assert!((e[1] - 25.0).abs() < 1e-12);
    }
}
