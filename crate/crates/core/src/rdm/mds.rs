use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::compare::{correlation, CorrelationMethod};

/// Stop when the off-diagonal Frobenius norm falls below this fraction of
/// the matrix's Frobenius norm.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct MdsEmbedding {
    pub labels: Vec<String>,
    /// `[n, dim]`, one row per item.
    pub coords: Matrix,
    /// Full spectrum of the double-centred matrix, descending.
    pub eigenvalues: Vec<f64>,
}

impl MdsEmbedding {
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.coords.rows() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} points",
                labels.len(),
                self.coords.rows()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }

    /// Tab-separated `label, x0, x1, ...` rows with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label");
        for k in 0..self.dim() {
            out.push_str(&format!("\tx{k}"));
        }
        out.push('\n');
        for (i, label) in self.labels.iter().enumerate() {
            out.push_str(label);
            for v in self.coords.row(i) {
                out.push_str(&format!("\t{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues in descending order and the matching unit eigenvectors as
/// the columns of the second value.
pub fn jacobi_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(
            "eigendecomposition needs a square matrix".into(),
        ));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius();

    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = scale == 0.0 || off_norm(&m) <= JACOBI_TOLERANCE * scale;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_norm(&m) <= JACOBI_TOLERANCE * scale;
    }
    if !converged {
        return Err(Error::NoConvergence(sweeps));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

fn check_distance_matrix(d: &Matrix) -> Result<()> {
    if !d.is_square() {
        return Err(Error::BadDistanceMatrix(format!(
            "{}x{} is not square",
            d.rows(),
            d.cols()
        )));
    }
    let n = d.rows();
    for i in 0..n {
        if d[(i, i)] != 0.0 {
            return Err(Error::BadDistanceMatrix(format!("nonzero diagonal at {i}")));
        }
        for j in 0..n {
            let v = d[(i, j)];
            if !v.is_finite() {
                return Err(Error::BadDistanceMatrix(format!("non-finite entry at ({i}, {j})")));
            }
            if v < 0.0 {
                return Err(Error::BadDistanceMatrix(format!("negative entry {v} at ({i}, {j})")));
            }
            let w = d[(j, i)];
            if (v - w).abs() > 1e-12 * v.abs().max(1.0) {
                return Err(Error::BadDistanceMatrix(format!(
                    "asymmetric at ({i}, {j}): {v} vs {w}"
                )));
            }
        }
    }
    Ok(())
}

/// Classical (Torgerson) multidimensional scaling.
///
/// `B = -1/2 J (D∘D) J` with `J = I - 11ᵀ/n`; coordinates are the leading
/// eigenvectors scaled by `sqrt(max(λ, 0))`. Each coordinate column is
/// oriented so that its largest-magnitude entry (lowest index on ties) is
/// nonnegative.
pub fn classical_mds(d: &Matrix, dim: usize) -> Result<MdsEmbedding> {
    check_distance_matrix(d)?;
    let n = d.rows();
    if n < 2 {
        return Err(Error::BadDistanceMatrix("need at least 2 points".into()));
    }
    if dim == 0 || dim > n - 1 {
        return Err(Error::InvalidArgument(format!("dim {dim} outside 1..={}", n - 1)));
    }

    let sq = Matrix::from_fn(n, n, |i, j| d[(i, j)] * d[(i, j)]);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).iter().sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    // D∘D is symmetric, so column means equal row means.
    let b = Matrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));

    let (eigenvalues, vectors) = jacobi_eigen(&b)?;
    let mut coords = Matrix::zeros(n, dim);
    for k in 0..dim {
        let col = vectors.column(k);
        let mut pivot = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        let scale = eigenvalues[k].max(0.0).sqrt();
        for (i, x) in col.iter().enumerate() {
            coords[(i, k)] = sign * x * scale;
        }
    }
    Ok(MdsEmbedding {
        labels: (0..n).map(|i| i.to_string()).collect(),
        coords,
        eigenvalues,
    })
}

/// Correlation between the input distances and the distances between the
/// embedded points.
pub fn mds_fit_correlation(d: &Matrix, e: &MdsEmbedding, method: CorrelationMethod) -> Result<f64> {
    if d.rows() != e.coords.rows() || !d.is_square() {
        return Err(Error::InvalidArgument(format!(
            "{}x{} distance matrix for {} embedded points",
            d.rows(),
            d.cols(),
            e.coords.rows()
        )));
    }
    let fitted = e.coords.row_distances();
    correlation(&d.upper_triangle(), &fitted.upper_triangle(), method)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points() {
        let d = Matrix::from_rows(&[vec![0.0, 3.0], vec![3.0, 0.0]]).unwrap();
        let e = classical_mds(&d, 1).unwrap();
        let a = e.coords[(0, 0)];
        let b = e.coords[(1, 0)];
        assert!((a.abs() - 1.5).abs() < 1e-12);
        assert!((a + b).abs() < 1e-12);
        assert!(((a - b).abs() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_distances() {
        let d = Matrix::zeros(4, 4);
        let e = classical_mds(&d, 2).unwrap();
        assert!(e.coords.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_matrices() {
        let asym = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert!(matches!(classical_mds(&asym, 1), Err(Error::BadDistanceMatrix(_))));
        let neg = Matrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(matches!(classical_mds(&neg, 1), Err(Error::BadDistanceMatrix(_))));
        let ok = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(classical_mds(&ok, 2).is_err());
    }

    #[test]
    fn jacobi_on_known_spectrum() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (vals, vecs) = jacobi_eigen(&a).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        let v0 = vecs.column(0);
        assert!((v0[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((v0[0] - v0[1]).abs() < 1e-12);
    }

    #[test]
    fn square_corners_embed_exactly() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let x = Matrix::from_rows(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap();
        let d = x.row_distances();
        let e = classical_mds(&d, 2).unwrap();
        let back = e.coords.row_distances();
        for (a, b) in back.data().iter().zip(d.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(e.eigenvalues[2].abs() < 1e-10);
        let r = mds_fit_correlation(&d, &e, CorrelationMethod::Pearson).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sign_convention_holds() {
        let d = Matrix::from_rows(&[
            vec![0.0, 1.0, 2.0, 3.5],
            vec![1.0, 0.0, 1.2, 2.0],
            vec![2.0, 1.2, 0.0, 1.1],
            vec![3.5, 2.0, 1.1, 0.0],
        ])
        .unwrap();
        let e = classical_mds(&d, 2).unwrap();
        for k in 0..2 {
            let col = e.coords.column(k);
            let max = col
                .iter()
                .cloned()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max >= 0.0);
        }
    }
}
