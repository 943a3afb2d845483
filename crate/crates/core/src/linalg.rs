//! Small dense symmetric-matrix routines shared by the certificate and
//! estimator code.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{config, Result};

/// Returns `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of a symmetric matrix. The input is symmetrized first.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix. The input is symmetrized first.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

/// Symmetric with strictly positive minimum eigenvalue.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square() && is_symmetric(m, 1e-10) && min_eigenvalue(m) > 0.0
}

/// `|v|²_M = vᵀ M v`.
pub fn quad_form(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

/// Largest generalized eigenvalue λ of the pencil `(a, b)`, i.e. the largest
/// root of `det(a − λ b) = 0`, for symmetric `a` and symmetric positive
/// definite `b`.
///
/// With `b = L Lᵀ` this is the largest eigenvalue of `L⁻¹ a L⁻ᵀ`.
pub fn generalized_max_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() || a.shape() != b.shape() {
        return config(format!(
            "generalized eigenvalue: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        ));
    }
    let Some(chol) = Cholesky::new(symmetrize(b)) else {
        return config("generalized eigenvalue: right-hand matrix is not positive definite");
    };
    let l = chol.l();
    let linv_a = l
        .solve_lower_triangular(&symmetrize(a))
        .expect("Cholesky factor has a positive diagonal");
    let reduced = l
        .solve_lower_triangular(&linv_a.transpose())
        .expect("Cholesky factor has a positive diagonal");
    Ok(max_eigenvalue(&reduced))
}

/// Upper factor `U` with `m = Uᵀ U`, so that `|v|²_m = ‖U v‖²`.
pub fn sqrt_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match Cholesky::new(symmetrize(m)) {
        Some(c) => Ok(c.l().transpose()),
        None => config("weight matrix is not positive definite"),
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return config("ragged matrix rows");
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Serde adapter storing a `DMatrix` as row-major nested arrays.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::matrix_from_rows(&rows).map_err(D::Error::custom)
    }
}

/// Serde adapter storing a `DVector` as a flat array.
pub mod serde_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Serde adapter storing a `Vec<DVector>` as nested arrays.
pub mod serde_vecs {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?
            .into_iter()
            .map(DVector::from_vec)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Largest root of det(a − λ b) for 2×2 pencils via the quadratic formula.
    fn pencil_root_2x2(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        // det(a − λb) = c2 λ² + c1 λ + c0
        let c2 = b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)];
        let c1 = -(a[(0, 0)] * b[(1, 1)] + a[(1, 1)] * b[(0, 0)]
            - a[(0, 1)] * b[(1, 0)]
            - a[(1, 0)] * b[(0, 1)]);
        let c0 = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let disc = (c1 * c1 - 4.0 * c2 * c0).sqrt();
        ((-c1 + disc) / (2.0 * c2)).max((-c1 - disc) / (2.0 * c2))
    }

    #[test]
    fn generalized_eigenvalue_matches_quadratic_roots() {
        let a = DMatrix::from_row_slice(2, 2, &[4.009, 3.768, 3.768, 3.549]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let got = generalized_max_eigenvalue(&a, &b).unwrap();
        assert_relative_eq!(got, pencil_root_2x2(&a, &b), max_relative = 1e-10);
    }

    #[test]
    fn generalized_eigenvalue_identity_pencil() {
        let p = DMatrix::from_row_slice(2, 2, &[4.009, 3.768, 3.768, 3.549]);
        assert_relative_eq!(generalized_max_eigenvalue(&p, &p).unwrap(), 1.0, epsilon = 1e-9);
        let half = generalized_max_eigenvalue(&DMatrix::identity(3, 3), &(DMatrix::identity(3, 3) * 2.0));
        assert_relative_eq!(half.unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn generalized_eigenvalue_rejects_indefinite_rhs() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(generalized_max_eigenvalue(&a, &b).is_err());
    }

    #[test]
    fn sqrt_factor_reproduces_quadratic_form() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let u = sqrt_factor(&m).unwrap();
        let v = DVector::from_vec(vec![0.7, -1.3]);
        assert_relative_eq!((&u * &v).norm_squared(), quad_form(&v, &m), epsilon = 1e-12);
    }
}
