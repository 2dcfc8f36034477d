//! Standardization, sample covariance, cyclic Jacobi eigendecomposition and
//! two-component PCA.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Off-diagonal threshold for Jacobi convergence, relative to max(1, ‖M‖_F).
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const SYMMETRY_TOLERANCE: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("feature column {column} ({name}) is constant")]
    DegenerateFeature { column: usize, name: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

pub const FEATURE_NAMES: [&str; 3] = ["smoke_flame_ratio", "rgb_index", "flame_angle"];

fn column_name(c: usize) -> String {
    FEATURE_NAMES
        .get(c)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("column {c}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Column means and sample standard deviations (divisor n − 1).
pub fn standardize_fit(data: &DMatrix<f64>) -> Result<StandardizationParams, StatsError> {
    let n = data.nrows();
    if n < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: n });
    }
    let mut means = Vec::with_capacity(data.ncols());
    let mut stds = Vec::with_capacity(data.ncols());
    for (c, col) in data.column_iter().enumerate() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            return Err(StatsError::DegenerateFeature {
                column: c,
                name: column_name(c),
            });
        }
        means.push(mean);
        stds.push(std);
    }
    Ok(StandardizationParams { means, stds })
}

pub fn standardize_apply(x: &[f64], p: &StandardizationParams) -> Vec<f64> {
    x.iter()
        .zip(p.means.iter().zip(&p.stds))
        .map(|(v, (m, s))| (v - m) / s)
        .collect()
}

pub fn standardize_matrix(data: &DMatrix<f64>, p: &StandardizationParams) -> DMatrix<f64> {
    DMatrix::from_fn(data.nrows(), data.ncols(), |r, c| {
        (data[(r, c)] - p.means[c]) / p.stds[c]
    })
}

/// Sample covariance of the columns of `data` (rows are observations).
pub fn covariance(data: &DMatrix<f64>) -> Result<DMatrix<f64>, StatsError> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: n });
    }
    let means: Vec<f64> = data
        .column_iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let s: f64 = (0..n)
                .map(|k| (data[(k, i)] - means[i]) * (data[(k, j)] - means[j]))
                .sum();
            let v = s / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    /// Descending.
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenpairs come back sorted by eigenvalue, descending, and each
/// eigenvector is signed so that its largest-magnitude entry is positive
/// (first such entry on ties).
pub fn eigen_symmetric(m: &DMatrix<f64>) -> Result<Eigen, StatsError> {
    let d = m.nrows();
    if d != m.ncols() {
        return Err(StatsError::InvalidInput(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite entry".into()));
    }
    for i in 0..d {
        for j in (i + 1)..d {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE {
                return Err(StatsError::InvalidInput(format!(
                    "asymmetric at ({i},{j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }

    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(d, d);
    let threshold = JACOBI_TOLERANCE * a.norm().max(1.0);

    for _ in 0..MAX_SWEEPS {
        let max_off = (0..d)
            .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].abs())
            .fold(0.0, f64::max);
        if max_off < threshold {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                // Rotation angle that zeroes a[p][q].
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    // Stable sort keeps original diagonal order among equal eigenvalues.
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).clone_owned();
        fix_sign(col.as_mut_slice());
        vectors.set_column(dst, &col);
    }
    Ok(Eigen { values, vectors })
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Rows are unit principal axes, largest eigenvalue first.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Per retained component: eigenvalue / trace.
    pub explained_variance_fraction: Vec<f64>,
}

pub const PCA_COMPONENTS: usize = 2;

/// Fits the top-two principal axes of `data` (expected to be standardized).
pub fn pca_fit(data: &DMatrix<f64>) -> Result<PcaModel, StatsError> {
    let n = data.nrows();
    if n < 3 {
        return Err(StatsError::InsufficientData { needed: 3, got: n });
    }
    if data.ncols() < PCA_COMPONENTS {
        return Err(StatsError::InvalidInput(format!(
            "need at least {PCA_COMPONENTS} features, got {}",
            data.ncols()
        )));
    }
    let cov = covariance(data)?;
    let eig = eigen_symmetric(&cov)?;
    let total: f64 = eig.values.iter().sum();
    let keep = PCA_COMPONENTS;
    let components = (0..keep)
        .map(|i| eig.vectors.column(i).iter().copied().collect())
        .collect();
    let eigenvalues: Vec<f64> = eig.values[..keep].iter().map(|v| v.max(0.0)).collect();
    let explained_variance_fraction = eigenvalues
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaModel {
        components,
        eigenvalues,
        explained_variance_fraction,
    })
}

pub fn pca_project(x: &[f64], m: &PcaModel) -> [f64; 2] {
    let dot = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    [dot(&m.components[0]), dot(&m.components[1])]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            rows.len(),
            rows[0].len(),
            rows.iter().flat_map(|r| r.iter().copied()),
        )
    }

    #[test]
    fn standardize_examples() {
        let p = standardize_fit(&mat(&[&[1.0], &[2.0], &[3.0]])).unwrap();
        assert_eq!(p.means, vec![2.0]);
        assert_eq!(p.stds, vec![1.0]);

        let err = standardize_fit(&mat(&[&[1.0, 5.0], &[2.0, 5.0], &[3.0, 5.0]])).unwrap_err();
        assert_eq!(
            err,
            StatsError::DegenerateFeature {
                column: 1,
                name: "rgb_index".into()
            }
        );

        let p = StandardizationParams {
            means: vec![2.0, 0.0, 0.0],
            stds: vec![1.0, 1.0, 1.0],
        };
        assert_eq!(standardize_apply(&[3.0, 0.0, 0.0], &p), vec![1.0, 0.0, 0.0]);
        assert_eq!(standardize_apply(&[2.0, 0.0, 0.0], &p), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardized_data_is_fixed_point() {
        let data = mat(&[&[1.0, 10.0], &[4.0, -2.0], &[2.5, 3.0], &[7.0, 0.5]]);
        let z = standardize_matrix(&data, &standardize_fit(&data).unwrap());
        let again = standardize_fit(&z).unwrap();
        for (m, s) in again.means.iter().zip(&again.stds) {
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        }
        let cov = covariance(&z).unwrap();
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-9 && (cov[(1, 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn covariance_examples() {
        let c = covariance(&mat(&[&[0.0, 0.0], &[2.0, 2.0]])).unwrap();
        assert_eq!(c, mat(&[&[2.0, 2.0], &[2.0, 2.0]]));
        let c = covariance(&mat(&[&[1.0, 1.0], &[3.0, 3.0], &[8.0, 8.0]])).unwrap();
        assert!(c.iter().all(|v| (v - c[(0, 0)]).abs() < 1e-12));
    }

    #[test]
    fn eigen_diagonal_and_2x2() {
        let e = eigen_symmetric(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            3.0, 2.0, 1.0,
        ])))
        .unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        assert_eq!(e.vectors, DMatrix::identity(3, 3));

        let e = eigen_symmetric(&mat(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12 && (e.values[1] - 1.0).abs() < 1e-12);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors[(0, 0)] - r).abs() < 1e-12 && (e.vectors[(1, 0)] - r).abs() < 1e-12);
        // (1,-1)/√2 up to the sign rule: first entry wins the magnitude tie.
        assert!((e.vectors[(0, 1)] - r).abs() < 1e-12 && (e.vectors[(1, 1)] + r).abs() < 1e-12);
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        assert!(matches!(
            eigen_symmetric(&mat(&[&[1.0, 2.0], &[0.0, 1.0]])),
            Err(StatsError::InvalidInput(_))
        ));
    }

    #[test]
    fn pca_rank_one_and_centering() {
        let data = mat(&[
            &[1.0, 2.0, 3.0],
            &[2.0, 4.0, 6.0],
            &[-1.0, -2.0, -3.0],
            &[0.5, 1.0, 1.5],
        ]);
        let m = pca_fit(&data).unwrap();
        assert!((m.explained_variance_fraction[0] - 1.0).abs() < 1e-9);

        let data = mat(&[&[0.3, 1.0, -2.0], &[1.0, 0.0, 0.5], &[-0.7, 2.0, 1.0], &[2.0, -1.0, 0.2]]);
        let m = pca_fit(&data).unwrap();
        let centered = standardize_matrix(&data, &standardize_fit(&data).unwrap());
        let m2 = pca_fit(&centered).unwrap();
        let pcs: Vec<[f64; 2]> = centered
            .row_iter()
            .map(|r| pca_project(r.clone_owned().as_slice(), &m2))
            .collect();
        for k in 0..2 {
            let mean = pcs.iter().map(|p| p[k]).sum::<f64>() / pcs.len() as f64;
            assert!(mean.abs() < 1e-9);
        }
        assert!(m.eigenvalues[0] >= m.eigenvalues[1]);
        assert!(matches!(
            pca_fit(&mat(&[&[1.0, 2.0, 3.0], &[2.0, 1.0, 0.0]])),
            Err(StatsError::InsufficientData { .. })
        ));
    }
}
