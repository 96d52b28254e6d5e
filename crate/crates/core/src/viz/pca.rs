//! PCA through a cyclic Jacobi eigensolver.

use crate::array::Array;
use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as the rows of an `n x n` array. Each eigenvector is signed
/// so its largest-magnitude entry (first one on ties) is positive.
pub fn symmetric_eigen(a: &Array) -> Result<(Vec<f64>, Array)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!("eigen of non-square {:?}", a.shape())));
    }
    let mut m = a.data().to_vec();
    for i in 0..n {
        for j in 0..i {
            let d = (m[i * n + j] - m[j * n + i]).abs();
            if d > 1e-9 * (1.0 + m[i * n + j].abs()) {
                return Err(Error::Contract("matrix is not symmetric".into()));
            }
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    // Columns of v hold the eigenvectors while iterating.
    let mut v = Array::identity(n).into_data();
    let scale = a.norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // m <- Jᵀ m J for the (p, q) rotation.
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &col in &order {
        let mut vec: Vec<f64> = (0..n).map(|k| v[k * n + col]).collect();
        let lead = vec.iter().enumerate().fold(
            0,
            |best, (k, x)| if x.abs() > vec[best].abs() { k } else { best },
        );
        if vec[lead] < 0.0 {
            vec.iter_mut().for_each(|x| *x = -*x);
        }
        vectors.extend(vec);
    }
    Ok((values, Array::from_parts(n, n, vectors)))
}

/// Sample covariance with `1/(m-1)` normalization.
pub fn covariance(points: &Array) -> Result<(Array, Array)> {
    let m = points.rows();
    if m < 2 {
        return Err(Error::Contract(format!(
            "covariance needs >= 2 points, got {m}"
        )));
    }
    let mean = points.mean_rows();
    let centered = points.sub_row(&mean)?;
    let cov = centered
        .transpose()
        .matmul(&centered)?
        .scale(1.0 / (m - 1) as f64);
    Ok((mean, cov))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array,
    /// `k x n`, orthonormal rows, strongest first.
    pub components: Array,
    pub eigenvalues: Vec<f64>,
}

pub fn pca_fit(points: &Array, k: usize) -> Result<PcaModel> {
    let (m, n) = points.shape();
    if k > m.min(n) {
        return Err(Error::Contract(format!(
            "cannot keep {k} components of {m} points in {n} dimensions"
        )));
    }
    let (mean, cov) = covariance(points)?;
    let (values, vectors) = symmetric_eigen(&cov)?;
    let idx: Vec<usize> = (0..k).collect();
    Ok(PcaModel {
        mean,
        components: vectors.select_rows(&idx),
        eigenvalues: values[..k].iter().map(|&x| x.max(0.0)).collect(),
    })
}

pub fn pca_project(model: &PcaModel, points: &Array) -> Result<Array> {
    if points.cols() != model.mean.cols() {
        return Err(Error::Shape(format!(
            "PCA fitted on {} dimensions, got {:?}",
            model.mean.cols(),
            points.shape()
        )));
    }
    points
        .sub_row(&model.mean)?
        .matmul(&model.components.transpose())
}

impl PcaModel {
    pub fn project(&self, points: &Array) -> Result<Array> {
        pca_project(self, points)
    }

    /// `mean + coords · components`.
    pub fn reconstruct(&self, coords: &Array) -> Result<Array> {
        let back = coords.matmul(&self.components)?;
        let m = back.rows();
        let mut out = back;
        for r in 0..m {
            for c in 0..out.cols() {
                let v = out.get(r, c) + self.mean.data()[c];
                out.set(r, c, v);
            }
        }
        Ok(out)
    }
}
