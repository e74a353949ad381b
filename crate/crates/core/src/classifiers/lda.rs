//! Fisher linear discriminant analysis followed by nearest-class-mean
//! classification under the Mahalanobis metric of the discriminant space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Initial ridge relative to `trace(S_w) / p`.
pub const RIDGE_START: f64 = 1e-6;
/// Largest ridge tried, relative to `trace(S_w) / p`.
pub const RIDGE_MAX: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaMahalModel {
    /// p x q discriminant directions, one per column (row-major storage).
    pub projection: Matrix,
    /// Class means in discriminant space; `None` for classes absent from training.
    pub class_means: Vec<Option<Vec<f64>>>,
    /// q x q inverse of the pooled (regularized) within-class covariance in
    /// discriminant space.
    pub pooled_cov_inverse: Matrix,
    pub ridge: f64,
    pub num_features: usize,
}

/// `ridge` overrides the absolute ridge start; by default it is
/// [`RIDGE_START`] times the mean within-class scatter diagonal.
pub fn train_lda_mahal(x: &Matrix, y: &[usize], num_classes: usize, ridge: Option<f64>) -> Result<LdaMahalModel> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::dim(n, y.len()));
    }
    if p == 0 {
        return Err(Error::Validation("LDA needs at least one feature".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in y {
        if l >= num_classes {
            return Err(Error::Validation(format!("label {l} >= class count {num_classes}")));
        }
        counts[l] += 1;
    }
    let present: Vec<usize> = (0..num_classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::Training("LDA needs observations of at least 2 classes".into()));
    }
    if n <= present.len() {
        return Err(Error::Training(format!(
            "within-class scatter is singular with n = {n} observations for {} classes; ridge path exhausted",
            present.len()
        )));
    }

    let mut means = vec![vec![0.0; p]; num_classes];
    let mut grand = vec![0.0; p];
    for (r, &l) in x.iter_rows().zip(y) {
        for j in 0..p {
            means[l][j] += r[j];
            grand[j] += r[j];
        }
    }
    for c in &present {
        means[*c].iter_mut().for_each(|v| *v /= counts[*c] as f64);
    }
    grand.iter_mut().for_each(|v| *v /= n as f64);

    let mut sw = DMatrix::<f64>::zeros(p, p);
    let mut centred = vec![0.0; p];
    for (r, &l) in x.iter_rows().zip(y) {
        for j in 0..p {
            centred[j] = r[j] - means[l][j];
        }
        for a in 0..p {
            let ca = centred[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..p {
                sw[(a, b)] += ca * centred[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            sw[(a, b)] = sw[(b, a)];
        }
    }
    let mut scale = sw.trace() / p as f64;
    if !(scale > 0.0) {
        // classes are point masses: fall back to the total scatter scale
        let total: f64 = x.iter_rows().map(|r| r.iter().zip(&grand).map(|(v, m)| (v - m) * (v - m)).sum::<f64>()).sum();
        scale = total / p as f64;
    }
    if !(scale > 0.0) {
        return Err(Error::Training("all observations identical; ridge path exhausted".into()));
    }

    let start = ridge.unwrap_or(RIDGE_START * scale);
    let mut lambda = start;
    let chol = loop {
        let mut reg = sw.clone();
        for a in 0..p {
            reg[(a, a)] += lambda;
        }
        if let Some(c) = nalgebra::Cholesky::new(reg) {
            break c;
        }
        lambda *= 10.0;
        if lambda > RIDGE_MAX * scale * (1.0 + 1e-9) {
            return Err(Error::Training(format!(
                "within-class scatter not positive definite up to ridge {:.3e}",
                RIDGE_MAX * scale
            )));
        }
        log::warn!("LDA: raising ridge to {lambda:.3e}");
    };
    let l = chol.l();

    // S_b = B B' with columns sqrt(n_c) (mu_c - mu); whiten: A = L^-1 B
    let mut b = DMatrix::<f64>::zeros(p, present.len());
    for (k, &c) in present.iter().enumerate() {
        let w = (counts[c] as f64).sqrt();
        for j in 0..p {
            b[(j, k)] = w * (means[c][j] - grand[j]);
        }
    }
    let a = l.solve_lower_triangular(&b).ok_or_else(|| Error::Training("triangular solve failed".into()))?;
    let small = a.transpose() * &a;
    let eig = nalgebra::SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..present.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let q_max = (present.len() - 1).min(p);
    let dirs: Vec<usize> = order
        .into_iter()
        .take(q_max)
        .filter(|&k| eig.eigenvalues[k] > 1e-12 * top && eig.eigenvalues[k] > 0.0)
        .collect();
    let q = dirs.len();

    // u_k = A v_k / sqrt(sigma_k) in whitened space, w_k = L^-T u_k
    let mut u = DMatrix::<f64>::zeros(p, q);
    for (col, &k) in dirs.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let uk: DVector<f64> = &a * v / eig.eigenvalues[k].sqrt();
        u.set_column(col, &uk);
    }
    let mut w = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::Training("triangular solve failed".into()))?;
    for col in 0..q {
        let mut column = w.column_mut(col);
        let pivot = (0..p)
            .max_by(|&i, &j| column[i].abs().total_cmp(&column[j].abs()).then(j.cmp(&i)))
            .unwrap_or(0);
        if column[pivot] < 0.0 {
            column.neg_mut();
        }
    }

    let project = |v: &[f64]| -> Vec<f64> {
        (0..q).map(|k| (0..p).map(|j| w[(j, k)] * v[j]).sum()).collect()
    };
    let class_means = (0..num_classes)
        .map(|c| if counts[c] > 0 { Some(project(&means[c])) } else { None })
        .collect();

    let mut reg = sw;
    for i in 0..p {
        reg[(i, i)] += lambda;
    }
    let dof = (n - present.len()) as f64;
    let pooled = w.transpose() * reg * &w / dof;
    let inv = if q == 0 {
        DMatrix::zeros(0, 0)
    } else {
        pooled
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| pooled.try_inverse())
            .ok_or_else(|| Error::Training("pooled discriminant covariance is singular".into()))?
    };

    let mut projection = Matrix::zeros(p, q);
    for j in 0..p {
        for k in 0..q {
            projection.set(j, k, w[(j, k)]);
        }
    }
    let mut pooled_cov_inverse = Matrix::zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            pooled_cov_inverse.set(i, j, inv[(i, j)]);
        }
    }
    Ok(LdaMahalModel {
        projection,
        class_means,
        pooled_cov_inverse,
        ridge: lambda,
        num_features: p,
    })
}

impl LdaMahalModel {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn discriminant_dims(&self) -> usize {
        self.projection.cols()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let q = self.projection.cols();
        let mut z = vec![0.0; q];
        for (j, &v) in x.iter().enumerate() {
            let row = self.projection.row(j);
            for k in 0..q {
                z[k] += row[k] * v;
            }
        }
        z
    }

    /// Squared Mahalanobis distance between a discriminant-space point and a class mean.
    pub fn mahalanobis_sq(&self, z: &[f64], class: usize) -> Option<f64> {
        let m = self.class_means[class].as_ref()?;
        let diff: Vec<f64> = z.iter().zip(m).map(|(a, b)| a - b).collect();
        let q = diff.len();
        let mut s = 0.0;
        for i in 0..q {
            let row = self.pooled_cov_inverse.row(i);
            for j in 0..q {
                s += diff[i] * row[j] * diff[j];
            }
        }
        Some(s)
    }

    /// Squared distances to every class (`+inf` for classes never seen).
    pub fn distances_row(&self, x: &[f64]) -> Vec<f64> {
        let z = self.project(x);
        (0..self.num_classes())
            .map(|c| self.mahalanobis_sq(&z, c).unwrap_or(f64::INFINITY))
            .collect()
    }

    /// Softmax of `-d^2 / 2`.
    pub fn score_row(&self, x: &[f64]) -> Vec<f64> {
        let d = self.distances_row(x);
        let best = d.iter().copied().fold(f64::INFINITY, f64::min);
        let e: Vec<f64> = d.iter().map(|&v| (-(v - best) / 2.0).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        let d = self.distances_row(x);
        let mut best = 0;
        for c in 1..d.len() {
            if d[c] < d[best] {
                best = c;
            }
        }
        best
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        if x.cols() != self.num_features {
            return Err(Error::dim(self.num_features, x.cols()));
        }
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }
}
