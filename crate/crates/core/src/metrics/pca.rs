use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub points: Vec<[f64; 2]>,
    /// Variance along the first two principal axes.
    pub explained: [f64; 2],
    /// Trace of the sample covariance.
    pub total_variance: f64,
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
}

impl PcaProjection {
    pub fn project(&self, v: &[f64]) -> [f64; 2] {
        let dot = |c: &[f64]| v.iter().zip(&self.mean).zip(c).map(|((x, m), c)| (x - m) * c).sum();
        [dot(&self.components[0]), dot(&self.components[1])]
    }
}

/// Projects mean-centred vectors onto the top two eigenvectors of their
/// sample covariance. Each component is signed so that its largest-magnitude
/// coordinate is positive.
pub fn pca_project(vectors: &[Vec<f64>]) -> Result<PcaProjection> {
    if vectors.len() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two samples".into()));
    }
    let d = vectors[0].len();
    if d < 2 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("PCA samples must share a dimension of at least 2".into()));
    }
    let n = vectors.len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = (centred.transpose() * &centred) / (n as f64 - 1.0);
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let component = |k: usize| -> Vec<f64> {
        let col = eig.eigenvectors.column(order[k]);
        let mut c: Vec<f64> = col.iter().copied().collect();
        let pivot = c
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > c[best].abs() { i } else { best });
        if c[pivot] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        c
    };
    let components = [component(0), component(1)];
    let explained = [
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
    ];
    let mut proj = PcaProjection {
        points: Vec::new(),
        explained,
        total_variance,
        components,
        mean,
    };
    proj.points = vectors.iter().map(|v| proj.project(v)).collect();
    Ok(proj)
}
