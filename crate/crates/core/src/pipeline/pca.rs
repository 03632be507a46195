//! Principal component projection of embeddings, via a cyclic Jacobi
//! eigen-decomposition of the sample covariance.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::fusion::EmbeddingFrame;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;
/// Components whose variance falls below this fraction of the total are
/// reported as degenerate.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// One unit-norm component per row; the largest-magnitude loading of
    /// each row is positive.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub warnings: Vec<String>,
}

impl Pca {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| {
                if self.total_variance > 0.0 {
                    v / self.total_variance
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn transform(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        (&data - &self.mean).dot(&self.components.t())
    }
}

/// Eigenvalues and eigenvectors (columns) of a symmetric matrix.
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = a.iter().map(|x| x * x).sum();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]].powi(2))
            .sum();
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

/// Fit `components` principal axes to the rows of `data`.
pub fn pca_fit(data: ArrayView2<'_, f64>, components: usize) -> Result<Pca> {
    let (m, d) = data.dim();
    if components == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if m < components + 1 {
        return Err(Error::InvalidArgument(format!(
            "{m} samples are too few for {components} components"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let mut warnings = Vec::new();
    let k = if components > d {
        warnings.push(format!("only {d} dimensions; returning {d} components"));
        d
    } else {
        components
    };
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = &data - &mean;
    let cov = centered.t().dot(&centered) / (m as f64 - 1.0);
    let total_variance = cov.diag().sum();
    let (values, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut comps = Array2::zeros((k, d));
    let mut explained = Vec::with_capacity(k);
    for (r, &i) in order.iter().take(k).enumerate() {
        let mut col = vectors.column(i).to_owned();
        let lead = col.iter().enumerate().fold(
            0,
            |best, (j, x)| if x.abs() > col[best].abs() { j } else { best },
        );
        if col[lead] < 0.0 {
            col.mapv_inplace(|x| -x);
        }
        comps.row_mut(r).assign(&col);
        let var = values[i].max(0.0);
        if var <= RANK_TOL * total_variance {
            warnings.push(format!("component {} has negligible variance", r + 1));
        }
        explained.push(var);
    }
    Ok(Pca {
        mean,
        components: comps,
        explained_variance: explained,
        total_variance,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub pca: Pca,
    pub assets: Vec<String>,
    pub window_ends: Vec<i64>,
    pub coords: Array2<f64>,
}

impl PcaProjection {
    /// CSV `asset,window_end,pc1,...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["asset".to_string(), "window_end".to_string()];
        header.extend((1..=self.coords.ncols()).map(|k| format!("pc{k}")));
        w.write_record(&header)?;
        for ((asset, t), c) in self
            .assets
            .iter()
            .zip(&self.window_ends)
            .zip(self.coords.rows())
        {
            let mut rec = vec![asset.clone(), t.to_string()];
            rec.extend(c.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<pca>", e))?;
        Ok(())
    }
}

/// Fit on every embedding in the frame and project each one.
pub fn pca_project(frame: &EmbeddingFrame, components: usize) -> Result<PcaProjection> {
    let data = Array2::from_shape_fn((frame.rows.len(), frame.dim), |(i, j)| frame.rows[i].z[j]);
    let pca = pca_fit(data.view(), components)?;
    let coords = pca.transform(data.view());
    Ok(PcaProjection {
        pca,
        assets: frame.rows.iter().map(|r| r.asset.clone()).collect(),
        window_ends: frame.rows.iter().map(|r| r.window_end).collect(),
        coords,
    })
}
