//! Cosine similarity between fused embeddings.

use std::io::Write;

use ndarray::Array2;

use crate::fusion::EmbeddingFrame;
use crate::{Error, Result};

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|y| y * y).sum();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Similarity of one asset pair over time. Dates where either asset lacks
/// an embedding are omitted; `None` marks a zero-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySeries {
    pub first: String,
    pub second: String,
    pub points: Vec<(i64, Option<f64>)>,
}

impl SimilaritySeries {
    /// CSV `window_end,similarity`; undefined values are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["window_end", "similarity"])?;
        for (t, s) in &self.points {
            let s = s.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([t.to_string(), s])?;
        }
        w.flush().map_err(|e| Error::io("<similarity>", e))?;
        Ok(())
    }
}

fn require_asset(frame: &EmbeddingFrame, asset: &str) -> Result<()> {
    if frame.rows.iter().any(|r| r.asset == asset) {
        Ok(())
    } else {
        Err(Error::Unknown {
            kind: "asset",
            name: asset.to_string(),
        })
    }
}

pub fn similarity_series(
    frame: &EmbeddingFrame,
    first: &str,
    second: &str,
) -> Result<SimilaritySeries> {
    require_asset(frame, first)?;
    require_asset(frame, second)?;
    let points = frame
        .window_ends()
        .into_iter()
        .filter_map(|t| {
            let a = frame.get(first, t)?;
            let b = frame.get(second, t)?;
            let s = if first == second {
                Some(1.0)
            } else {
                cosine_similarity(a, b)
            };
            Some((t, s))
        })
        .collect();
    Ok(SimilaritySeries {
        first: first.to_string(),
        second: second.to_string(),
        points,
    })
}

/// Pairwise similarities at one window end, assets sorted by name.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub window_end: i64,
    pub assets: Vec<String>,
    pub values: Array2<Option<f64>>,
}

pub fn similarity_matrix(frame: &EmbeddingFrame, window_end: i64) -> Result<SimilarityMatrix> {
    let mut assets: Vec<String> = frame
        .rows
        .iter()
        .filter(|r| r.window_end == window_end)
        .map(|r| r.asset.clone())
        .collect();
    if assets.is_empty() {
        return Err(Error::Unknown {
            kind: "window end",
            name: window_end.to_string(),
        });
    }
    assets.sort();
    assets.dedup();
    let z: Vec<&[f64]> = assets
        .iter()
        .map(|a| frame.get(a, window_end).expect("asset present"))
        .collect();
    let n = assets.len();
    let mut values = Array2::from_elem((n, n), None);
    for i in 0..n {
        values[[i, i]] = Some(1.0);
        for j in i + 1..n {
            let s = cosine_similarity(z[i], z[j]);
            values[[i, j]] = s;
            values[[j, i]] = s;
        }
    }
    Ok(SimilarityMatrix {
        window_end,
        assets,
        values,
    })
}
