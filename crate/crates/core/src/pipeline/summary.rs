//! Distribution of validated link counts per graph specification.

use serde::{Deserialize, Serialize};

use super::GraphStage;
use crate::leadlag::LagSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkCountSummary {
    pub spec: LagSpec,
    pub windows: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Quantile of sorted data with linear interpolation between order
/// statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize_link_counts(stage: &GraphStage) -> Vec<LinkCountSummary> {
    stage
        .specs
        .iter()
        .filter_map(|&spec| {
            let mut counts: Vec<f64> = stage
                .graphs_for(spec)
                .map(|g| g.validated_link_count as f64)
                .collect();
            if counts.is_empty() {
                return None;
            }
            counts.sort_by(f64::total_cmp);
            Some(LinkCountSummary {
                spec,
                windows: counts.len(),
                min: counts[0],
                q25: quantile(&counts, 0.25),
                median: quantile(&counts, 0.5),
                q75: quantile(&counts, 0.75),
                max: counts[counts.len() - 1],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }
}
