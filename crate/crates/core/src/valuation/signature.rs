//! Spatial signatures: each source's coordinates in multi-reward value space.

use crate::error::{Error, Result};

use super::ShapleyResult;

/// One source's coordinates, in reward order.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureRow {
    pub source: String,
    pub values: Vec<f64>,
}

/// Per-source Shapley coordinates across evaluation rewards. Negative
/// coordinates are meaningful and pass through unmodified.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSignature {
    pub reward_names: Vec<String>,
    pub rows: Vec<SignatureRow>,
}

impl SpatialSignature {
    /// Extent of the agreement diagonal y = x over the plotted coordinates:
    /// the (min, max) range covering every value.
    pub fn diagonal_span(&self) -> Option<(f64, f64)> {
        let mut span: Option<(f64, f64)> = None;
        for row in &self.rows {
            for &v in &row.values {
                span = Some(match span {
                    None => (v, v),
                    Some((lo, hi)) => (lo.min(v), hi.max(v)),
                });
            }
        }
        span
    }

    /// CSV with header `source,<reward1>,<reward2>,...` and one row per
    /// source.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["source".to_string()];
        header.extend(self.reward_names.iter().cloned());
        writer
            .write_record(&header)
            .map_err(|e| Error::InvalidInput(format!("csv write failed: {e}")))?;
        for row in &self.rows {
            let mut record = vec![row.source.clone()];
            record.extend(row.values.iter().map(|v| v.to_string()));
            writer
                .write_record(&record)
                .map_err(|e| Error::InvalidInput(format!("csv write failed: {e}")))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::InvalidInput(format!("csv flush failed: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv not utf-8: {e}")))
    }
}

/// Tabulates a Shapley result as one row per source.
pub fn spatial_signature(
    result: &ShapleyResult,
    sources: &[String],
    reward_names: &[String],
) -> Result<SpatialSignature> {
    if sources.len() != result.num_sources() {
        return Err(Error::DimensionMismatch(format!(
            "{} source names for {} value rows",
            sources.len(),
            result.num_sources()
        )));
    }
    if reward_names.len() != result.num_rewards() {
        return Err(Error::DimensionMismatch(format!(
            "{} reward names for {} value columns",
            reward_names.len(),
            result.num_rewards()
        )));
    }
    let rows = sources
        .iter()
        .enumerate()
        .map(|(i, source)| SignatureRow {
            source: source.clone(),
            values: result.values.row(i).to_vec(),
        })
        .collect();
    Ok(SpatialSignature {
        reward_names: reward_names.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{EstimatorKind, EstimatorMetadata};
    use super::*;
    use ndarray::array;

    fn result_with(values: ndarray::Array2<f64>) -> ShapleyResult {
        ShapleyResult {
            values,
            estimator: EstimatorKind::Exact,
            stderr: None,
            metadata: EstimatorMetadata::default(),
        }
    }

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn four_sources_two_rewards() {
        let result = result_with(array![
            [0.1, 0.2],
            [-0.3, 0.4],
            [0.5, -0.6],
            [0.7, 0.8]
        ]);
        let sig = spatial_signature(&result, &names("s", 4), &names("eval_", 2)).unwrap();
        assert_eq!(sig.rows.len(), 4);
        assert!(sig.rows.iter().all(|r| r.values.len() == 2));
        // negative coordinates pass through unmodified
        assert_eq!(sig.rows[1].values[0], -0.3);
        assert_eq!(sig.diagonal_span(), Some((-0.6, 0.8)));
    }

    #[test]
    fn identical_rewards_sit_on_the_diagonal() {
        let result = result_with(array![[0.25, 0.25], [-1.5, -1.5]]);
        let sig = spatial_signature(&result, &names("s", 2), &names("r", 2)).unwrap();
        for row in &sig.rows {
            assert_eq!(row.values[0], row.values[1]);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let result = result_with(array![[0.1, 0.2]]);
        assert!(spatial_signature(&result, &names("s", 2), &names("r", 2)).is_err());
        assert!(spatial_signature(&result, &names("s", 1), &names("r", 3)).is_err());
    }

    #[test]
    fn csv_shape_and_content() {
        let result = result_with(array![[0.5, -0.125], [1.0, 2.0]]);
        let sig = spatial_signature(
            &result,
            &names("src", 2),
            &["helpful".to_string(), "harmless".to_string()],
        )
        .unwrap();
        let csv = sig.to_csv_string().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("source,helpful,harmless"));
        assert_eq!(lines.next(), Some("src0,0.5,-0.125"));
        assert_eq!(lines.next(), Some("src1,1,2"));
        assert_eq!(lines.next(), None);
    }
}
