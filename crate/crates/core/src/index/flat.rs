use super::{rank_order, Hit, IndexError, MipsIndex};
use crate::corpus::PassageHandle;
use crate::encoder::{dot, DenseVector};

/// Exact inner-product index over a row-major `count × dimension` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dimension: usize,
    data: Vec<f32>,
    ids: Vec<String>,
}

impl FlatIndex {
    /// Builds from rows, naming each row by its ordinal.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, IndexError> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::build(rows, ids)
    }

    pub fn build(rows: &[Vec<f32>], ids: Vec<String>) -> Result<Self, IndexError> {
        let first = rows.first().ok_or(IndexError::Empty)?;
        let dimension = first.len();
        if dimension == 0 {
            return Err(IndexError::RaggedRow {
                row: 0,
                expected: 1,
                got: 0,
            });
        }
        let mut data = Vec::with_capacity(rows.len() * dimension);
        for (row, values) in rows.iter().enumerate() {
            if values.len() != dimension {
                return Err(IndexError::RaggedRow {
                    row,
                    expected: dimension,
                    got: values.len(),
                });
            }
            if !values.iter().all(|v| v.is_finite()) {
                return Err(IndexError::NonFinite { row });
            }
            data.extend_from_slice(values);
        }
        Self::from_parts(dimension, data, ids)
    }

    pub fn from_vectors(vectors: &[DenseVector], ids: Vec<String>) -> Result<Self, IndexError> {
        let rows: Vec<Vec<f32>> = vectors.iter().map(|v| v.values().to_vec()).collect();
        Self::build(&rows, ids)
    }

    pub(crate) fn from_parts(
        dimension: usize,
        data: Vec<f32>,
        ids: Vec<String>,
    ) -> Result<Self, IndexError> {
        if data.is_empty() {
            return Err(IndexError::Empty);
        }
        let rows = data.len() / dimension;
        if ids.len() != rows {
            return Err(IndexError::IdCount {
                rows,
                ids: ids.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite {
                row: pos / dimension,
            });
        }
        Ok(FlatIndex {
            dimension,
            data,
            ids,
        })
    }

    pub fn row(&self, ordinal: usize) -> &[f32] {
        &self.data[ordinal * self.dimension..(ordinal + 1) * self.dimension]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub(crate) fn check_query(&self, query: &[f32], k: usize) -> Result<(), IndexError> {
        if query.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: query.len(),
            });
        }
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        Ok(())
    }
}

impl MipsIndex for FlatIndex {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn id(&self, handle: PassageHandle) -> Option<&str> {
        self.ids.get(handle.0).map(String::as_str)
    }

    /// Exactly the `k` highest inner products, descending, ties by ordinal.
    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, IndexError> {
        self.check_query(query, k)?;
        let mut hits: Vec<Hit> = self
            .data
            .chunks_exact(self.dimension)
            .enumerate()
            .map(|(i, row)| Hit {
                handle: PassageHandle(i),
                score: dot(row, query),
            })
            .collect();
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_by(rank_order);
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> FlatIndex {
        FlatIndex::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap()
    }

    #[test]
    fn basis_vectors_build() {
        let idx = basis();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.dimension(), 3);
    }

    #[test]
    fn nan_row_is_named() {
        let err = FlatIndex::from_rows(&[vec![1.0, 0.0], vec![f32::NAN, 0.0]]).unwrap_err();
        assert!(matches!(err, IndexError::NonFinite { row: 1 }));
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn empty_and_ragged_inputs_fail() {
        assert!(matches!(FlatIndex::from_rows(&[]), Err(IndexError::Empty)));
        assert!(matches!(
            FlatIndex::from_rows(&[vec![1.0, 0.0], vec![1.0]]),
            Err(IndexError::RaggedRow { row: 1, .. })
        ));
    }

    #[test]
    fn exact_single_hit() {
        let idx = FlatIndex::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let hits = idx.search(&[1.0, 0.0], 1).unwrap();
        assert_eq!(hits, vec![Hit { handle: PassageHandle(0), score: 1.0 }]);
    }

    #[test]
    fn analytic_ordering() {
        let idx = FlatIndex::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let hits = idx.search(&[0.6, 0.8], 2).unwrap();
        assert_eq!(hits[0], Hit { handle: PassageHandle(1), score: 0.8 });
        assert_eq!(hits[1], Hit { handle: PassageHandle(0), score: 0.6 });
    }

    #[test]
    fn k_larger_than_corpus_returns_all() {
        assert_eq!(basis().search(&[1.0, 1.0, 1.0], 10).unwrap().len(), 3);
    }

    #[test]
    fn duplicate_vectors_tie_break_by_ordinal() {
        let idx = FlatIndex::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let hits = idx.search(&[1.0, 1.0], 4).unwrap();
        let order: Vec<usize> = hits.iter().map(|h| h.handle.0).collect();
        assert_eq!(order, vec![0, 1, 2, 3]);
        let top2: Vec<usize> = idx.search(&[1.0, 1.0], 2).unwrap().iter().map(|h| h.handle.0).collect();
        assert_eq!(top2, vec![0, 1]);
    }

    #[test]
    fn query_errors() {
        let idx = basis();
        assert!(matches!(idx.search(&[1.0, 0.0], 1), Err(IndexError::DimensionMismatch { expected: 3, got: 2 })));
        assert!(matches!(idx.search(&[1.0, 0.0, 0.0], 0), Err(IndexError::InvalidK)));
    }
}
