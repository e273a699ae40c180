use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::{Error, Result};

/// One client's raw data: a small labeled set with predictions, and a
/// large unlabeled set carrying predictions only. Never crosses the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset<R> {
    pub labeled_x: Vec<Vec<R>>,
    pub labeled_y: Vec<R>,
    pub labeled_pred: Vec<R>,
    pub unlabeled_x: Vec<Vec<R>>,
    pub unlabeled_pred: Vec<R>,
}

impl<R: Real> ClientDataset<R> {
    pub fn new(
        labeled_x: Vec<Vec<R>>,
        labeled_y: Vec<R>,
        labeled_pred: Vec<R>,
        unlabeled_x: Vec<Vec<R>>,
        unlabeled_pred: Vec<R>,
    ) -> Result<Self> {
        if labeled_x.len() != labeled_y.len() || labeled_x.len() != labeled_pred.len() {
            return Err(Error::Validation(format!(
                "labeled rows inconsistent: {} features, {} outcomes, {} predictions",
                labeled_x.len(),
                labeled_y.len(),
                labeled_pred.len()
            )));
        }
        if unlabeled_x.len() != unlabeled_pred.len() {
            return Err(Error::Validation(format!(
                "unlabeled rows inconsistent: {} features, {} predictions",
                unlabeled_x.len(),
                unlabeled_pred.len()
            )));
        }
        let dim = labeled_x
            .first()
            .or_else(|| unlabeled_x.first())
            .map(|r| r.len());
        if let Some(d) = dim {
            if d == 0 {
                return Err(Error::Validation("feature dimension must be >= 1".into()));
            }
            for row in labeled_x.iter().chain(&unlabeled_x) {
                if row.len() != d {
                    return Err(Error::Validation(format!(
                        "ragged feature rows: expected width {d}, found {}",
                        row.len()
                    )));
                }
            }
        }
        Ok(Self {
            labeled_x,
            labeled_y,
            labeled_pred,
            unlabeled_x,
            unlabeled_pred,
        })
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled_y.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled_pred.len()
    }

    /// Feature dimension; zero only when both sides are empty.
    pub fn dim(&self) -> usize {
        self.labeled_x
            .first()
            .or_else(|| self.unlabeled_x.first())
            .map_or(0, |r| r.len())
    }
}

/// Concatenates client datasets into one pooled dataset.
pub fn concat_datasets<R: Real>(datasets: &[ClientDataset<R>]) -> Result<ClientDataset<R>> {
    if datasets.is_empty() {
        return Err(Error::Validation("empty dataset union".into()));
    }
    let mut pooled = ClientDataset {
        labeled_x: Vec::new(),
        labeled_y: Vec::new(),
        labeled_pred: Vec::new(),
        unlabeled_x: Vec::new(),
        unlabeled_pred: Vec::new(),
    };
    for ds in datasets {
        pooled.labeled_x.extend(ds.labeled_x.iter().cloned());
        pooled.labeled_y.extend(ds.labeled_y.iter().copied());
        pooled.labeled_pred.extend(ds.labeled_pred.iter().copied());
        pooled.unlabeled_x.extend(ds.unlabeled_x.iter().cloned());
        pooled
            .unlabeled_pred
            .extend(ds.unlabeled_pred.iter().copied());
    }
    if pooled.n_labeled() == 0 && pooled.n_unlabeled() == 0 {
        return Err(Error::Validation("dataset union is empty".into()));
    }
    ClientDataset::new(
        pooled.labeled_x,
        pooled.labeled_y,
        pooled.labeled_pred,
        pooled.unlabeled_x,
        pooled.unlabeled_pred,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_rows() {
        let err = ClientDataset::new(
            vec![vec![1.0], vec![2.0]],
            vec![1.0],
            vec![1.0, 2.0],
            vec![],
            vec![],
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_ragged_features() {
        let err = ClientDataset::new(
            vec![vec![1.0], vec![2.0, 3.0]],
            vec![1.0, 2.0],
            vec![1.0, 2.0],
            vec![],
            vec![],
        );
        assert!(err.is_err());
    }

    #[test]
    fn concat_preserves_counts() {
        let a = ClientDataset::new(
            vec![vec![1.0]],
            vec![1.0],
            vec![1.1],
            vec![vec![2.0], vec![3.0]],
            vec![2.1, 3.1],
        )
        .unwrap();
        let b = ClientDataset::new(vec![vec![4.0]], vec![4.0], vec![4.1], vec![], vec![]).unwrap();
        let pooled = concat_datasets(&[a, b]).unwrap();
        assert_eq!(pooled.n_labeled(), 2);
        assert_eq!(pooled.n_unlabeled(), 2);
        assert_eq!(pooled.dim(), 1);
    }
}
