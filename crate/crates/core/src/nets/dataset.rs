use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Paired inputs (`n × d_in`) and targets (`n × d_out`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: DenseMatrix,
    targets: DenseMatrix,
}

impl Dataset {
    pub fn new(inputs: DenseMatrix, targets: DenseMatrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Shape {
                op: "dataset",
                left: inputs.shape(),
                right: targets.shape(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn targets(&self) -> &DenseMatrix {
        &self.targets
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    #[inline]
    pub fn target(&self, i: usize) -> &[f64] {
        self.targets.row(i)
    }

    /// Sub-dataset of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!(
                "index {bad} out of range for dataset of {} examples",
                self.len()
            )));
        }
        let inputs = DenseMatrix::from_fn(indices.len(), self.input_dim(), |r, c| {
            self.inputs.get(indices[r], c)
        });
        let targets = DenseMatrix::from_fn(indices.len(), self.target_dim(), |r, c| {
            self.targets.get(indices[r], c)
        });
        Dataset::new(inputs, targets)
    }
}
