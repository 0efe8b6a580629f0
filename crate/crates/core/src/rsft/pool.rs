//! Append-only store of scored rollouts across iterations.

use super::RsftError;
use crate::records::ScoredRollout;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataPool {
    records: Vec<ScoredRollout>,
}

impl DataPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[ScoredRollout] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends `batch`; iteration indices may never decrease.
    pub fn append(&mut self, batch: impl IntoIterator<Item = ScoredRollout>) -> Result<(), RsftError> {
        let mut last = self.records.last().map_or(0, |r| r.iteration_index);
        let start = self.records.len();
        for r in batch {
            if r.iteration_index < last {
                self.records.truncate(start);
                return Err(RsftError::IterationRegression { last, got: r.iteration_index });
            }
            last = r.iteration_index;
            self.records.push(r);
        }
        Ok(())
    }
}
