use std::sync::Arc;

use crate::frame::{DataFrame, RowIndexSet};

use super::exec::{run, ColumnSource, Execution, Lineage};
use super::{OpError, OperationSpec};

/// One exploratory step: the input frames, the operation and its output.
#[derive(Debug, Clone)]
pub struct ExploratoryStep {
    inputs: Vec<Arc<DataFrame>>,
    op: OperationSpec,
    output: Arc<DataFrame>,
    pub(crate) lineage: Arc<Lineage>,
    sources: Vec<Vec<ColumnSource>>,
}

/// Executes `op` over `inputs` and bundles the result into a step.
pub fn make_step(op: OperationSpec, inputs: Vec<Arc<DataFrame>>) -> Result<ExploratoryStep, OpError> {
    let refs: Vec<&DataFrame> = inputs.iter().map(|f| f.as_ref()).collect();
    let Execution {
        output,
        lineage,
        sources,
    } = run(&op, &refs)?;
    Ok(ExploratoryStep {
        inputs,
        op,
        output: Arc::new(output),
        lineage: Arc::new(lineage),
        sources,
    })
}

impl ExploratoryStep {
    pub fn inputs(&self) -> &[Arc<DataFrame>] {
        &self.inputs
    }

    pub fn op(&self) -> &OperationSpec {
        &self.op
    }

    pub fn output(&self) -> &DataFrame {
        &self.output
    }

    /// Input attributes that output column `column` is derived from.
    pub fn column_sources(&self, column: &str) -> &[ColumnSource] {
        self.output
            .column_index(column)
            .map_or(&[], |i| self.sources[i].as_slice())
    }

    /// Re-runs the operation with `rows` removed from input `input`, leaving
    /// the other inputs untouched.
    pub fn intervene(&self, input: usize, rows: &RowIndexSet) -> Result<DataFrame, OpError> {
        let reduced = self
            .inputs
            .get(input)
            .ok_or(crate::frame::FrameError::IndexOutOfRange {
                index: input,
                len: self.inputs.len(),
            })?
            .remove_rows(rows)?;
        let refs: Vec<&DataFrame> = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, f)| if i == input { &reduced } else { f.as_ref() })
            .collect();
        Ok(run(&self.op, &refs)?.output)
    }

    /// Same step over different inputs, e.g. samples of the originals.
    pub fn with_inputs(&self, inputs: Vec<Arc<DataFrame>>) -> Result<ExploratoryStep, OpError> {
        make_step(self.op.clone(), inputs)
    }
}
