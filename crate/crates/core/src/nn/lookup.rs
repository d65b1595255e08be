use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gathers `indices` rows of `table` into an `L × D` tensor.
pub fn lookup_forward(table: &Tensor, table_name: &str, indices: &[usize]) -> Result<Tensor> {
    let width = table.row_len();
    let mut data = Vec::with_capacity(indices.len() * width);
    for &i in indices {
        check_index(table, table_name, i)?;
        data.extend_from_slice(table.row(i));
    }
    Tensor::from_vec(&[indices.len(), width], data)
}

/// Scatter-adds upstream row gradients into the table gradient.
pub fn lookup_backward(table_grad: &mut Tensor, indices: &[usize], upstream: &Tensor) -> Result<()> {
    let width = table_grad.row_len();
    if upstream.shape() != [indices.len(), width] {
        return Err(Error::shape(
            "lookup_backward",
            &[indices.len(), width],
            upstream.shape(),
        ));
    }
    for (t, &i) in indices.iter().enumerate() {
        for (g, u) in table_grad.row_mut(i).iter_mut().zip(upstream.row(t)) {
            *g += u;
        }
    }
    Ok(())
}

pub(crate) fn check_index(table: &Tensor, table_name: &str, index: usize) -> Result<()> {
    if index >= table.rows() {
        return Err(Error::Index {
            table: table_name.to_string(),
            index,
            len: table.rows(),
        });
    }
    Ok(())
}
