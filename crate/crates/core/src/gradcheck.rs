//! Central finite-difference checks of analytic gradients.

use crate::error::{Result, TnpError};
use crate::model::{Model, Objective};
use crate::tasks::TaskBatch;
use crate::tensor::Tensor;

/// Largest `|analytic - fd| / max(1, |fd|)` over every parameter entry, where `fd` is the
/// central difference of `f` with step `h`.
pub fn finite_difference_check(
    mut f: impl FnMut(&[Tensor]) -> Result<f64>,
    params: &[Tensor],
    analytic: &[Tensor],
    h: f64,
) -> Result<f64> {
    if params.len() != analytic.len()
        || params.iter().zip(analytic).any(|(p, a)| p.shape() != a.shape())
    {
        return Err(TnpError::Dimension("gradient shapes differ from parameters".into()));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let up = f(&work)?;
            work[t].data_mut()[i] = orig - h;
            let down = f(&work)?;
            work[t].data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(TnpError::NonFinite(format!("objective at parameter {t}[{i}]")));
            }
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((grad.data()[i] - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Checks the gradient of a model's training objective on `batch`.
pub fn model_gradcheck(model: &Model, batch: &TaskBatch, objective: Objective, h: f64) -> Result<f64> {
    let (_, grads) = model.loss_and_grad(batch, objective, None)?;
    let params = model.store().tensors().to_vec();
    let mut probe = model.clone();
    finite_difference_check(
        |ps| {
            probe.store_mut().tensors_mut().clone_from_slice(ps);
            probe.loss(batch, objective)
        },
        &params,
        &grads,
        h,
    )
}
