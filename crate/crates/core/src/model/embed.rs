//! Token sequences: one token per `(x, y)` pair plus padded `(x, 0)` target tokens.

use crate::error::{Result, TnpError};
use crate::mask::{build_mask_unchecked, token_roles, MaskSpec, TokenRole};
use crate::model::Variant;
use crate::tasks::TaskBatch;
use crate::tensor::Tensor;

/// Tokens for every task of a batch, stacked task after task.
///
/// Each token is `[x | y | observed flags]`; padded targets and hidden labels carry `y = 0` and
/// flag 0. All tasks share `roles`, `padded` and `mask`.
#[derive(Clone, Debug)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub roles: Vec<TokenRole>,
    /// Positions of the padded target tokens within one task's sequence.
    pub padded: Vec<usize>,
    pub mask: MaskSpec,
    pub batch_size: usize,
    pub n_context: usize,
}

impl TokenSequence {
    pub fn seq_len(&self) -> usize {
        self.roles.len()
    }

    /// Rows of the padded tokens across the whole batch, task-major.
    pub fn padded_rows(&self) -> Vec<usize> {
        let s = self.seq_len();
        (0..self.batch_size)
            .flat_map(|b| self.padded.iter().map(move |&p| b * s + p))
            .collect()
    }
}

/// Embeds a batch for `variant`: `2N - m` tokens per task for the autoregressive decoder,
/// `N` otherwise. No positional information is added.
pub fn embed_sequence(batch: &TaskBatch, variant: Variant) -> Result<TokenSequence> {
    if batch.n_context == 0 || batch.n_context >= batch.n_points {
        return Err(TnpError::InvalidTask(format!(
            "need 1 <= m < N, got m={}, N={}",
            batch.n_context, batch.n_points
        )));
    }
    embed_with_context(batch, variant, batch.n_context)
}

/// As [`embed_sequence`] but with an explicit context size, which may be 0.
pub(crate) fn embed_with_context(
    batch: &TaskBatch,
    variant: Variant,
    n_context: usize,
) -> Result<TokenSequence> {
    batch.validate_shapes()?;
    let (n, m) = (batch.n_points, n_context);
    if m >= n {
        return Err(TnpError::InvalidTask("no targets".into()));
    }
    let (dx, dy) = (batch.dim_x, batch.dim_y);
    let width = dx + 2 * dy;
    let roles = token_roles(n, m, variant);
    let s = roles.len();
    let mut data = Vec::with_capacity(batch.batch_size * s * width);
    for b in 0..batch.batch_size {
        for (pos, role) in roles.iter().enumerate() {
            let point = match role {
                TokenRole::Context => pos,
                TokenRole::TargetReal => pos,
                TokenRole::TargetPadded => m + (pos - (s - (n - m))),
            };
            data.extend_from_slice(batch.x_of(b, point));
            match role {
                TokenRole::TargetPadded => data.extend(std::iter::repeat_n(0.0, 2 * dy)),
                _ => {
                    let y = batch.y_of(b, point);
                    let hidden: Vec<bool> = (0..dy)
                        .map(|k| *role == TokenRole::Context && batch.is_hidden(b, point, k))
                        .collect();
                    data.extend(y.iter().zip(&hidden).map(|(v, &h)| if h { 0.0 } else { *v }));
                    data.extend(hidden.iter().map(|&h| if h { 0.0 } else { 1.0 }));
                }
            }
        }
    }
    let padded = (s - (n - m)..s).collect();
    Ok(TokenSequence {
        tokens: Tensor::matrix(batch.batch_size * s, width, data),
        roles,
        padded,
        mask: build_mask_unchecked(n, m, variant)?,
        batch_size: batch.batch_size,
        n_context: m,
    })
}
