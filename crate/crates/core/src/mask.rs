//! Attention permission matrices and the masking rules for each decoder variant.

use crate::error::{Result, TnpError};
use crate::model::Variant;

/// Row-major boolean matrix; `allows(i, j)` means token `i` may attend token `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    n: usize,
    allowed: Vec<bool>,
}

impl MaskSpec {
    pub fn new(n: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != n * n {
            return Err(TnpError::Dimension(format!(
                "mask of {} tokens needs {} entries, got {}",
                n,
                n * n,
                allowed.len()
            )));
        }
        let mask = Self { n, allowed };
        if let Some(row) = (0..n).find(|&i| mask.row(i).iter().all(|a| !a)) {
            return Err(TnpError::EmptyAttentionRow { row });
        }
        Ok(mask)
    }

    /// Skips the non-empty-row check; consumers such as [`crate::autodiff::masked_softmax`]
    /// report empty rows themselves.
    pub fn unvalidated(n: usize, allowed: Vec<bool>) -> Self {
        assert_eq!(allowed.len(), n * n, "mask size");
        Self { n, allowed }
    }

    /// Every token attends every token.
    pub fn full(n: usize) -> Self {
        Self {
            n,
            allowed: vec![true; n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut allowed = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                allowed.push(f(i, j));
            }
        }
        Self::new(n, allowed)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.allowed[row * self.n..(row + 1) * self.n]
    }

    /// Columns row `row` may attend, ascending.
    pub fn allowed_columns(&self, row: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.allows(row, j)).collect()
    }
}

/// Role of each token in a task sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenRole {
    Context,
    TargetReal,
    TargetPadded,
}

/// Token roles in sequence order for `n_points` points of which `n_context` are context.
pub fn token_roles(n_points: usize, n_context: usize, variant: Variant) -> Vec<TokenRole> {
    let n_target = n_points - n_context;
    let mut roles = vec![TokenRole::Context; n_context];
    if variant == Variant::Autoregressive {
        roles.extend(std::iter::repeat_n(TokenRole::TargetReal, n_target));
    }
    roles.extend(std::iter::repeat_n(TokenRole::TargetPadded, n_target));
    roles
}

/// Mask for `n_points` points with `n_context` of them as context.
///
/// Autoregressive: `[contexts | real targets | padded targets]`; a real target attends the
/// contexts and real targets up to and including itself, a padded target attends the contexts
/// and the real targets strictly before it. Diagonal / joint: `[contexts | padded targets]`;
/// padded targets attend the contexts and themselves.
pub fn build_mask(n_points: usize, n_context: usize, variant: Variant) -> Result<MaskSpec> {
    if n_context == 0 || n_context >= n_points {
        return Err(TnpError::InvalidTask(format!(
            "need 1 <= m < N, got m={n_context}, N={n_points}"
        )));
    }
    build_mask_unchecked(n_points, n_context, variant)
}

/// As [`build_mask`] but also accepts `n_context == 0` (sequence-only pretraining).
///
/// With no context the first padded target would have nothing to attend, so it attends itself.
pub(crate) fn build_mask_unchecked(
    n_points: usize,
    n_context: usize,
    variant: Variant,
) -> Result<MaskSpec> {
    let m = n_context;
    let t = n_points - m;
    match variant {
        Variant::Autoregressive => MaskSpec::from_fn(n_points + t, |i, j| {
            if j < m {
                return true;
            }
            if i < m {
                return false;
            }
            if i < n_points {
                // real target row i attends real targets m..=i
                j < n_points && j <= i
            } else {
                // padded row for target k = i - n_points attends real targets m..m+k
                let k = i - n_points;
                (j >= m && j < m + k) || (m == 0 && k == 0 && j == i)
            }
        }),
        Variant::Diagonal | Variant::NonDiagonal => {
            MaskSpec::from_fn(n_points, |i, j| j < m || (i >= m && i == j))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(mask: &MaskSpec, row: usize) -> Vec<usize> {
        mask.allowed_columns(row)
    }

    #[test]
    fn autoregressive_five_two() {
        // tokens: pair1 pair2 | pair3 pair4 pair5 | pad3 pad4 pad5
        let mask = build_mask(5, 2, Variant::Autoregressive).unwrap();
        assert_eq!(mask.len(), 8);
        assert_eq!(cols(&mask, 0), vec![0, 1]);
        assert_eq!(cols(&mask, 1), vec![0, 1]);
        assert_eq!(cols(&mask, 2), vec![0, 1, 2]);
        assert_eq!(cols(&mask, 3), vec![0, 1, 2, 3]);
        assert_eq!(cols(&mask, 4), vec![0, 1, 2, 3, 4]);
        assert_eq!(cols(&mask, 5), vec![0, 1]);
        assert_eq!(cols(&mask, 6), vec![0, 1, 2]);
        assert_eq!(cols(&mask, 7), vec![0, 1, 2, 3]);
    }

    #[test]
    fn diagonal_five_two() {
        let mask = build_mask(5, 2, Variant::Diagonal).unwrap();
        assert_eq!(mask.len(), 5);
        assert_eq!(cols(&mask, 0), vec![0, 1]);
        assert_eq!(cols(&mask, 3), vec![0, 1, 3]);
        assert_eq!(cols(&mask, 4), vec![0, 1, 4]);
    }

    #[test]
    fn rejects_bad_split() {
        assert!(build_mask(5, 5, Variant::Diagonal).is_err());
        assert!(build_mask(5, 0, Variant::Autoregressive).is_err());
        assert!(matches!(
            MaskSpec::new(2, vec![true, true, false, false]),
            Err(TnpError::EmptyAttentionRow { row: 1 })
        ));
    }

    #[test]
    fn pretraining_mask_has_no_empty_rows() {
        let mask = build_mask_unchecked(3, 0, Variant::Autoregressive).unwrap();
        assert_eq!(cols(&mask, 3), vec![3]);
        assert_eq!(cols(&mask, 4), vec![0]);
        assert_eq!(cols(&mask, 5), vec![0, 1]);
    }

    #[test]
    fn context_rows_only_see_context() {
        for variant in [Variant::Autoregressive, Variant::Diagonal, Variant::NonDiagonal] {
            for n in 2..9 {
                for m in 1..n {
                    let mask = build_mask(n, m, variant).unwrap();
                    for i in 0..m {
                        assert_eq!(cols(&mask, i), (0..m).collect::<Vec<_>>());
                    }
                }
            }
        }
    }
}
