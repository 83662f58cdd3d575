use crate::error::{Result, TnpError};

/// `B` functions, each evaluated at `N` points; the first `m` points of every function are
/// context, the rest are targets.
///
/// `x` is laid out `[B][N][dim_x]`, `y` is `[B][N][dim_y]`. `hidden`, when present, is
/// `[B][m][dim_y]` and marks context label entries that are withheld from the model (and become
/// regression targets during training).
#[derive(Clone, Debug, PartialEq)]
pub struct TaskBatch {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub batch_size: usize,
    pub n_points: usize,
    pub n_context: usize,
    pub dim_x: usize,
    pub dim_y: usize,
    pub hidden: Option<Vec<bool>>,
}

impl TaskBatch {
    pub fn new(
        x: Vec<f64>,
        y: Vec<f64>,
        batch_size: usize,
        n_points: usize,
        n_context: usize,
        dim_x: usize,
        dim_y: usize,
    ) -> Result<Self> {
        let batch = Self {
            x,
            y,
            batch_size,
            n_points,
            n_context,
            dim_x,
            dim_y,
            hidden: None,
        };
        batch.validate()?;
        Ok(batch)
    }

    /// One function with inputs `x` (`N x dim_x`) and labels `y` (`N x dim_y`).
    pub fn single(
        x: Vec<f64>,
        y: Vec<f64>,
        n_context: usize,
        dim_x: usize,
        dim_y: usize,
    ) -> Result<Self> {
        if dim_x == 0 || x.len() % dim_x != 0 {
            return Err(TnpError::InvalidTask("x length not a multiple of dim_x".into()));
        }
        let n = x.len() / dim_x;
        Self::new(x, y, 1, n, n_context, dim_x, dim_y)
    }

    /// A task from separate context and target sets; target labels default to zero.
    pub fn from_sets(
        ctx_x: &[f64],
        ctx_y: &[f64],
        tgt_x: &[f64],
        tgt_y: Option<&[f64]>,
        dim_x: usize,
        dim_y: usize,
    ) -> Result<Self> {
        let m = ctx_x.len() / dim_x.max(1);
        let t = tgt_x.len() / dim_x.max(1);
        let mut x = ctx_x.to_vec();
        x.extend_from_slice(tgt_x);
        let mut y = ctx_y.to_vec();
        match tgt_y {
            Some(ty) => y.extend_from_slice(ty),
            None => y.extend(std::iter::repeat_n(0.0, t * dim_y)),
        }
        Self::new(x, y, 1, m + t, m, dim_x, dim_y)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_x == 0 || self.dim_y == 0 || self.batch_size == 0 {
            return Err(TnpError::InvalidTask("zero-sized dimension".into()));
        }
        if self.n_context == 0 {
            return Err(TnpError::InvalidTask("empty context".into()));
        }
        if self.n_context >= self.n_points {
            return Err(TnpError::InvalidTask(format!(
                "no targets: m={} N={}",
                self.n_context, self.n_points
            )));
        }
        self.validate_shapes()
    }

    pub(crate) fn validate_shapes(&self) -> Result<()> {
        let (b, n) = (self.batch_size, self.n_points);
        if self.x.len() != b * n * self.dim_x || self.y.len() != b * n * self.dim_y {
            return Err(TnpError::InvalidTask(format!(
                "array sizes x={} y={} for B={b} N={n} dx={} dy={}",
                self.x.len(),
                self.y.len(),
                self.dim_x,
                self.dim_y
            )));
        }
        if let Some(h) = &self.hidden {
            if h.len() != b * self.n_context * self.dim_y {
                return Err(TnpError::InvalidTask("hidden mask size".into()));
            }
        }
        if !self.x.iter().chain(&self.y).all(|v| v.is_finite()) {
            return Err(TnpError::InvalidTask("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn n_target(&self) -> usize {
        self.n_points - self.n_context
    }

    pub fn x_of(&self, b: usize, i: usize) -> &[f64] {
        let o = (b * self.n_points + i) * self.dim_x;
        &self.x[o..o + self.dim_x]
    }

    pub fn y_of(&self, b: usize, i: usize) -> &[f64] {
        let o = (b * self.n_points + i) * self.dim_y;
        &self.y[o..o + self.dim_y]
    }

    pub fn is_hidden(&self, b: usize, i: usize, k: usize) -> bool {
        match &self.hidden {
            Some(h) if i < self.n_context => h[(b * self.n_context + i) * self.dim_y + k],
            _ => false,
        }
    }

    /// Target labels of function `b`, `[N - m][dim_y]`.
    pub fn target_y(&self, b: usize) -> &[f64] {
        let lo = (b * self.n_points + self.n_context) * self.dim_y;
        let hi = (b + 1) * self.n_points * self.dim_y;
        &self.y[lo..hi]
    }

    /// Function `b` as a batch of one.
    pub fn select(&self, b: usize) -> TaskBatch {
        let (n, dx, dy, m) = (self.n_points, self.dim_x, self.dim_y, self.n_context);
        TaskBatch {
            x: self.x[b * n * dx..(b + 1) * n * dx].to_vec(),
            y: self.y[b * n * dy..(b + 1) * n * dy].to_vec(),
            batch_size: 1,
            hidden: self
                .hidden
                .as_ref()
                .map(|h| h[b * m * dy..(b + 1) * m * dy].to_vec()),
            ..*self
        }
    }

    /// Reorders the points of every function: new point `i` is old point `order[i]`.
    /// `order` must map context positions to context positions.
    pub fn reorder_points(&self, order: &[usize]) -> Result<TaskBatch> {
        let (n, dx, dy, m) = (self.n_points, self.dim_x, self.dim_y, self.n_context);
        if order.len() != n {
            return Err(TnpError::InvalidTask("permutation length".into()));
        }
        let mut seen = vec![false; n];
        for (i, &o) in order.iter().enumerate() {
            if o >= n || seen[o] || ((i < m) != (o < m)) {
                return Err(TnpError::InvalidTask(
                    "not a context/target-preserving permutation".into(),
                ));
            }
            seen[o] = true;
        }
        let mut out = self.clone();
        for b in 0..self.batch_size {
            for (i, &o) in order.iter().enumerate() {
                let (src, dst) = ((b * n + o), (b * n + i));
                out.x[dst * dx..(dst + 1) * dx].copy_from_slice(&self.x[src * dx..(src + 1) * dx]);
                out.y[dst * dy..(dst + 1) * dy].copy_from_slice(&self.y[src * dy..(src + 1) * dy]);
                if let (Some(h), Some(hn)) = (&self.hidden, &mut out.hidden) {
                    if i < m {
                        let (s, d) = ((b * m + o) * dy, (b * m + i) * dy);
                        hn[d..d + dy].copy_from_slice(&h[s..s + dy]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Permutes context points by `perm` (length `m`).
    pub fn permute_context(&self, perm: &[usize]) -> Result<TaskBatch> {
        let m = self.n_context;
        let order: Vec<usize> = perm.iter().copied().chain(m..self.n_points).collect();
        self.reorder_points(&order)
    }

    /// Permutes target points by `perm` (length `N - m`, indices relative to the first target).
    pub fn permute_targets(&self, perm: &[usize]) -> Result<TaskBatch> {
        let m = self.n_context;
        let order: Vec<usize> = (0..m).chain(perm.iter().map(|p| p + m)).collect();
        self.reorder_points(&order)
    }

    /// Stacks batches with identical `N`, `m` and dimensions.
    pub fn concat(batches: &[TaskBatch]) -> Result<TaskBatch> {
        let first = batches
            .first()
            .ok_or_else(|| TnpError::InvalidTask("no batches".into()))?;
        let mut out = first.clone();
        for b in &batches[1..] {
            if (b.n_points, b.n_context, b.dim_x, b.dim_y)
                != (first.n_points, first.n_context, first.dim_x, first.dim_y)
                || b.hidden.is_some() != first.hidden.is_some()
            {
                return Err(TnpError::InvalidTask("incompatible batches".into()));
            }
            out.x.extend_from_slice(&b.x);
            out.y.extend_from_slice(&b.y);
            out.batch_size += b.batch_size;
            if let (Some(h), Some(bh)) = (&mut out.hidden, &b.hidden) {
                h.extend_from_slice(bh);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TaskBatch {
        TaskBatch::new(
            vec![0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0],
            vec![0.5, 1.5, 2.5, 3.5, 10.5, 11.5, 12.5, 13.5],
            2,
            4,
            2,
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn rejects_invalid_split() {
        assert!(TaskBatch::new(vec![0.0; 3], vec![0.0; 3], 1, 3, 0, 1, 1).is_err());
        assert!(TaskBatch::new(vec![0.0; 3], vec![0.0; 3], 1, 3, 3, 1, 1).is_err());
        assert!(TaskBatch::new(vec![0.0; 3], vec![f64::NAN; 3], 1, 3, 1, 1, 1).is_err());
    }

    #[test]
    fn permutations_move_points() {
        let b = toy();
        let p = b.permute_targets(&[1, 0]).unwrap();
        assert_eq!(p.x_of(0, 2), &[3.0]);
        assert_eq!(p.x_of(1, 3), &[12.0]);
        let c = b.permute_context(&[1, 0]).unwrap();
        assert_eq!(c.y_of(1, 0), &[11.5]);
        assert!(b.reorder_points(&[2, 1, 0, 3]).is_err());
    }

    #[test]
    fn select_and_concat() {
        let b = toy();
        let s = b.select(1);
        assert_eq!(s.batch_size, 1);
        assert_eq!(s.target_y(0), &[12.5, 13.5]);
        let c = TaskBatch::concat(&[b.select(0), s]).unwrap();
        assert_eq!(c, b);
    }
}
