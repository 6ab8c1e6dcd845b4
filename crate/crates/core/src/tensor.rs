//! Dense real tensors and the multilinear primitives built on them.
//!
//! Storage is mode-1-fastest (generalized column-major): the flat offset of
//! the multi-index `(i_1, …, i_d)` is `Σ_l i_l · Π_{m<l} n_m`. Mode indices in
//! this API are zero-based.
//!
//! The mode-`j` unfolding places `i_j` on the rows and enumerates the
//! remaining indices in increasing mode order with the lowest mode fastest,
//! so that
//!
//! ```text
//! unfold(⟦σ; U_1..U_d⟧, j) = U_j · diag(σ) · (U_d ⊙ … ⊙ U_{j+1} ⊙ U_{j-1} ⊙ … ⊙ U_1)ᵀ
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};

/// Order-`d` real tensor with explicit extents.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    /// Copies `values` into a new tensor of the given shape.
    pub fn from_data(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::from_vec(shape.to_vec(), values.to_vec())
    }

    pub fn from_vec(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidOrder(0));
        }
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {len} entries, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { index });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = shape.iter().product();
        Self::from_vec(shape.to_vec(), vec![0.0; len])
    }

    /// `x_1 ⊗ … ⊗ x_d`.
    pub fn outer(vectors: &[&[f64]]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidOrder(0));
        }
        let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
        let mut values = vec![1.0];
        for v in vectors {
            let mut next = Vec::with_capacity(values.len() * v.len());
            for &x in v.iter() {
                next.extend(values.iter().map(|a| a * x));
            }
            values = next;
        }
        Self::from_vec(shape, values)
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn scaled(&self, alpha: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }

    /// `self + alpha · other`.
    pub fn add_scaled(&self, alpha: f64, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }

    fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::InvalidMode {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// Mode-`mode` unfolding, an `n_mode × Π_{l≠mode} n_l` matrix.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        self.check_mode(mode)?;
        let (left, n, right) = split_extents(&self.shape, mode);
        let cols = left * right;
        let mut out = vec![0.0; n * cols];
        for c in 0..right {
            for b in 0..n {
                let src = &self.values[left * (b + n * c)..left * (b + n * c + 1)];
                for (a, &v) in src.iter().enumerate() {
                    out[b + n * (a + left * c)] = v;
                }
            }
        }
        Matrix::new(n, cols, out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(matrix: &Matrix, mode: usize, shape: &[usize]) -> Result<Self> {
        if mode >= shape.len() {
            return Err(Error::InvalidMode {
                mode,
                order: shape.len(),
            });
        }
        let (left, n, right) = split_extents(shape, mode);
        if matrix.rows() != n || matrix.cols() != left * right {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix does not unfold shape {shape:?} along mode {mode}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        let m = matrix.values();
        let mut values = vec![0.0; n * left * right];
        for c in 0..right {
            for b in 0..n {
                let dst = &mut values[left * (b + n * c)..left * (b + n * c + 1)];
                for (a, v) in dst.iter_mut().enumerate() {
                    *v = m[b + n * (a + left * c)];
                }
            }
        }
        Self::from_vec(shape.to_vec(), values)
    }

    /// Tensor-times-vector along `mode`; the result drops that mode.
    /// Requires order ≥ 2 (use [`DenseTensor::full_contract`] for scalars).
    pub fn ttv(&self, mode: usize, v: &[f64]) -> Result<DenseTensor> {
        self.check_mode(mode)?;
        if self.order() < 2 {
            return Err(Error::InvalidOrder(self.order()));
        }
        if v.len() != self.shape[mode] {
            return Err(Error::ShapeMismatch(format!(
                "mode {mode} has extent {}, vector has length {}",
                self.shape[mode],
                v.len()
            )));
        }
        let values = contract_mode(&self.values, &self.shape, mode, v);
        let mut shape = self.shape.clone();
        shape.remove(mode);
        Ok(DenseTensor { shape, values })
    }

    /// Contracts every mode except `skip` with the matching vector.
    ///
    /// `vectors` lists one vector per mode in increasing mode order with the
    /// `skip` mode omitted. The result is the gradient of `⟨T, ⊗x⟩` with
    /// respect to the `skip`-mode vector.
    pub fn rank1_contract(&self, vectors: &[&[f64]], skip: usize) -> Result<Vec<f64>> {
        self.check_mode(skip)?;
        if vectors.len() + 1 != self.order() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} vectors, got {}",
                self.order() - 1,
                vectors.len()
            )));
        }
        let mode_of = |k: usize| if k < skip { k } else { k + 1 };
        for (k, v) in vectors.iter().enumerate() {
            if v.len() != self.shape[mode_of(k)] {
                return Err(Error::ShapeMismatch(format!(
                    "mode {} has extent {}, vector has length {}",
                    mode_of(k),
                    self.shape[mode_of(k)],
                    v.len()
                )));
            }
        }
        let mut shape = self.shape.clone();
        let mut values: Option<Vec<f64>> = None;
        for k in (0..vectors.len()).rev() {
            let mode = mode_of(k);
            let src = values.as_deref().unwrap_or(&self.values);
            let next = contract_mode(src, &shape, mode, vectors[k]);
            shape.remove(mode);
            values = Some(next);
        }
        Ok(values.unwrap_or_else(|| self.values.clone()))
    }

    /// `⟨T, x_1 ⊗ … ⊗ x_d⟩`.
    pub fn full_contract(&self, vectors: &[&[f64]]) -> Result<f64> {
        if vectors.len() != self.order() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} vectors, got {}",
                self.order(),
                vectors.len()
            )));
        }
        let last = self.order() - 1;
        let v = self.rank1_contract(&vectors[..last], last)?;
        if v.len() != vectors[last].len() {
            return Err(Error::ShapeMismatch(format!(
                "mode {last} has extent {}, vector has length {}",
                v.len(),
                vectors[last].len()
            )));
        }
        Ok(dot(&v, vectors[last]))
    }

    /// Same flat values under a new shape.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<DenseTensor> {
        let to: usize = new_shape.iter().product();
        if to != self.len() || new_shape.is_empty() || new_shape.contains(&0) {
            return Err(Error::SizeMismatch {
                from: self.len(),
                to,
            });
        }
        Ok(DenseTensor {
            shape: new_shape.to_vec(),
            values: self.values.clone(),
        })
    }

    /// Views the tensor as a column-major `rows × (len/rows)` matrix.
    pub fn as_matrix(&self, rows: usize) -> Result<Matrix> {
        if rows == 0 || !self.len().is_multiple_of(rows) {
            return Err(Error::SizeMismatch {
                from: self.len(),
                to: rows,
            });
        }
        Matrix::new(rows, self.len() / rows, self.values.clone())
    }

    /// Reorders modes: mode `k` of the result is mode `perm[k]` of `self`.
    pub fn permute_modes(&self, perm: &[usize]) -> Result<DenseTensor> {
        let d = self.order();
        let mut seen = vec![false; d];
        if perm.len() != d || perm.iter().any(|&p| p >= d || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::ShapeMismatch(format!("{perm:?} is not a permutation of 0..{d}")));
        }
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let old_strides = strides(&self.shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
        let mut values = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; d];
        let mut offset = 0usize;
        for _ in 0..self.len() {
            values.push(self.values[offset]);
            for k in 0..d {
                idx[k] += 1;
                offset += src_strides[k];
                if idx[k] < new_shape[k] {
                    break;
                }
                offset -= src_strides[k] * new_shape[k];
                idx[k] = 0;
            }
        }
        Ok(DenseTensor {
            shape: new_shape,
            values,
        })
    }

    /// Serializes to the plain-text exchange format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "order {}", self.order());
        let dims: Vec<String> = self.shape.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "dims {}", dims.join(" "));
        for (k, v) in self.values.iter().enumerate() {
            // 17 significant digits round-trip any f64
            let _ = write!(s, "{v:.16e}");
            s.push(if (k + 1) % 8 == 0 { '\n' } else { ' ' });
        }
        if !s.ends_with('\n') {
            s.push('\n');
        }
        s
    }

    /// Parses the plain-text exchange format: `order d`, `dims n1 … nd`, then
    /// whitespace-separated values in mode-1-fastest order.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, column: usize, message: String| Error::Parse {
            line: line + 1,
            column,
            message,
        };

        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, 1, "missing `order` line".into()))?;
        let order = parse_header(line, "order", ln)?;
        if order.len() != 1 {
            return Err(parse_err(ln, 1, "`order` takes exactly one integer".into()));
        }
        let order = order[0];

        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(ln + 1, 1, "missing `dims` line".into()))?;
        let dims = parse_header(line, "dims", ln)?;
        if dims.len() != order {
            return Err(parse_err(
                ln,
                1,
                format!("`dims` lists {} extents but order is {order}", dims.len()),
            ));
        }
        if let Some(pos) = dims.iter().position(|&n| n == 0) {
            return Err(parse_err(ln, 1, format!("extent {} is zero", pos + 1)));
        }

        let mut values = Vec::with_capacity(dims.iter().product());
        for (ln, line) in lines {
            for (column, token) in tokens(line) {
                let v: f64 = token
                    .parse()
                    .map_err(|_| parse_err(ln, column, format!("invalid number `{token}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(ln, column, format!("non-finite value `{token}`")));
                }
                values.push(v);
            }
        }
        let expected: usize = dims.iter().product();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {expected} values, file has {}",
                values.len()
            )));
        }
        Self::from_vec(dims, values)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

/// `Σ_i σ_i · u_{1,i} ⊗ … ⊗ u_{d,i}`.
pub fn cp_reconstruct(sigma: &[f64], factors: &[Matrix]) -> Result<DenseTensor> {
    if factors.is_empty() {
        return Err(Error::InvalidOrder(0));
    }
    let rank = sigma.len();
    if let Some(f) = factors.iter().find(|f| f.cols() != rank) {
        return Err(Error::ShapeMismatch(format!(
            "factor has {} columns, sigma has {rank} entries",
            f.cols()
        )));
    }
    let shape: Vec<usize> = factors.iter().map(Matrix::rows).collect();
    let mut values = vec![0.0; shape.iter().product()];
    for (i, &s) in sigma.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let cols: Vec<&[f64]> = factors.iter().map(|f| f.col(i)).collect();
        let term = DenseTensor::outer(&cols)?;
        axpy(&mut values, s, term.values());
    }
    DenseTensor::from_vec(shape, values)
}

fn split_extents(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let left = shape[..mode].iter().product();
    let right = shape[mode + 1..].iter().product();
    (left, shape[mode], right)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len());
    let mut acc = 1;
    for &n in shape {
        s.push(acc);
        acc *= n;
    }
    s
}

/// Contracts `mode` of the flat tensor `(values, shape)` with `v`.
fn contract_mode(values: &[f64], shape: &[usize], mode: usize, v: &[f64]) -> Vec<f64> {
    let (left, n, right) = split_extents(shape, mode);
    if left == 1 {
        return values.chunks_exact(n).map(|c| dot(c, v)).collect();
    }
    let mut out = vec![0.0; left * right];
    for c in 0..right {
        let dst = &mut out[left * c..left * (c + 1)];
        for (b, &w) in v.iter().enumerate() {
            let start = left * (b + n * c);
            axpy(dst, w, &values[start..start + left]);
        }
    }
    out
}

fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut column = 0usize;
    line.split(|c: char| c.is_whitespace())
        .map(move |tok| {
            let start = column + 1;
            column += tok.chars().count() + 1;
            (start, tok)
        })
        .filter(|(_, tok)| !tok.is_empty())
}

fn parse_header(line: &str, keyword: &str, ln: usize) -> Result<Vec<usize>> {
    let mut toks = tokens(line);
    match toks.next() {
        Some((_, k)) if k == keyword => {}
        Some((column, k)) => {
            return Err(Error::Parse {
                line: ln + 1,
                column,
                message: format!("expected `{keyword}`, found `{k}`"),
            })
        }
        None => unreachable!("blank lines are filtered"),
    }
    toks.map(|(column, tok)| {
        tok.parse::<usize>().map_err(|_| Error::Parse {
            line: ln + 1,
            column,
            message: format!("`{keyword}` expects positive integers, found `{tok}`"),
        })
    })
    .collect()
}
