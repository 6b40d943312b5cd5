use super::{AutodiffError, Tensor};

/// Compressed sparse row matrix, used as a constant operand in the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self, AutodiffError> {
        if let Some(&(r, c, _)) = triplets.iter().find(|t| t.0 >= rows || t.1 >= cols) {
            return Err(AutodiffError::Shape(format!("entry ({r}, {c}) outside {rows}x{cols}")));
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self { rows, cols, indptr, indices, values })
    }

    pub fn from_dense(t: &Tensor) -> Self {
        let (r, c) = t.dims2();
        let mut trip = Vec::new();
        for i in 0..r {
            for j in 0..c {
                let v = t.get(i, j);
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(r, c, trip).expect("in-range by construction")
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect()).expect("in range")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// Same sparsity, values replaced by `f(row, col, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.values[k] = f(i, self.indices[k], self.values[k]);
            }
        }
        out
    }

    pub fn scale(&self, r: f64) -> Self {
        self.map_values(|_, _, v| v * r)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut data = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                data[i * self.cols + j] += v;
            }
        }
        Tensor::raw(vec![self.rows, self.cols], data)
    }

    /// `A·X` for dense `X` with `self.cols` rows.
    pub fn mul_dense(&self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        let (xr, xc) = x.dims2();
        if xr != self.cols || x.shape().len() != 2 {
            return Err(AutodiffError::Shape(format!(
                "sparse {}x{} times {:?}",
                self.rows,
                self.cols,
                x.shape()
            )));
        }
        let mut out = vec![0.0; self.rows * xc];
        for i in 0..self.rows {
            let (idx, val) = self.row(i);
            let orow = &mut out[i * xc..(i + 1) * xc];
            for (&j, &a) in idx.iter().zip(val) {
                for (o, &v) in orow.iter_mut().zip(x.row(j)) {
                    *o += a * v;
                }
            }
        }
        Ok(Tensor::raw(vec![self.rows, xc], out))
    }

    /// `Aᵀ·G` for dense `G` with `self.rows` rows.
    pub fn tmul_dense(&self, g: &Tensor) -> Tensor {
        let gc = g.cols();
        let mut out = vec![0.0; self.cols * gc];
        for i in 0..self.rows {
            let (idx, val) = self.row(i);
            let grow = g.row(i);
            for (&j, &a) in idx.iter().zip(val) {
                for (o, &v) in out[j * gc..(j + 1) * gc].iter_mut().zip(grow) {
                    *o += a * v;
                }
            }
        }
        Tensor::raw(vec![self.cols, gc], out)
    }
}
