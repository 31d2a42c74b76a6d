//! Minimal row-major matrix kernels for the dense-network engine.
//!
//! Shapes are chosen so every inner loop runs over contiguous rows, which is
//! what lets the batched forward/backward passes keep up with the benchmark
//! sizes without a BLAS dependency.

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            debug_assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0_f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = i * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut sum = acc[0] + acc[1] + acc[2] + acc[3];
    for k in chunks * 4..a.len() {
        sum += a[k] * b[k];
    }
    sum
}

fn axpy(out: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += s * v;
    }
}

/// `a [n,k] * b[m,k]^T -> [n,m]`; both operands read row-wise.
pub(crate) fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols);
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = dot(ar, b.row(j));
        }
    }
    out
}

/// `a [n,m] * b [m,k] -> [n,k]`, accumulating scaled rows of `b`.
pub(crate) fn matmul_nn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows);
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (j, &s) in arow.iter().enumerate() {
            axpy(orow, s, b.row(j));
        }
    }
    out
}

/// `a^T [m,n] * b [n,k] -> [m,k]` where `a` is stored as `[n,m]`.
pub(crate) fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows);
    let mut out = Mat::zeros(a.cols, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let brow = b.row(i);
        for (o, &s) in arow.iter().enumerate() {
            axpy(out.row_mut(o), s, brow);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree_with_naive() {
        let a = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]); // 2x3
        let b = Mat::from_rows(&[vec![1.0, 0.0, -1.0], vec![2.0, 1.0, 0.5]]); // 2x3

        // a * b^T = [[1*1+2*0+3*-1, 1*2+2*1+3*.5], [4-6, 8+5+3]]
        let nt = matmul_nt(&a, &b);
        assert_eq!(nt.row(0), &[-2.0, 5.5]);
        assert_eq!(nt.row(1), &[-2.0, 16.0]);

        // a^T * b : 3x3
        let tn = matmul_tn(&a, &b);
        assert_eq!(tn.at(0, 0), 1.0 * 1.0 + 4.0 * 2.0);
        assert_eq!(tn.at(2, 2), 3.0 * -1.0 + 6.0 * 0.5);

        // (2x3) * (3x2)
        let c = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0], vec![-1.0, 0.5]]);
        let nn = matmul_nn(&a, &c);
        assert_eq!(nn.at(0, 0), 1.0 - 3.0);
        assert_eq!(nn.at(1, 1), 8.0 + 5.0 + 3.0);
    }
}
