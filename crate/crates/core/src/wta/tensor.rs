use nalgebra::{DMatrix, DVector};

/// Dense third-order tensor, row-major with the first index slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d1: usize, d2: usize, d3: usize) -> Self {
        Self {
            dims: [d1, d2, d3],
            data: vec![0.0; d1 * d2 * d3],
        }
    }

    /// Builds from row-major data; `None` if the length does not match.
    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Option<Self> {
        (data.len() == dims[0] * dims[1] * dims[2]).then_some(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = value;
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The matrix `T(i, :, :)`.
    pub fn slice_first(&self, i: usize) -> DMatrix<f64> {
        let [_, d2, d3] = self.dims;
        let start = i * d2 * d3;
        DMatrix::from_row_slice(d2, d3, &self.data[start..start + d2 * d3])
    }

    /// `T(I, x, y)`: contract the second and third modes with vectors.
    pub fn apply(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let [d1, d2, d3] = self.dims;
        assert_eq!(x.len(), d2);
        assert_eq!(y.len(), d3);
        let mut out = DVector::zeros(d1);
        for i in 0..d1 {
            let mut acc = 0.0;
            for j in 0..d2 {
                let xj = x[j];
                if xj == 0.0 {
                    continue;
                }
                let row = &self.data[(i * d2 + j) * d3..(i * d2 + j + 1) * d3];
                let inner: f64 = row.iter().zip(y.iter()).map(|(t, v)| t * v).sum();
                acc += xj * inner;
            }
            out[i] = acc;
        }
        out
    }

    /// `T(I, I, y)` as a `d1 x d2` matrix.
    pub fn contract_third(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let [d1, d2, d3] = self.dims;
        assert_eq!(y.len(), d3);
        DMatrix::from_fn(d1, d2, |i, j| {
            let row = &self.data[(i * d2 + j) * d3..(i * d2 + j + 1) * d3];
            row.iter().zip(y.iter()).map(|(t, v)| t * v).sum()
        })
    }

    /// `T(I, x, I)` as a `d1 x d3` matrix.
    pub fn contract_second(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let [d1, d2, d3] = self.dims;
        assert_eq!(x.len(), d2);
        DMatrix::from_fn(d1, d3, |i, k| {
            (0..d2).map(|j| self.get(i, j, k) * x[j]).sum()
        })
    }

    /// Contract mode `mode` (0-based) with `m`, i.e. replace index `j` along
    /// that mode by `sum_j T(..j..) m(j, i')`.
    pub fn mode_product(&self, mode: usize, m: &DMatrix<f64>) -> Tensor3 {
        assert!(mode < 3);
        assert_eq!(m.nrows(), self.dims[mode]);
        let mut dims = self.dims;
        dims[mode] = m.ncols();
        let mut out = Tensor3::zeros(dims[0], dims[1], dims[2]);
        for i in 0..self.dims[0] {
            for j in 0..self.dims[1] {
                for k in 0..self.dims[2] {
                    let v = self.get(i, j, k);
                    if v == 0.0 {
                        continue;
                    }
                    let src = [i, j, k][mode];
                    for c in 0..m.ncols() {
                        let w = m[(src, c)];
                        let mut idx = [i, j, k];
                        idx[mode] = c;
                        let o = out.offset(idx[0], idx[1], idx[2]);
                        out.data[o] += v * w;
                    }
                }
            }
        }
        out
    }

    /// `T(M1, M2, M3)`.
    pub fn contract(&self, m1: &DMatrix<f64>, m2: &DMatrix<f64>, m3: &DMatrix<f64>) -> Tensor3 {
        self.mode_product(0, m1)
            .mode_product(1, m2)
            .mode_product(2, m3)
    }

    /// Mode-`mode` matricization: rows index the chosen mode, columns run over
    /// the remaining two modes with the earlier one slowest.
    pub fn matricize(&self, mode: usize) -> DMatrix<f64> {
        assert!(mode < 3);
        let [d1, d2, d3] = self.dims;
        match mode {
            0 => DMatrix::from_fn(d1, d2 * d3, |i, c| self.get(i, c / d3, c % d3)),
            1 => DMatrix::from_fn(d2, d1 * d3, |j, c| self.get(c / d3, j, c % d3)),
            _ => DMatrix::from_fn(d3, d1 * d2, |k, c| self.get(c / d2, c % d2, k)),
        }
    }

    /// Kronecker product: entry `((i,i'), (j,j'), (k,k'))` is
    /// `T(i,j,k) * U(i',j',k')` with the second factor's index fastest.
    pub fn kron(&self, other: &Tensor3) -> Tensor3 {
        let [a1, a2, a3] = self.dims;
        let [b1, b2, b3] = other.dims;
        Tensor3::from_fn([a1 * b1, a2 * b2, a3 * b3], |i, j, k| {
            self.get(i / b1, j / b2, k / b3) * other.get(i % b1, j % b2, k % b3)
        })
    }

    /// Leading `k x k x k` block.
    pub fn leading_block(&self, k: usize) -> Tensor3 {
        Tensor3::from_fn([k, k, k], |i, j, l| self.get(i, j, l))
    }
}

pub fn kron_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(a.len() * b.len(), |idx, _| {
        a[idx / b.len()] * b[idx % b.len()]
    })
}
