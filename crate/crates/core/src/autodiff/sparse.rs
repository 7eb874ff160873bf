/// Square constant matrix in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Keeps the nonzero entries of a dense row-major `n×n` matrix.
    pub fn from_dense(n: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n, "dense matrix must be n×n");
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = dense[i * n + j];
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for p in self.indptr[i]..self.indptr[i + 1] {
                out[i * self.n + self.indices[p]] = self.values[p];
            }
        }
        out
    }

    pub fn transpose(&self) -> Csr {
        let dense = self.to_dense();
        let mut t = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                t[j * self.n + i] = dense[i * self.n + j];
            }
        }
        Csr::from_dense(self.n, &t)
    }

    /// `out[b] += self · x[b]` for every consecutive block of `n` rows of a
    /// `(blocks·n)×cols` matrix.
    pub fn apply_blocks_acc(&self, x: &[f64], out: &mut [f64], cols: usize) {
        match cols {
            1 => self.apply_fixed::<1>(x, out),
            2 => self.apply_fixed::<2>(x, out),
            3 => self.apply_fixed::<3>(x, out),
            4 => self.apply_fixed::<4>(x, out),
            _ => self.apply_any(x, out, cols),
        }
    }

    fn apply_fixed<const C: usize>(&self, x: &[f64], out: &mut [f64]) {
        let block = self.n * C;
        debug_assert_eq!(x.len() % block, 0);
        for (xb, ob) in x.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
            for (i, orow) in ob.chunks_exact_mut(C).enumerate() {
                let mut acc = [0.0; C];
                for p in self.indptr[i]..self.indptr[i + 1] {
                    let a = self.values[p];
                    let j = self.indices[p] * C;
                    let xrow = &xb[j..j + C];
                    for c in 0..C {
                        acc[c] += a * xrow[c];
                    }
                }
                for c in 0..C {
                    orow[c] += acc[c];
                }
            }
        }
    }

    fn apply_any(&self, x: &[f64], out: &mut [f64], cols: usize) {
        let block = self.n * cols;
        debug_assert_eq!(x.len() % block, 0);
        for (xb, ob) in x.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
            for i in 0..self.n {
                let orow = &mut ob[i * cols..(i + 1) * cols];
                for p in self.indptr[i]..self.indptr[i + 1] {
                    let a = self.values[p];
                    let j = self.indices[p];
                    let xrow = &xb[j * cols..(j + 1) * cols];
                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                        *o += a * xv;
                    }
                }
            }
        }
    }
}
