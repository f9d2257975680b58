//! Dense real tensors of rank 0..4 over a D-dimensional index space, used for
//! potential derivatives.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor {
    dim: usize,
    rank: usize,
    data: Vec<f64>,
}

impl SymTensor {
    pub fn zeros(dim: usize, rank: usize) -> Self {
        Self { dim, rank, data: vec![0.0; dim.pow(rank as u32)] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { dim: 1, rank: 0, data: vec![value] }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self { dim: v.len(), rank: 1, data: v.iter().copied().collect() }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut t = Self::zeros(dim, 2);
        for i in 0..dim {
            for j in 0..dim {
                t.set(&[i, j], m[(i, j)]);
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank);
        idx.iter().fold(0, |acc, i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn as_scalar(&self) -> f64 {
        assert_eq!(self.rank, 0);
        self.data[0]
    }

    pub fn to_vector(&self) -> DVector<f64> {
        assert_eq!(self.rank, 1);
        DVector::from_column_slice(&self.data)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.rank, 2);
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    /// Visits every multi-index in row-major order.
    pub fn indices(&self) -> Vec<Vec<usize>> {
        let n = self.data.len();
        (0..n)
            .map(|mut flat| {
                let mut idx = vec![0; self.rank];
                for slot in idx.iter_mut().rev() {
                    *slot = flat % self.dim;
                    flat /= self.dim;
                }
                idx
            })
            .collect()
    }

    /// Average over all index permutations.
    pub fn symmetrized(&self) -> Self {
        if self.rank < 2 {
            return self.clone();
        }
        let perms = permutations(self.rank);
        let mut out = Self::zeros(self.dim, self.rank);
        for idx in self.indices() {
            // Averaging from the sorted index makes all permutations bit-identical.
            let mut key = idx.clone();
            key.sort_unstable();
            let mut acc = 0.0;
            let mut permuted = vec![0; self.rank];
            for perm in &perms {
                for (slot, &p) in permuted.iter_mut().zip(perm) {
                    *slot = key[p];
                }
                acc += self.get(&permuted);
            }
            out.set(&idx, acc / perms.len() as f64);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// v_i = T_ijk S_jk for a rank-3 tensor.
    pub fn contract_pair(&self, s: &DMatrix<f64>) -> DVector<f64> {
        assert_eq!(self.rank, 3);
        let d = self.dim;
        DVector::from_fn(d, |i, _| {
            let mut acc = 0.0;
            for j in 0..d {
                for k in 0..d {
                    acc += self.get(&[i, j, k]) * s[(j, k)];
                }
            }
            acc
        })
    }

    /// M_ij = T_ijkl S_kl for a rank-4 tensor.
    pub fn contract_pair_matrix(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.rank, 4);
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| {
            let mut acc = 0.0;
            for k in 0..d {
                for l in 0..d {
                    acc += self.get(&[i, j, k, l]) * s[(k, l)];
                }
            }
            acc
        })
    }

    /// M_jk = v_i T_ijk for a rank-3 tensor.
    pub fn contract_vector(&self, v: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(self.rank, 3);
        let d = self.dim;
        DMatrix::from_fn(d, d, |j, k| (0..d).map(|i| v[i] * self.get(&[i, j, k])).sum())
    }
}

impl std::ops::Add for &SymTensor {
    type Output = SymTensor;

    fn add(self, rhs: &SymTensor) -> SymTensor {
        assert_eq!((self.dim, self.rank), (rhs.dim, rhs.rank));
        SymTensor {
            dim: self.dim,
            rank: self.rank,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl std::ops::Mul<f64> for SymTensor {
    type Output = SymTensor;

    fn mul(mut self, rhs: f64) -> SymTensor {
        self.data.iter_mut().for_each(|x| *x *= rhs);
        self
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}
