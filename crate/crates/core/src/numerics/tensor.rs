use super::{kernels, NumericsError, Result, Scalar};

/// Row-major dense array.
///
/// `requires_grad` only matters when the tensor is placed on a [`super::Tape`]:
/// leaves carrying the flag receive a gradient from `backward`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(NumericsError::shape(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericsError::shape(
                "tensor",
                format!("shape {shape:?} holds {n} values, data has {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![v; n]).expect("positive extents")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    /// Builds a tensor by evaluating `f` at every flat (row-major) index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(f).collect()).expect("positive extents")
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { S::one() } else { S::zero() })
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for extent {d}");
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> S {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: S) {
        let o = self.offset(index);
        self.data[o] = v;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let mut t = Tensor::new(shape.to_vec(), self.data.clone())?;
        t.requires_grad = self.requires_grad;
        Ok(t)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(NumericsError::shape(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            requires_grad: false,
        })
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> S {
        self.sum() / S::from_usize_lossy(self.len())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Plain matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k, n) = kernels::matmul_dims(&self.shape, &other.shape)?;
        let data = kernels::matmul(&self.data, &other.data, m, k, n);
        Tensor::new(vec![m, n], data)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(NumericsError::shape(
                "softmax",
                format!("axis {axis} invalid for rank {}", self.rank()),
            ));
        }
        let data = kernels::softmax(&self.data, &self.shape, axis);
        Tensor::new(self.shape.clone(), data)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        kernels::check_permutation(axes, self.rank())?;
        let (shape, data) = kernels::permute(&self.data, &self.shape, axes);
        Tensor::new(shape, data)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> S {
        self.data.iter().map(|&v| v * v).sum::<S>().sqrt()
    }
}
