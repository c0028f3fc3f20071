use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major n-dimensional array.
///
/// A 0-dim tensor holds exactly one value. Zero-sized dimensions are legal
/// and give an empty payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` on each flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Size of the last axis (1 for a scalar).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for dim {d}");
                acc * d + i
            })
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_with", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a = *a + b);
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shapes");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(Real::to_f64(x))).collect(),
        }
    }

    /// `[B, N, h*d]` → `[B, h, N, d]`.
    pub fn split_heads(&self, heads: usize) -> Result<Self> {
        let &[b, n, c] = self.shape.as_slice() else {
            return Err(Error::shape("split_heads", &self.shape, &[0, 0, 0]));
        };
        if heads == 0 || c % heads != 0 {
            return Err(Error::config(format!("{c} channels not divisible by {heads} heads")));
        }
        let d = c / heads;
        let mut out = vec![T::zero(); self.data.len()];
        for bi in 0..b {
            for t in 0..n {
                let src = &self.data[(bi * n + t) * c..(bi * n + t + 1) * c];
                for h in 0..heads {
                    let dst = ((bi * heads + h) * n + t) * d;
                    out[dst..dst + d].copy_from_slice(&src[h * d..(h + 1) * d]);
                }
            }
        }
        Self::new(vec![b, heads, n, d], out)
    }

    /// `[B, h, N, d]` → `[B, N, h*d]`.
    pub fn merge_heads(&self) -> Result<Self> {
        let &[b, heads, n, d] = self.shape.as_slice() else {
            return Err(Error::shape("merge_heads", &self.shape, &[0, 0, 0, 0]));
        };
        let c = heads * d;
        let mut out = vec![T::zero(); self.data.len()];
        for bi in 0..b {
            for h in 0..heads {
                for t in 0..n {
                    let src = ((bi * heads + h) * n + t) * d;
                    let dst = (bi * n + t) * c + h * d;
                    out[dst..dst + d].copy_from_slice(&self.data[src..src + d]);
                }
            }
        }
        Self::new(vec![b, n, c], out)
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Result<Self> {
        let r = self.ndim();
        if r < 2 {
            return Err(Error::shape("transpose_last2", &self.shape, &[0, 0]));
        }
        let (p, q) = (self.shape[r - 2], self.shape[r - 1]);
        let batch = self.len().checked_div(p * q).unwrap_or(0);
        let mut out = vec![T::zero(); self.len()];
        for bi in 0..batch {
            let base = bi * p * q;
            for i in 0..p {
                for j in 0..q {
                    out[base + j * p + i] = self.data[base + i * q + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        Self::new(shape, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0, 3], vec![]).is_ok());
        let s = Tensor::scalar(2.5f64);
        assert_eq!(s.ndim(), 0);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn head_split_and_merge_invert() {
        let x = Tensor::<f64>::from_fn(&[2, 5, 6], |i| i as f64);
        let h = x.split_heads(3).unwrap();
        assert_eq!(h.shape(), &[2, 3, 5, 2]);
        // head 1, token 4 of batch 1 holds channels 2..4
        assert_eq!(h.at(&[1, 1, 4, 0]), x.at(&[1, 4, 2]));
        assert_eq!(h.at(&[1, 1, 4, 1]), x.at(&[1, 4, 3]));
        assert_eq!(h.merge_heads().unwrap(), x);
        assert!(x.split_heads(4).is_err());
    }

    #[test]
    fn transpose_twice_is_identity() {
        let x = Tensor::<f64>::from_fn(&[3, 2, 4], |i| i as f64 * 0.5);
        let t = x.transpose_last2().unwrap();
        assert_eq!(t.shape(), &[3, 4, 2]);
        assert_eq!(t.at(&[2, 3, 1]), x.at(&[2, 1, 3]));
        assert_eq!(t.transpose_last2().unwrap(), x);
    }
}
