use crate::error::{Error, Result};

/// Dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Contiguous slice of the `i`-th item along the leading axis.
    pub fn item(&self, i: usize) -> &[f32] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f32] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    /// Stacks equally shaped items along a new leading axis.
    pub fn stack(items: &[&[f32]], item_shape: &[usize]) -> Result<Self> {
        let n: usize = item_shape.iter().product();
        let mut data = Vec::with_capacity(n * items.len());
        for it in items {
            if it.len() != n {
                return Err(Error::Shape(format!("item of {} values, expected {n}", it.len())));
            }
            data.extend_from_slice(it);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(item_shape);
        Ok(Self { shape, data })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
