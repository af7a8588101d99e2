use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array, contiguous, row-major with the last axis
/// innermost. Activations are 5-D `(batch, channel, w, h, z)`, so z-runs are
/// contiguous and the spatial kernels can work on slices.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor and validates the shape/data contract: every extent
    /// at least 1, element count equal to the extent product, all values
    /// finite.
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel = checked_numel(shape)?;
        if data.len() != numel {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        let t = Tensor { shape: shape.to_vec(), data, requires_grad: false };
        t.ensure_finite("tensor construction")?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel = checked_numel(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![S::zero(); numel], requires_grad: false })
    }

    pub fn full(shape: &[usize], value: S) -> Result<Self> {
        let numel = checked_numel(shape)?;
        if !value.is_finite() {
            return Err(Error::numeric(format!("fill value {value} is not finite")));
        }
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; numel], requires_grad: false })
    }

    /// Rank-0 tensor holding one value (loss outputs).
    pub fn scalar(value: S) -> Result<Self> {
        Tensor::new(&[], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Result<Self> {
        let numel = checked_numel(shape)?;
        let data: Vec<S> = (0..numel).map(&mut f).collect();
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// The single value of a rank-0/one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "item() on tensor with {} elements",
                self.data.len()
            )));
        }
        Ok(self.data[0])
    }

    pub fn dims5(&self) -> Result<[usize; 5]> {
        match self.shape[..] {
            [b, c, w, h, z] => Ok([b, c, w, h, z]),
            _ => Err(Error::shape(format!("expected rank 5, got shape {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(Error::shape(format!("expected rank 2, got shape {:?}", self.shape))),
        }
    }

    pub fn dims1(&self) -> Result<usize> {
        match self.shape[..] {
            [n] => Ok(n),
            _ => Err(Error::shape(format!("expected rank 1, got shape {:?}", self.shape))),
        }
    }

    pub fn ensure_finite(&self, ctx: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!("{ctx}: non-finite value {v} at index {i}")));
            }
        }
        Ok(())
    }

    pub fn ensure_shape(&self, shape: &[usize], ctx: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(format!(
                "{ctx}: expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Element-wise conversion to another precision (requires_grad is not
    /// carried over; casts produce fresh leaves).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            requires_grad: false,
        }
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    let mut numel = 1usize;
    for (axis, &e) in shape.iter().enumerate() {
        if e == 0 {
            return Err(Error::shape(format!("axis {axis} has extent 0 in {shape:?}")));
        }
        numel = numel.checked_mul(e).ok_or_else(|| {
            Error::shape(format!("element count overflows usize for shape {shape:?}"))
        })?;
    }
    Ok(numel)
}

/// Integer class field over one volume, `(w, h, z)` with z innermost. Kept
/// separate from `Tensor` so label data can't wander into differentiable
/// arithmetic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    extents: [usize; 3],
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(extents: [usize; 3], data: Vec<u8>) -> Result<Self> {
        let numel = checked_numel(&extents)?;
        if data.len() != numel {
            return Err(Error::shape(format!(
                "extents {extents:?} imply {numel} voxels, got {}",
                data.len()
            )));
        }
        Ok(LabelVolume { extents, data })
    }

    pub fn zeros(extents: [usize; 3]) -> Result<Self> {
        let numel = checked_numel(&extents)?;
        Ok(LabelVolume { extents, data: vec![0; numel] })
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn index(&self, w: usize, h: usize, z: usize) -> usize {
        (w * self.extents[1] + h) * self.extents[2] + z
    }

    #[inline]
    pub fn get(&self, w: usize, h: usize, z: usize) -> u8 {
        self.data[self.index(w, h, z)]
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Checks every voxel is a valid class id for a `num_classes`-way head.
    pub fn ensure_classes(&self, num_classes: usize, ctx: &str) -> Result<()> {
        let max = self.max_label() as usize;
        if max >= num_classes {
            return Err(Error::data(format!(
                "{ctx}: label {max} out of range for {num_classes} classes"
            )));
        }
        Ok(())
    }
}
