use crate::error::{LabError, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor whose entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> DenseTensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(LabError::argument(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(LabError::Shape {
                context: "tensor data",
                expected: vec![expected],
                actual: vec![data.len()],
            });
        }
        check_finite("tensor data", &data)?;
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<S>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![S::zero(); n])
    }

    /// Builds from data already known to be finite and correctly sized.
    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
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

    /// Size of the trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    fn ensure_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(LabError::Shape {
                context,
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.ensure_same_shape(other, "tensor add")?;
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.ensure_same_shape(other, "tensor sub")?;
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: S) -> Result<Self> {
        let data: Vec<S> = self.data.iter().map(|&a| a * k).collect();
        check_finite("tensor scale", &data)?;
        Ok(Self::from_parts_unchecked(self.shape.clone(), data))
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.ensure_same_shape(other, "tensor zip")?;
        let data: Vec<S> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        check_finite("tensor result", &data)?;
        Ok(Self::from_parts_unchecked(self.shape.clone(), data))
    }

    pub fn dot(&self, other: &Self) -> Result<S> {
        self.ensure_same_shape(other, "tensor dot")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> S {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        self.ensure_same_shape(other, "tensor diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max))
    }

    pub fn cast<T: Scalar>(&self) -> DenseTensor<T> {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::of(v.to_f64_lossy())).collect(),
        }
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn check_finite<S: Scalar>(context: &str, data: &[S]) -> Result<()> {
    match data.iter().find(|v| !v.is_finite()) {
        None => Ok(()),
        Some(v) => Err(LabError::Numeric {
            context: context.to_string(),
            value: v.to_f64_lossy(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(DenseTensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseTensor::<f64>::new(vec![0], vec![]).is_err());
        assert!(DenseTensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(DenseTensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let t = DenseTensor::vector(vec![f64::MAX]).unwrap();
        assert!(matches!(t.scale(10.0), Err(LabError::Numeric { .. })));
    }

    #[test]
    fn rows_and_arithmetic() {
        let a = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseTensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(a.row(1), &[3.0, 4.0]);
        assert_eq!(a.sub(&b).unwrap().data(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(a.dot(&b).unwrap(), 10.0);
        assert!(a.add(&DenseTensor::vector(vec![1.0; 4]).unwrap()).is_err());
    }
}
