//! Dense row-major tensors over `f64` and `Complex64`.
//!
//! Complex tensors carry images, k-space and every physics intermediate;
//! real tensors carry the two-channel CNN view and the network weights.

use num_complex::Complex64;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type RealTensor = Tensor<f64>;
pub type ComplexTensor = Tensor<Complex64>;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::default(); numel(shape)],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
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

    pub fn check_same_shape<U>(&self, other: &Tensor<U>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Sub-tensor along the leading axis.
    pub fn slice_leading(&self, index: usize) -> Tensor<T> {
        let inner = &self.shape[1..];
        let n = numel(inner);
        Tensor {
            shape: inner.to_vec(),
            data: self.data[index * n..(index + 1) * n].to_vec(),
        }
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            first.check_same_shape(p)?;
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:?}", v)?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl RealTensor {
    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn to_complex(&self) -> ComplexTensor {
        self.map(|v| Complex64::new(v, 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl ComplexTensor {
    pub fn scalar(v: Complex64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Hermitian inner product `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Real part of the Hermitian inner product, the Euclidean dot product
    /// of the real-pair views.
    pub fn real_dot(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn scale_complex(&self, s: Complex64) -> Self {
        self.map(|v| v * s)
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * alpha;
        }
        Ok(())
    }

    pub fn abs(&self) -> RealTensor {
        self.map(|v| v.norm())
    }

    pub fn re(&self) -> RealTensor {
        self.map(|v| v.re)
    }

    pub fn im(&self) -> RealTensor {
        self.map(|v| v.im)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Largest absolute difference between corresponding entries.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }
}

/// Either kind of tensor; the value type carried by tape nodes and
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Real(RealTensor),
    Complex(ComplexTensor),
}

impl Value {
    pub fn shape(&self) -> &[usize] {
        match self {
            Value::Real(t) => t.shape(),
            Value::Complex(t) => t.shape(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Value::Real(t) => t.len(),
            Value::Complex(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Value::Complex(_))
    }

    /// Number of stored `f64` words: one per real entry, two per complex
    /// entry. This is the unit of activation accounting.
    pub fn scalar_elements(&self) -> usize {
        match self {
            Value::Real(t) => t.len(),
            Value::Complex(t) => 2 * t.len(),
        }
    }

    pub fn zeros_like(&self) -> Value {
        match self {
            Value::Real(t) => Value::Real(RealTensor::zeros(t.shape())),
            Value::Complex(t) => Value::Complex(ComplexTensor::zeros(t.shape())),
        }
    }

    pub fn as_real(&self) -> Result<&RealTensor> {
        match self {
            Value::Real(t) => Ok(t),
            Value::Complex(_) => Err(Error::dim("expected a real tensor, found complex")),
        }
    }

    pub fn as_complex(&self) -> Result<&ComplexTensor> {
        match self {
            Value::Complex(t) => Ok(t),
            Value::Real(_) => Err(Error::dim("expected a complex tensor, found real")),
        }
    }

    pub fn into_real(self) -> Result<RealTensor> {
        match self {
            Value::Real(t) => Ok(t),
            Value::Complex(_) => Err(Error::dim("expected a real tensor, found complex")),
        }
    }

    pub fn into_complex(self) -> Result<ComplexTensor> {
        match self {
            Value::Complex(t) => Ok(t),
            Value::Real(_) => Err(Error::dim("expected a complex tensor, found real")),
        }
    }

    pub fn add_assign(&mut self, other: &Value) -> Result<()> {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => a.add_assign(b),
            (Value::Complex(a), Value::Complex(b)) => a.add_assign(b),
            _ => Err(Error::dim("cannot add real and complex values")),
        }
    }

    /// Flattened real-pair view (`re, im` interleaved for complex values).
    pub fn to_real_pairs(&self) -> Vec<f64> {
        match self {
            Value::Real(t) => t.data().to_vec(),
            Value::Complex(t) => t.data().iter().flat_map(|c| [c.re, c.im]).collect(),
        }
    }

    /// Squared Euclidean norm of the real-pair view.
    pub fn norm_sqr(&self) -> f64 {
        match self {
            Value::Real(t) => t.norm_sqr(),
            Value::Complex(t) => t.norm_sqr(),
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            Value::Real(t) => t.all_finite(),
            Value::Complex(t) => t.all_finite(),
        }
    }
}

impl From<RealTensor> for Value {
    fn from(t: RealTensor) -> Self {
        Value::Real(t)
    }
}

impl From<ComplexTensor> for Value {
    fn from(t: ComplexTensor) -> Self {
        Value::Complex(t)
    }
}
