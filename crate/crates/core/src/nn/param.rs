//! Flat parameter storage.
//!
//! All learnable tensors of a model live in one contiguous `Vec` so the
//! optimizer can treat the model as a single flat vector. Each tensor is
//! described by a [`ParamMeta`] entry (name, shape, offset); modules hold
//! [`ParamRef`] handles and slice into the bundle on demand.
//!
//! Registration order is fixed by construction order, which makes checkpoint
//! layouts reproducible. Initialization draws from a seeded ChaCha12 stream
//! in f64 and casts down, so f32 and f64 models start from the same values.

use ndarray::{ArrayView, ArrayViewMut, Dimension, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// How a tensor is filled at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Handle to one tensor inside a [`ParamBundle`]; index into `metas`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef(pub usize);

/// Declares tensors and records how to initialize them.
#[derive(Debug, Default)]
pub struct ParamBuilder {
    metas: Vec<ParamMeta>,
    inits: Vec<Init>,
    total: usize,
}

impl ParamBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensor(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamRef {
        let len: usize = shape.iter().product();
        let meta = ParamMeta {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
            len,
        };
        debug_assert!(
            !self.metas.iter().any(|m| m.name == meta.name),
            "duplicate parameter name {}",
            meta.name
        );
        self.total += len;
        self.metas.push(meta);
        self.inits.push(init);
        ParamRef(self.metas.len() - 1)
    }

    pub fn build<T: Real>(self, seed: u64) -> ParamBundle<T> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut data = vec![T::zero(); self.total];
        for (meta, init) in self.metas.iter().zip(&self.inits) {
            let slice = &mut data[meta.offset..meta.offset + meta.len];
            match *init {
                Init::Zeros => {}
                Init::Ones => slice.fill(T::one()),
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    for v in slice.iter_mut() {
                        let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
                        *v = T::f(u * bound);
                    }
                }
            }
        }
        ParamBundle {
            data,
            metas: self.metas,
        }
    }
}

/// All parameters of a model, flat, plus their layout.
#[derive(Debug, Clone)]
pub struct ParamBundle<T> {
    pub data: Vec<T>,
    pub metas: Vec<ParamMeta>,
}

impl<T: Real> ParamBundle<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn meta(&self, r: ParamRef) -> &ParamMeta {
        &self.metas[r.0]
    }

    pub fn slice(&self, r: ParamRef) -> &[T] {
        let m = &self.metas[r.0];
        &self.data[m.offset..m.offset + m.len]
    }

    pub fn slice_mut(&mut self, r: ParamRef) -> &mut [T] {
        let m = &self.metas[r.0];
        &mut self.data[m.offset..m.offset + m.len]
    }

    pub fn view(&self, r: ParamRef) -> ArrayView<'_, T, IxDyn> {
        let m = &self.metas[r.0];
        ArrayView::from_shape(IxDyn(&m.shape), self.slice(r)).expect("meta shape matches len")
    }

    /// Typed view; panics if the stored rank disagrees, which indicates a
    /// builder bug rather than a runtime condition.
    pub fn view_as<D: Dimension>(&self, r: ParamRef) -> ArrayView<'_, T, D> {
        self.view(r)
            .into_dimensionality::<D>()
            .expect("parameter rank mismatch")
    }

    pub fn view_mut(&mut self, r: ParamRef) -> ArrayViewMut<'_, T, IxDyn> {
        let m = self.metas[r.0].clone();
        ArrayViewMut::from_shape(IxDyn(&m.shape), &mut self.data[m.offset..m.offset + m.len])
            .expect("meta shape matches len")
    }

    /// Fresh zero buffer with this bundle's layout, for gradients.
    pub fn zeros_like(&self) -> ParamBundle<T> {
        ParamBundle {
            data: vec![T::zero(); self.data.len()],
            metas: self.metas.clone(),
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamRef> {
        self.metas
            .iter()
            .position(|m| m.name == name)
            .map(ParamRef)
    }

    /// Casts every element, preserving layout. Used to lift an f32 model to
    /// f64 for finite-difference work and back.
    pub fn cast<U: Real>(&self) -> ParamBundle<U> {
        ParamBundle {
            data: self.data.iter().map(|v| U::f(v.as_f64())).collect(),
            metas: self.metas.clone(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for m in &self.metas {
            let s = &self.data[m.offset..m.offset + m.len];
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {}", m.name)));
            }
        }
        Ok(())
    }
}

/// Gradient slices mirror the parameter layout exactly.
pub struct GradView<'a, T> {
    pub bundle: &'a mut ParamBundle<T>,
}

impl<T: Real> GradView<'_, T> {
    /// Accumulates `delta` into the gradient slice for `r`.
    pub fn add(&mut self, r: ParamRef, delta: &[T]) {
        let s = self.bundle.slice_mut(r);
        assert_eq!(s.len(), delta.len(), "gradient length mismatch");
        for (g, d) in s.iter_mut().zip(delta) {
            *g = *g + *d;
        }
    }
}
