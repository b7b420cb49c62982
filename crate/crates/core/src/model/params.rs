//! Flat, ordered traversal over every parameter tensor of a module tree.

use ndarray::{Array1, Array2};

use crate::float::Float;

pub trait Params<T: Float> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>);

    fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn fill_zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Sum of squares of every parameter, in `f64`.
    fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|v| v.as_f64() * v.as_f64()).sum()
    }

    fn scale(&mut self, factor: T) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += other`; both trees must have identical structure.
    fn add_assign_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for ((_, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += *v;
            }
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Float> Params<T> for Array1<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        out.push((prefix.to_string(), self.as_slice().expect("standard layout")));
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        out.push((prefix.to_string(), self.as_slice_mut().expect("standard layout")));
    }
}

impl<T: Float> Params<T> for Array2<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        out.push((prefix.to_string(), self.as_slice().expect("standard layout")));
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        out.push((prefix.to_string(), self.as_slice_mut().expect("standard layout")));
    }
}

impl<T: Float, P: Params<T>> Params<T> for Option<P> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        if let Some(p) = self {
            p.collect(prefix, out);
        }
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        if let Some(p) = self {
            p.collect_mut(prefix, out);
        }
    }
}

impl<T: Float, P: Params<T>> Params<T> for Vec<P> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        for (i, p) in self.iter().enumerate() {
            p.collect(&join(prefix, &i.to_string()), out);
        }
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.collect_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// Implements [`Params`] for a struct generic over `T` by listing its parameter fields.
macro_rules! impl_params {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: $crate::float::Float> $crate::model::params::Params<T> for $ty<T> {
            fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
                $( $crate::model::params::Params::collect(&self.$field, &$crate::model::params::join(prefix, stringify!($field)), out); )*
            }
            fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
                $( $crate::model::params::Params::collect_mut(&mut self.$field, &$crate::model::params::join(prefix, stringify!($field)), out); )*
            }
        }
    };
}
pub(crate) use impl_params;
