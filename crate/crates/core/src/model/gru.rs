//! Gated recurrent units (PyTorch gate layout `r, z, n`) and the bidirectional wrapper.

use ndarray::linalg::{general_mat_mul, general_mat_vec_mul};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::layers::{sigmoid, uniform, uniform1};
use super::params::impl_params;
use crate::float::Float;

#[derive(Debug, Clone)]
pub struct Gru<T> {
    pub w_ih: Array2<T>,
    pub w_hh: Array2<T>,
    pub b_ih: Array1<T>,
    pub b_hh: Array1<T>,
}
impl_params!(Gru { w_ih, w_hh, b_ih, b_hh });

pub struct GruCache<T> {
    x: Array2<T>,
    r: Array2<T>,
    z: Array2<T>,
    n: Array2<T>,
    ghn: Array2<T>,
    h_prev: Array2<T>,
    reverse: bool,
}

impl<T: Float> Gru<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: uniform(rng, (3 * hidden, input), bound),
            w_hh: uniform(rng, (3 * hidden, hidden), bound),
            b_ih: uniform1(rng, 3 * hidden, bound),
            b_hh: uniform1(rng, 3 * hidden, bound),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    fn order(len: usize, reverse: bool) -> Box<dyn DoubleEndedIterator<Item = usize>> {
        if reverse {
            Box::new((0..len).rev())
        } else {
            Box::new(0..len)
        }
    }

    /// Runs the recurrence over the frames of `x` (`input × L`), returning `hidden × L`.
    pub fn forward(&self, x: ArrayView2<T>, reverse: bool) -> Array2<T> {
        self.run(x, reverse, None)
    }

    pub fn forward_train(&self, x: Array2<T>, reverse: bool) -> (Array2<T>, GruCache<T>) {
        let (h, len) = (self.hidden(), x.ncols());
        let mut cache = GruCache {
            r: Array2::zeros((h, len)),
            z: Array2::zeros((h, len)),
            n: Array2::zeros((h, len)),
            ghn: Array2::zeros((h, len)),
            h_prev: Array2::zeros((h, len)),
            x: Array2::zeros((0, 0)),
            reverse,
        };
        let out = self.run(x.view(), reverse, Some(&mut cache));
        cache.x = x;
        (out, cache)
    }

    fn run(&self, x: ArrayView2<T>, reverse: bool, mut cache: Option<&mut GruCache<T>>) -> Array2<T> {
        let (h, len) = (self.hidden(), x.ncols());
        let mut gi = self.w_ih.dot(&x);
        gi += &self.b_ih.view().insert_axis(Axis(1));
        let mut out = Array2::zeros((h, len));
        let mut state = Array1::<T>::zeros(h);
        let mut gh = Array1::<T>::zeros(3 * h);
        for t in Self::order(len, reverse) {
            gh.assign(&self.b_hh);
            general_mat_vec_mul(T::one(), &self.w_hh, &state, T::one(), &mut gh);
            let git = gi.column(t);
            for j in 0..h {
                let r = sigmoid(git[j] + gh[j]);
                let z = sigmoid(git[h + j] + gh[h + j]);
                let n = (git[2 * h + j] + r * gh[2 * h + j]).tanh();
                let hp = state[j];
                let hn = (T::one() - z) * n + z * hp;
                if let Some(c) = cache.as_deref_mut() {
                    c.r[[j, t]] = r;
                    c.z[[j, t]] = z;
                    c.n[[j, t]] = n;
                    c.ghn[[j, t]] = gh[2 * h + j];
                    c.h_prev[[j, t]] = hp;
                }
                out[[j, t]] = hn;
            }
            state.assign(&out.column(t));
        }
        out
    }

    pub fn backward(&self, cache: &GruCache<T>, d_out: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        let (h, len) = (self.hidden(), d_out.ncols());
        let mut d_gi = Array2::<T>::zeros((3 * h, len));
        let mut d_gh = Array2::<T>::zeros((3 * h, len));
        let mut carry = Array1::<T>::zeros(h);
        let mut back = Array1::<T>::zeros(h);
        for t in Self::order(len, cache.reverse).rev() {
            for j in 0..h {
                let dh = d_out[[j, t]] + carry[j];
                let (r, z, n) = (cache.r[[j, t]], cache.z[[j, t]], cache.n[[j, t]]);
                let hp = cache.h_prev[[j, t]];
                let dn_pre = dh * (T::one() - z) * (T::one() - n * n);
                let dz_pre = dh * (hp - n) * z * (T::one() - z);
                let dr_pre = dn_pre * cache.ghn[[j, t]] * r * (T::one() - r);
                d_gi[[j, t]] = dr_pre;
                d_gi[[h + j, t]] = dz_pre;
                d_gi[[2 * h + j, t]] = dn_pre;
                d_gh[[j, t]] = dr_pre;
                d_gh[[h + j, t]] = dz_pre;
                d_gh[[2 * h + j, t]] = dn_pre * r;
                carry[j] = dh * z;
            }
            general_mat_vec_mul(T::one(), &self.w_hh.t(), &d_gh.column(t), T::zero(), &mut back);
            carry += &back;
        }
        general_mat_mul(T::one(), &d_gh, &cache.h_prev.t(), T::one(), &mut grad.w_hh);
        grad.b_hh += &d_gh.sum_axis(Axis(1));
        general_mat_mul(T::one(), &d_gi, &cache.x.t(), T::one(), &mut grad.w_ih);
        grad.b_ih += &d_gi.sum_axis(Axis(1));
        self.w_ih.t().dot(&d_gi)
    }
}

/// Forward and backward GRUs with concatenated outputs (`2·hidden × L`).
#[derive(Debug, Clone)]
pub struct BiGru<T> {
    pub fwd: Gru<T>,
    pub bwd: Gru<T>,
}
impl_params!(BiGru { fwd, bwd });

pub struct BiGruCache<T> {
    fwd: GruCache<T>,
    bwd: GruCache<T>,
}

impl<T: Float> BiGru<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize) -> Self {
        Self { fwd: Gru::new(rng, input, hidden), bwd: Gru::new(rng, input, hidden) }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let f = self.fwd.forward(x, false);
        let b = self.bwd.forward(x, true);
        ndarray::concatenate(Axis(0), &[f.view(), b.view()]).expect("same frame count")
    }

    pub fn forward_train(&self, x: Array2<T>) -> (Array2<T>, BiGruCache<T>) {
        let (f, cf) = self.fwd.forward_train(x.clone(), false);
        let (b, cb) = self.bwd.forward_train(x, true);
        let out = ndarray::concatenate(Axis(0), &[f.view(), b.view()]).expect("same frame count");
        (out, BiGruCache { fwd: cf, bwd: cb })
    }

    pub fn backward(&self, cache: &BiGruCache<T>, d_out: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        let h = self.fwd.hidden();
        let dx_f = self.fwd.backward(&cache.fwd, d_out.slice(s![..h, ..]), &mut grad.fwd);
        let dx_b = self.bwd.backward(&cache.bwd, d_out.slice(s![h.., ..]), &mut grad.bwd);
        dx_f + dx_b
    }
}
