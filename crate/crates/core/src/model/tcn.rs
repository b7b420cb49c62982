//! Stacks of dilated depthwise-separable convolution blocks with residual and
//! skip paths. The stack output is the sum of all skip outputs.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::layers::{DepthwiseConv, GlnCache, GlobalLayerNorm, Pointwise, Prelu};
use super::params::impl_params;
use crate::float::Float;

#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub conv_in: Pointwise<T>,
    pub act1: Prelu<T>,
    pub norm1: GlobalLayerNorm<T>,
    pub dconv: DepthwiseConv<T>,
    pub act2: Prelu<T>,
    pub norm2: GlobalLayerNorm<T>,
    /// Absent on the final block of the network: its residual output is never read.
    pub res_out: Option<Pointwise<T>>,
    pub skip_out: Pointwise<T>,
}
impl_params!(ConvBlock { conv_in, act1, norm1, dconv, act2, norm2, res_out, skip_out });

pub struct BlockCache<T> {
    x: Array2<T>,
    h1: Array2<T>,
    c1: GlnCache<T>,
    n1: Array2<T>,
    h2: Array2<T>,
    c2: GlnCache<T>,
    n2: Array2<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct TcnShape {
    pub io_channels: usize,
    pub hidden: usize,
    pub skip: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub stacks: usize,
    /// Biases in convolutions and shifts in normalisation.
    pub affine_offsets: bool,
}

impl<T: Float> ConvBlock<T> {
    fn new<R: Rng + ?Sized>(rng: &mut R, shape: &TcnShape, dilation: usize, residual: bool) -> Self {
        let bias = shape.affine_offsets;
        Self {
            conv_in: Pointwise::new(rng, shape.hidden, shape.io_channels, bias),
            act1: Prelu::new(),
            norm1: GlobalLayerNorm::new(shape.hidden, bias),
            dconv: DepthwiseConv::new(rng, shape.hidden, shape.kernel, dilation, bias),
            act2: Prelu::new(),
            norm2: GlobalLayerNorm::new(shape.hidden, bias),
            res_out: residual.then(|| Pointwise::new(rng, shape.io_channels, shape.hidden, bias)),
            skip_out: Pointwise::new(rng, shape.skip, shape.hidden, bias),
        }
    }

    fn forward(&self, x: ArrayView2<T>) -> (Option<Array2<T>>, Array2<T>) {
        let h1 = self.conv_in.forward(x);
        let n1 = self.norm1.forward(self.act1.forward(h1.view()).view());
        let h2 = self.dconv.forward(n1.view());
        let n2 = self.norm2.forward(self.act2.forward(h2.view()).view());
        let out = self.res_out.as_ref().map(|r| r.forward(n2.view()) + x);
        (out, self.skip_out.forward(n2.view()))
    }

    fn forward_train(&self, x: Array2<T>) -> (Option<Array2<T>>, Array2<T>, BlockCache<T>) {
        let h1 = self.conv_in.forward(x.view());
        let (n1, c1) = self.norm1.forward_train(self.act1.forward(h1.view()).view());
        let h2 = self.dconv.forward(n1.view());
        let (n2, c2) = self.norm2.forward_train(self.act2.forward(h2.view()).view());
        let out = self.res_out.as_ref().map(|r| r.forward(n2.view()) + &x);
        let skip = self.skip_out.forward(n2.view());
        (out, skip, BlockCache { x, h1, c1, n1, h2, c2, n2 })
    }

    fn backward(&self, cache: &BlockCache<T>, d_out: Option<&Array2<T>>, d_skip: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        let mut dn2 = self.skip_out.backward(cache.n2.view(), d_skip, &mut grad.skip_out);
        if let (Some(res), Some(d)) = (&self.res_out, d_out) {
            dn2 += &res.backward(cache.n2.view(), d.view(), grad.res_out.as_mut().expect("matching structure"));
        }
        let da2 = self.norm2.backward(&cache.c2, dn2.view(), &mut grad.norm2);
        let dh2 = self.act2.backward(cache.h2.view(), da2.view(), &mut grad.act2);
        let dn1 = self.dconv.backward(cache.n1.view(), dh2.view(), &mut grad.dconv);
        let da1 = self.norm1.backward(&cache.c1, dn1.view(), &mut grad.norm1);
        let dh1 = self.act1.backward(cache.h1.view(), da1.view(), &mut grad.act1);
        let mut dx = self.conv_in.backward(cache.x.view(), dh1.view(), &mut grad.conv_in);
        if let Some(d) = d_out {
            dx += d;
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Tcn<T> {
    pub blocks: Vec<ConvBlock<T>>,
}
impl_params!(Tcn { blocks });

impl<T: Float> Tcn<T> {
    /// `stacks` repetitions of `blocks` blocks with dilations `1, 2, …, 2^(blocks−1)`.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, shape: TcnShape) -> Self {
        let total = shape.blocks * shape.stacks;
        let blocks = (0..total)
            .map(|i| ConvBlock::new(rng, &shape, 1 << (i % shape.blocks), i + 1 < total))
            .collect();
        Self { blocks }
    }

    /// Number of input frames that can influence one output frame.
    pub fn receptive_field(&self) -> usize {
        1 + self.blocks.iter().map(|b| (b.dconv.weight.ncols() - 1) * b.dconv.dilation).sum::<usize>()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut stream = x.to_owned();
        let mut skip_sum: Option<Array2<T>> = None;
        for block in &self.blocks {
            let (out, skip) = block.forward(stream.view());
            skip_sum = Some(match skip_sum {
                Some(acc) => acc + skip,
                None => skip,
            });
            if let Some(o) = out {
                stream = o;
            }
        }
        skip_sum.expect("at least one block")
    }

    pub fn forward_train(&self, x: Array2<T>) -> (Array2<T>, Vec<BlockCache<T>>) {
        let mut stream = x;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut skip_sum: Option<Array2<T>> = None;
        for block in &self.blocks {
            let (out, skip, cache) = block.forward_train(stream);
            caches.push(cache);
            skip_sum = Some(match skip_sum {
                Some(acc) => acc + skip,
                None => skip,
            });
            stream = match out {
                Some(o) => o,
                None => Array2::zeros((0, 0)),
            };
        }
        (skip_sum.expect("at least one block"), caches)
    }

    pub fn backward(&self, caches: &[BlockCache<T>], d_skip: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        let mut d_stream: Option<Array2<T>> = None;
        for ((block, cache), g) in self.blocks.iter().zip(caches).zip(grad.blocks.iter_mut()).rev() {
            d_stream = Some(block.backward(cache, d_stream.as_ref(), d_skip, g));
        }
        d_stream.expect("at least one block")
    }
}
