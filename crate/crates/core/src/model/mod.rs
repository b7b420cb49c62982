//! Joint extraction network: learnable encoder/decoder, a shared TCN trunk, a
//! query-conditioned mask estimator and an optional event classifier that reads
//! the trunk output before conditioning.

mod checkpoint;
mod classifier;
mod codec;
mod complexity;
mod gru;
mod layers;
pub mod params;
mod tcn;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::SAMPLE_RATE;
use crate::error::{Result, TseError};
use crate::float::Float;
use crate::query::Query;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use classifier::{linear_softmax_pool, ClassPrediction, Classifier};
pub use codec::{frame_count, Decoder, Encoder};
pub use complexity::{count_params_macs, Complexity};
pub use gru::{BiGru, Gru};
pub use layers::{DepthwiseConv, GlobalLayerNorm, Pointwise, Prelu};
pub use params::Params;
pub use tcn::{ConvBlock, Tcn, TcnShape};

use classifier::ClassifierCache;
use layers::GlnCache;
use params::impl_params;
use tcn::BlockCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    Paper,
    Toy,
    /// Smallest network exercising every code path; for tests and smoke runs.
    Miniature,
}

/// Hyper-parameters of the network. Field comments give the conventional symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scale: ScalePreset,
    pub sample_rate: u32,
    /// D
    pub filters: usize,
    pub window_ms: f64,
    pub overlap: f64,
    /// N; must equal the bottleneck and skip widths.
    pub feature_dim: usize,
    /// P
    pub kernel: usize,
    /// H
    pub hidden: usize,
    /// B
    pub bottleneck: usize,
    /// Sc
    pub skip: usize,
    pub shared_blocks: usize,
    pub shared_stacks: usize,
    pub mask_blocks: usize,
    pub mask_stacks: usize,
    /// Concatenated BiGRU output width; each direction has half of it.
    pub gru_hidden: usize,
    /// C
    pub classes: usize,
    pub classifier: bool,
}

impl ModelConfig {
    pub fn paper(classes: usize, classifier: bool) -> Self {
        Self {
            scale: ScalePreset::Paper,
            sample_rate: SAMPLE_RATE,
            filters: 256,
            window_ms: 5.0,
            overlap: 0.5,
            feature_dim: 256,
            kernel: 3,
            hidden: 512,
            bottleneck: 256,
            skip: 256,
            shared_blocks: 8,
            shared_stacks: 1,
            mask_blocks: 8,
            mask_stacks: 3,
            gru_hidden: 256,
            classes,
            classifier,
        }
    }

    pub fn toy(classes: usize, classifier: bool) -> Self {
        Self {
            scale: ScalePreset::Toy,
            filters: 128,
            feature_dim: 128,
            hidden: 256,
            bottleneck: 128,
            skip: 128,
            shared_blocks: 4,
            mask_blocks: 6,
            mask_stacks: 2,
            gru_hidden: 128,
            ..Self::paper(classes, classifier)
        }
    }

    /// Tiny network used for finite-difference gradient checks.
    pub fn miniature(classes: usize, classifier: bool) -> Self {
        Self {
            scale: ScalePreset::Miniature,
            filters: 8,
            feature_dim: 8,
            hidden: 16,
            bottleneck: 8,
            skip: 8,
            shared_blocks: 1,
            shared_stacks: 1,
            mask_blocks: 1,
            mask_stacks: 1,
            gru_hidden: 8,
            ..Self::paper(classes, classifier)
        }
    }

    pub fn for_scale(scale: ScalePreset, classes: usize, classifier: bool) -> Self {
        match scale {
            ScalePreset::Paper => Self::paper(classes, classifier),
            ScalePreset::Toy => Self::toy(classes, classifier),
            ScalePreset::Miniature => Self::miniature(classes, classifier),
        }
    }

    pub fn window(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop(&self) -> usize {
        (self.window() as f64 * (1.0 - self.overlap)).round() as usize
    }

    pub fn frames_for(&self, len: usize) -> Result<usize> {
        frame_count(len, self.window(), self.hop())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TseError::ConfigInvalid(m));
        let sizes = [
            self.filters,
            self.feature_dim,
            self.kernel,
            self.hidden,
            self.bottleneck,
            self.skip,
            self.shared_blocks,
            self.shared_stacks,
            self.mask_blocks,
            self.mask_stacks,
            self.classes,
            self.sample_rate as usize,
        ];
        if sizes.contains(&0) {
            return bad("all sizes must be positive".into());
        }
        let window = self.window_ms * self.sample_rate as f64 / 1000.0;
        if (window - window.round()).abs() > 1e-9 || window < 1.0 {
            return bad(format!("window of {} ms is not a whole number of samples", self.window_ms));
        }
        let hop = window * (1.0 - self.overlap);
        if !(0.0..1.0).contains(&self.overlap) || (hop - hop.round()).abs() > 1e-9 || hop < 1.0 {
            return bad(format!("overlap {} does not give a whole-sample hop", self.overlap));
        }
        if self.feature_dim != self.bottleneck || self.feature_dim != self.skip {
            return bad("feature_dim, bottleneck and skip widths must be equal".into());
        }
        if self.kernel % 2 == 0 {
            return bad("kernel size must be odd".into());
        }
        if self.classifier && (self.gru_hidden == 0 || self.gru_hidden % 2 != 0) {
            return bad("gru_hidden must be a positive even width".into());
        }
        Ok(())
    }

    fn shared_shape(&self) -> TcnShape {
        TcnShape {
            io_channels: self.bottleneck,
            hidden: self.hidden,
            skip: self.skip,
            kernel: self.kernel,
            blocks: self.shared_blocks,
            stacks: self.shared_stacks,
            affine_offsets: true,
        }
    }

    fn mask_shape(&self) -> TcnShape {
        TcnShape {
            io_channels: self.bottleneck,
            hidden: self.hidden,
            skip: self.skip,
            kernel: self.kernel,
            blocks: self.mask_blocks,
            stacks: self.mask_stacks,
            affine_offsets: false,
        }
    }
}

/// Encoder output, `D × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub values: Array2<T>,
}

/// Trunk output, `N × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedFeatures<T> {
    pub values: Array2<T>,
}

/// Non-negative mask, `D × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask<T> {
    pub values: Array2<T>,
}

/// gLN → 1×1 bottleneck → TCN; output is the skip-path sum.
#[derive(Debug, Clone)]
pub struct SharedExtractor<T> {
    pub norm: GlobalLayerNorm<T>,
    pub bottleneck: Pointwise<T>,
    pub tcn: Tcn<T>,
}
impl_params!(SharedExtractor { norm, bottleneck, tcn });

struct SharedCache<T> {
    norm: GlnCache<T>,
    normed: Array2<T>,
    blocks: Vec<BlockCache<T>>,
}

impl<T: Float> SharedExtractor<T> {
    fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let normed = self.norm.forward(x);
        self.tcn.forward(self.bottleneck.forward(normed.view()).view())
    }

    fn forward_train(&self, x: ArrayView2<T>) -> (Array2<T>, SharedCache<T>) {
        let (normed, norm) = self.norm.forward_train(x);
        let (z, blocks) = self.tcn.forward_train(self.bottleneck.forward(normed.view()));
        (z, SharedCache { norm, normed, blocks })
    }

    fn backward(&self, cache: &SharedCache<T>, dz: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        let d_b = self.tcn.backward(&cache.blocks, dz, &mut grad.tcn);
        let d_n = self.bottleneck.backward(cache.normed.view(), d_b.view(), &mut grad.bottleneck);
        self.norm.backward(&cache.norm, d_n.view(), &mut grad.norm)
    }
}

/// Bias-free TCN over the conditioned trunk features, then PReLU → 1×1 → ReLU.
/// Every stage is positively homogeneous, so zero conditioning gives a zero mask.
#[derive(Debug, Clone)]
pub struct MaskEstimator<T> {
    pub tcn: Tcn<T>,
    pub out_act: Prelu<T>,
    pub out: Pointwise<T>,
}
impl_params!(MaskEstimator { tcn, out_act, out });

struct MaskCache<T> {
    blocks: Vec<BlockCache<T>>,
    skip: Array2<T>,
    act: Array2<T>,
}

fn condition<T: Float>(z: ArrayView2<T>, e: &Array1<T>) -> Array2<T> {
    let mut c = z.to_owned();
    c *= &e.view().insert_axis(Axis(1));
    c
}

impl<T: Float> MaskEstimator<T> {
    fn forward(&self, z: ArrayView2<T>, e: &Array1<T>) -> Array2<T> {
        let skip = self.tcn.forward(condition(z, e).view());
        let mut m = self.out.forward(self.out_act.forward(skip.view()).view());
        m.mapv_inplace(|v| v.max(T::zero()));
        m
    }

    fn forward_train(&self, z: ArrayView2<T>, e: &Array1<T>) -> (Array2<T>, MaskCache<T>) {
        let (skip, blocks) = self.tcn.forward_train(condition(z, e));
        let act = self.out_act.forward(skip.view());
        let mut m = self.out.forward(act.view());
        m.mapv_inplace(|v| v.max(T::zero()));
        (m, MaskCache { blocks, skip, act })
    }

    /// Returns `(dL/dZ, dL/de)`.
    fn backward(
        &self,
        cache: &MaskCache<T>,
        mask: &Array2<T>,
        d_mask: Array2<T>,
        z: &Array2<T>,
        e: &Array1<T>,
        grad: &mut Self,
    ) -> (Array2<T>, Array1<T>) {
        let mut d_pre = d_mask;
        d_pre.zip_mut_with(mask, |d, &m| {
            if m <= T::zero() {
                *d = T::zero();
            }
        });
        let d_act = self.out.backward(cache.act.view(), d_pre.view(), &mut grad.out);
        let d_skip = self.out_act.backward(cache.skip.view(), d_act.view(), &mut grad.out_act);
        let d_cond = self.tcn.backward(&cache.blocks, d_skip.view(), &mut grad.tcn);
        let de = Array1::from_iter(d_cond.rows().into_iter().zip(z.rows()).map(|(d, zr)| d.dot(&zr)));
        (condition(d_cond.view(), e), de)
    }
}

/// All trainable tensors. Also used as the gradient accumulator.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub encoder: Encoder<T>,
    pub shared: SharedExtractor<T>,
    /// `N × C`, no bias.
    pub embedding: Array2<T>,
    pub mask: MaskEstimator<T>,
    pub decoder: Decoder<T>,
    pub classifier: Option<Classifier<T>>,
}
impl_params!(ModelParams { encoder, shared, embedding, mask, decoder, classifier });

impl<T: Float> ModelParams<T> {
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g
    }
}

/// Everything computed from the mixture alone; reusable across queries.
#[derive(Debug, Clone)]
pub struct Analysis<T> {
    pub features: FeatureMap<T>,
    pub shared: SharedFeatures<T>,
    pub prediction: Option<ClassPrediction<T>>,
    pub len: usize,
}

/// Activations kept by [`TseModel::forward_train`] for [`TseModel::backward`].
pub struct TrainCache<T> {
    framed: Array2<T>,
    feats: Array2<T>,
    shared: SharedCache<T>,
    z: Array2<T>,
    query: Vec<usize>,
    e: Array1<T>,
    mask_cache: MaskCache<T>,
    mask: Array2<T>,
    masked: Array2<T>,
    classifier: Option<ClassifierCache<T>>,
}

#[derive(Debug, Clone)]
pub struct TseModel<T> {
    config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Float> TseModel<T> {
    /// Randomly initialised model (uniform fan-in initialisation).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let window = config.window();
        let encoder = Encoder::new(&mut rng, config.filters, window);
        let shared = SharedExtractor {
            norm: GlobalLayerNorm::new(config.filters, true),
            bottleneck: Pointwise::new(&mut rng, config.bottleneck, config.filters, true),
            tcn: Tcn::new(&mut rng, config.shared_shape()),
        };
        let embedding = layers::uniform(&mut rng, (config.feature_dim, config.classes), 1.0);
        let mask = MaskEstimator {
            tcn: Tcn::new(&mut rng, config.mask_shape()),
            out_act: Prelu::new(),
            out: Pointwise::new(&mut rng, config.filters, config.skip, false),
        };
        let decoder = Decoder::new(&mut rng, config.filters, window);
        let classifier =
            config.classifier.then(|| Classifier::new(&mut rng, config.feature_dim, config.gru_hidden, config.classes));
        Ok(Self { config, params: ModelParams { encoder, shared, embedding, mask, decoder, classifier } })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        if params.classifier.is_some() != config.classifier {
            return Err(TseError::ConfigInvalid("classifier presence differs from config".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn has_classifier(&self) -> bool {
        self.params.classifier.is_some()
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn encode(&self, x: &[T]) -> Result<FeatureMap<T>> {
        let (values, _) = self.params.encoder.forward(x, self.config.hop())?;
        Ok(FeatureMap { values })
    }

    pub fn extract_shared(&self, features: &FeatureMap<T>) -> Result<SharedFeatures<T>> {
        if features.values.nrows() != self.config.filters {
            return Err(TseError::DimensionMismatch(format!(
                "feature map has {} rows, encoder has {} filters",
                features.values.nrows(),
                self.config.filters
            )));
        }
        Ok(SharedFeatures { values: self.params.shared.forward(features.values.view()) })
    }

    /// `E·q`: the sum of the embedding columns of the selected classes.
    pub fn embed_query(&self, query: &Query) -> Result<Array1<T>> {
        if query.classes() != self.config.classes {
            return Err(TseError::DimensionMismatch(format!(
                "query has {} classes, model has {}",
                query.classes(),
                self.config.classes
            )));
        }
        let mut e = Array1::zeros(self.config.feature_dim);
        for i in query.indices() {
            e += &self.params.embedding.column(i);
        }
        Ok(e)
    }

    pub fn estimate_mask(&self, shared: &SharedFeatures<T>, embedding: &Array1<T>) -> Result<Mask<T>> {
        if embedding.len() != shared.values.nrows() {
            return Err(TseError::DimensionMismatch(format!(
                "embedding has {} entries, shared features have {} channels",
                embedding.len(),
                shared.values.nrows()
            )));
        }
        Ok(Mask { values: self.params.mask.forward(shared.values.view(), embedding) })
    }

    /// Synthesises `len` samples from (masked) encoder features.
    pub fn decode(&self, masked: &FeatureMap<T>, len: usize) -> Vec<T> {
        self.params.decoder.forward(&masked.values, self.config.hop(), len)
    }

    pub fn classify(&self, shared: &SharedFeatures<T>) -> Result<ClassPrediction<T>> {
        let cls = self
            .params
            .classifier
            .as_ref()
            .ok_or_else(|| TseError::NoClassifier("classify needs a proposed-system checkpoint".into()))?;
        Ok(cls.forward(shared.values.view()))
    }

    /// Runs the query-independent part once: encoder, trunk and classifier.
    pub fn analyze(&self, x: &[T]) -> Result<Analysis<T>> {
        let features = self.encode(x)?;
        let shared = self.extract_shared(&features)?;
        let prediction = match &self.params.classifier {
            Some(cls) => Some(cls.forward(shared.values.view())),
            None => None,
        };
        Ok(Analysis { features, shared, prediction, len: x.len() })
    }

    /// Query-dependent part: embedding, mask, decoder.
    pub fn extract(&self, analysis: &Analysis<T>, query: &Query) -> Result<Vec<T>> {
        let e = self.embed_query(query)?;
        let mask = self.estimate_mask(&analysis.shared, &e)?;
        let masked = FeatureMap { values: &analysis.features.values * &mask.values };
        Ok(self.decode(&masked, analysis.len))
    }

    pub fn forward(&self, x: &[T], query: &Query) -> Result<(Vec<T>, Option<ClassPrediction<T>>)> {
        let analysis = self.analyze(x)?;
        let est = self.extract(&analysis, query)?;
        Ok((est, analysis.prediction))
    }

    pub fn forward_train(&self, x: &[T], query: &Query) -> Result<(Vec<T>, Option<ClassPrediction<T>>, TrainCache<T>)> {
        let e = self.embed_query(query)?;
        let p = &self.params;
        let (feats, framed) = p.encoder.forward(x, self.config.hop())?;
        let (z, shared) = p.shared.forward_train(feats.view());
        let (pred, classifier) = match &p.classifier {
            Some(cls) => {
                let (pred, cache) = cls.forward_train(z.clone());
                (Some(pred), Some(cache))
            }
            None => (None, None),
        };
        let (mask, mask_cache) = p.mask.forward_train(z.view(), &e);
        let masked = &feats * &mask;
        let est = p.decoder.forward(&masked, self.config.hop(), x.len());
        let cache =
            TrainCache { framed, feats, shared, z, query: query.indices(), e, mask_cache, mask, masked, classifier };
        Ok((est, pred, cache))
    }

    /// Accumulates `dL/dθ` into `grad` given the loss gradients w.r.t. the
    /// estimate and (when present) the clip probabilities.
    pub fn backward(&self, cache: TrainCache<T>, d_estimate: &[T], d_clip: Option<&[T]>, grad: &mut ModelParams<T>) {
        let p = &self.params;
        let hop = self.config.hop();
        let d_masked = p.decoder.backward(&cache.masked, d_estimate, hop, &mut grad.decoder);
        let d_mask = &d_masked * &cache.feats;
        let mut d_feats = d_masked * &cache.mask;
        let (mut dz, de) = p.mask.backward(&cache.mask_cache, &cache.mask, d_mask, &cache.z, &cache.e, &mut grad.mask);
        for &i in &cache.query {
            let mut col = grad.embedding.column_mut(i);
            col += &de;
        }
        if let (Some(cls), Some(cc), Some(dc)) = (&p.classifier, &cache.classifier, d_clip) {
            let g = grad.classifier.as_mut().expect("matching structure");
            dz += &cls.backward(cc, dc, g);
        }
        d_feats += &p.shared.backward(&cache.shared, dz.view(), &mut grad.shared);
        p.encoder.backward(&cache.framed, &cache.feats, d_feats, &mut grad.encoder);
    }

    /// Number of frames spanned by one output frame of the trunk.
    pub fn shared_receptive_field(&self) -> usize {
        self.params.shared.tcn.receptive_field()
    }

    /// Casts every parameter to another float type.
    pub fn cast<U: Float>(&self) -> TseModel<U> {
        let mut out = TseModel::<U>::new(self.config.clone(), 0).expect("config already validated");
        for ((_, dst), (_, src)) in out.params.tensors_mut().into_iter().zip(self.params.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::lit(s.as_f64());
            }
        }
        out
    }
}

/// Converts an `f64` waveform into the model's float type.
pub fn to_model_input<T: Float>(samples: &[f64]) -> Vec<T> {
    samples.iter().map(|&v| T::lit(v)).collect()
}

pub fn to_f64<T: Float>(samples: &[T]) -> Vec<f64> {
    samples.iter().map(|v| v.as_f64()).collect()
}
