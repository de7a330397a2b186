//! Encoder and decoder stacks for the complex transformer and the
//! concatenated real baseline.

use rand::Rng;

use crate::attention::{AttentionMask, ComplexAttention, MultiHead, ProjectionSharing, ScoreKernel};
use crate::autodiff::{check_dropout_rate, Var};
use crate::complex::{positional_encoding, ComplexFeedForward, ComplexLayerNorm, ComplexLinear, ComplexVar};
use crate::error::{Error, Result};
use crate::layers::{FeedForward, LayerNorm, Linear};
use crate::params::{ParamStore, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Complex,
    /// Real transformer over `re | im` concatenated along the feature axis,
    /// with softmax attention.
    Concatenated,
}

/// Sublayer order inside a decoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderOrder {
    /// Masked self-attention, feed-forward, cross-attention.
    Literal,
    /// Masked self-attention, cross-attention, feed-forward.
    Conventional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_attn: f64,
    pub dropout_relu: f64,
    pub dropout_residual: f64,
    pub positional_encoding: bool,
    pub variant: Variant,
    pub decoder_order: DecoderOrder,
    pub projection_sharing: ProjectionSharing,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_encoder_layers: 6,
            n_decoder_layers: 6,
            d_model: 64,
            n_heads: 8,
            d_ff: 256,
            dropout_attn: 0.0,
            dropout_relu: 0.1,
            dropout_residual: 0.1,
            positional_encoding: true,
            variant: Variant::Complex,
            decoder_order: DecoderOrder::Literal,
            projection_sharing: ProjectionSharing::Shared,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config("d_model and d_ff must be positive".into()));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads)));
        }
        if self.positional_encoding && !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!("positional encoding needs an even d_model, got {}", self.d_model)));
        }
        for (name, rate) in [
            ("dropout_attn", self.dropout_attn),
            ("dropout_relu", self.dropout_relu),
            ("dropout_residual", self.dropout_residual),
        ] {
            check_dropout_rate(rate).map_err(|_| Error::Config(format!("{name} = {rate} is outside [0, 1)")))?;
        }
        Ok(())
    }
}

/// `x + dropout(LN(sublayer_output))`.
pub fn norm_add<'t>(
    sess: &Session<'t>,
    x: ComplexVar<'t>,
    sublayer_output: ComplexVar<'t>,
    norm: &ComplexLayerNorm,
    dropout_residual: f64,
) -> Result<ComplexVar<'t>> {
    if x.shape() != sublayer_output.shape() {
        return Err(Error::shapes("norm & add", &x.shape(), &sublayer_output.shape()));
    }
    let n = norm.forward(sess, sublayer_output)?;
    Ok(ComplexVar {
        re: x.re.add(sess.dropout(n.re, dropout_residual)?)?,
        im: x.im.add(sess.dropout(n.im, dropout_residual)?)?,
    })
}

fn real_norm_add<'t>(sess: &Session<'t>, x: Var<'t>, sub: Var<'t>, norm: &LayerNorm, rate: f64) -> Result<Var<'t>> {
    if x.shape() != sub.shape() {
        return Err(Error::shapes("norm & add", &x.shape(), &sub.shape()));
    }
    x.add(sess.dropout(norm.forward(sess, sub)?, rate)?)
}

fn add_positions<'t>(sess: &Session<'t>, x: ComplexVar<'t>, on: bool) -> Result<ComplexVar<'t>> {
    if !on {
        return Ok(x);
    }
    let s = x.shape();
    x.add_real(sess.tape.constant(&positional_encoding(s[0], s[1])?))
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: ComplexAttention,
    pub attn_norm: ComplexLayerNorm,
    pub ff: ComplexFeedForward,
    pub ff_norm: ComplexLayerNorm,
    pub dropout_residual: f64,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(EncoderLayer {
            attn: ComplexAttention::new(store, &format!("{name}.attn"), cfg.d_model, cfg.n_heads, cfg.projection_sharing, cfg.dropout_attn, rng)?,
            attn_norm: ComplexLayerNorm::new(store, &format!("{name}.attn_norm"), cfg.d_model),
            ff: ComplexFeedForward::new(store, &format!("{name}.ff"), cfg.d_model, cfg.d_ff, cfg.dropout_relu, rng)?,
            ff_norm: ComplexLayerNorm::new(store, &format!("{name}.ff_norm"), cfg.d_model),
            dropout_residual: cfg.dropout_residual,
        })
    }

    pub fn forward<'t>(&self, sess: &Session<'t>, x: ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        let y1 = norm_add(sess, x, self.attn.forward(sess, x, x, None)?, &self.attn_norm, self.dropout_residual)?;
        norm_add(sess, y1, self.ff.forward(sess, y1)?, &self.ff_norm, self.dropout_residual)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: ComplexAttention,
    pub self_norm: ComplexLayerNorm,
    pub ff: ComplexFeedForward,
    pub ff_norm: ComplexLayerNorm,
    pub cross_attn: ComplexAttention,
    pub cross_norm: ComplexLayerNorm,
    pub order: DecoderOrder,
    pub dropout_residual: f64,
}

impl DecoderLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(DecoderLayer {
            self_attn: ComplexAttention::new(store, &format!("{name}.self_attn"), cfg.d_model, cfg.n_heads, cfg.projection_sharing, cfg.dropout_attn, rng)?,
            self_norm: ComplexLayerNorm::new(store, &format!("{name}.self_norm"), cfg.d_model),
            ff: ComplexFeedForward::new(store, &format!("{name}.ff"), cfg.d_model, cfg.d_ff, cfg.dropout_relu, rng)?,
            ff_norm: ComplexLayerNorm::new(store, &format!("{name}.ff_norm"), cfg.d_model),
            cross_attn: ComplexAttention::new(store, &format!("{name}.cross_attn"), cfg.d_model, cfg.n_heads, cfg.projection_sharing, cfg.dropout_attn, rng)?,
            cross_norm: ComplexLayerNorm::new(store, &format!("{name}.cross_norm"), cfg.d_model),
            order: cfg.decoder_order,
            dropout_residual: cfg.dropout_residual,
        })
    }

    /// `enc = None` skips the cross-attention sublayer.
    pub fn forward<'t>(&self, sess: &Session<'t>, y: ComplexVar<'t>, enc: Option<ComplexVar<'t>>) -> Result<ComplexVar<'t>> {
        let mask = AttentionMask::causal(y.shape()[0])?;
        let r = self.dropout_residual;
        let z1 = norm_add(sess, y, self.self_attn.forward(sess, y, y, Some(&mask))?, &self.self_norm, r)?;
        let ff = |z: ComplexVar<'t>| norm_add(sess, z, self.ff.forward(sess, z)?, &self.ff_norm, r);
        let cross = |z: ComplexVar<'t>| match enc {
            Some(e) => norm_add(sess, z, self.cross_attn.forward(sess, z, e, None)?, &self.cross_norm, r),
            None => Ok(z),
        };
        match self.order {
            DecoderOrder::Literal => cross(ff(z1)?),
            DecoderOrder::Conventional => ff(cross(z1)?),
        }
    }
}

/// Complex encoder-decoder with input embeddings and an output projection
/// back to the frame width.
#[derive(Debug, Clone)]
pub struct ComplexTransformer {
    pub cfg: ModelConfig,
    pub n_features: usize,
    pub embed: ComplexLinear,
    pub dec_embed: ComplexLinear,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub out_proj: ComplexLinear,
}

impl ComplexTransformer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, n_features: usize, with_decoder: bool, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let embed = ComplexLinear::new(store, "embed", n_features, d, true, rng)?;
        let encoder = (0..cfg.n_encoder_layers)
            .map(|i| EncoderLayer::new(store, &format!("enc{i}"), cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let n_dec = if with_decoder { cfg.n_decoder_layers } else { 0 };
        let dec_embed = ComplexLinear::new(store, "dec_embed", n_features, d, true, rng)?;
        let decoder = (0..n_dec)
            .map(|i| DecoderLayer::new(store, &format!("dec{i}"), cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let out_proj = ComplexLinear::new(store, "out_proj", d, n_features, true, rng)?;
        Ok(ComplexTransformer { cfg: cfg.clone(), n_features, embed, dec_embed, encoder, decoder, out_proj })
    }

    /// Positional encoding (if enabled) and the encoder stack over an
    /// already embedded `[T, d_model]` input.
    pub fn encode_embedded<'t>(&self, sess: &Session<'t>, x: ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        let mut h = add_positions(sess, x, self.cfg.positional_encoding)?;
        for layer in &self.encoder {
            h = layer.forward(sess, h)?;
        }
        Ok(h)
    }

    /// Raw frames `[T, F]` → `X_enc` `[T, d_model]`.
    pub fn encode<'t>(&self, sess: &Session<'t>, frames: ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        self.encode_embedded(sess, self.embed.forward(sess, frames)?)
    }

    pub fn decode_embedded<'t>(&self, sess: &Session<'t>, y: ComplexVar<'t>, enc: Option<ComplexVar<'t>>) -> Result<ComplexVar<'t>> {
        let mut h = add_positions(sess, y, self.cfg.positional_encoding)?;
        for layer in &self.decoder {
            h = layer.forward(sess, h, enc)?;
        }
        Ok(h)
    }

    /// Decoder frames `[T_dec, F]` → predicted next frames `[T_dec, F]`.
    pub fn decode<'t>(&self, sess: &Session<'t>, frames: ComplexVar<'t>, enc: ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        let h = self.decode_embedded(sess, self.dec_embed.forward(sess, frames)?, Some(enc))?;
        self.out_proj.forward(sess, h)
    }
}

#[derive(Debug, Clone)]
struct RealEncoderLayer {
    attn: MultiHead,
    attn_norm: LayerNorm,
    ff: FeedForward,
    ff_norm: LayerNorm,
    dropout_attn: f64,
    dropout_residual: f64,
}

#[derive(Debug, Clone)]
struct RealDecoderLayer {
    self_attn: MultiHead,
    self_norm: LayerNorm,
    ff: FeedForward,
    ff_norm: LayerNorm,
    cross_attn: MultiHead,
    cross_norm: LayerNorm,
    order: DecoderOrder,
    dropout_attn: f64,
    dropout_residual: f64,
}

impl RealEncoderLayer {
    fn forward<'t>(&self, sess: &Session<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let a = sess.dropout(self.attn.forward(sess, x, x, None)?, self.dropout_attn)?;
        let y1 = real_norm_add(sess, x, a, &self.attn_norm, self.dropout_residual)?;
        real_norm_add(sess, y1, self.ff.forward(sess, y1)?, &self.ff_norm, self.dropout_residual)
    }
}

impl RealDecoderLayer {
    fn forward<'t>(&self, sess: &Session<'t>, y: Var<'t>, enc: Var<'t>) -> Result<Var<'t>> {
        let mask = AttentionMask::causal(y.shape()[0])?;
        let r = self.dropout_residual;
        let a = sess.dropout(self.self_attn.forward(sess, y, y, Some(&mask))?, self.dropout_attn)?;
        let z1 = real_norm_add(sess, y, a, &self.self_norm, r)?;
        let ff = |z: Var<'t>| real_norm_add(sess, z, self.ff.forward(sess, z)?, &self.ff_norm, r);
        let cross = |z: Var<'t>| {
            let c = sess.dropout(self.cross_attn.forward(sess, z, enc, None)?, self.dropout_attn)?;
            real_norm_add(sess, z, c, &self.cross_norm, r)
        };
        match self.order {
            DecoderOrder::Literal => cross(ff(z1)?),
            DecoderOrder::Conventional => ff(cross(z1)?),
        }
    }
}

/// The concatenated baseline: width `2·d_model`, feed-forward width
/// `2·d_ff`, softmax attention, same Norm & Add scheme.
#[derive(Debug, Clone)]
pub struct ConcatTransformer {
    pub cfg: ModelConfig,
    pub n_features: usize,
    embed: Linear,
    dec_embed: Linear,
    encoder: Vec<RealEncoderLayer>,
    decoder: Vec<RealDecoderLayer>,
    out_proj: Linear,
}

impl ConcatTransformer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, n_features: usize, with_decoder: bool, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (w, f) = (2 * cfg.d_model, 2 * n_features);
        let mha = |store: &mut ParamStore, name: String, rng: &mut R| MultiHead::new(store, &name, w, cfg.n_heads, ScoreKernel::Softmax, rng);
        let embed = Linear::new(store, "embed", f, w, true, rng)?;
        let mut encoder = Vec::with_capacity(cfg.n_encoder_layers);
        for i in 0..cfg.n_encoder_layers {
            encoder.push(RealEncoderLayer {
                attn: mha(store, format!("enc{i}.attn"), rng)?,
                attn_norm: LayerNorm::new(store, &format!("enc{i}.attn_norm"), w),
                ff: FeedForward::new(store, &format!("enc{i}.ff"), w, 2 * cfg.d_ff, cfg.dropout_relu, rng)?,
                ff_norm: LayerNorm::new(store, &format!("enc{i}.ff_norm"), w),
                dropout_attn: cfg.dropout_attn,
                dropout_residual: cfg.dropout_residual,
            });
        }
        let dec_embed = Linear::new(store, "dec_embed", f, w, true, rng)?;
        let n_dec = if with_decoder { cfg.n_decoder_layers } else { 0 };
        let mut decoder = Vec::with_capacity(n_dec);
        for i in 0..n_dec {
            decoder.push(RealDecoderLayer {
                self_attn: mha(store, format!("dec{i}.self_attn"), rng)?,
                self_norm: LayerNorm::new(store, &format!("dec{i}.self_norm"), w),
                ff: FeedForward::new(store, &format!("dec{i}.ff"), w, 2 * cfg.d_ff, cfg.dropout_relu, rng)?,
                ff_norm: LayerNorm::new(store, &format!("dec{i}.ff_norm"), w),
                cross_attn: mha(store, format!("dec{i}.cross_attn"), rng)?,
                cross_norm: LayerNorm::new(store, &format!("dec{i}.cross_norm"), w),
                order: cfg.decoder_order,
                dropout_attn: cfg.dropout_attn,
                dropout_residual: cfg.dropout_residual,
            });
        }
        let out_proj = Linear::new(store, "out_proj", w, f, true, rng)?;
        Ok(ConcatTransformer { cfg: cfg.clone(), n_features, embed, dec_embed, encoder, decoder, out_proj })
    }

    fn with_positions<'t>(&self, sess: &Session<'t>, x: Var<'t>) -> Result<Var<'t>> {
        if !self.cfg.positional_encoding {
            return Ok(x);
        }
        let s = x.shape();
        x.add(sess.tape.constant(&positional_encoding(s[0], s[1])?))
    }

    /// Raw frames `[T, F]` → real stream `[T, 2·d_model]`.
    pub fn encode<'t>(&self, sess: &Session<'t>, frames: ComplexVar<'t>) -> Result<Var<'t>> {
        let mut h = self.with_positions(sess, self.embed.forward(sess, frames.concat_parts()?)?)?;
        for layer in &self.encoder {
            h = layer.forward(sess, h)?;
        }
        Ok(h)
    }

    pub fn decode<'t>(&self, sess: &Session<'t>, frames: ComplexVar<'t>, enc: Var<'t>) -> Result<ComplexVar<'t>> {
        let mut h = self.with_positions(sess, self.dec_embed.forward(sess, frames.concat_parts()?)?)?;
        for layer in &self.decoder {
            h = layer.forward(sess, h, enc)?;
        }
        let out = self.out_proj.forward(sess, h)?;
        let f = self.n_features;
        Ok(ComplexVar { re: out.slice_last(0, f)?, im: out.slice_last(f, f)? })
    }
}

/// Encoder output of either variant.
#[derive(Debug, Clone, Copy)]
pub enum Encoded<'t> {
    Complex(ComplexVar<'t>),
    Real(Var<'t>),
}

impl<'t> Encoded<'t> {
    /// Real features `[T, 2·d_model]` for the prediction heads: `A' | B'`
    /// for the complex variant, the real stream for the baseline.
    pub fn features(&self) -> Result<Var<'t>> {
        match self {
            Encoded::Complex(c) => c.concat_parts(),
            Encoded::Real(r) => Ok(*r),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Backbone {
    Complex(ComplexTransformer),
    Concatenated(ConcatTransformer),
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, n_features: usize, with_decoder: bool, rng: &mut R) -> Result<Self> {
        Ok(match cfg.variant {
            Variant::Complex => Backbone::Complex(ComplexTransformer::new(store, cfg, n_features, with_decoder, rng)?),
            Variant::Concatenated => Backbone::Concatenated(ConcatTransformer::new(store, cfg, n_features, with_decoder, rng)?),
        })
    }

    pub fn cfg(&self) -> &ModelConfig {
        match self {
            Backbone::Complex(m) => &m.cfg,
            Backbone::Concatenated(m) => &m.cfg,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Backbone::Complex(m) => m.n_features,
            Backbone::Concatenated(m) => m.n_features,
        }
    }

    /// Width of [`Encoded::features`].
    pub fn feature_width(&self) -> usize {
        2 * self.cfg().d_model
    }

    pub fn encode<'t>(&self, sess: &Session<'t>, frames: ComplexVar<'t>) -> Result<Encoded<'t>> {
        if frames.shape().len() != 2 || frames.shape()[1] != self.n_features() {
            return Err(Error::dim(format!("expected frames [T, {}], got {:?}", self.n_features(), frames.shape())));
        }
        Ok(match self {
            Backbone::Complex(m) => Encoded::Complex(m.encode(sess, frames)?),
            Backbone::Concatenated(m) => Encoded::Real(m.encode(sess, frames)?),
        })
    }

    pub fn decode<'t>(&self, sess: &Session<'t>, frames: ComplexVar<'t>, enc: Encoded<'t>) -> Result<ComplexVar<'t>> {
        match (self, enc) {
            (Backbone::Complex(m), Encoded::Complex(e)) => m.decode(sess, frames, e),
            (Backbone::Concatenated(m), Encoded::Real(e)) => m.decode(sess, frames, e),
            _ => Err(Error::Contract("encoder output from a different variant".into())),
        }
    }
}
