//! The conditional VAE: conv encoder, context subnetwork, reparameterised latent and a decoder
//! with skip connections from the input grid and the context vector.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Sample, SECONDS_PER_DAY};
use crate::numerics::kernels::Padding;
use crate::numerics::{NodeId, ParamId, ParameterStore, Scalar, Tape, Tensor};
use crate::world::GeoBounds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_gps: bool,
    pub use_time: bool,
    pub use_frame: bool,
    pub skip_main: bool,
    pub skip_context: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags { use_gps: true, use_time: true, use_frame: true, skip_main: true, skip_context: true }
    }
}

/// Table rows: the full model, seven ablations and the deterministic autoencoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Full,
    Autoencoder,
    WoGpsTime,
    WoTime,
    WoGps,
    WoFrame,
    WoSkip,
    WoSkipM,
    WoSkipC,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::Autoencoder,
        Variant::WoGpsTime,
        Variant::WoTime,
        Variant::WoGps,
        Variant::WoFrame,
        Variant::WoSkip,
        Variant::WoSkipM,
        Variant::WoSkipC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Autoencoder => "autoencoder",
            Variant::WoGpsTime => "wo-gps-time",
            Variant::WoTime => "wo-time",
            Variant::WoGps => "wo-gps",
            Variant::WoFrame => "wo-frame",
            Variant::WoSkip => "wo-skip",
            Variant::WoSkipM => "wo-skip-m",
            Variant::WoSkipC => "wo-skip-c",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn flags(self) -> AblationFlags {
        let f = AblationFlags::default();
        match self {
            Variant::Full => f,
            Variant::Autoencoder => AblationFlags { use_gps: false, use_time: false, use_frame: false, skip_context: false, ..f },
            Variant::WoGpsTime => AblationFlags { use_gps: false, use_time: false, ..f },
            Variant::WoTime => AblationFlags { use_time: false, ..f },
            Variant::WoGps => AblationFlags { use_gps: false, ..f },
            Variant::WoFrame => AblationFlags { use_frame: false, ..f },
            Variant::WoSkip => AblationFlags { skip_main: false, skip_context: false, ..f },
            Variant::WoSkipM => AblationFlags { skip_main: false, ..f },
            Variant::WoSkipC => AblationFlags { skip_context: false, ..f },
        }
    }

    pub fn variational(self) -> bool {
        self != Variant::Autoencoder
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub grid_size: usize,
    pub classes: usize,
    pub frame_dim: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub encoder_width: usize,
    /// Width of the time and GPS embeddings and their two follow-up layers.
    pub embed_width: usize,
    pub frame_width: usize,
    pub latent: usize,
    pub flags: AblationFlags,
    /// False gives the deterministic autoencoder: no variance head, `z = mu`.
    pub variational: bool,
    pub bounds: GeoBounds,
    /// Initial output-conv bias; with `skip_gain` it starts the decoder near the identity on `x`.
    pub output_bias: f64,
    pub skip_gain: f64,
}

impl ModelConfig {
    pub fn new(grid_size: usize, classes: usize, frame_dim: usize, bounds: GeoBounds) -> Self {
        ModelConfig {
            grid_size,
            classes,
            frame_dim,
            conv_channels: vec![16, 32],
            kernel: 3,
            encoder_width: 128,
            embed_width: 32,
            frame_width: 64,
            latent: 32,
            flags: AblationFlags::default(),
            variational: true,
            bounds,
            output_bias: -12.0,
            skip_gain: 20.0,
        }
    }

    pub fn for_variant(mut self, v: Variant) -> Self {
        self.flags = v.flags();
        self.variational = v.variational();
        self
    }

    pub fn context_width(&self) -> usize {
        let f = &self.flags;
        (f.use_time as usize + f.use_gps as usize) * self.embed_width + f.use_frame as usize * self.frame_width
    }

    pub fn cells(&self) -> usize {
        self.grid_size * self.grid_size * self.classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 || self.classes == 0 || self.latent == 0 || self.encoder_width == 0 {
            return Err(Error::Config("model extents must be positive".into()));
        }
        if self.kernel % 2 == 0 || self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config("encoder needs an odd kernel and positive channel counts".into()));
        }
        if self.flags.use_frame && self.frame_dim == 0 {
            return Err(Error::Config("frame branch enabled with zero frame_dim".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

/// Parameters and wiring of one network instance.
#[derive(Clone, Debug)]
pub struct Cadnet<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ParameterStore<T>,
    convs: Vec<Layer>,
    enc_fc: Layer,
    time: Vec<Layer>,
    gps: Vec<Layer>,
    frame: Vec<Layer>,
    mu: Layer,
    sigma: Option<Layer>,
    h2: Layer,
    out: Layer,
}

/// Network inputs for a batch. `x` is what the encoder and main skip see.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchInput<T: Scalar = f32> {
    pub x: Tensor<T>,
    pub time: Tensor<T>,
    pub gps: Tensor<T>,
    pub frame: Tensor<T>,
}

impl<T: Scalar> BatchInput<T> {
    pub fn batch(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn from_samples(samples: &[&Sample], cfg: &ModelConfig) -> Result<Self> {
        let (s, c, f) = (cfg.grid_size, cfg.classes, cfg.frame_dim);
        let n = samples.len();
        let mut x = Vec::with_capacity(n * s * s * c);
        let mut time = Vec::with_capacity(n * 2);
        let mut gps = Vec::with_capacity(n * 2);
        let mut frame = Vec::with_capacity(n * f);
        for smp in samples {
            if smp.grid.size() != s || smp.grid.classes() != c {
                return Err(Error::Shape(alloc::format!(
                    "sample {} grid is {}x{}x{}, model expects {s}x{s}x{c}",
                    smp.id,
                    smp.grid.size(),
                    smp.grid.size(),
                    smp.grid.classes()
                )));
            }
            if smp.context.frame_activation.len() != f {
                return Err(Error::Shape(alloc::format!(
                    "sample {} has {} frame features, model expects {f}",
                    smp.id,
                    smp.context.frame_activation.len()
                )));
            }
            x.extend(smp.grid.values().iter().map(|&v| T::of(v as f64)));
            let (st, ct) = time_features(smp.context.time_of_day);
            time.extend([T::of(st), T::of(ct)]);
            let (la, lo) = gps_features(smp.context.latitude, smp.context.longitude, &cfg.bounds);
            gps.extend([T::of(la), T::of(lo)]);
            frame.extend(smp.context.frame_activation.iter().map(|&v| T::of(v as f64)));
        }
        Ok(BatchInput {
            x: Tensor::new(&[n, s, s, c], x)?,
            time: Tensor::new(&[n, 2], time)?,
            gps: Tensor::new(&[n, 2], gps)?,
            frame: Tensor::new(&[n, f], frame)?,
        })
    }
}

/// `(sin, cos)` of the time of day on the unit circle.
pub fn time_features(seconds: f64) -> (f64, f64) {
    let a = 2.0 * PI * seconds / SECONDS_PER_DAY;
    (num_traits::Float::sin(a), num_traits::Float::cos(a))
}

/// Coordinates min-max scaled to the scenario bounding box.
pub fn gps_features(lat: f64, lon: f64, b: &GeoBounds) -> (f64, f64) {
    ((lat - b.lat_min) / (b.lat_max - b.lat_min), (lon - b.lon_min) / (b.lon_max - b.lon_min))
}

/// Tape handles of every named intermediate.
#[derive(Clone, Copy, Debug)]
pub struct ForwardTrace {
    pub e: NodeId,
    pub c_t: Option<NodeId>,
    pub c_l: Option<NodeId>,
    pub c_f: Option<NodeId>,
    pub c: Option<NodeId>,
    pub d: NodeId,
    pub mu: NodeId,
    pub logvar: Option<NodeId>,
    pub z: NodeId,
    pub h2: NodeId,
    pub h3: NodeId,
    pub logits: NodeId,
    pub x_hat: NodeId,
}

fn uniform_tensor<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect()).expect("shape product")
}

fn add_layer<T: Scalar, R: Rng>(store: &mut ParameterStore<T>, rng: &mut R, name: &str, wshape: &[usize], fan_in: usize) -> Result<Layer> {
    let bound = 1.0 / num_traits::Float::sqrt(fan_in as f64);
    let nout = *wshape.last().expect("non-empty shape");
    let w = store.add(&alloc::format!("{name}.w"), uniform_tensor(rng, wshape, bound))?;
    let b = store.add(&alloc::format!("{name}.b"), uniform_tensor(rng, &[nout], bound))?;
    Ok(Layer { w, b })
}

fn mlp<T: Scalar, R: Rng>(store: &mut ParameterStore<T>, rng: &mut R, prefix: &str, nin: usize, widths: &[usize]) -> Result<Vec<Layer>> {
    let mut out = Vec::new();
    let mut prev = nin;
    for (i, &w) in widths.iter().enumerate() {
        out.push(add_layer(store, rng, &alloc::format!("{prefix}.fc{}", i + 1), &[prev, w], prev)?);
        prev = w;
    }
    Ok(out)
}

impl<T: Scalar> Cadnet<T> {
    /// Builds a network with uniform `+-1/sqrt(fan_in)` initialisation.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let (s, c, k) = (config.grid_size, config.classes, config.kernel);
        let mut convs = Vec::new();
        let mut cin = c;
        for (i, &co) in config.conv_channels.iter().enumerate() {
            convs.push(add_layer(&mut store, &mut rng, &alloc::format!("encoder.conv{}", i + 1), &[k, k, cin, co], k * k * cin)?);
            cin = co;
        }
        let flat = s * s * cin;
        let enc_fc = add_layer(&mut store, &mut rng, "encoder.fc", &[flat, config.encoder_width], flat)?;
        let f = config.flags;
        let ew = config.embed_width;
        let time = if f.use_time { mlp(&mut store, &mut rng, "context.time", 2, &[ew, ew, ew])? } else { Vec::new() };
        let gps = if f.use_gps { mlp(&mut store, &mut rng, "context.gps", 2, &[ew, ew, ew])? } else { Vec::new() };
        let fw = config.frame_width;
        let frame = if f.use_frame { mlp(&mut store, &mut rng, "context.frame", config.frame_dim, &[fw, fw])? } else { Vec::new() };
        let dw = config.encoder_width + config.context_width();
        let mu = add_layer(&mut store, &mut rng, "decoder.mu", &[dw, config.latent], dw)?;
        let sigma =
            if config.variational { Some(add_layer(&mut store, &mut rng, "decoder.sigma", &[dw, config.latent], dw)?) } else { None };
        let zw = config.latent + if f.skip_context { config.context_width() } else { 0 };
        let h2 = add_layer(&mut store, &mut rng, "decoder.h2", &[zw, config.cells()], zw)?;
        let oin = if f.skip_main { 2 * c } else { c };
        let out = add_layer(&mut store, &mut rng, "decoder.outconv", &[k, k, oin, c], k * k * oin)?;
        {
            let bias = store.get_mut(out.b).value.data_mut();
            bias.iter_mut().for_each(|b| *b = T::of(config.output_bias));
        }
        if f.skip_main {
            let centre = (k / 2) * k + k / 2;
            let w = store.get_mut(out.w).value.data_mut();
            for ch in 0..c {
                w[(centre * oin + c + ch) * c + ch] = T::of(config.skip_gain);
            }
        }
        Ok(Cadnet { config, params: store, convs, enc_fc, time, gps, frame, mu, sigma, h2, out })
    }

    /// Copy of the network in another precision.
    pub fn cast<U: Scalar>(&self) -> Cadnet<U> {
        Cadnet {
            config: self.config.clone(),
            params: self.params.cast(),
            convs: self.convs.clone(),
            enc_fc: self.enc_fc,
            time: self.time.clone(),
            gps: self.gps.clone(),
            frame: self.frame.clone(),
            mu: self.mu,
            sigma: self.sigma,
            h2: self.h2,
            out: self.out,
        }
    }

    /// Replaces parameter values from `store`, which must carry the same names and shapes.
    pub fn load_params(&mut self, store: ParameterStore<T>) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Shape(alloc::format!("expected {} parameters, got {}", self.params.len(), store.len())));
        }
        for (mine, theirs) in self.params.iter().zip(store.iter()) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Shape(alloc::format!(
                    "parameter {}: expected shape {:?}, found {} with shape {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
        }
        self.params = store;
        Ok(())
    }

    fn dense(&self, p: &ParameterStore<T>, tape: &mut Tape<T>, x: NodeId, l: Layer, relu: bool) -> Result<NodeId> {
        let w = tape.param(p, l.w)?;
        let b = tape.param(p, l.b)?;
        let y = tape.fc(x, w, b)?;
        if relu {
            tape.relu(y)
        } else {
            Ok(y)
        }
    }

    fn mlp(&self, p: &ParameterStore<T>, tape: &mut Tape<T>, x: NodeId, layers: &[Layer]) -> Result<NodeId> {
        layers.iter().try_fold(x, |h, &l| self.dense(p, tape, h, l, true))
    }

    fn check_store(&self, p: &ParameterStore<T>) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::Shape(alloc::format!("store has {} parameters, network has {}", p.len(), self.params.len())));
        }
        Ok(())
    }

    /// Conv stack, flatten and FC: the encoder feature `e`.
    pub fn encode(&self, tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
        self.encode_with(&self.params, tape, x)
    }

    fn encode_with(&self, p: &ParameterStore<T>, tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
        let s = self.config.grid_size;
        let xs = tape.value(x).shape().to_vec();
        if xs.len() != 4 || xs[1] != s || xs[2] != s || xs[3] != self.config.classes {
            return Err(Error::Config(alloc::format!("encoder input {xs:?}, expected [B, {s}, {s}, {}]", self.config.classes)));
        }
        let mut h = x;
        for &l in &self.convs {
            let k = tape.param(p, l.w)?;
            let b = tape.param(p, l.b)?;
            let y = tape.conv2d(h, k, b, 1, Padding::Same)?;
            h = tape.relu(y)?;
        }
        let flat = tape.value(h).len() / xs[0];
        let h = tape.reshape(h, &[xs[0], flat])?;
        self.dense(p, tape, h, self.enc_fc, true)
    }

    /// Enabled context branches and their concatenation.
    pub fn context(
        &self,
        tape: &mut Tape<T>,
        input: &BatchInput<T>,
    ) -> Result<(Option<NodeId>, Option<NodeId>, Option<NodeId>, Option<NodeId>)> {
        self.context_with(&self.params, tape, input)
    }

    #[allow(clippy::type_complexity)]
    fn context_with(
        &self,
        p: &ParameterStore<T>,
        tape: &mut Tape<T>,
        input: &BatchInput<T>,
    ) -> Result<(Option<NodeId>, Option<NodeId>, Option<NodeId>, Option<NodeId>)> {
        let f = self.config.flags;
        let c_t = if f.use_time {
            let t = tape.input(input.time.clone())?;
            Some(self.mlp(p, tape, t, &self.time)?)
        } else {
            None
        };
        let c_l = if f.use_gps {
            let g = tape.input(input.gps.clone())?;
            Some(self.mlp(p, tape, g, &self.gps)?)
        } else {
            None
        };
        let c_f = if f.use_frame {
            let fr = tape.input(input.frame.clone())?;
            Some(self.mlp(p, tape, fr, &self.frame)?)
        } else {
            None
        };
        let parts: Vec<NodeId> = [c_t, c_l, c_f].into_iter().flatten().collect();
        let c = if parts.is_empty() { None } else { Some(tape.concat(&parts)?) };
        Ok((c_t, c_l, c_f, c))
    }

    /// Latent heads, sampling and reconstruction. `eps = None` means `z = mu`.
    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        e: NodeId,
        c: Option<NodeId>,
        x: NodeId,
        eps: Option<Tensor<T>>,
    ) -> Result<(NodeId, NodeId, Option<NodeId>, NodeId, NodeId, NodeId, NodeId, NodeId)> {
        self.decode_with(&self.params, tape, e, c, x, eps)
    }

    #[allow(clippy::type_complexity)]
    fn decode_with(
        &self,
        p: &ParameterStore<T>,
        tape: &mut Tape<T>,
        e: NodeId,
        c: Option<NodeId>,
        x: NodeId,
        eps: Option<Tensor<T>>,
    ) -> Result<(NodeId, NodeId, Option<NodeId>, NodeId, NodeId, NodeId, NodeId, NodeId)> {
        let cfg = &self.config;
        let batch = tape.value(e).shape()[0];
        let d = match c {
            Some(c) => tape.concat(&[e, c])?,
            None => e,
        };
        let mu = self.dense(p, tape, d, self.mu, false)?;
        let logvar = match self.sigma {
            Some(l) => Some(self.dense(p, tape, d, l, false)?),
            None => None,
        };
        let z = match (logvar, eps) {
            (Some(lv), Some(eps)) => tape.reparameterize(mu, lv, eps)?,
            (None, Some(eps)) if eps.shape() != tape.value(mu).shape() => {
                return Err(Error::Usage(alloc::format!("noise shape {:?} does not match latent", eps.shape())))
            }
            _ => mu,
        };
        let zc = match c {
            Some(c) if cfg.flags.skip_context => tape.concat(&[z, c])?,
            _ => z,
        };
        let h2 = self.dense(p, tape, zc, self.h2, true)?;
        let (s, k) = (cfg.grid_size, cfg.classes);
        let h3 = tape.reshape(h2, &[batch, s, s, k])?;
        let o = if cfg.flags.skip_main { tape.concat(&[h3, x])? } else { h3 };
        let w = tape.param(p, self.out.w)?;
        let b = tape.param(p, self.out.b)?;
        let logits = tape.conv2d(o, w, b, 1, Padding::Same)?;
        let x_hat = tape.sigmoid(logits)?;
        Ok((d, mu, logvar, z, h2, h3, logits, x_hat))
    }

    pub fn forward(&self, tape: &mut Tape<T>, input: &BatchInput<T>, eps: Option<Tensor<T>>) -> Result<ForwardTrace> {
        self.forward_with(&self.params, tape, input, eps)
    }

    /// Forward pass reading parameter values from `p`, a store laid out like `self.params`.
    pub fn forward_with(
        &self,
        p: &ParameterStore<T>,
        tape: &mut Tape<T>,
        input: &BatchInput<T>,
        eps: Option<Tensor<T>>,
    ) -> Result<ForwardTrace> {
        self.check_store(p)?;
        let x = tape.input(input.x.clone())?;
        let e = self.encode_with(p, tape, x)?;
        let (c_t, c_l, c_f, c) = self.context_with(p, tape, input)?;
        let (d, mu, logvar, z, h2, h3, logits, x_hat) = self.decode_with(p, tape, e, c, x, eps)?;
        Ok(ForwardTrace { e, c_t, c_l, c_f, c, d, mu, logvar, z, h2, h3, logits, x_hat })
    }

    /// Cross-entropy against `target` plus `kl_weight` times the KL term, averaged over the batch.
    pub fn loss(&self, tape: &mut Tape<T>, trace: &ForwardTrace, target: &Tensor<T>, kl_weight: f64) -> Result<NodeId> {
        let bce = tape.bce_with_logits(trace.logits, target.clone())?;
        match trace.logvar {
            Some(lv) if kl_weight != 0.0 => {
                let kl = tape.kl(trace.mu, lv)?;
                let kl = tape.scale(kl, T::of(kl_weight))?;
                tape.add(bce, kl)
            }
            _ => Ok(bce),
        }
    }

    /// Standard-normal noise for the latent, or `None` for the deterministic model.
    pub fn sample_noise<R: Rng>(&self, batch: usize, rng: &mut R) -> Option<Tensor<T>> {
        self.sigma?;
        let n = batch * self.config.latent;
        let v = (0..n).map(|_| T::of(rng.sample::<f64, _>(rand_distr::StandardNormal))).collect();
        Some(Tensor::new(&[batch, self.config.latent], v).expect("shape"))
    }

    /// Deterministic reconstruction (`z = mu`), shape `[B, S, S, C]`.
    pub fn reconstruct(&self, input: &BatchInput<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let trace = self.forward(&mut tape, input, None)?;
        Ok(tape.value(trace.x_hat).clone())
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }
}

/// A 4x4 grid, 4 class, 4 frame-feature network with narrow encoder and latent, for gradient checks.
pub fn toy_config() -> ModelConfig {
    let bounds = GeoBounds { lat_min: 0.0, lat_max: 1.0, lon_min: 0.0, lon_max: 1.0 };
    ModelConfig { conv_channels: vec![8, 16], encoder_width: 32, latent: 16, ..ModelConfig::new(4, 4, 4, bounds) }
}

/// A random batch for `cfg`, with roughly a quarter of the grid channels occupied.
pub fn random_batch<T: Scalar, R: Rng>(cfg: &ModelConfig, batch: usize, rng: &mut R) -> BatchInput<T> {
    let cells = cfg.cells();
    let x: Vec<T> =
        (0..batch * cells).map(|_| if rng.random::<f64>() < 0.25 { T::of(rng.random_range(0.5..1.0)) } else { T::zero() }).collect();
    let mut uni = |n: usize| (0..n).map(|_| T::of(rng.random_range(-1.0..1.0))).collect::<Vec<T>>();
    let time = uni(batch * 2);
    let gps = uni(batch * 2);
    let frame = uni(batch * cfg.frame_dim);
    let (s, c) = (cfg.grid_size, cfg.classes);
    BatchInput {
        x: Tensor::new(&[batch, s, s, c], x).expect("shape"),
        time: Tensor::new(&[batch, 2], time).expect("shape"),
        gps: Tensor::new(&[batch, 2], gps).expect("shape"),
        frame: Tensor::new(&[batch, cfg.frame_dim], frame).expect("shape"),
    }
}

/// Finite-difference check of the full loss (cross-entropy plus KL) with frozen noise, in f64.
pub fn gradcheck_network(cfg: ModelConfig, seed: u64, h: f64, tol: f64) -> Result<crate::numerics::GradcheckReport> {
    let mut net = Cadnet::<f64>::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let input = random_batch::<f64, _>(&net.config, 2, &mut rng);
    let eps = net.sample_noise(2, &mut rng);
    let mut store = core::mem::take(&mut net.params);
    let net = Cadnet { params: store.clone(), ..net };
    crate::numerics::gradcheck(&mut store, h, tol, |p| {
        let mut tape = Tape::new();
        let trace = net.forward_with(p, &mut tape, &input, eps.clone())?;
        let loss = net.loss(&mut tape, &trace, &input.x, 1.0)?;
        Ok((tape, loss))
    })
}
