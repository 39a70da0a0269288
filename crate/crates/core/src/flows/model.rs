//! Multi-scale flow: per level a squeeze, `depth` steps of actnorm → invertible convolution →
//! coupling, and a split on every level but the last.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::actnorm::ActNorm;
use super::config::{ConvKind, ModelSpec};
use super::coupling::Coupling;
use super::emerging::Emerging;
use super::inv1x1::Inv1x1;
use super::layer::{Bijection, Direction, TapeLogdet};
use super::multiscale::{Split, Squeeze};
use super::params::ParamStore;
use super::periodic::Periodic;
use crate::autodiff::{Tape, Tensor, Var};
use crate::convkit::Tensor4;
use crate::error::{Error, Result};

/// `ln 256`: the per-dimension Jacobian of mapping `[0, 256)` to `[0, 1)`.
pub const LN_256: f64 = 8.0 * LN_2;

#[derive(Clone, Debug)]
pub enum FlowLayer {
    ActNorm(ActNorm),
    Coupling(Coupling),
    Inv1x1(Inv1x1),
    Emerging(Emerging),
    Periodic(Periodic),
    Squeeze(Squeeze),
    Split(Split),
}

impl FlowLayer {
    pub fn name(&self) -> &'static str {
        match self {
            FlowLayer::ActNorm(_) => "actnorm",
            FlowLayer::Coupling(_) => "coupling",
            FlowLayer::Inv1x1(_) => "inv1x1",
            FlowLayer::Emerging(_) => "emerging",
            FlowLayer::Periodic(_) => "periodic",
            FlowLayer::Squeeze(_) => "squeeze",
            FlowLayer::Split(_) => "split",
        }
    }

    /// The bijection behind every layer except [`FlowLayer::Split`].
    pub fn bijection(&self) -> Option<&dyn Bijection> {
        match self {
            FlowLayer::ActNorm(l) => Some(l),
            FlowLayer::Coupling(l) => Some(l),
            FlowLayer::Inv1x1(l) => Some(l),
            FlowLayer::Emerging(l) => Some(l),
            FlowLayer::Periodic(l) => Some(l),
            FlowLayer::Squeeze(l) => Some(l),
            FlowLayer::Split(_) => None,
        }
    }
}

/// Values of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub z: Tensor4,
    /// Factored-out halves, in the order the splits occur.
    pub latents: Vec<Tensor4>,
    /// Sum of layer log-Jacobians per example.
    pub logdet: Vec<f64>,
    /// Log density of all latents under the prior per example.
    pub log_pz: Vec<f64>,
}

impl ForwardPass {
    /// `log p(x)` per example, on the scale the model was applied to.
    pub fn log_prob(&self) -> Vec<f64> {
        self.logdet.iter().zip(&self.log_pz).map(|(a, b)| a + b).collect()
    }
}

/// Variables of a recorded forward pass.
#[derive(Clone, Debug)]
pub struct RecordedPass {
    pub z: Var,
    pub latents: Vec<Var>,
    /// `[n]`
    pub logdet: Var,
    /// `[n]`
    pub log_pz: Var,
    /// `[n]`, `logdet + log_pz`.
    pub log_prob: Var,
}

#[derive(Clone, Debug)]
pub struct FlowModel {
    spec: ModelSpec,
    store: ParamStore,
    layers: Vec<FlowLayer>,
}

/// `(x_int + u) / 256`, checking that pixels are integers in `0..=255`.
pub fn dequantize(x_int: &Tensor4, noise: &Tensor4) -> Result<Tensor4> {
    if x_int.shape() != noise.shape() {
        return Err(Error::shape("dequantization noise does not match the images"));
    }
    check_pixels(x_int)?;
    let mut x = x_int.clone();
    for (v, u) in x.data_mut().iter_mut().zip(noise.data()) {
        *v = (*v + u) / 256.0;
    }
    Ok(x)
}

pub(crate) fn check_pixels(x_int: &Tensor4) -> Result<()> {
    for &v in x_int.data() {
        if !(0.0..=255.0).contains(&v) {
            return Err(if v.is_finite() && v >= 0.0 {
                Error::PixelRange { value: v as u32 }
            } else {
                Error::invalid(format!("pixel value {v} is not in 0..=255"))
            });
        }
        if v.fract() != 0.0 {
            return Err(Error::invalid(format!("pixel value {v} is not an integer")));
        }
    }
    Ok(())
}

/// Uniform `[0, 1)` noise of the given shape.
pub fn uniform_noise(n: usize, c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor4 {
    Tensor4::from_fn(n, c, h, w, |_, _, _, _| rng.random::<f64>())
}

/// Clamps to `[0, 1)` and maps to integer levels `0..=255`.
pub fn quantize(x: &Tensor4) -> Tensor4 {
    let mut q = x.clone();
    for v in q.data_mut() {
        *v = if v.is_nan() { 0.0 } else { (*v * 256.0).floor().clamp(0.0, 255.0) };
    }
    q
}

/// Bits per dimension from a log density on the `[0, 1)` scale.
pub fn bits_per_dim_from_log_prob(log_prob: f64, dims: usize) -> f64 {
    let d = dims as f64;
    -(log_prob - d * LN_256) / (d * LN_2)
}

impl FlowModel {
    /// Builds the layer stack and draws the initial parameters from `spec.seed`.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let mut c = spec.channels;
        for level in 0..spec.levels {
            layers.push(FlowLayer::Squeeze(Squeeze));
            c *= 4;
            for step in 0..spec.depth {
                let prefix = format!("l{level}.s{step}");
                layers.push(FlowLayer::ActNorm(ActNorm::new(&mut store, &format!("{prefix}.actnorm"), c)));
                let cp = format!("{prefix}.conv");
                layers.push(match spec.conv {
                    ConvKind::W1x1 => FlowLayer::Inv1x1(Inv1x1::plain(&mut store, &cp, c, &mut rng)),
                    ConvKind::Plu => FlowLayer::Inv1x1(Inv1x1::plu(&mut store, &cp, c, &mut rng)?),
                    ConvKind::Qr { reflections } => {
                        FlowLayer::Inv1x1(Inv1x1::qr(&mut store, &cp, c, reflections.unwrap_or(c), &mut rng))
                    }
                    ConvKind::Emerging { kernel } => {
                        FlowLayer::Emerging(Emerging::new(&mut store, &cp, c, kernel, &mut rng)?)
                    }
                    ConvKind::Periodic { kernel } => {
                        FlowLayer::Periodic(Periodic::new(&mut store, &cp, c, kernel, &mut rng)?)
                    }
                });
                layers.push(FlowLayer::Coupling(Coupling::new(
                    &mut store,
                    &format!("{prefix}.coupling"),
                    c,
                    spec.coupling_width,
                    &mut rng,
                )?));
            }
            if level + 1 < spec.levels {
                layers.push(FlowLayer::Split(Split::new(&mut store, &format!("l{level}.split"), c)?));
                c /= 2;
            }
        }
        Ok(FlowModel { spec, store, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layers(&self) -> &[FlowLayer] {
        &self.layers
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.store.trainable_len()
    }

    /// Shapes `(c, h, w)` of the factored latents and, last, of the final `z`.
    pub fn latent_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (self.spec.channels, self.spec.height, self.spec.width);
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                FlowLayer::Squeeze(_) => {
                    c *= 4;
                    h /= 2;
                    w /= 2;
                }
                FlowLayer::Split(_) => {
                    c /= 2;
                    out.push((c, h, w));
                }
                _ => {}
            }
        }
        out.push((c, h, w));
        out
    }

    pub fn is_initialized(&self) -> bool {
        self.layers.iter().all(|l| match l {
            FlowLayer::ActNorm(a) => a.is_initialized(&self.store),
            _ => true,
        })
    }

    /// Data-dependent initialization of every actnorm that is not yet initialized, using the
    /// activations of the (dequantized) batch `x`.
    pub fn initialize(&mut self, x: &Tensor4) -> Result<()> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if let FlowLayer::ActNorm(a) = layer {
                if !a.is_initialized(&self.store) {
                    a.initialize(&mut self.store, &h).map_err(Error::at_layer(i))?;
                }
            }
            h = match layer {
                FlowLayer::Split(s) => s.forward(&self.store, &h).map_err(Error::at_layer(i))?.kept,
                other => {
                    let b = other.bijection().expect("non-split layers are bijections");
                    b.apply(&self.store, &h, Direction::Forward).map_err(Error::at_layer(i))?.0
                }
            };
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let (_, c, h, w) = x.shape();
        if (c, h, w) != (self.spec.channels, self.spec.height, self.spec.width) {
            return Err(Error::shape(format!(
                "model expects {}x{}x{} images, got {c}x{h}x{w}",
                self.spec.channels, self.spec.height, self.spec.width
            )));
        }
        Ok(())
    }

    /// Records the forward pass of `x` on `tape` with parameters `p` (from
    /// [`ParamStore::bind`] or [`ParamStore::bind_constants`]).
    pub fn record(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<RecordedPass> {
        let n = tape.value(x).dims4()?.0;
        let mut h = x;
        let mut shared: Option<Var> = None;
        let mut per_example: Option<Var> = None;
        let mut latents = Vec::new();
        let mut log_pz: Option<Var> = None;
        fn acc(tape: &mut Tape, total: &mut Option<Var>, v: Var) -> Result<()> {
            *total = Some(match *total {
                Some(t) => tape.add(t, v)?,
                None => v,
            });
            Ok(())
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                FlowLayer::Split(s) => {
                    let (kept, factored, lp) = s.record(tape, p, h).map_err(Error::at_layer(i))?;
                    latents.push(factored);
                    acc(tape, &mut log_pz, lp)?;
                    h = kept;
                }
                other => {
                    let b = other.bijection().expect("non-split layers are bijections");
                    let (y, ld) = b.record(tape, p, h).map_err(Error::at_layer(i))?;
                    match ld {
                        TapeLogdet::Zero => {}
                        TapeLogdet::Shared(v) => acc(tape, &mut shared, v)?,
                        TapeLogdet::PerExample(v) => acc(tape, &mut per_example, v)?,
                    }
                    h = y;
                }
            }
        }
        let lp = tape.gaussian_log_prob(h, None, None)?;
        acc(tape, &mut log_pz, lp)?;
        let log_pz = log_pz.expect("set above");

        let mut logdet = match shared {
            Some(s) => Some(tape.expand(s, n)?),
            None => None,
        };
        if let Some(pe) = per_example {
            acc(tape, &mut logdet, pe)?;
        }
        let logdet = match logdet {
            Some(l) => l,
            None => tape.constant(Tensor::zeros(&[n])),
        };
        let log_prob = tape.add(logdet, log_pz)?;
        Ok(RecordedPass { z: h, latents, logdet, log_pz, log_prob })
    }

    /// Forward pass of continuous inputs on the `[0, 1)` scale.
    pub fn forward(&self, x: &Tensor4) -> Result<ForwardPass> {
        self.check_input(x)?;
        if !self.is_initialized() {
            return Err(Error::Uninitialized);
        }
        let mut tape = Tape::new();
        let p = self.store.bind_constants(&mut tape);
        let xv = tape.constant(Tensor::from(x));
        let r = self.record(&mut tape, &p, xv)?;
        Ok(ForwardPass {
            z: tape.value(r.z).to_tensor4()?,
            latents: r.latents.iter().map(|v| tape.value(*v).to_tensor4()).collect::<Result<_>>()?,
            logdet: tape.value(r.logdet).data().to_vec(),
            log_pz: tape.value(r.log_pz).data().to_vec(),
        })
    }

    /// `log p(x)` per example for continuous `x`.
    pub fn log_prob(&self, x: &Tensor4) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.log_prob())
    }

    /// Bits per dimension of integer images under the given dequantization noise.
    pub fn bits_per_dim_with_noise(&self, x_int: &Tensor4, noise: &Tensor4) -> Result<Vec<f64>> {
        let x = dequantize(x_int, noise)?;
        let dims = self.spec.dims();
        Ok(self.log_prob(&x)?.into_iter().map(|lp| bits_per_dim_from_log_prob(lp, dims)).collect())
    }

    /// Bits per dimension with fresh uniform dequantization noise from `rng`.
    pub fn bits_per_dim(&self, x_int: &Tensor4, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let (n, c, h, w) = x_int.shape();
        self.bits_per_dim_with_noise(x_int, &uniform_noise(n, c, h, w, rng))
    }

    /// Records the mean bits/dim of the continuous batch `x`; returns the loss and the
    /// bound parameter variables.
    pub fn record_loss(&self, tape: &mut Tape, x: &Tensor4) -> Result<(Var, Vec<Var>)> {
        self.check_input(x)?;
        let p = self.store.bind(tape);
        let xv = tape.constant(Tensor::from(x));
        let r = self.record(tape, &p, xv)?;
        let total = tape.sum(r.log_prob)?;
        let d = self.spec.dims() as f64;
        let n = x.batch() as f64;
        let scaled = tape.scale(total, -1.0 / (n * d * LN_2))?;
        let loss = tape.add_scalar(scaled, LN_256 / LN_2)?;
        Ok((loss, p))
    }

    /// Maps latents back to data space.
    pub fn inverse(&self, z: &Tensor4, latents: &[Tensor4]) -> Result<Tensor4> {
        let mut remaining = latents.len();
        self.inverse_impl(z, |i, kept, split| {
            if remaining == 0 {
                return Err(Error::MissingLatent { index: i });
            }
            remaining -= 1;
            split.inverse(kept, &latents[remaining])
        })
    }

    /// Draws `n` continuous samples with every prior scaled by `temperature`.
    pub fn sample(&self, n: usize, temperature: f64, rng: &mut impl Rng) -> Result<Tensor4> {
        let &(c, h, w) = self.latent_shapes().last().expect("final latent");
        let z = Tensor4::from_fn(n, c, h, w, |_, _, _, _| temperature * rng.sample::<f64, _>(StandardNormal));
        let store = &self.store;
        self.inverse_impl(&z, |_, kept, split| split.sample(store, kept, temperature, rng))
    }

    fn inverse_impl(
        &self,
        z: &Tensor4,
        mut on_split: impl FnMut(usize, &Tensor4, &Split) -> Result<Tensor4>,
    ) -> Result<Tensor4> {
        if !self.is_initialized() {
            return Err(Error::Uninitialized);
        }
        let mut h = z.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            h = match layer {
                FlowLayer::Split(s) => on_split(i, &h, s).map_err(Error::at_layer(i))?,
                other => {
                    let b = other.bijection().expect("non-split layers are bijections");
                    b.apply(&self.store, &h, Direction::Inverse).map_err(Error::at_layer(i))?.0
                }
            };
        }
        Ok(h)
    }
}
