//! End-to-end autoencoder link: one-hot message → encoder MLP → block power
//! normalization → 3-tap block-fading channel → decoder MLP → logits.
//!
//! Complex blocks are carried as interleaved `(re, im)` real vectors. Fading
//! taps and noise are constants of each draw, so the loss is differentiable in
//! the concatenated `encoder ++ decoder` parameter vector.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;

use super::{argmax, forward_raw, init_params, Activation, Architecture, MlpGraph, ParamVector};
use crate::autodiff::{Graph, LossFn, NodeId, Scalar};
use crate::channel::{self, ChannelRealization, ComplexSymbol, BLOCK_TAPS};
use crate::error::{Error, Result};

/// Block and network sizes of the autoencoder link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AutoencoderSpec {
    pub messages: usize,
    pub channel_uses: usize,
    pub taps: usize,
    pub hidden: usize,
}

impl Default for AutoencoderSpec {
    /// 16 messages over 8 complex channel uses, 3 taps, 32 hidden units.
    fn default() -> Self {
        AutoencoderSpec {
            messages: 16,
            channel_uses: 8,
            taps: BLOCK_TAPS,
            hidden: 32,
        }
    }
}

impl AutoencoderSpec {
    pub fn received_len(&self) -> usize {
        self.channel_uses + self.taps - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    pub encoder: Arc<Architecture>,
    pub decoder: Arc<Architecture>,
}

impl Autoencoder {
    pub fn new(spec: AutoencoderSpec) -> Result<Self> {
        if spec.taps != BLOCK_TAPS {
            return Err(Error::config(format!(
                "autoencoder profile uses {BLOCK_TAPS} channel taps, got {}",
                spec.taps
            )));
        }
        if spec.messages < 2 || spec.channel_uses == 0 || spec.hidden == 0 {
            return Err(Error::config("autoencoder needs ≥2 messages and positive sizes"));
        }
        let encoder = Architecture::mlp(&[spec.messages, spec.hidden, 2 * spec.channel_uses], Activation::Tanh)?;
        let decoder = Architecture::mlp(&[2 * spec.received_len(), spec.hidden, spec.messages], Activation::Tanh)?;
        Ok(Autoencoder {
            spec,
            encoder: Arc::new(encoder),
            decoder: Arc::new(decoder),
        })
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params()
    }

    /// Fresh encoder and decoder, concatenated.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut v = init_params(&self.encoder, seed).into_values();
        v.extend(init_params(&self.decoder, seed.wrapping_add(1)).into_values());
        v
    }

    /// Splits a concatenated parameter vector.
    pub fn split(&self, params: &[f64]) -> Result<(ParamVector, ParamVector)> {
        if params.len() != self.num_params() {
            return Err(Error::config(format!(
                "{} autoencoder parameters, expected {}",
                params.len(),
                self.num_params()
            )));
        }
        let (e, d) = params.split_at(self.encoder.num_params());
        Ok((
            ParamVector::new(self.encoder.clone(), e.to_vec())?,
            ParamVector::new(self.decoder.clone(), d.to_vec())?,
        ))
    }

    pub fn join(&self, enc: &ParamVector, dec: &ParamVector) -> Result<Vec<f64>> {
        if enc.arch() != &self.encoder || dec.arch() != &self.decoder {
            return Err(Error::config("encoder/decoder architecture mismatch"));
        }
        let mut v = enc.values().to_vec();
        v.extend_from_slice(dec.values());
        Ok(v)
    }

    fn one_hot(&self, message: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.spec.messages];
        x[message] = 1.0;
        x
    }

    /// Power-normalized transmit block of `message`.
    pub fn encode(&self, enc: &[f64], message: usize) -> Vec<ComplexSymbol> {
        let raw = forward_raw(&self.encoder, enc, &self.one_hot(message));
        to_complex(&power_normalize(&raw))
    }

    /// Decoder logits for a received block.
    pub fn decode(&self, dec: &[f64], received: &[ComplexSymbol]) -> Vec<f64> {
        forward_raw(&self.decoder, dec, &to_reals(received))
    }

    fn check_message(&self, message: usize) -> Result<()> {
        if message >= self.spec.messages {
            return Err(Error::config(format!("message {message} out of range")));
        }
        Ok(())
    }

    fn check_channel(&self, taps: &[ComplexSymbol]) -> Result<()> {
        if taps.len() != self.spec.taps {
            return Err(Error::config(format!(
                "channel has {} taps, autoencoder profile expects {}",
                taps.len(),
                self.spec.taps
            )));
        }
        Ok(())
    }
}

/// Scales a real vector of interleaved complex symbols so that the mean
/// per-symbol power `(1/n)Σ|s_i|²` is 1.
pub fn power_normalize(reals: &[f64]) -> Vec<f64> {
    let n = reals.len() as f64 / 2.0;
    let energy: f64 = reals.iter().map(|x| x * x).sum();
    let scale = (n / energy).sqrt();
    reals.iter().map(|x| x * scale).collect()
}

pub fn to_complex(reals: &[f64]) -> Vec<ComplexSymbol> {
    reals.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

pub fn to_reals(symbols: &[ComplexSymbol]) -> Vec<f64> {
    symbols.iter().flat_map(|s| [s.re, s.im]).collect()
}

/// Encoder → normalization → channel (noise drawn from `rng`) → decoder.
pub fn autoencoder_forward<R: Rng + ?Sized>(
    ae: &Autoencoder,
    enc: &ParamVector,
    dec: &ParamVector,
    message: usize,
    channel: &ChannelRealization,
    rng: &mut R,
) -> Result<Vec<f64>> {
    ae.check_message(message)?;
    ae.check_channel(&channel.taps)?;
    if enc.arch() != &ae.encoder || dec.arch() != &ae.decoder {
        return Err(Error::config("encoder/decoder architecture mismatch"));
    }
    let x = ae.encode(enc.values(), message);
    let y = channel::apply_channel_block(&x, channel, rng)?;
    Ok(ae.decode(dec.values(), &y))
}

/// Message and noise of one transmitted block; the taps come from the task.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDraw {
    pub message: usize,
    pub noise: Vec<ComplexSymbol>,
}

impl BlockDraw {
    /// Draws a uniform message and the block's noise, in that order.
    pub fn sample<R: Rng + ?Sized>(spec: &AutoencoderSpec, snr_db: f64, rng: &mut R) -> Self {
        let message = rng.random_range(0..spec.messages);
        let noise = channel::block_noise(spec.received_len(), snr_db, rng);
        BlockDraw { message, noise }
    }
}

/// Decodes one drawn block and reports the decided message.
pub fn decide(ae: &Autoencoder, params: &[f64], taps: &[ComplexSymbol], draw: &BlockDraw) -> usize {
    let (enc, dec) = params.split_at(ae.encoder.num_params());
    let x = ae.encode(enc, draw.message);
    let mut y = channel::convolve(&x, taps);
    for (yi, ni) in y.iter_mut().zip(&draw.noise) {
        *yi += ni;
    }
    argmax(&ae.decode(dec, &y))
}

/// Mean cross-entropy of the end-to-end link over a batch of draws on one
/// channel, differentiable in the concatenated encoder and decoder.
#[derive(Clone, Debug)]
pub struct AutoencoderLoss {
    pub ae: Arc<Autoencoder>,
    pub taps: Vec<ComplexSymbol>,
    pub draws: Arc<Vec<BlockDraw>>,
}

impl LossFn for AutoencoderLoss {
    fn num_params(&self) -> usize {
        self.ae.num_params()
    }

    fn check(&self) -> Result<()> {
        self.ae.check_channel(&self.taps)?;
        if self.draws.is_empty() {
            return Err(Error::config("empty block batch"));
        }
        for d in self.draws.iter() {
            self.ae.check_message(d.message)?;
            if d.noise.len() != self.ae.spec.received_len() {
                return Err(Error::config("noise length does not match the received block"));
            }
        }
        Ok(())
    }

    fn build<S: Scalar>(&self, g: &mut Graph<S>, params: NodeId) -> NodeId {
        let spec = &self.ae.spec;
        let enc = MlpGraph::new(g, &self.ae.encoder, params, 0);
        let dec = MlpGraph::new(g, &self.ae.decoder, params, self.ae.encoder.num_params());
        let conv = g.constant(&channel::convolution_matrix(&self.taps, spec.channel_uses));
        let inv_n = g.constant(&[1.0 / spec.channel_uses as f64]);
        let rows = 2 * spec.received_len();
        let cols = 2 * spec.channel_uses;

        // the noiseless channel output depends only on the message
        let mut received: Vec<Option<NodeId>> = vec![None; spec.messages];
        let terms: Vec<NodeId> = self
            .draws
            .iter()
            .map(|d| {
                let clean = *received[d.message].get_or_insert_with(|| {
                    let x = g.constant(&self.ae.one_hot(d.message));
                    let s = enc.forward(g, x);
                    let sq = g.mul(s, s);
                    let energy = g.sum(sq);
                    let mean_power = g.scale(energy, inv_n);
                    let r = g.rsqrt(mean_power);
                    let tx = g.scale(s, r);
                    g.matvec(conv, tx, rows, cols)
                });
                let noise = g.constant(&to_reals(&d.noise));
                let y = g.add(clean, noise);
                let z = dec.forward(g, y);
                g.softmax_xent(z, d.message)
            })
            .collect();
        g.mean(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::eval_with_gradient;
    use crate::channel::Nonideality;
    use crate::rng::seeded;

    #[test]
    fn default_sizes() {
        let ae = Autoencoder::new(AutoencoderSpec::default()).unwrap();
        assert_eq!(ae.encoder.input_dim(), 16);
        assert_eq!(ae.encoder.output_dim(), 16);
        assert_eq!(ae.decoder.input_dim(), 20);
        assert_eq!(ae.decoder.output_dim(), 16);
        let bad = AutoencoderSpec {
            taps: 2,
            ..AutoencoderSpec::default()
        };
        assert!(Autoencoder::new(bad).is_err());
    }

    #[test]
    fn normalized_block_has_unit_power() {
        let ae = Autoencoder::new(AutoencoderSpec::default()).unwrap();
        let p = ae.init(3);
        for m in 0..16 {
            let s = ae.encode(&p[..ae.encoder.num_params()], m);
            let power = s.iter().map(|x| x.norm_sqr()).sum::<f64>() / s.len() as f64;
            assert!((power - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_drawn_block_path() {
        let ae = Autoencoder::new(AutoencoderSpec::default()).unwrap();
        let p = ae.init(5);
        let (enc, dec) = ae.split(&p).unwrap();
        let taps = channel::rayleigh_taps(3, &mut seeded(1));
        let ch = ChannelRealization::new(taps.clone(), 10.0, Nonideality::default());
        let mut r1 = seeded(77);
        let via_forward = autoencoder_forward(&ae, &enc, &dec, 4, &ch, &mut r1).unwrap();
        let mut r2 = seeded(77);
        let noise = channel::block_noise(10, 10.0, &mut r2);
        let mut y = channel::convolve(&ae.encode(enc.values(), 4), &taps);
        for (a, b) in y.iter_mut().zip(&noise) {
            *a += b;
        }
        assert_eq!(via_forward, ae.decode(dec.values(), &y));
    }

    #[test]
    fn wrong_tap_count_is_rejected() {
        let ae = Autoencoder::new(AutoencoderSpec::default()).unwrap();
        let (enc, dec) = ae.split(&ae.init(0)).unwrap();
        let ch = ChannelRealization::new(vec![Complex64::new(1.0, 0.0)], 10.0, Nonideality::default());
        assert!(autoencoder_forward(&ae, &enc, &dec, 0, &ch, &mut seeded(0)).is_err());
    }

    #[test]
    fn graph_loss_matches_plain_forward() {
        let ae = Arc::new(Autoencoder::new(AutoencoderSpec::default()).unwrap());
        let p = ae.init(9);
        let mut rng = seeded(2);
        let taps = channel::rayleigh_taps(3, &mut rng);
        let draws: Vec<BlockDraw> = (0..12).map(|_| BlockDraw::sample(&ae.spec, 5.0, &mut rng)).collect();
        let (enc, dec) = p.split_at(ae.encoder.num_params());
        let direct: f64 = draws
            .iter()
            .map(|d| {
                let mut y = channel::convolve(&ae.encode(enc, d.message), &taps);
                for (a, b) in y.iter_mut().zip(&d.noise) {
                    *a += b;
                }
                let z = ae.decode(dec, &y);
                -crate::nn::softmax(&z)[d.message].ln()
            })
            .sum::<f64>()
            / 12.0;
        let loss = AutoencoderLoss {
            ae: ae.clone(),
            taps,
            draws: Arc::new(draws),
        };
        let r = eval_with_gradient(&loss, &p).unwrap();
        assert!((r.value - direct).abs() < 1e-12, "{} vs {direct}", r.value);
    }
}
