use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderConfig};
use super::heads::{ClassifierHead, DomainHead};
use super::mask::{MaskField, MaskGenerator};
use super::params::{Bound, ParamSet};
use super::unet::UNetConfig;
use crate::error::{Error, Result};
use crate::tensor::{AdamW, AdamWConfig, OptimizerState, Real, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub unet: UNetConfig,
    pub classes: usize,
    pub domain_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            unet: UNetConfig::default(),
            classes: 8,
            domain_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.unet.validate()?;
        self.unet.check_extents(self.encoder.height, self.encoder.width)?;
        if self.unet.in_channels != self.encoder.channels {
            return Err(Error::Config(format!(
                "unet in_channels {} != encoder channels {}",
                self.unet.in_channels, self.encoder.channels
            )));
        }
        if self.classes < 2 || self.domain_hidden == 0 {
            return Err(Error::Config("need at least two classes and a non-empty domain head".into()));
        }
        Ok(())
    }
}

/// The four networks of the method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Net {
    Encoder,
    Classifier,
    Domain,
    Generator,
}

impl Net {
    pub const ALL: [Net; 4] = [Net::Encoder, Net::Classifier, Net::Domain, Net::Generator];

    pub fn name(self) -> &'static str {
        match self {
            Net::Encoder => "encoder",
            Net::Classifier => "classifier",
            Net::Domain => "domain",
            Net::Generator => "generator",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Parameters of all four networks bound to one tape.
pub struct BoundBundle<'t, T: Real> {
    pub encoder: Bound<'t, T>,
    pub classifier: Bound<'t, T>,
    pub domain: Bound<'t, T>,
    pub generator: Bound<'t, T>,
}

impl<'t, T: Real> BoundBundle<'t, T> {
    pub fn get(&self, net: Net) -> &Bound<'t, T> {
        match net {
            Net::Encoder => &self.encoder,
            Net::Classifier => &self.classifier,
            Net::Domain => &self.domain,
            Net::Generator => &self.generator,
        }
    }
}

/// Networks, their parameters, and one optimizer state per network.
#[derive(Clone, Debug)]
pub struct ModelBundle<T> {
    config: ModelConfig,
    pub encoder: Encoder,
    pub classifier: ClassifierHead,
    pub domain: DomainHead,
    pub generator: MaskGenerator,
    params: [ParamSet<T>; 4],
    optim: [OptimizerState<T>; 4],
    /// Names of the training stages this bundle has been through, in order.
    pub stages: Vec<String>,
}

impl<T: Real> ModelBundle<T> {
    pub fn new(config: ModelConfig, optimizer: AdamWConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: [ParamSet<T>; 4] = Default::default();
        let encoder = Encoder::new(config.encoder.clone(), &mut params[0], &mut rng)?;
        let classifier =
            ClassifierHead::new(&mut params[1], &mut rng, config.encoder.embed_dim, config.classes);
        let domain = DomainHead::new(&mut params[2], &mut rng, config.encoder.embed_dim, config.domain_hidden);
        let generator = MaskGenerator::new(config.unet.clone(), &mut params[3], &mut rng)?;
        let optim = std::array::from_fn(|i| AdamW::init(optimizer, params[i].tensors()));
        Ok(Self {
            config,
            encoder,
            classifier,
            domain,
            generator,
            params,
            optim,
            stages: Vec::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self, net: Net) -> &ParamSet<T> {
        &self.params[net.index()]
    }

    pub fn params_mut(&mut self, net: Net) -> &mut ParamSet<T> {
        &mut self.params[net.index()]
    }

    pub fn optim(&self, net: Net) -> &OptimizerState<T> {
        &self.optim[net.index()]
    }

    pub fn optim_mut(&mut self, net: Net) -> &mut OptimizerState<T> {
        &mut self.optim[net.index()]
    }

    /// Sets the learning rate of every optimizer state.
    pub fn set_optimizer(&mut self, config: AdamWConfig) {
        for st in &mut self.optim {
            st.config = config;
        }
    }

    /// Replaces every optimizer state with a fresh one (zero moments, step 0).
    pub fn reset_optimizer(&mut self, config: AdamWConfig) {
        for (st, ps) in self.optim.iter_mut().zip(&self.params) {
            *st = AdamW::init(config, ps.tensors());
        }
    }

    /// Binds every network; only those listed in `trainable` track gradients.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: &[Net]) -> BoundBundle<'t, T> {
        let b = |n: Net| self.params(n).bind(tape, trainable.contains(&n));
        BoundBundle {
            encoder: b(Net::Encoder),
            classifier: b(Net::Classifier),
            domain: b(Net::Domain),
            generator: b(Net::Generator),
        }
    }

    /// Applies one AdamW update to `net`.
    pub fn step(&mut self, net: Net, grads: &[Option<Tensor<T>>]) -> Result<()> {
        let i = net.index();
        AdamW::step(&mut self.optim[i], self.params[i].tensors_mut(), grads)
    }

    /// Per-network hashes of all parameter bits.
    pub fn fingerprints(&self) -> [u64; 4] {
        std::array::from_fn(|i| self.params[i].fingerprint())
    }

    /// Features for `[b, t, c, h, w]` clips, without gradient tracking.
    pub fn encode(&self, clips: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.params(Net::Encoder).bind(&tape, false);
        Ok(self.encoder.forward(&p, tape.constant(clips.clone()))?.to_tensor())
    }

    /// Class logits for `[b, dim]` features.
    pub fn classify(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.params(Net::Classifier).bind(&tape, false);
        Ok(self.classifier.forward(&p, tape.constant(features.clone()))?.to_tensor())
    }

    /// Source probability for `[b, dim]` features.
    pub fn discriminate_domain(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.params(Net::Domain).bind(&tape, false);
        Ok(self.domain.probability(&p, tape.constant(features.clone()))?.to_tensor())
    }

    /// Mask for a single `[t, c, h, w]` clip.
    pub fn generate_mask(&self, clip: &Tensor<T>, keep_ratio: f64) -> Result<MaskField<T>> {
        self.generator.generate(self.params(Net::Generator), clip, keep_ratio)
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [ParamSet<T>; 4], &mut [OptimizerState<T>; 4]) {
        (&mut self.params, &mut self.optim)
    }
}
