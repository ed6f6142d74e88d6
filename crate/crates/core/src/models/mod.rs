//! The visual encoder, classification head, domain head and adversarial mask
//! generator, plus their checkpoint format.

mod bundle;
pub mod checkpoint;
mod encoder;
mod heads;
mod layers;
mod mask;
mod params;
mod unet;

pub use bundle::{BoundBundle, ModelBundle, ModelConfig, Net};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoder::{Encoder, EncoderConfig};
pub use heads::{domain_logit_bound, ClassifierHead, DomainHead, DOMAIN_EPS};
pub use layers::{Conv, LayerNorm, Linear, INIT_STD};
pub use mask::{
    apply_mask, apply_mask_field, normalize_logits, MaskField, MaskGenerator, MaskOutput, DEFAULT_KEEP_RATIO,
};
pub use params::{trunc_normal, Bound, ParamId, ParamSet};
pub use unet::{UNet, UNetConfig};
