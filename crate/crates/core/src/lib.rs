pub mod adversary;
pub mod audio;
pub mod crypto;
pub mod enclave;
pub mod fixtures;
pub mod inference;
pub mod modelstore;
pub mod protocol;
mod scalar;
pub mod tlv;

pub use scalar::Scalar;

pub type TinyConvModelF32 = inference::TinyConvModel<f32>;
pub type TinyConvModelF64 = inference::TinyConvModel<f64>;
pub type FeatureMapF32 = inference::FeatureMap<f32>;
pub type FeatureMapF64 = inference::FeatureMap<f64>;
pub type LogitsF32 = inference::Logits<f32>;
pub type LogitsF64 = inference::Logits<f64>;
