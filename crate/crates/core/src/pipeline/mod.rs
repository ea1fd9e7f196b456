//! From claim files to a [`Dataset`](crate::Dataset) with features.

pub mod encode;
pub mod features;
pub mod ingest;
pub mod truth;

pub use encode::{one_hot_encode, one_hot_encode_with, EncodeOptions, EncodingManifest, GroupKey, NegativePolicy, StatementKey};
pub use features::{apply_frozen, compute_features, FeatureKind, FeatureRecipe, FrozenRecipe};
pub use ingest::{ingest, ClaimFormat, RawClaimRow};
pub use truth::{load_ground_truth, GroundTruth};
