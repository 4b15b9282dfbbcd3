//! Bundle files and the synthetic graph generator.

mod bundle;
mod synthetic;

pub use bundle::{
    load_bundle, load_bundle_with, read_bundle, save_bundle, BundleError, GraphBundle, Manifest, EDGES_FILE,
    FORMAT_VERSION, MANIFEST_FILE, NODES_FILE,
};
pub use synthetic::{
    generate_synthetic, generate_with_state, HiddenState, SyntheticConfig, SyntheticConfigError, VocabularyModel,
};
