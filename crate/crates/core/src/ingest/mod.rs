//! File formats and synthetic inputs.

mod dataset;
mod docs;
mod synth;

pub use dataset::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use docs::{
    from_versioned_str, load_doc, load_model, save_doc, to_versioned_string, PlanDoc,
    SCHEMA_VERSION,
};
pub use synth::{generate_dataset, SynthDistribution, SYNTH_PRESETS};

pub(crate) use docs::inf_as_null;
