//! Persistence for models, quantization schemes and datasets, plus
//! synthetic teacher fixtures.

mod container;
mod dataset;
mod fixture;

pub use container::{
    decode_model, decode_schemes, encode_model, encode_schemes, load_model, load_schemes,
    save_model, save_schemes, FORMAT_VERSION, MAGIC,
};
pub use dataset::{
    load_csv, load_idx, read_idx_images, read_idx_labels, save_csv, CsvSchema, DatasetHandle,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use fixture::{make_teacher_fixture, MlpArch};
