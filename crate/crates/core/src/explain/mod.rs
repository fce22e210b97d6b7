mod gradcam;
mod render;
mod tsne;

pub use gradcam::{grad_cam, layer_name, SaliencyMap};
pub use render::{overlay, render_outputs, IndexEntry, OVERLAY_ALPHA};
pub use tsne::{conditional_affinities, tsne_project, EmbeddingProjection, TsneConfig};
