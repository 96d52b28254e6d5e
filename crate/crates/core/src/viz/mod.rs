//! PCA and dependency-free scatter plots.

mod pca;
mod svg;

pub use pca::{covariance, pca_fit, pca_project, symmetric_eigen, PcaModel};
pub use svg::{
    emit_panels_svg, emit_scatter_svg, render_panels, render_scatter_svg, Marker, Panel,
    ScatterLayer, PALETTE,
};
