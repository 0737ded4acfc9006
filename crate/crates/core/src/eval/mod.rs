//! Quality, identity and attribute metrics, the attribute predictor, metric
//! reports and figure grids.

mod grid;
mod metrics;
mod predictor;
mod report;

pub use grid::{emit_grid, grid_tile, tile_grid, GridKind, GridLabels, GRID_GAP};
pub use metrics::{attribute_inconsistency, cosine, gaussian_window, identity_score, mask_iou, psnr, spearman, ssim};
pub use predictor::{predictor_meta, train_attribute_predictor, AttributePredictor, PREDICTOR_KIND};
pub use report::{file_sha256, MetricReport, ReportMeta};
