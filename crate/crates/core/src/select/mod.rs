//! Static channel selection and selection heat maps.

mod heatmap;
mod mask;

pub use heatmap::{parse_heatmap_csv, HeatMap};
pub use mask::{
    list_mask, named_counts, named_mask, square_mask, triangle_mask, zigzag_order, Component,
    SelectionMask, CHANNELS_PER_COMPONENT, NAMED_MASKS, TOTAL_CHANNELS,
};
