//! Preprocessing: quantisation, grouped scaling, chronological splits,
//! windowing, batch assembly and instance normalization.

mod batch;
mod quantise;
mod scaler;
mod split;
mod window;

pub use batch::{instance_denormalize, instance_normalize, NormState, SeriesBatch, ValueTensor, STD_EPS};
pub use quantise::{quantise_series, OpenHours};
pub use scaler::{fit_group_scalers, group_key, Affine, GroupKey, ScalerMap};
pub use split::{make_splits, SplitReport, SplitSpec, Splits, SplitStats};
pub use window::{keep_longest, window_all, window_series, WindowRow, Windowed};
