//! Frame-level scoring, transcriptions, metric logs and F1 curves.

mod curve;
mod log;
mod metrics;
mod transcribe;

pub use curve::{curve_csv, curve_emit, curve_svg, Series};
pub use log::{read_metric_log, write_metric_log, MetricRecord, ValScores, METRIC_LOG_HEADER};
pub use metrics::{frame_metrics, Counts, EvalReport, RecordingScore, Scored};
pub use transcribe::{transcription_export, write_transcriptions};
