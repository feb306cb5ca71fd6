use std::path::Path;

use crate::data::Event;
use crate::error::{Error, Result};

/// Maximal runs of frames with `score ≥ τ`, as `[first · hop, (last + 1) · hop)`.
pub fn transcription_export(scores: &[f64], hop_seconds: f64, tau: f64) -> Vec<Event> {
    let mut out = Vec::new();
    let mut start = None;
    for (j, &o) in scores.iter().chain(std::iter::once(&f64::NEG_INFINITY)).enumerate() {
        match (o >= tau, start) {
            (true, None) => start = Some(j),
            (false, Some(s)) => {
                out.push(Event {
                    onset: s as f64 * hop_seconds,
                    offset: j as f64 * hop_seconds,
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// `id,onset,offset` rows.
pub fn write_transcriptions<'a>(
    path: impl AsRef<Path>,
    items: impl IntoIterator<Item = (&'a str, &'a [Event])>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "onset", "offset"])?;
    for (id, events) in items {
        for e in events {
            w.write_record([id.to_string(), format!("{:.6}", e.onset), format!("{:.6}", e.offset)])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{frames_from_annotation, StrongAnnotation};
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let h = 0.5;
        assert_eq!(
            transcription_export(&[0.9, 0.9, 0.1], h, 0.5),
            [Event { onset: 0.0, offset: 1.0 }]
        );
        assert!(transcription_export(&[0.1, 0.4999], h, 0.5).is_empty());
        let alt = transcription_export(&[1.0, 0.0, 1.0, 0.0], h, 0.5);
        assert_eq!(alt.len(), 2);
        assert_eq!(alt[1], Event { onset: 1.0, offset: 1.5 });
        assert_eq!(transcription_export(&[0.5], h, 0.5).len(), 1);
    }

    proptest! {
        #[test]
        fn frames_events_frames_round_trip(frames in prop::collection::vec(any::<bool>(), 1..200), hop in 0.001f64..0.1) {
            let scores: Vec<f64> = frames.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let events = transcription_export(&scores, hop, 0.5);
            let ann = StrongAnnotation { id: "r".into(), events: events.clone() };
            let back = frames_from_annotation(&ann, frames.len(), hop);
            prop_assert_eq!(&back, &frames);
            let scores2: Vec<f64> = back.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            prop_assert_eq!(transcription_export(&scores2, hop, 0.5), events);
        }
    }
}
