use crate::error::{Error, Result};

/// Frame confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Counts {
    pub fn from_frames(pred: &[bool], truth: &[bool]) -> Self {
        let mut c = Counts::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    /// `TP / (TP + FP)`, 0 when undefined.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `TP / (TP + FN)`, 0 when undefined.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, 0 when both are 0.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Neither predicted nor annotated positives: every score is 0 by
    /// convention rather than by merit.
    pub fn no_positives(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordingScore {
    pub id: String,
    pub counts: Counts,
}

/// Micro-averaged frame scores pooled over every recording.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub no_positives: bool,
    pub per_recording: Vec<RecordingScore>,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let c = &self.counts;
        let mut s = format!(
            "frames: {}  tp: {}  fp: {}  fn: {}\nprecision: {:.4}\nrecall: {:.4}\nf1: {:.4}\n",
            c.tp + c.fp + c.fn_ + c.tn,
            c.tp,
            c.fp,
            c.fn_,
            self.precision,
            self.recall,
            self.f1
        );
        if self.no_positives {
            s.push_str("note: no positives in predictions or annotations\n");
        }
        s
    }

    /// `id,tp,fp,fn,tn,precision,recall,f1`, one row per recording followed
    /// by an `ALL` row.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "tp", "fp", "fn", "tn", "precision", "recall", "f1"])?;
        let all = RecordingScore {
            id: "ALL".into(),
            counts: self.counts,
        };
        for r in self.per_recording.iter().chain(std::iter::once(&all)) {
            let c = r.counts;
            w.write_record([
                r.id.clone(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                format!("{:.6}", c.precision()),
                format!("{:.6}", c.recall()),
                format!("{:.6}", c.f1()),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One recording's thresholded predictions and frame truth.
pub struct Scored<'a> {
    pub id: &'a str,
    pub pred: &'a [bool],
    pub truth: &'a [bool],
}

pub fn frame_metrics(items: &[Scored<'_>]) -> Result<EvalReport> {
    let mut total = Counts::default();
    let mut per_recording = Vec::with_capacity(items.len());
    for it in items {
        if it.pred.len() != it.truth.len() {
            return Err(Error::Contract(format!(
                "recording {}: {} predicted frames vs {} annotated",
                it.id,
                it.pred.len(),
                it.truth.len()
            )));
        }
        let c = Counts::from_frames(it.pred, it.truth);
        total.add(c);
        per_recording.push(RecordingScore {
            id: it.id.to_string(),
            counts: c,
        });
    }
    Ok(EvalReport {
        counts: total,
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        no_positives: total.no_positives(),
        per_recording,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(pred: &[bool], truth: &[bool]) -> EvalReport {
        frame_metrics(&[Scored { id: "r", pred, truth }]).unwrap()
    }

    #[test]
    fn examples() {
        let r = one(&[true, false, true], &[true, false, true]);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = one(&[true, true, false, false], &[true, false, true, false]);
        assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_), (1, 1, 1));
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        let r = one(&[false; 4], &[false; 4]);
        assert_eq!(r.f1, 0.0);
        assert!(r.no_positives);
    }

    #[test]
    fn length_mismatch_names_recording() {
        let e = frame_metrics(&[Scored {
            id: "clip_9",
            pred: &[true],
            truth: &[true, false],
        }])
        .unwrap_err();
        assert!(e.to_string().contains("clip_9"));
    }

    proptest! {
        #[test]
        fn order_invariant(recs in prop::collection::vec(prop::collection::vec(any::<(bool, bool)>(), 0..30), 1..6)) {
            let split: Vec<(Vec<bool>, Vec<bool>)> = recs.iter().map(|r| r.iter().copied().unzip()).collect();
            let ids: Vec<String> = (0..split.len()).map(|i| format!("r{i}")).collect();
            let items: Vec<Scored> = split.iter().zip(&ids).map(|((p, t), id)| Scored { id, pred: p, truth: t }).collect();
            let mut rev: Vec<Scored> = split.iter().zip(&ids).map(|((p, t), id)| Scored { id, pred: p, truth: t }).collect();
            rev.reverse();
            let a = frame_metrics(&items).unwrap();
            let b = frame_metrics(&rev).unwrap();
            prop_assert_eq!(a.counts, b.counts);
            prop_assert_eq!(a.f1, b.f1);
            prop_assert!((0.0..=1.0).contains(&a.f1));
        }
    }
}
