//! Training traces: logged scalar records and latent snapshots.

use std::collections::BTreeMap;

use crate::array::Array;

/// One logged step. The key set is fixed per experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub values: BTreeMap<String, f64>,
}

/// Latent points captured at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub step: u64,
    pub points: Array,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
    pub frames: Vec<Frame>,
}

impl TrainingTrace {
    pub fn push_record(
        &mut self,
        step: u64,
        values: impl IntoIterator<Item = (&'static str, f64)>,
    ) {
        debug_assert!(self.records.last().is_none_or(|r| r.step < step));
        self.records.push(TraceRecord {
            step,
            values: values
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        });
    }

    pub fn push_frame(&mut self, step: u64, points: Array) {
        debug_assert!(self.frames.last().is_none_or(|f| f.step < step));
        self.frames.push(Frame { step, points });
    }

    pub fn last_value(&self, key: &str) -> Option<f64> {
        self.records.last().and_then(|r| r.values.get(key).copied())
    }
}
