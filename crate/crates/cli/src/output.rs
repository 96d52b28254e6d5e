//! Run artifacts: JSON-lines metrics, frame CSVs, summaries and plots.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{Map, Value};

use oplas_core::fsutil::write_atomic;
use oplas_core::trace::{Frame, TraceRecord};
use oplas_core::viz::{pca_fit, render_panels, Marker, Panel, ScatterLayer, PALETTE};
use oplas_core::Array;

use crate::error::{CliError, CliResult};

fn number(x: f64) -> CliResult<Value> {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .ok_or_else(|| CliError::Numeric(format!("non-finite value {x} reached an output file")))
}

/// One JSON object per record, keys sorted, `step` included.
pub fn metrics_jsonl(records: &[TraceRecord]) -> CliResult<String> {
    let mut out = String::new();
    for r in records {
        let mut obj: BTreeMap<&str, Value> = BTreeMap::new();
        obj.insert("step", Value::from(r.step));
        for (k, v) in &r.values {
            obj.insert(k, number(*v)?);
        }
        out.push_str(&serde_json::to_string(&obj).expect("map serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn emit_metrics(path: &Path, records: &[TraceRecord]) -> CliResult<()> {
    write_atomic(path, metrics_jsonl(records)?.as_bytes())?;
    Ok(())
}

/// `step,point_index,dim_0,...,dim_{k-1}`; floats in shortest round-trip form.
pub fn frames_csv(frames: &[Frame]) -> CliResult<String> {
    let dims = frames.first().map_or(0, |f| f.points.cols());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string(), "point_index".to_string()];
    header.extend((0..dims).map(|d| format!("dim_{d}")));
    w.write_record(&header)
        .map_err(|e| CliError::Io(e.to_string()))?;
    for f in frames {
        for i in 0..f.points.rows() {
            let mut row = vec![f.step.to_string(), i.to_string()];
            row.extend(f.points.row_slice(i).iter().map(|x| format!("{x:?}")));
            w.write_record(&row)
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("ascii"))
}

pub fn emit_frames(path: &Path, frames: &[Frame]) -> CliResult<()> {
    write_atomic(path, frames_csv(frames)?.as_bytes())?;
    Ok(())
}

/// Flat summary object with sorted keys.
#[derive(Debug, Default, Clone)]
pub struct Summary(Map<String, Value>);

impl Summary {
    pub fn num(&mut self, key: &str, value: f64) -> CliResult<()> {
        self.0.insert(key.to_string(), number(value)?);
        Ok(())
    }

    pub fn int(&mut self, key: &str, value: u64) {
        self.0.insert(key.to_string(), Value::from(value));
    }

    pub fn flag(&mut self, key: &str, value: bool) {
        self.0.insert(key.to_string(), Value::Bool(value));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn to_json(&self) -> String {
        let sorted: BTreeMap<&String, &Value> = self.0.iter().collect();
        let mut s = serde_json::to_string_pretty(&sorted).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn lines(&self) -> Vec<String> {
        let sorted: BTreeMap<&String, &Value> = self.0.iter().collect();
        sorted
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect()
    }
}

/// Points reduced to two coordinates: as-is when already 2-D, otherwise
/// projected on the top two principal axes of `basis`.
pub fn planar(points: &Array, basis: &Array) -> CliResult<Array> {
    if points.cols() > 2 && basis.rows() >= 2 {
        return Ok(pca_fit(basis, 2)?.project(points)?);
    }
    let mut flat = Array::zeros(points.rows(), 2);
    for i in 0..points.rows() {
        for k in 0..points.cols().min(2) {
            flat.set(i, k, points.get(i, k));
        }
    }
    Ok(flat)
}

pub fn layer(points: Array, label: &str, color_index: usize, marker: Marker) -> ScatterLayer {
    ScatterLayer::new(points, label, PALETTE[color_index % PALETTE.len()], marker)
}

pub fn emit_plot(path: &Path, panels: &[Panel], columns: usize) -> CliResult<()> {
    write_atomic(path, render_panels(panels, columns).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_gives_empty_metrics() {
        assert_eq!(metrics_jsonl(&[]).unwrap(), "");
    }

    #[test]
    fn one_record_is_one_sorted_json_line() {
        let mut values = BTreeMap::new();
        values.insert("zeta".to_string(), 0.1);
        values.insert("alpha".to_string(), -2.0);
        let s = metrics_jsonl(&[TraceRecord { step: 5, values }]).unwrap();
        assert_eq!(s, "{\"alpha\":-2.0,\"step\":5,\"zeta\":0.1}\n");
        let v: Value = serde_json::from_str(s.trim_end()).unwrap();
        assert_eq!(v["step"], 5);
    }

    #[test]
    fn non_finite_values_are_refused() {
        let mut values = BTreeMap::new();
        values.insert("loss".to_string(), f64::NAN);
        assert!(matches!(
            metrics_jsonl(&[TraceRecord { step: 1, values }]),
            Err(CliError::Numeric(_))
        ));
    }

    #[test]
    fn frames_csv_layout_and_round_trip() {
        let frames = vec![
            Frame {
                step: 0,
                points: Array::from_rows(&[[0.1, -1.0 / 3.0], [2.0, 1e-20]]).unwrap(),
            },
            Frame {
                step: 100,
                points: Array::from_rows(&[[3.0, 4.0], [5.0, 6.5]]).unwrap(),
            },
        ];
        let s = frames_csv(&frames).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "step,point_index,dim_0,dim_1");
        assert_eq!(lines[1], "0,0,0.1,-0.3333333333333333");
        assert_eq!(lines.len(), 5);
        let parsed: f64 = lines[2].split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(parsed, 1e-20);
    }

    #[test]
    fn planar_projection_shapes() {
        let p = Array::from_rows(&[[1.0, 2.0, 3.0], [0.0, 1.0, 0.0], [2.0, 0.0, 1.0]]).unwrap();
        assert_eq!(planar(&p, &p).unwrap().shape(), (3, 2));
        let q = Array::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(planar(&q, &q).unwrap(), q);
    }
}
