//! Report files: a `key=value` text block and a JSON object with the same
//! keys and values.

use std::fmt::Write as _;
use std::path::Path;

use pillar_rerank_core::metrics::REPORT_KEYS;
use pillar_rerank_core::EvalReport;
use serde_json::{Map, Value};

use crate::error::{self, Result};

fn is_count(key: &str) -> bool {
    key.ends_with("queries") || key.ends_with("excluded")
}

pub fn report_json(report: &EvalReport) -> Value {
    let mut m = Map::new();
    for (k, v) in report.entries() {
        let value = if is_count(k) {
            Value::from(v as u64)
        } else {
            Value::from(v)
        };
        m.insert(k.to_string(), value);
    }
    Value::Object(m)
}

/// Writes `<stem>.txt` and `<stem>.json` into `dir`.
pub fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    error::write(&dir.join(format!("{stem}.txt")), report.to_key_values())?;
    let json = serde_json::to_string_pretty(&report_json(report)).expect("report serializes");
    error::write(&dir.join(format!("{stem}.json")), json + "\n")
}

/// One sweep row per expansion size: `n_expand` followed by the report keys.
pub fn sweep_table(rows: &[(usize, EvalReport)]) -> String {
    let mut s = String::from("n_expand");
    for k in &REPORT_KEYS[..7] {
        let _ = write!(s, " {k:>8}");
    }
    s.push('\n');
    for (n, r) in rows {
        let _ = write!(s, "{n:>8}");
        for (_, v) in &r.entries()[..7] {
            let _ = write!(s, " {v:>8.1}");
        }
        s.push('\n');
    }
    s
}

pub fn write_sweep(dir: &Path, rows: &[(usize, EvalReport)]) -> Result<()> {
    error::write(&dir.join("sweep.txt"), sweep_table(rows))?;
    let arr: Vec<Value> = rows
        .iter()
        .map(|(n, r)| {
            let mut v = report_json(r);
            v.as_object_mut()
                .unwrap()
                .insert("n_expand".into(), Value::from(*n as u64));
            v
        })
        .collect();
    let json = serde_json::to_string_pretty(&Value::Array(arr)).expect("sweep serializes");
    error::write(&dir.join("sweep.json"), json + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use pillar_rerank_core::metrics::DirectionRecall;

    fn report() -> EvalReport {
        let d = |a, b, c| DirectionRecall {
            r1: a,
            r5: b,
            r10: c,
            evaluated: 10,
            excluded: 1,
        };
        EvalReport::new(d(81.7, 95.4, 97.6), d(61.4, 85.9, 91.5))
    }

    #[test]
    fn text_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        write_report(dir.path(), "eval", &r).unwrap();
        let text = std::fs::read_to_string(dir.path().join("eval.txt")).unwrap();
        let json: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
        for line in text.lines() {
            let (k, v) = line.split_once('=').unwrap();
            let v: f64 = v.parse().unwrap();
            assert_eq!(json[k].as_f64().unwrap(), v, "{k}");
        }
        assert_eq!(json.as_object().unwrap().len(), REPORT_KEYS.len());
        assert_eq!(json["i2t_queries"], Value::from(10u64));
    }

    #[test]
    fn sweep_has_one_row_per_point() {
        let rows = vec![(0, report()), (2, report()), (4, report())];
        assert_eq!(sweep_table(&rows).lines().count(), 4);
    }
}
