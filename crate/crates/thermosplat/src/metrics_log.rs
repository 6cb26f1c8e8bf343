//! JSON Lines logs and metric values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thermosplat_core::trainer::{EvalRecord, StepRecord};

use crate::error::{Error, Result};

/// Finite values as numbers; infinities and NaN as the strings `"inf"`, `"-inf"` and `"nan"`.
pub fn metric_value(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub fn parse_metric(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            _ => None,
        },
        _ => None,
    }
}

pub fn timestamp() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_else(|_| String::from("1970-01-01T00:00:00Z"))
}

pub fn eval_object(r: &EvalRecord) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("step".into(), json!(r.step));
    m.insert("psnr_rgb".into(), metric_value(r.psnr_rgb));
    m.insert("ssim_rgb".into(), metric_value(r.ssim_rgb));
    m.insert("psnr_t".into(), metric_value(r.psnr_t));
    m.insert("ssim_t".into(), metric_value(r.ssim_t));
    m.insert("mae_c".into(), metric_value(r.mae_c));
    m.insert("num_gaussians".into(), json!(r.gaussians));
    m
}

pub fn step_object(r: &StepRecord) -> Map<String, Value> {
    let l = &r.loss;
    let mut m = Map::new();
    m.insert("step".into(), json!(r.step));
    for (k, v) in [("loss", l.l_total), ("l_c", l.l_c), ("l_t", l.l_t), ("l_smooth", l.l_smooth), ("l_boltz", l.l_boltz), ("lambda_boltz", l.weights.lambda_boltz)] {
        m.insert(k.into(), metric_value(v));
    }
    m.insert("num_gaussians".into(), json!(r.gaussians));
    m
}

/// Appends one timestamped object per line.
pub struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(Error::io(path))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(f) })
    }

    pub fn write(&mut self, fields: Map<String, Value>) -> Result<()> {
        let mut obj = Map::new();
        obj.insert("timestamp".into(), json!(timestamp()));
        obj.extend(fields);
        let line = serde_json::to_string(&Value::Object(obj))?;
        writeln!(self.out, "{line}").map_err(Error::io(&self.path))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(Error::io(&self.path))
    }
}
