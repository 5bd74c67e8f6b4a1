//! JSON and CSV writers.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::Formatter;

use crate::record::{RunRecord, TrajRow};

/// Compact JSON with every `f64` written to 17 significant digits, which
/// round-trips exactly.
struct Digits17;

impl Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

pub fn fmt17(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

/// Trajectory samples of every result, one row per sample. Results without
/// a trajectory contribute a single summary row with empty sample columns.
pub fn to_csv(rec: &RunRecord) -> io::Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "m0,m1,shot_v,fate,nodal,x,r,rp,w,v")?;
    let opt = |x: Option<f64>| x.map(fmt17).unwrap_or_default();
    for item in &rec.results {
        let head = format!(
            "{},{},{},{},{}",
            item.pair.m0,
            item.pair.m1,
            opt(item.v),
            item.fate.as_deref().unwrap_or(""),
            item.nodal.map(|n| n.to_string()).unwrap_or_default()
        );
        match &item.trajectory {
            Some(rows) => {
                for TrajRow { x, r, rp, w, v } in rows {
                    writeln!(out, "{head},{},{},{},{},{}", fmt17(*x), fmt17(*r), fmt17(*rp), opt(*w), opt(*v))?;
                }
            }
            None => writeln!(out, "{head},,,,,")?,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubles_round_trip() {
        for x in [0.1, 1e-10, 1e-12, 1.0 / 3.0, std::f64::consts::PI, 1e-300, -2.5e17, 5e-324, f64::MAX] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
        let j = to_json(&serde_json::json!({"a": 0.1, "n": 3, "nan": f64::NAN})).unwrap();
        let back: serde_json::Value = serde_json::from_slice(&j).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
        assert_eq!(back["n"].as_i64(), Some(3));
        assert!(back["nan"].is_null());
    }
}
