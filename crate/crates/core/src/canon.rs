//! Canonical JSON output.
//!
//! Every file this crate writes goes through [`to_canonical_json`]: compact,
//! field order fixed by struct declaration order, and floats printed with
//! six decimals whenever that representation round-trips. Floats that do
//! not sit on the 1e-6 grid (rewards, scores) fall back to the shortest
//! round-trip form so nothing is lost.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, Serializer};

/// Snap a coordinate to the 1e-6 grid used by the wire format.
///
/// Negative zero is folded into positive zero so two equal scenes always
/// serialize to the same bytes.
pub fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6 + 0.0
}

#[derive(Default)]
struct SixDecimal(CompactFormatter);

impl Formatter for SixDecimal {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        let value = value + 0.0;
        let fixed = format!("{value:.6}");
        if fixed.parse::<f64>().ok() == Some(value) {
            writer.write_all(fixed.as_bytes())
        } else {
            // Display for f64 is the shortest string that parses back exactly.
            let shortest = format!("{value}");
            if shortest.contains(['.', 'e', 'E']) || !value.is_finite() {
                writer.write_all(shortest.as_bytes())
            } else {
                write!(writer, "{shortest}.0")
            }
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serialize `value` with the canonical formatter.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = Serializer::with_formatter(&mut out, SixDecimal::default());
    value
        .serialize(&mut ser)
        .expect("serializing in-memory values cannot fail");
    String::from_utf8(out).expect("serde_json emits UTF-8")
}
