//! JSON output with every floating-point number written to 17 significant
//! digits, which round-trips any `f64` exactly.

use std::io;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

struct Digits17<F>(F);

impl<F: Formatter> Formatter for Digits17<F> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{value:.8e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn write<T: Serialize + ?Sized, F: Formatter>(value: &T, formatter: F) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17(formatter));
    value.serialize(&mut ser).expect("service types serialize infallibly");
    String::from_utf8(out).expect("JSON output is UTF-8")
}

/// Single-line JSON.
pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    write(value, CompactFormatter)
}

/// Indented JSON, used for files.
pub fn to_string_pretty<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = write(value, PrettyFormatter::new());
    s.push('\n');
    s
}

/// Parses `text`; on failure returns the byte offset of the error and
/// serde's message.
pub fn from_str<T: DeserializeOwned>(text: &str) -> Result<T, (usize, String)> {
    serde_json::from_str(text).map_err(|e| {
        let offset = if e.is_eof() { text.len() } else { byte_offset(text, e.line(), e.column()) };
        (offset, e.to_string())
    })
}

/// Converts serde's 1-based line and column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (before + column.saturating_sub(1)).min(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        let xs = vec![0.1, -0.0, 1.0 / 3.0, f64::MIN_POSITIVE, 5e-324, f64::MAX, -123456.789e10, 0.462_117_157_260_009_8];
        let text = to_string(&xs);
        let back: Vec<f64> = from_str(&text).unwrap();
        for (a, b) in xs.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits(), "{text}");
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(to_string(&[0.1f64]), "[1.0000000000000001e-1]");
        assert_eq!(to_string(&[2.0f64]), "[2.0000000000000000e0]");
    }

    #[test]
    fn non_finite_becomes_null() {
        assert_eq!(to_string(&[f64::NAN]), "[null]");
    }

    #[test]
    fn error_offsets_point_into_the_text() {
        let text = "{\n  \"a\": [1,\n  2,,]\n}";
        let (offset, _) = from_str::<serde_json::Value>(text).unwrap_err();
        assert_eq!(&text[offset..offset + 1], ",");
        let (offset, _) = from_str::<serde_json::Value>("[1, 2").unwrap_err();
        assert_eq!(offset, 5);
    }

    #[test]
    fn pretty_output_is_indented() {
        let s = to_string_pretty(&serde_json::json!({"x": [1.5]}));
        assert!(s.contains("\n  \"x\""));
        assert!(s.contains("1.5000000000000000e0"));
    }
}
