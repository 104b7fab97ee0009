//! JSON and CSV writers with round-trip exact numbers.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

/// Decimal form of `v` with 17 significant digits, trailing zeros dropped.
/// Exponent notation is kept for very large or very small magnitudes.
pub fn fmt17(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{:.16e}", v.abs());
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    let sign = if v < 0.0 { "-" } else { "" };
    let trim = |s: &str| -> String {
        let t = s.trim_end_matches('0');
        if t.is_empty() { "0".into() } else { t.into() }
    };
    match exp {
        0..=16 => {
            let (int, frac) = digits.split_at(exp as usize + 1);
            format!("{sign}{int}.{}", trim(frac))
        }
        -5..=-1 => format!("{sign}0.{}{}", "0".repeat((-exp - 1) as usize), digits.trim_end_matches('0')),
        _ => format!("{sign}{}.{}e{exp}", &digits[..1], trim(&digits[1..])),
    }
}

/// Pretty JSON whose floats go through [`fmt17`].
struct Exact(PrettyFormatter<'static>);

impl Formatter for Exact {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt17(value).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
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

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Exact(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory serialization");
    buf.push(b'\n');
    buf
}

/// CSV with a header row; numbers go through [`fmt17`].
pub fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        assert_eq!(fmt17(2.0 / 3.0), "0.66666666666666663");
        assert_eq!(fmt17(1.0), "1.0");
        assert_eq!(fmt17(-0.25), "-0.25");
        assert_eq!(fmt17(1e-12), "9.9999999999999998e-13");
        assert_eq!(fmt17(1e20), "1.0e20");
        assert_eq!(fmt17(123456.5), "123456.5");
        for v in [0.1, 1.0 / 3.0, 6.02214076e23, 5e-324, f64::MAX, 0.000123, 1e16 + 2.0] {
            assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn json_uses_exact_numbers() {
        let text = String::from_utf8(to_json(&vec![0.1, f64::INFINITY])).unwrap();
        assert_eq!(text, "[\n  0.10000000000000001,\n  null\n]\n");
    }
}
