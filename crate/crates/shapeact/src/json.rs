//! JSON reading and writing. Floats are written with 17 significant digits
//! and parsed with correct rounding, so every `f64` survives a round trip.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::{Error, Result};

/// Delegates structure to the compact or pretty formatter and prints floats
/// in `{:.16e}` form.
struct Precise<F>(F);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl<F: Formatter> Formatter for Precise<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        end_object_key(),
        begin_object_value(),
        end_object_value(),
    );
}

pub fn to_vec<T: Serialize>(value: &T, pretty: bool) -> serde_json::Result<Vec<u8>> {
    let mut out = Vec::new();
    if pretty {
        let mut ser = serde_json::Serializer::with_formatter(&mut out, Precise(PrettyFormatter::new()));
        value.serialize(&mut ser)?;
        out.push(b'\n');
    } else {
        let mut ser = serde_json::Serializer::with_formatter(&mut out, Precise(CompactFormatter));
        value.serialize(&mut ser)?;
    }
    Ok(out)
}

pub fn write<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let bytes = to_vec(value, pretty).map_err(|e| Error::format(path, e))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bitwise() {
        let xs = vec![0.1, 1.0 / 3.0, -2.5e-300, 5e-324, f64::MAX, 1e16 + 2.0, -0.0];
        for pretty in [false, true] {
            let bytes = to_vec(&xs, pretty).unwrap();
            let back: Vec<f64> = serde_json::from_slice(&bytes).unwrap();
            for (a, b) in xs.iter().zip(back.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        let s = String::from_utf8(to_vec(&0.5, false).unwrap()).unwrap();
        assert_eq!(s, "5.0000000000000000e-1");
    }
}
