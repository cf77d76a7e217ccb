//! Binary blob + sidecar header persistence shared by datasets, models and
//! codebooks.
//!
//! The blob holds complex values as interleaved little-endian `f64` pairs
//! `(re, im)`, each matrix stored row-major. The header is a TOML file next
//! to the blob with the same stem and a `.toml` extension.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};

pub fn header_path(blob: &Path) -> PathBuf {
    blob.with_extension("toml")
}

pub fn write_header<T: Serialize>(blob: &Path, header: &T) -> Result<()> {
    let text = toml::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(header_path(blob), text)?;
    Ok(())
}

pub fn read_header<T: DeserializeOwned>(blob: &Path) -> Result<T> {
    let path = header_path(blob);
    let text = fs::read_to_string(&path)?;
    toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub struct BlobWriter {
    out: BufWriter<fs::File>,
}

impl BlobWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        Ok(BlobWriter {
            out: BufWriter::new(fs::File::create(path)?),
        })
    }

    pub fn complex(&mut self, z: C64) -> Result<()> {
        self.out.write_all(&z.re.to_le_bytes())?;
        self.out.write_all(&z.im.to_le_bytes())?;
        Ok(())
    }

    pub fn real(&mut self, x: f64) -> Result<()> {
        self.complex(C64::new(x, 0.0))
    }

    /// Row-major.
    pub fn matrix(&mut self, m: &CMat) -> Result<()> {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.complex(m[(i, j)])?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub struct BlobReader {
    inp: BufReader<fs::File>,
}

impl BlobReader {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(BlobReader {
            inp: BufReader::new(fs::File::open(path)?),
        })
    }

    fn f64(&mut self) -> Result<f64> {
        let mut buf = [0u8; 8];
        self.inp
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("blob truncated: {e}")))?;
        Ok(f64::from_le_bytes(buf))
    }

    pub fn complex(&mut self) -> Result<C64> {
        let re = self.f64()?;
        let im = self.f64()?;
        Ok(C64::new(re, im))
    }

    pub fn real(&mut self) -> Result<f64> {
        Ok(self.complex()?.re)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Result<CMat> {
        let mut m = CMat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.complex()?;
            }
        }
        Ok(m)
    }

    /// Errors if bytes remain after the expected content.
    pub fn expect_end(mut self) -> Result<()> {
        let mut rest = Vec::new();
        self.inp.read_to_end(&mut rest)?;
        if rest.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes in blob", rest.len())))
        }
    }
}

/// Serde adapter writing `u64` seeds as strings (TOML integers are `i64`)
/// and accepting either strings or non-negative integers on input.
pub mod u64_text {
    use serde::{de, Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = u64;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a u64 as integer or string")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<u64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<u64, E> {
                u64::try_from(v).map_err(|_| E::custom("seed must be non-negative"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<u64, E> {
                v.trim().parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}
