//! Binary `.khm` model files.
//!
//! Layout (little-endian): `b"KHMF"`, `u32` version, `u64` header length,
//! UTF-8 JSON header, `u64` parameter count, then the `f64` parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BaselineNet, KarArchitecture, KarHamiltonian, MlpHamiltonian, Model, ModelError};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"KHMF";

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Header {
    Baseline { widths: Vec<usize> },
    Hnn { widths: Vec<usize> },
    Kar { architecture: KarArchitecture },
}

pub fn serialize_model(model: &Model) -> Vec<u8> {
    let header = match model {
        Model::Kar(m) => Header::Kar {
            architecture: m.architecture().clone(),
        },
        Model::Mlp(m) => Header::Hnn {
            widths: m.net().widths().to_vec(),
        },
        Model::Baseline(m) => Header::Baseline {
            widths: m.net().widths().to_vec(),
        },
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let params = model.param_values();
    let mut out = Vec::with_capacity(24 + header.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(ModelError::Format {
                offset: self.bytes.len(),
                message: format!("unexpected end of file while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn deserialize_model(bytes: &[u8]) -> Result<Model, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(ModelError::Format {
            offset: 0,
            message: "missing KHMF magic".into(),
        });
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(ModelError::Version {
            expected: MODEL_FORMAT_VERSION,
            found: version,
        });
    }
    let header_len = r.u64("header length")?;
    let header_at = r.pos;
    let header_len = usize::try_from(header_len).map_err(|_| ModelError::Format {
        offset: header_at - 8,
        message: "header length overflows".into(),
    })?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?).map_err(|e| ModelError::Format {
        offset: header_at + e.column().saturating_sub(1),
        message: format!("invalid header: {e}"),
    })?;
    let bad_arch = |message: String| ModelError::Format {
        offset: header_at,
        message,
    };
    let mut model = match header {
        Header::Kar { architecture } => {
            check_kar(&architecture).map_err(bad_arch)?;
            Model::Kar(KarHamiltonian::zeros(architecture).map_err(|e| bad_arch(e.to_string()))?)
        }
        Header::Hnn { widths } => {
            check_widths(&widths, Some(1)).map_err(bad_arch)?;
            Model::Mlp(MlpHamiltonian::zeros(widths[0], &widths[1..widths.len() - 1]))
        }
        Header::Baseline { widths } => {
            check_widths(&widths, None).map_err(bad_arch)?;
            Model::Baseline(BaselineNet::zeros(widths[0], &widths[1..widths.len() - 1]))
        }
    };
    let count_at = r.pos;
    let count = r.u64("parameter count")?;
    let expected = model.params().len() as u64;
    if count != expected {
        return Err(ModelError::Format {
            offset: count_at,
            message: format!("architecture has {expected} parameters, file declares {count}"),
        });
    }
    let raw = r.take(8 * expected as usize, "parameters")?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.pos != bytes.len() {
        return Err(ModelError::Format {
            offset: r.pos,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    model.set_param_values(&values);
    Ok(model)
}

fn check_widths(widths: &[usize], output: Option<usize>) -> Result<(), String> {
    if widths.len() < 3 || widths.contains(&0) {
        return Err(format!("invalid layer widths {widths:?}"));
    }
    match output {
        Some(o) if widths[widths.len() - 1] != o => Err(format!("expected output width {o}, found {widths:?}")),
        None if widths[widths.len() - 1] != widths[0] => Err(format!("baseline output must match input, found {widths:?}")),
        _ => Ok(()),
    }
}

fn check_kar(a: &KarArchitecture) -> Result<(), String> {
    if a.widths.len() < 2 || a.widths.contains(&0) || a.widths[a.widths.len() - 1] != 1 {
        return Err(format!("invalid layer widths {:?}", a.widths));
    }
    if a.domains.len() != a.widths.len() - 1 || a.domains.iter().zip(&a.widths).any(|(d, &w)| d.len() != w) {
        return Err("domain lists do not match layer widths".into());
    }
    Ok(())
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, serialize_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model, ModelError> {
    deserialize_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn models() -> Vec<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = KarArchitecture {
            widths: vec![2, 2, 1],
            intervals: 2,
            degree: 5,
            domains: vec![vec![(-1.1, 1.3), (-0.7, 0.9)], vec![(-2.0, 2.5); 2]],
        };
        vec![
            KarHamiltonian::random(arch, &mut rng).unwrap().into(),
            MlpHamiltonian::random(2, &[7, 5], &mut rng).into(),
            BaselineNet::random(4, &[6], &mut rng).into(),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for m in models() {
            let bytes = serialize_model(&m);
            let back = deserialize_model(&bytes).unwrap();
            assert_eq!(back, m);
            let z = vec![0.37; m.input_dim()];
            let (a, b) = (m.vector_field(&z).unwrap(), back.vector_field(&z).unwrap());
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = serialize_model(&models()[1]);
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let err = deserialize_model(&bytes).unwrap_err();
        assert!(matches!(err, ModelError::Version { expected: 1, found: 7 }));
        assert!(err.to_string().contains("expected 1, found 7"));
    }

    #[test]
    fn corrupt_files_report_an_offset() {
        let bytes = serialize_model(&models()[0]);
        assert!(matches!(deserialize_model(b"nope"), Err(ModelError::Format { offset: 0, .. })));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(deserialize_model(truncated), Err(ModelError::Format { .. })));
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(
            deserialize_model(&trailing),
            Err(ModelError::Format { offset, .. }) if offset == bytes.len()
        ));
        let mut bad_header = bytes.clone();
        bad_header[16] = b'#';
        assert!(matches!(deserialize_model(&bad_header), Err(ModelError::Format { offset, .. }) if offset >= 16));
    }
}
