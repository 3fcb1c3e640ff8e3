//! Parameter persistence: a `key=value` text manifest next to a flat
//! little-endian `f64` blob holding every parameter in manifest order.

use std::fmt::{Debug, Display};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Activation, Dense, Tensor};

/// Ordered `key=value` document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
    source: Option<PathBuf>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    /// Stores a float with its shortest round-trip representation.
    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.entries.push((key.into(), format!("{value:?}")));
        self
    }

    pub fn push_f64s(&mut self, key: impl Into<String>, values: &[f64]) -> &mut Self {
        let joined = values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
        self.entries.push((key.into(), joined));
        self
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    fn origin(&self) -> PathBuf {
        self.source.clone().unwrap_or_else(|| PathBuf::from("<manifest>"))
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Consistency(format!("{}: missing key '{key}'", self.origin().display())))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Debug,
    {
        let raw = self.get(key)?;
        raw.parse().map_err(|e| {
            Error::Consistency(format!(
                "{}: bad value '{raw}' for '{key}': {e:?}",
                self.origin().display()
            ))
        })
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Debug,
    {
        let raw = self.get(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|p| {
                p.trim().parse().map_err(|e| {
                    Error::Consistency(format!(
                        "{}: bad list item '{p}' for '{key}': {e:?}",
                        self.origin().display()
                    ))
                })
            })
            .collect()
    }

    pub fn expect(&self, key: &str, value: &str) -> Result<()> {
        let found = self.get(key)?;
        if found != value {
            return Err(Error::Consistency(format!(
                "{}: expected {key}={value}, found {key}={found}",
                self.origin().display()
            )));
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn parse_text(text: &str, source: Option<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Consistency(format!(
                    "{}: line {} is not key=value",
                    source.as_deref().unwrap_or(Path::new("<manifest>")).display(),
                    i + 1
                ))
            })?;
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Self { entries, source })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, Some(path.to_path_buf()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a little-endian `f64` blob; `path` is only used in errors.
pub fn decode_f64s(bytes: &[u8], path: &Path, base_offset: u64) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::format(
            path,
            base_offset + (bytes.len() - bytes.len() % 8) as u64,
            format!("blob length {} is not a multiple of 8", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Reads `stem.bin` and checks it holds exactly `expected` values.
pub fn read_blob(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::format(
            path,
            bytes.len().min(expected * 8) as u64,
            format!("blob holds {} bytes, manifest requires {}", bytes.len(), expected * 8),
        ));
    }
    decode_f64s(&bytes, path, 0)
}

/// `dir/stem.manifest` and `dir/stem.bin`.
pub fn artifact_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.manifest")), dir.join(format!("{stem}.bin")))
}

/// Writes a manifest and its parameter blob; adds `param_count`.
pub fn save_artifact(dir: &Path, stem: &str, mut manifest: Manifest, params: &[f64]) -> Result<()> {
    let (m_path, b_path) = artifact_paths(dir, stem);
    manifest.push("param_count", params.len());
    write_atomic(&b_path, &encode_f64s(params))?;
    manifest.write(&m_path)
}

pub fn load_artifact(dir: &Path, stem: &str) -> Result<(Manifest, Vec<f64>)> {
    let (m_path, b_path) = artifact_paths(dir, stem);
    let manifest = Manifest::read(&m_path)?;
    let count: usize = manifest.parse("param_count")?;
    let params = read_blob(&b_path, count)?;
    Ok((manifest, params))
}

/// Records `prefix.layers` and one `prefix.layer.i=in,out,act` entry per layer.
pub fn describe_layers<'a>(manifest: &mut Manifest, prefix: &str, layers: impl IntoIterator<Item = &'a Dense>) {
    let layers: Vec<&Dense> = layers.into_iter().collect();
    manifest.push(format!("{prefix}.layers"), layers.len());
    for (i, l) in layers.iter().enumerate() {
        manifest.push(
            format!("{prefix}.layer.{i}"),
            format!("{},{},{}", l.in_dim(), l.out_dim(), l.activation()),
        );
    }
}

/// Inverse of [`describe_layers`]; consumes parameters from the front of `params`.
pub fn restore_layers(manifest: &Manifest, prefix: &str, params: &mut &[f64]) -> Result<Vec<Dense>> {
    let n: usize = manifest.parse(&format!("{prefix}.layers"))?;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let key = format!("{prefix}.layer.{i}");
        let spec = manifest.get(&key)?;
        let parts: Vec<&str> = spec.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Consistency(format!("malformed layer entry {key}={spec}")));
        }
        let in_dim: usize = parts[0]
            .parse()
            .map_err(|_| Error::Consistency(format!("bad input dim in {key}")))?;
        let out_dim: usize = parts[1]
            .parse()
            .map_err(|_| Error::Consistency(format!("bad output dim in {key}")))?;
        let act: Activation = parts[2].parse()?;
        let need = in_dim * out_dim + out_dim;
        if params.len() < need {
            return Err(Error::Consistency(format!(
                "parameter blob exhausted while restoring {key}"
            )));
        }
        let (w, rest) = params.split_at(in_dim * out_dim);
        let (b, rest) = rest.split_at(out_dim);
        *params = rest;
        layers.push(Dense::from_parts(
            Tensor::matrix(out_dim, in_dim, w.to_vec())?,
            Tensor::vector(b.to_vec()),
            act,
        )?);
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{DenseNet, Parameterized};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_net_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[4, 7, 7, 2], Activation::Silu, Activation::Identity, &mut rng).unwrap();
        let mut m = Manifest::new();
        m.push("kind", "dense");
        describe_layers(&mut m, "net", net.layers());
        save_artifact(dir.path(), "model", m, &net.flat_params()).unwrap();

        let (m2, params) = load_artifact(dir.path(), "model").unwrap();
        let mut rest = params.as_slice();
        let layers = restore_layers(&m2, "net", &mut rest).unwrap();
        assert!(rest.is_empty());
        let back = DenseNet::from_layers(layers).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.param_hash(), net.param_hash());
    }

    #[test]
    fn truncated_blob_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new();
        m.push("kind", "x");
        save_artifact(dir.path(), "a", m, &[1.0, 2.0, 3.0]).unwrap();
        let (_, bin) = artifact_paths(dir.path(), "a");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..20]).unwrap();
        let err = load_artifact(dir.path(), "a").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a.bin"), "{msg}");
    }

    #[test]
    fn floats_roundtrip_through_text() {
        let vals = [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE];
        let mut m = Manifest::new();
        m.push_f64s("v", &vals).push_f64("x", std::f64::consts::PI);
        let back = Manifest::parse_text(&m.render(), None).unwrap();
        let parsed: Vec<f64> = back.parse_list("v").unwrap();
        assert_eq!(
            parsed.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.parse::<f64>("x").unwrap(), std::f64::consts::PI);
    }
}
