//! Named-tensor checkpoint container.
//!
//! A checkpoint is two files: a line-oriented text manifest and a raw blob of
//! little-endian values. Manifest lines:
//!
//! ```text
//! sleepmeta-checkpoint 1
//! meta <key> <value to end of line>
//! tensor <name> <dtype> <dim,dim,...|scalar> <byte offset> <byte length>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::optim::AdamState;
use super::params::ParamSet;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "sleepmeta-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for Checkpoint<T> {
    fn default() -> Self {
        Self {
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }
}

/// Blob path paired with a manifest path.
pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

impl<T: Scalar> Checkpoint<T> {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn add_params(&mut self, prefix: &str, params: &ParamSet<T>) {
        for (n, t) in params.names().iter().zip(params.tensors()) {
            self.tensors.push((format!("{prefix}/{n}"), t.clone()));
        }
    }

    pub fn add_adam(&mut self, prefix: &str, params: &ParamSet<T>, state: &AdamState<T>) {
        self.set_meta(&format!("{prefix}.t"), state.t);
        for (i, n) in params.names().iter().enumerate() {
            self.tensors.push((format!("{prefix}/m/{n}"), state.m[i].clone()));
            self.tensors.push((format!("{prefix}/v/{n}"), state.v[i].clone()));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Fills a parameter set with the same layout as `like` from `prefix/<name>` entries.
    pub fn load_params(&self, prefix: &str, like: &ParamSet<T>) -> Result<ParamSet<T>> {
        let mut out = ParamSet::new(like.group());
        for (n, t) in like.names().iter().zip(like.tensors()) {
            let key = format!("{prefix}/{n}");
            let v = self
                .get(&key)
                .ok_or_else(|| Error::ParamMismatch(format!("checkpoint lacks '{key}'")))?;
            if v.shape() != t.shape() {
                return Err(Error::ParamMismatch(format!(
                    "'{key}': checkpoint shape {:?}, model shape {:?}",
                    v.shape(),
                    t.shape()
                )));
            }
            out.push(n.clone(), v.clone())?;
        }
        Ok(out)
    }

    pub fn load_adam(&self, prefix: &str, params: &ParamSet<T>) -> Result<AdamState<T>> {
        let mut st = AdamState::new(params);
        st.t = self
            .meta
            .get(&format!("{prefix}.t"))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::ParamMismatch(format!("checkpoint lacks '{prefix}.t'")))?;
        let m = self.load_params(&format!("{prefix}/m"), params)?;
        let v = self.load_params(&format!("{prefix}/v"), params)?;
        st.m = m.tensors().to_vec();
        st.v = v.tensors().to_vec();
        Ok(st)
    }

    pub fn to_bytes(&self) -> (String, Vec<u8>) {
        let mut manifest = String::from(MAGIC);
        manifest.push('\n');
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        let mut blob = Vec::new();
        for (name, t) in &self.tensors {
            let off = blob.len();
            for &v in t.data() {
                v.write_le(&mut blob);
            }
            let dims = if t.shape().is_empty() {
                "scalar".to_string()
            } else {
                t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            };
            manifest.push_str(&format!(
                "tensor {name} {} {dims} {off} {}\n",
                T::DTYPE,
                blob.len() - off
            ));
        }
        (manifest, blob)
    }

    pub fn from_bytes(manifest: &str, blob: &[u8]) -> Result<Self> {
        let mut lines = manifest.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Data("checkpoint manifest: bad magic line".into()));
        }
        let mut ck = Checkpoint::default();
        for (ln, line) in lines.enumerate() {
            let bad = |what: &str| Error::Data(format!("checkpoint manifest line {}: {what}", ln + 2));
            if line.trim().is_empty() {
                continue;
            }
            let (kind, rest) = line.split_once(' ').ok_or_else(|| bad("missing fields"))?;
            match kind {
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                "tensor" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 5 {
                        return Err(bad("expected 5 tensor fields"));
                    }
                    if f[1] != T::DTYPE {
                        return Err(bad(&format!("dtype {} but loading as {}", f[1], T::DTYPE)));
                    }
                    let shape: Vec<usize> = if f[2] == "scalar" {
                        vec![]
                    } else {
                        f[2].split(',')
                            .map(|d| d.parse().map_err(|_| bad("bad dimension")))
                            .collect::<Result<_>>()?
                    };
                    let off: usize = f[3].parse().map_err(|_| bad("bad offset"))?;
                    let nbytes: usize = f[4].parse().map_err(|_| bad("bad length"))?;
                    let n: usize = shape.iter().product();
                    if nbytes != n * T::BYTES || off + nbytes > blob.len() {
                        return Err(bad("tensor extent inconsistent with blob"));
                    }
                    let data = blob[off..off + nbytes].chunks_exact(T::BYTES).map(T::read_le).collect();
                    ck.tensors.push((f[0].to_string(), Tensor::new(shape, data)?));
                }
                _ => return Err(bad("unknown record kind")),
            }
        }
        Ok(ck)
    }

    pub fn write(&self, manifest_path: &Path) -> Result<()> {
        let (manifest, blob) = self.to_bytes();
        fs::write(manifest_path, manifest).map_err(|e| Error::io(manifest_path, e))?;
        let bp = blob_path(manifest_path);
        fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
    }

    pub fn read(manifest_path: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let bp = blob_path(manifest_path);
        let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        Self::from_bytes(&manifest, &blob)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Group;

    #[test]
    fn manifest_and_blob_round_trip() {
        let ps = ParamSet::new(Group::Encoder)
            .with("conv.w", Tensor::new(vec![2, 1, 3], vec![1.0f32, -2.0, 3.5, 0.0, 1e-7, -0.25]).unwrap())
            .unwrap()
            .with("conv.b", Tensor::vector(vec![0.5f32, 0.25]))
            .unwrap();
        let mut st = AdamState::new(&ps);
        st.t = 7;
        st.m[1] = Tensor::vector(vec![0.1, 0.2]);
        let mut ck = Checkpoint::default();
        ck.set_meta("seed", 42);
        ck.set_meta("note", "two words");
        ck.add_params("encoder", &ps);
        ck.add_adam("adam_encoder", &ps, &st);
        let (m, b) = ck.to_bytes();
        assert!(m.contains("tensor encoder/conv.w f32 2,1,3 0 24"));
        let back = Checkpoint::<f32>::from_bytes(&m, &b).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.load_params("encoder", &ps).unwrap(), ps);
        assert_eq!(back.load_adam("adam_encoder", &ps).unwrap(), st);
        assert_eq!(back.meta["note"], "two words");
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let mut ck = Checkpoint::<f32>::default();
        ck.tensors.push(("x".into(), Tensor::scalar(1.0)));
        let (m, b) = ck.to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&m, &b).is_err());
    }
}
