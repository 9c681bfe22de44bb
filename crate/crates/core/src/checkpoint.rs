//! Binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `TNNCKPT\0` |
//! | 4 | format version (`u32`) |
//! | 8 | header length `h` (`u64`) |
//! | h | UTF-8 JSON [`CheckpointHeader`] |
//! | 8·n | model parameters as `f64`, in [`TnnModel::flatten`] order |
//! | 16·n | Adam first and second moments, present iff `header.adam_t > 0` |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::tnn::{Architecture, DimensionSpec, TnnModel};

pub const MAGIC: &[u8; 8] = b"TNNCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dims: Vec<DimensionSpec>,
    pub architectures: Vec<Architecture>,
    pub seed: u64,
    pub adam_steps: u64,
    pub lbfgs_steps: u64,
    pub num_params: usize,
    /// Adam step counter; 0 when no optimizer state is stored.
    pub adam_t: u64,
    pub adam_lr: f64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(model: &TnnModel, seed: u64, adam_steps: u64, lbfgs_steps: u64, adam: Option<&AdamState>) -> Self {
        let params = model.flatten();
        let header = CheckpointHeader {
            dims: model.dims().to_vec(),
            architectures: model.architectures(),
            seed,
            adam_steps,
            lbfgs_steps,
            num_params: params.len(),
            adam_t: adam.map_or(0, |a| a.t),
            adam_lr: adam.map_or(0.0, |a| a.lr),
        };
        Self {
            header,
            params,
            adam: adam.filter(|a| a.t > 0).cloned(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(20 + header.len() + 24 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |xs: &[f64]| xs.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        put(&self.params);
        if let Some(a) = &self.adam {
            put(&a.m);
            put(&a.v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}, expected {VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let floats = &bytes[20 + hlen..];
        let n = header.num_params;
        let blocks = if header.adam_t > 0 { 3 } else { 1 };
        if floats.len() != 8 * n * blocks {
            return Err(bad(format!(
                "payload has {} bytes, header promises {} parameters ({} blocks)",
                floats.len(),
                n,
                blocks
            )));
        }
        let read = |k: usize| -> Vec<f64> {
            floats[8 * n * k..8 * n * (k + 1)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        let params = read(0);
        let adam = (header.adam_t > 0).then(|| {
            let mut a = AdamState::new(n, header.adam_lr);
            a.m = read(1);
            a.v = read(2);
            a.t = header.adam_t;
            a
        });
        Ok(Self { header, params, adam })
    }

    /// Rebuilds the model; rejects shape mismatches.
    pub fn model(&self) -> Result<TnnModel> {
        let mut model = TnnModel::random(self.header.dims.clone(), &self.header.architectures, self.header.seed)
            .map_err(|e| Error::Checkpoint(format!("cannot rebuild model: {e}")))?;
        if model.num_params() != self.header.num_params {
            return Err(Error::Checkpoint(format!(
                "architecture implies {} parameters, checkpoint holds {}",
                model.num_params(),
                self.header.num_params
            )));
        }
        model.unflatten(&self.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Checks that this checkpoint fits a model with the given structure.
    pub fn check_compatible(&self, dims: &[DimensionSpec], archs: &[Architecture]) -> Result<()> {
        if self.header.dims != dims {
            return Err(Error::Checkpoint("dimension specs differ from the configuration".into()));
        }
        if self.header.architectures != archs {
            return Err(Error::Checkpoint("architectures differ from the configuration".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subnet::Activation;
    use crate::tnn::DimensionKind;

    fn model() -> TnnModel {
        let dims = vec![
            DimensionSpec::new(DimensionKind::WholeLine, 1, 10),
            DimensionSpec::new(DimensionKind::PeriodicAngle { period: 6.0 }, 2, 4),
        ];
        let arch = Architecture { p: 2, depth: 1, width: 3, activation: Activation::Tanh };
        TnnModel::random(dims, &[arch, arch], 17).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let mut m = model();
        m.set_beta(0, 1.7).unwrap();
        let mut adam = AdamState::new(m.num_params(), 1e-3);
        let g: Vec<f64> = (0..m.num_params()).map(|i| (i as f64).sin()).collect();
        let mut x = m.flatten();
        adam.step(&mut x, &g).unwrap();
        m.unflatten(&x).unwrap();
        let ck = Checkpoint::new(&m, 17, 1, 0, Some(&adam));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.header, ck.header);
        assert_eq!(back.model().unwrap(), m);
        assert_eq!(back.adam.unwrap(), adam);
    }

    #[test]
    fn rejects_corruption() {
        let m = model();
        let bytes = Checkpoint::new(&m, 1, 0, 0, None).to_bytes().unwrap();
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&wrong_magic), Err(Error::Checkpoint(_))));
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        let err = Checkpoint::from_bytes(&wrong_version).unwrap_err().to_string();
        assert!(err.contains("version"));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let m = model();
        let mut ck = Checkpoint::new(&m, 1, 0, 0, None);
        ck.header.architectures[1].width = 4;
        let bytes = ck.to_bytes().unwrap();
        // Payload length still matches num_params, but the architecture does not.
        let err = Checkpoint::from_bytes(&bytes).unwrap().model().unwrap_err().to_string();
        assert!(err.contains("parameters"));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = model();
        Checkpoint::new(&m, 5, 3, 2, None).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model().unwrap(), m);
        assert_eq!(back.header.adam_steps, 3);
        assert!(back.adam.is_none());
    }
}
