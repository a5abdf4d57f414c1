//! Binary checkpoint container.
//!
//! All integers and reals are little-endian; reals are always stored as
//! `f64` regardless of the compute precision.
//!
//! ```text
//! offset size field
//!      0    8 magic "PORENET\0"
//!      8    4 format version (u32) = 1
//!     12    1 loss convention tag (1 = per-sample sum, batch mean)
//!     13    1 optimizer state present (0 or 1)
//!     14    2 reserved, zero
//!     16    4 base width (u32)
//!     20    4 input height (u32)
//!     24    4 input width (u32)
//!     28    4 reserved, zero
//!     32    8 initialization seed (u64)
//!     40    8 batch-norm momentum (f64)
//!     48    8 batch-norm epsilon (f64)
//!     56    8 number of parameter values that follow (u64)
//!     64    . parameter values in graph order: for the stem, then each
//!             block's first, second and projection conv+BN: conv weights,
//!             conv bias, gamma, beta, running mean, running variance;
//!             finally head weights and head bias
//!      .    . if optimizer state present: timestep (u64), value count
//!             (u64), then first moments and second moments, each in the
//!             learnable-parameter order of the network
//!      .    4 CRC-32 of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::LossConvention;
use crate::network::{Network, NetworkConfig};
use crate::tensor::Real;
use crate::trainer::AdamState;

pub const MAGIC: &[u8; 8] = b"PORENET\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<AdamState>,
    pub loss_convention: LossConvention,
}

impl Checkpoint {
    pub fn new(network: Network) -> Self {
        Checkpoint {
            network,
            optimizer: None,
            loss_convention: LossConvention::SampleSumBatchMean,
        }
    }

    pub fn with_optimizer(network: Network, optimizer: AdamState) -> Self {
        Checkpoint {
            optimizer: Some(optimizer),
            ..Self::new(network)
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let cfg = net.config();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.loss_convention.tag());
        out.push(self.optimizer.is_some() as u8);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(cfg.base_width as u32).to_le_bytes());
        out.extend_from_slice(&(cfg.input_size.0 as u32).to_le_bytes());
        out.extend_from_slice(&(cfg.input_size.1 as u32).to_le_bytes());
        out.extend_from_slice(&[0; 4]);
        out.extend_from_slice(&cfg.seed.to_le_bytes());
        out.extend_from_slice(&(cfg.bn_momentum as f64).to_le_bytes());
        out.extend_from_slice(&(cfg.bn_epsilon as f64).to_le_bytes());

        let blobs = net.state_slices();
        let count: usize = blobs.iter().map(|b| b.len()).sum();
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for blob in blobs {
            put_reals(&mut out, blob);
        }
        if let Some(opt) = &self.optimizer {
            out.extend_from_slice(&opt.t.to_le_bytes());
            let count: usize = opt.m.iter().map(|m| m.len()).sum();
            out.extend_from_slice(&(count as u64).to_le_bytes());
            for m in &opt.m {
                put_reals(&mut out, m);
            }
            for v in &opt.v {
                put_reals(&mut out, v);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::CorruptCheckpoint(format!(
                "file is {} bytes, shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::CorruptCheckpoint(
                "checksum mismatch (truncated or damaged file)".into(),
            ));
        }

        let mut r = Reader { buf: body, pos: 12 };
        let loss_convention = LossConvention::from_tag(r.u8()?)
            .ok_or_else(|| Error::CorruptCheckpoint("unknown loss convention".into()))?;
        let has_optimizer = match r.u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::CorruptCheckpoint(format!(
                    "bad optimizer flag {other}"
                )))
            }
        };
        r.skip(2)?;
        let base_width = r.u32()? as usize;
        let input_size = (r.u32()? as usize, r.u32()? as usize);
        r.skip(4)?;
        let seed = r.u64()?;
        let bn_momentum = r.f64()? as Real;
        let bn_epsilon = r.f64()? as Real;
        let config = NetworkConfig {
            base_width,
            input_size,
            seed,
            bn_momentum,
            bn_epsilon,
        };
        let mut network = Network::build(config)
            .map_err(|e| Error::CorruptCheckpoint(format!("invalid stored config: {e}")))?;

        let count = r.u64()? as usize;
        let expected: usize = network.state_slices().iter().map(|b| b.len()).sum();
        if count != expected {
            return Err(Error::WidthMismatch(format!(
                "header declares base width {base_width} ({expected} values) but {count} values are stored"
            )));
        }
        let mut read = Ok(());
        network.for_each_state_mut(|blob| {
            if read.is_ok() {
                read = r.reals_into(blob);
            }
        });
        read?;

        let optimizer = if has_optimizer {
            let t = r.u64()?;
            let count = r.u64()? as usize;
            let lens: Vec<usize> = network.params().iter().map(|p| p.len()).collect();
            if count != lens.iter().sum::<usize>() {
                return Err(Error::WidthMismatch(format!(
                    "optimizer state has {count} values for {} parameters",
                    lens.iter().sum::<usize>()
                )));
            }
            let mut m: Vec<Vec<Real>> = lens.iter().map(|&l| vec![0.0; l]).collect();
            let mut v = m.clone();
            for blob in &mut m {
                r.reals_into(blob)?;
            }
            for blob in &mut v {
                r.reals_into(blob)?;
            }
            Some(AdamState { m, v, t })
        } else {
            None
        };
        if r.pos != body.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            network,
            optimizer,
            loss_convention,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks that the stored architecture matches `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &NetworkConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        let cfg = ckpt.network.config();
        if cfg.base_width != expected.base_width {
            return Err(Error::WidthMismatch(format!(
                "checkpoint base width {} but {} was requested",
                cfg.base_width, expected.base_width
            )));
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::new(net.clone()).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    Checkpoint::load(path).map(|c| c.network)
}

fn put_reals(out: &mut Vec<u8>, values: &[Real]) {
    for &v in values {
        out.extend_from_slice(&(v as f64).to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptCheckpoint("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn skip(&mut self, n: usize) -> Result<()> {
        self.take(n).map(|_| ())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn reals_into(&mut self, dst: &mut [Real]) -> Result<()> {
        let bytes = self.take(dst.len() * 8)?;
        for (d, chunk) in dst.iter_mut().zip(bytes.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().unwrap()) as Real;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Init;
    use crate::tensor::Tensor;

    fn trained_ish() -> Network {
        let cfg = NetworkConfig {
            input_size: (8, 8),
            seed: 5,
            ..NetworkConfig::with_width(2)
        };
        let mut net = Network::new(cfg, Init::FanIn).unwrap();
        // move the running statistics away from their defaults
        let x = Tensor::new((2, 1, 8, 8), 0.7).unwrap();
        net.forward_train(&x).unwrap();
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = trained_ish();
        let bytes = Checkpoint::new(net.clone()).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.network, net);
        assert_eq!(back.to_bytes(), bytes);
        let x = Tensor::new((1, 1, 9, 9), 0.2).unwrap();
        assert_eq!(net.infer(&x).unwrap(), back.network.infer(&x).unwrap());
    }

    #[test]
    fn optimizer_state_round_trip() {
        let net = trained_ish();
        let mut opt = AdamState::new(&net);
        opt.t = 17;
        opt.m[0][0] = 0.25;
        opt.v[3][1] = 1e-9;
        let ckpt = Checkpoint::with_optimizer(net, opt);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = Checkpoint::new(trained_ish()).to_bytes();
        for cut in [10, HEADER_LEN + 3, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 5] ^= 0x10;
        assert!(matches!(
            Checkpoint::from_bytes(&flipped),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = Checkpoint::new(trained_ish()).to_bytes();
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut bytes = Checkpoint::new(trained_ish()).to_bytes();
        // claim width 3 while storing width-2 values, with a valid checksum
        bytes[16] = 3;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::WidthMismatch(_))
        ));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&trained_ish(), &path).unwrap();
        assert!(matches!(
            Checkpoint::load_expecting(&path, &NetworkConfig::with_width(4)),
            Err(Error::WidthMismatch(_))
        ));
    }

    #[test]
    fn file_round_trip_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&trained_ish(), &a).unwrap();
        save_checkpoint(&load_checkpoint(&a).unwrap(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
