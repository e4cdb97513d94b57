//! Checkpoint directories and the dense network file format.
//!
//! A checkpoint directory holds:
//!
//! | file | content |
//! |---|---|
//! | `config.cfg` | training hyperparameters in config syntax |
//! | `codebook.vqcb` | the codebook |
//! | `encoder.vqnn`, `decoder.vqnn` | network weights |
//! | `state` | `step = N` and `input_dim = D` |
//! | `normalization.txt` | column standardization, when used |
//!
//! Network files (little-endian): magic `VQNN`, version u32 = 1, layer count
//! u32, then per layer an activation tag u8, inputs u64, outputs u64,
//! inputs·outputs f64 weights row-major and outputs f64 biases.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::dataset::Standardization;
use crate::matrix::Matrix;
use crate::nn::dense::{Activation, DenseLayer, DenseNet};
use crate::nn::{AutoencoderState, TrainConfig};

pub const NET_MAGIC: &[u8; 4] = b"VQNN";
pub const NET_FORMAT_VERSION: u32 = 1;

pub fn write_net<W: Write>(net: &DenseNet, mut w: W) -> Result<()> {
    w.write_all(NET_MAGIC)?;
    w.write_all(&NET_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        w.write_all(&[layer.activation.tag()])?;
        w.write_all(&(layer.weights.rows() as u64).to_le_bytes())?;
        w.write_all(&(layer.weights.cols() as u64).to_le_bytes())?;
        for v in layer.weights.as_slice().iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format(format!("truncated network file: {e}")))?;
    Ok(buf)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| Ok(f64::from_le_bytes(read_exact(r)?)))
        .collect()
}

pub fn read_net<R: Read>(mut r: R) -> Result<DenseNet> {
    if &read_exact::<_, 4>(&mut r)? != NET_MAGIC {
        return Err(Error::format("bad network magic"));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != NET_FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported network format version {version}"
        )));
    }
    let n_layers = u32::from_le_bytes(read_exact(&mut r)?);
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let [tag] = read_exact::<_, 1>(&mut r)?;
        let activation = Activation::from_tag(tag)
            .ok_or_else(|| Error::format(format!("unknown activation tag {tag}")))?;
        let rows = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        let cols = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= 1 << 32)
            .ok_or_else(|| Error::format("layer too large"))?;
        let weights = Matrix::new(rows, cols, read_f64s(&mut r, n)?)?;
        let bias = read_f64s(&mut r, cols)?;
        layers.push(DenseLayer::new(weights, bias, activation)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::format(format!(
            "{} trailing bytes after network",
            rest.len()
        )));
    }
    DenseNet::new(layers)
}

/// A training snapshot loaded from disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: AutoencoderState,
    pub codebook: Codebook,
    pub normalization: Option<Standardization>,
}

impl Checkpoint {
    /// Writes into a sibling temporary directory and renames it over `dir`,
    /// so an interrupted write never replaces the previous checkpoint.
    pub fn save(
        dir: &Path,
        state: &AutoencoderState,
        cb: &Codebook,
        norm: Option<&Standardization>,
    ) -> Result<()> {
        let tmp = tmp_path(dir);
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        fs::write(tmp.join("config.cfg"), RunConfig::train_text(&state.config))?;
        cb.save(tmp.join("codebook.vqcb"))?;
        let mut buf = Vec::new();
        write_net(&state.encoder, &mut buf)?;
        fs::write(tmp.join("encoder.vqnn"), &buf)?;
        buf.clear();
        write_net(&state.decoder, &mut buf)?;
        fs::write(tmp.join("decoder.vqnn"), &buf)?;
        fs::write(
            tmp.join("state"),
            format!("step = {}\ninput_dim = {}\n", state.step, state.input_dim()),
        )?;
        if let Some(n) = norm {
            fs::write(tmp.join("normalization.txt"), n.to_text())?;
        }
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&tmp, dir)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            fs::read(dir.join(name))
                .map_err(|e| Error::format(format!("{}: {e}", dir.join(name).display())))
        };
        let cfg_text = String::from_utf8(read("config.cfg")?)
            .map_err(|_| Error::format("config.cfg is not UTF-8"))?;
        let train: TrainConfig = RunConfig::parse(&cfg_text, None)?.train;
        let encoder = read_net(&read("encoder.vqnn")?[..])?;
        let decoder = read_net(&read("decoder.vqnn")?[..])?;
        let mut state = AutoencoderState::from_parts(encoder, decoder, train)?;
        let state_text =
            String::from_utf8(read("state")?).map_err(|_| Error::format("state is not UTF-8"))?;
        for line in state_text.lines() {
            if let Some(v) = line.strip_prefix("step = ") {
                state.step = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(format!("bad step `{v}`")))?;
            }
        }
        let codebook = state.configure_codebook(Codebook::from_bytes(&read("codebook.vqcb")?)?)?;
        if codebook.d() != state.config.latent_dim {
            return Err(Error::shape(
                "checkpoint codebook D",
                state.config.latent_dim,
                codebook.d(),
            ));
        }
        let norm_path = dir.join("normalization.txt");
        let normalization = if norm_path.exists() {
            Some(Standardization::from_text(&fs::read_to_string(norm_path)?)?)
        } else {
            None
        };
        Ok(Self {
            state,
            codebook,
            normalization,
        })
    }
}

fn tmp_path(dir: &Path) -> PathBuf {
    let mut name = dir
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    dir.with_file_name(name)
}
