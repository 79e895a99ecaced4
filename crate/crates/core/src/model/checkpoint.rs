use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Layout, ModelConfig, Params, Tensors};
use crate::error::{Error, Result};

const FORMAT: &str = "humal-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Container {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<NamedTensor>,
}

/// JSON container: format tag, version, model configuration and every
/// tensor by name and shape. Values round-trip exactly.
pub fn write_checkpoint<W: Write>(params: &Params, w: W) -> Result<()> {
    let tensors = params
        .layout()
        .tensors
        .iter()
        .map(|s| NamedTensor {
            name: s.name.clone(),
            shape: [s.rows, s.cols],
            data: params.tensors.data[s.range()].to_vec(),
        })
        .collect();
    let c = Container {
        format: FORMAT.into(),
        version: VERSION,
        config: params.config.clone(),
        tensors,
    };
    let mut w = BufWriter::new(w);
    serde_json::to_writer(&mut w, &c)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Params> {
    let c: Container = serde_json::from_reader(BufReader::new(r))?;
    if c.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", c.format)));
    }
    if c.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", c.version)));
    }
    c.config.validate()?;
    let layout = Arc::new(Layout::new(&c.config));
    if layout.tensors.len() != c.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            layout.tensors.len(),
            c.tensors.len()
        )));
    }
    let mut t = Tensors::zeros(layout.clone());
    for (spec, nt) in layout.tensors.iter().zip(c.tensors) {
        if nt.name != spec.name || nt.shape != [spec.rows, spec.cols] {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                nt.name,
                nt.shape,
                spec.name,
                [spec.rows, spec.cols]
            )));
        }
        if nt.data.len() != spec.size() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has {} values, expected {}",
                nt.name,
                nt.data.len(),
                spec.size()
            )));
        }
        t.data[spec.range()].copy_from_slice(&nt.data);
    }
    Ok(Params {
        config: c.config,
        tensors: t,
    })
}

pub fn save_checkpoint(params: &Params, path: &Path) -> Result<()> {
    write_checkpoint(params, File::create(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Params> {
    read_checkpoint(File::open(path)?)
}
