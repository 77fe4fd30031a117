//! Portable network checkpoint: a short text header followed by raw
//! little-endian 64-bit floats, written weights-then-biases for each layer
//! in row-major order. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::neural::mlp::MlpParams;

const MAGIC: &str = "FOURWAYS-NET v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub adam_step: u64,
}

pub fn save(path: &Path, params: &MlpParams, adam_step: u64) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{MAGIC}")?;
    let sizes: Vec<String> = params.sizes.iter().map(|s| s.to_string()).collect();
    writeln!(w, "layers {}", sizes.join(" "))?;
    writeln!(w, "adam_step {adam_step}")?;
    writeln!(w, "data")?;
    for l in 0..params.layer_count() {
        for &v in &params.weights[l] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &v in &params.biases[l] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let magic = read_line(&mut r)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic: {magic:?}")));
    }
    let layers_line = read_line(&mut r)?;
    let sizes = layers_line
        .strip_prefix("layers ")
        .ok_or_else(|| Error::Checkpoint("missing layers header".into()))?
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad layer size {t}"))))
        .collect::<Result<Vec<usize>>>()?;
    if sizes.len() < 2 {
        return Err(Error::Checkpoint("need at least two layer sizes".into()));
    }
    let step_line = read_line(&mut r)?;
    let adam_step = step_line
        .strip_prefix("adam_step ")
        .and_then(|t| t.parse::<u64>().ok())
        .ok_or_else(|| Error::Checkpoint("missing adam_step header".into()))?;
    let data_line = read_line(&mut r)?;
    if data_line != "data" {
        return Err(Error::Checkpoint("missing data marker".into()));
    }

    let mut params = MlpParams::zeros(&sizes);
    let mut buf = [0u8; 8];
    for l in 0..params.layer_count() {
        for slot in params.weights[l].iter_mut().chain(params.biases[l].iter_mut()) {
            r.read_exact(&mut buf).map_err(|_| Error::Checkpoint("truncated data".into()))?;
            *slot = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf[..1])? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(Checkpoint { params, adam_step })
}

fn read_line(r: &mut impl Read) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 || byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(Error::Checkpoint("header line too long".into()));
        }
    }
    String::from_utf8(line).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
}
