//! Binary checkpoints.
//!
//! Layout: the magic `KGSP`, a little-endian `u32` header length, a JSON
//! header, then every parameter table followed by every accumulator table
//! as raw little-endian `f64`s.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::TrainState;
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelParams, Table};

const MAGIC: &[u8; 4] = b"KGSP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    variant: String,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    epoch: usize,
    config_digest: String,
    best_valid_mrr: Option<f64>,
    has_accumulators: bool,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    tables: Vec<TableShape>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct TableShape {
    name: String,
    rows: usize,
    width: usize,
}

/// What a loaded checkpoint must match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointExpectation {
    pub model: ModelKind,
    pub dim: usize,
    pub num_entities: usize,
    pub num_relations: usize,
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    hex::decode_to_slice(s, &mut out).map_err(|_| Error::Checkpoint(format!("bad generator seed {s:?}")))?;
    Ok(out)
}

pub fn save_checkpoint(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let p = &state.params;
    let tables = p.tables();
    let header = Header {
        format_version: FORMAT_VERSION,
        variant: p.kind().as_str().to_string(),
        dim: p.dim(),
        num_entities: p.num_entities(),
        num_relations: p.num_relations(),
        epoch: state.epoch,
        config_digest: state.config_digest.clone(),
        best_valid_mrr: state.best_valid_mrr,
        has_accumulators: state.accumulators.is_some(),
        rng_seed: hex::encode(state.rng.get_seed()),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        tables: tables
            .iter()
            .map(|(id, t)| TableShape {
                name: id.name().to_string(),
                rows: t.rows(),
                width: t.width(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(8 + json.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    let accs = state.accumulators.iter().flatten();
    for t in tables.iter().map(|(_, t)| *t).chain(accs) {
        for v in t.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_table(body: &mut &[u8], shape: &TableShape) -> Result<Table> {
    let n = shape.rows * shape.width;
    if body.len() < n * 8 {
        return Err(Error::Checkpoint(format!("truncated in table {}", shape.name)));
    }
    let (head, rest) = body.split_at(n * 8);
    let data = head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    *body = rest;
    Table::from_vec(shape.rows, shape.width, data)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 8 + len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + len])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let kind: ModelKind = header
        .variant
        .parse()
        .map_err(|_| Error::Checkpoint(format!("unknown variant {:?}", header.variant)))?;

    let expected = ModelParams::zeros(kind, header.num_entities, header.num_relations, header.dim);
    let expected_shapes: Vec<TableShape> = expected
        .tables()
        .iter()
        .map(|(id, t)| TableShape {
            name: id.name().to_string(),
            rows: t.rows(),
            width: t.width(),
        })
        .collect();
    if expected_shapes != header.tables {
        return Err(Error::Checkpoint("table shapes disagree with the header".into()));
    }

    let mut body = &bytes[8 + len..];
    let mut tables = Vec::new();
    for shape in &header.tables {
        tables.push(read_table(&mut body, shape)?);
    }
    let accumulators = if header.has_accumulators {
        let mut acc = Vec::new();
        for shape in &header.tables {
            acc.push(read_table(&mut body, shape)?);
        }
        Some(acc)
    } else {
        None
    };
    if !body.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len())));
    }

    let mut it = tables.into_iter();
    let entities = it.next().expect("entity table");
    let tails = if kind == ModelKind::Cp { it.next() } else { None };
    let relations = it.next().expect("relation table");
    let params = ModelParams::from_tables(kind, header.dim, entities, tails, relations)?;

    let mut rng = ChaCha8Rng::from_seed(unhex(&header.rng_seed)?);
    rng.set_stream(header.rng_stream);
    let word_pos: u128 = header
        .rng_word_pos
        .parse()
        .map_err(|_| Error::Checkpoint("bad generator position".into()))?;
    rng.set_word_pos(word_pos);

    Ok(TrainState {
        params,
        accumulators,
        epoch: header.epoch,
        rng,
        best_valid_mrr: header.best_valid_mrr,
        config_digest: header.config_digest,
    })
}

/// Loads a checkpoint and rejects it unless variant and shapes match.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expect: CheckpointExpectation) -> Result<TrainState> {
    let state = load_checkpoint(path)?;
    let p = &state.params;
    if p.kind() != expect.model {
        return Err(Error::Checkpoint(format!(
            "variant mismatch: checkpoint holds {}, expected {}",
            p.kind(),
            expect.model
        )));
    }
    let found = (p.dim(), p.num_entities(), p.num_relations());
    let wanted = (expect.dim, expect.num_entities, expect.num_relations);
    if found != wanted {
        return Err(Error::Checkpoint(format!(
            "shape mismatch: checkpoint has (d, entities, relations) = {found:?}, expected {wanted:?}"
        )));
    }
    Ok(state)
}
