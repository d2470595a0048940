//! Line-delimited JSON dataset files.
//!
//! Line 1 is a [`DatasetHeader`]; every following line is one record, either
//! a glancing sequence or a meta-sample. Cue vectors follow the
//! `b = [q(w,x,y,z); l; s]` layout given in the header. Floats are written in
//! shortest round-trip form, so load(save(x)) reproduces `x` bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, GlancingSequence, MetaSample};
use crate::geometry::CueLayout;

pub const DATASET_FORMAT: &str = "groupcast-dataset";
pub const SCHEMA_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = concat!("groupcast-synthdata/", env!("CARGO_PKG_VERSION"));
const FIELD_ORDER: &str = "b = [q(w,x,y,z); l(0..location_dim); s]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub schema_version: u32,
    pub generator_version: String,
    /// `glancing` or `speaking`.
    pub kind: String,
    pub dynamics: Option<String>,
    pub seed: u64,
    pub n_groups: usize,
    pub layout: CueLayout,
    pub field_order: String,
    pub records: usize,
}

impl DatasetHeader {
    pub fn new(kind: &str, dynamics: Option<String>, seed: u64, n_groups: usize, layout: CueLayout) -> Self {
        Self {
            format: DATASET_FORMAT.to_string(),
            schema_version: SCHEMA_VERSION,
            generator_version: GENERATOR_VERSION.to_string(),
            kind: kind.to_string(),
            dynamics,
            seed,
            n_groups,
            layout,
            field_order: FIELD_ORDER.to_string(),
            records: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Glance(GlancingSequence),
    Meta(MetaSample),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetBody {
    Glancing(Vec<GlancingSequence>),
    Meta(Vec<MetaSample>),
}

impl DatasetBody {
    pub fn len(&self) -> usize {
        match self {
            DatasetBody::Glancing(v) => v.len(),
            DatasetBody::Meta(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub body: DatasetBody,
}

pub fn write_dataset(path: &Path, file: &DatasetFile) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = file.header.clone();
    header.records = file.body.len();
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serialises"))?;
    let mut put = |r: Record| -> Result<(), DataError> {
        serde_json::to_writer(&mut w, &r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    match &file.body {
        DatasetBody::Glancing(seqs) => seqs.iter().try_for_each(|s| put(Record::Glance(s.clone())))?,
        DatasetBody::Meta(samples) => samples.iter().try_for_each(|s| put(Record::Meta(s.clone())))?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().ok_or(DataError::Corrupt { line: 1, reason: "empty file".into() })??;
    let probe: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| DataError::Corrupt { line: 1, reason: e.to_string() })?;
    if probe.get("format").and_then(|f| f.as_str()) != Some(DATASET_FORMAT) {
        return Err(DataError::Corrupt { line: 1, reason: "not a groupcast dataset".into() });
    }
    let found = probe.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(DataError::VersionMismatch { found, expected: SCHEMA_VERSION });
    }
    let header: DatasetHeader =
        serde_json::from_value(probe).map_err(|e| DataError::Corrupt { line: 1, reason: e.to_string() })?;

    let mut glances = Vec::new();
    let mut metas = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| DataError::Corrupt { line: i + 2, reason: e.to_string() })?;
        match rec {
            Record::Glance(g) => glances.push(g),
            Record::Meta(m) => metas.push(m),
        }
    }
    let body = match (glances.is_empty(), metas.is_empty()) {
        (false, true) => DatasetBody::Glancing(glances),
        (true, _) => DatasetBody::Meta(metas),
        (false, false) => {
            return Err(DataError::Corrupt { line: 0, reason: "mixed record types".into() });
        }
    };
    if body.len() != header.records {
        return Err(DataError::Corrupt {
            line: 0,
            reason: format!("header announces {} records, found {}", header.records, body.len()),
        });
    }
    Ok(DatasetFile { header, body })
}

pub fn serialize_dataset(header: &DatasetHeader, samples: &[MetaSample], path: &Path) -> Result<(), DataError> {
    write_dataset(path, &DatasetFile { header: header.clone(), body: DatasetBody::Meta(samples.to_vec()) })
}

pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<MetaSample>), DataError> {
    let file = read_dataset(path)?;
    match file.body {
        DatasetBody::Meta(m) => Ok((file.header, m)),
        DatasetBody::Glancing(_) => Err(DataError::Corrupt { line: 0, reason: "file holds a glancing corpus".into() }),
    }
}

pub fn serialize_corpus(header: &DatasetHeader, corpus: &[GlancingSequence], path: &Path) -> Result<(), DataError> {
    write_dataset(path, &DatasetFile { header: header.clone(), body: DatasetBody::Glancing(corpus.to_vec()) })
}

pub fn load_corpus(path: &Path) -> Result<(DatasetHeader, Vec<GlancingSequence>), DataError> {
    let file = read_dataset(path)?;
    match file.body {
        DatasetBody::Glancing(g) => Ok((file.header, g)),
        DatasetBody::Meta(_) => Err(DataError::Corrupt { line: 0, reason: "file holds meta-samples".into() }),
    }
}
