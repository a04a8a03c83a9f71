//! JSON Lines dataset files and split sidecars.
//!
//! The first line is a header `{"num_views":N,"feature_dim":D,"version":1}`;
//! every following line is one collection. Floats are written in shortest
//! round-trip form, so write-then-read is bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Collection, Dataset, Labels, Split, TaskId, ViewObservation};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    num_views: usize,
    feature_dim: usize,
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsRecord {
    lh_loc: usize,
    rh_loc: usize,
    lh_obj: usize,
    rh_obj: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ViewRecord {
    present: bool,
    f: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CollectionRecord {
    id: u64,
    subject: u32,
    labels: LabelsRecord,
    views: Vec<ViewRecord>,
}

impl From<&Collection> for CollectionRecord {
    fn from(c: &Collection) -> Self {
        CollectionRecord {
            id: c.id,
            subject: c.subject,
            labels: LabelsRecord {
                lh_loc: c.labels.get(TaskId::LeftHandLocation),
                rh_loc: c.labels.get(TaskId::RightHandLocation),
                lh_obj: c.labels.get(TaskId::LeftHandObject),
                rh_obj: c.labels.get(TaskId::RightHandObject),
            },
            views: c.views.iter().map(|v| ViewRecord { present: v.present, f: v.features.clone() }).collect(),
        }
    }
}

impl CollectionRecord {
    fn into_collection(self, timestamp: u64) -> Collection {
        let l = self.labels;
        Collection {
            id: self.id,
            subject: self.subject,
            views: self
                .views
                .into_iter()
                .enumerate()
                .map(|(j, v)| ViewObservation { view_id: j, present: v.present, features: v.f })
                .collect(),
            labels: Labels::new(l.lh_loc, l.rh_loc, l.lh_obj, l.rh_obj),
            timestamp,
        }
    }
}

/// Serializes one collection as a single JSON line (no trailing newline).
pub fn collection_to_line(c: &Collection) -> Result<String> {
    Ok(serde_json::to_string(&CollectionRecord::from(c))?)
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    let header = Header { num_views: ds.num_views, feature_dim: ds.feature_dim, version: FORMAT_VERSION };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for c in &ds.collections {
        serde_json::to_writer(&mut out, &CollectionRecord::from(c))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset. Collection timestamps are their line order.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !s.trim().is_empty(),
        Err(_) => true,
    });
    let (_, first) = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))?;
    let header: Header = serde_json::from_str(&first?)?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", header.version)));
    }
    let mut collections = Vec::new();
    for (idx, (lineno, line)) in lines.enumerate() {
        let record: CollectionRecord =
            serde_json::from_str(&line?).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        collections.push(record.into_collection(idx as u64));
    }
    Dataset::new(header.num_views, header.feature_dim, collections)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset(ds, BufWriter::new(create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(open(path)?))
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| with_path(path, e))
}

/// Creates `path`, and its parent directories if needed.
pub(crate) fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| with_path(parent, e))?;
    }
    File::create(path).map_err(|e| with_path(path, e))
}

/// Writes `text` to `path`, naming the path in any error.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes()).map_err(|e| with_path(path, e))
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SplitsRecord {
    version: u32,
    train: Vec<u64>,
    val: Vec<u64>,
    test: Vec<u64>,
}

/// Writes the split tags of `ds` as `{"version":1,"train":[..],"val":[..],"test":[..]}`.
pub fn write_splits<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    let mut rec = SplitsRecord { version: FORMAT_VERSION, ..Default::default() };
    for (&id, &split) in &ds.split_tags {
        match split {
            Split::Train => rec.train.push(id),
            Split::Val => rec.val.push(id),
            Split::Test => rec.test.push(id),
        }
    }
    serde_json::to_writer(&mut out, &rec)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_splits<R: BufRead>(input: R) -> Result<BTreeMap<u64, Split>> {
    let rec: SplitsRecord = serde_json::from_reader(input)?;
    let mut tags = BTreeMap::new();
    for (ids, split) in [(rec.train, Split::Train), (rec.val, Split::Val), (rec.test, Split::Test)] {
        for id in ids {
            if tags.insert(id, split).is_some() {
                return Err(Error::Format(format!("collection {id} tagged twice")));
            }
        }
    }
    Ok(tags)
}

pub fn save_splits(ds: &Dataset, path: &Path) -> Result<()> {
    write_splits(ds, BufWriter::new(create(path)?))
}

pub fn load_splits(path: &Path) -> Result<BTreeMap<u64, Split>> {
    read_splits(BufReader::new(open(path)?))
}
