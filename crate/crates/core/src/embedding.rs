//! Per-image embeddings, their binary/JSON-lines persistence, and dense
//! similarity/distance matrices between view sets.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::BuildingId;

pub type ImageId = u64;

const EMBEDDING_MAGIC: &[u8; 5] = b"HGEO1";
const MATRIX_MAGIC: &[u8; 6] = b"HGEO1D";
const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Drone,
    Satellite,
}

impl View {
    pub fn other(self) -> View {
        match self {
            View::Drone => View::Satellite,
            View::Satellite => View::Drone,
        }
    }

    fn code(self) -> u8 {
        match self {
            View::Drone => 0,
            View::Satellite => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(View::Drone),
            1 => Ok(View::Satellite),
            other => Err(Error::Parse(format!("unknown view code {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub image_id: ImageId,
    pub building_id: BuildingId,
    pub view: View,
    /// Set once the vector has been scaled to unit length.
    pub normalized: bool,
    pub vector: Vec<f32>,
}

/// Vectors of one shared dimension with unique image ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    dimension: usize,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingSet {
    pub fn new(dimension: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.vector.len() != dimension {
                return Err(Error::Shape(format!(
                    "image {} has {} components, expected {dimension}",
                    r.image_id,
                    r.vector.len()
                )));
            }
            if !seen.insert(r.image_id) {
                return Err(Error::Input(format!("duplicate image_id {}", r.image_id)));
            }
        }
        Ok(Self { dimension, records })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_ids(&self) -> Vec<ImageId> {
        self.records.iter().map(|r| r.image_id).collect()
    }

    pub fn building_ids(&self) -> Vec<BuildingId> {
        self.records.iter().map(|r| r.building_id).collect()
    }

    /// Records matching `keep`, in original order.
    pub fn filter(&self, keep: impl Fn(&EmbeddingRecord) -> bool) -> EmbeddingSet {
        EmbeddingSet {
            dimension: self.dimension,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn view(&self, view: View) -> EmbeddingSet {
        self.filter(|r| r.view == view)
    }

    /// Normalizes every record not already flagged as normalized.
    pub fn normalized(mut self) -> Result<Self> {
        for r in self.records.iter_mut().filter(|r| !r.normalized) {
            r.vector = l2_normalize(&r.vector).map_err(|_| {
                Error::Degenerate(format!("image {} has a zero vector", r.image_id))
            })?;
            r.normalized = true;
        }
        Ok(self)
    }

    pub fn is_normalized(&self) -> bool {
        self.records.iter().all(|r| r.normalized)
    }

    /// Concatenates two sets of equal dimension.
    pub fn concat(&self, other: &EmbeddingSet) -> Result<EmbeddingSet> {
        if self.dimension != other.dimension {
            return Err(Error::Shape(format!(
                "dimension {} vs {}",
                self.dimension, other.dimension
            )));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        EmbeddingSet::new(self.dimension, records)
    }
}

pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    let norm = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize vector with norm {norm}"
        )));
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Dense row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }
}

/// Cosine similarities between query rows and gallery columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub query_ids: Vec<ImageId>,
    pub gallery_ids: Vec<ImageId>,
    pub scores: DenseMatrix,
}

/// Distances between query rows and gallery columns; smaller is closer.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub query_ids: Vec<ImageId>,
    pub gallery_ids: Vec<ImageId>,
    pub distances: DenseMatrix,
}

fn pairwise_dots(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<DenseMatrix> {
    if a.dimension != b.dimension {
        return Err(Error::Shape(format!(
            "query dimension {} vs gallery dimension {}",
            a.dimension, b.dimension
        )));
    }
    let rows: Vec<Vec<f64>> = a
        .records
        .par_iter()
        .map(|q| {
            b.records
                .iter()
                .map(|g| dot(&q.vector, &g.vector))
                .collect()
        })
        .collect();
    DenseMatrix::new(a.len(), b.len(), rows.concat())
}

pub fn similarity_matrix(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
) -> Result<SimilarityMatrix> {
    if !queries.is_normalized() || !gallery.is_normalized() {
        return Err(Error::Precondition(
            "similarity requires normalized embedding sets".into(),
        ));
    }
    Ok(SimilarityMatrix {
        query_ids: queries.image_ids(),
        gallery_ids: gallery.image_ids(),
        scores: pairwise_dots(queries, gallery)?,
    })
}

/// Cosine distance `1 - r`.
pub fn similarity_to_distance(s: &SimilarityMatrix) -> DistanceMatrix {
    DistanceMatrix {
        query_ids: s.query_ids.clone(),
        gallery_ids: s.gallery_ids.clone(),
        distances: s.scores.map(|r| 1.0 - r),
    }
}

/// Saves in the binary format when the extension is not `.jsonl`.
pub fn save_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "jsonl") {
        encode_jsonl(set)?
    } else {
        encode_binary(set)
    };
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads either format, sniffing the binary magic. Vectors are returned bit-exact.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MATRIX_MAGIC) {
        return Err(Error::Parse(format!(
            "{} holds a distance matrix, not embeddings",
            path.display()
        )));
    }
    if bytes.starts_with(EMBEDDING_MAGIC) {
        decode_binary(&bytes)
    } else {
        decode_jsonl(&bytes)
    }
}

pub fn encode_binary(set: &EmbeddingSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + set.len() * (18 + 4 * set.dimension));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(set.dimension as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for r in &set.records {
        out.extend_from_slice(&r.image_id.to_le_bytes());
        out.extend_from_slice(&r.building_id.to_le_bytes());
        out.push(r.view.code());
        out.push(u8::from(r.normalized));
        for &x in &r.vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Parse(format!(
                    "truncated input: needed {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(5)? != EMBEDDING_MAGIC {
        return Err(Error::Parse("bad embedding magic".into()));
    }
    let dimension = cur.u32()? as usize;
    let count = cur.u64()?;
    let record_len = 18 + 4 * dimension as u64;
    if count.saturating_mul(record_len) > (bytes.len() - cur.pos) as u64 {
        return Err(Error::Parse(format!(
            "header declares {count} records but the file is truncated"
        )));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let image_id = cur.u64()?;
        let building_id = cur.u64()?;
        let view = View::from_code(cur.u8()?)?;
        let normalized = match cur.u8()? {
            0 => false,
            1 => true,
            f => return Err(Error::Parse(format!("bad normalized flag {f}"))),
        };
        let vector = (0..dimension)
            .map(|_| cur.f32())
            .collect::<Result<Vec<_>>>()?;
        records.push(EmbeddingRecord {
            image_id,
            building_id,
            view,
            normalized,
            vector,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Parse(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    EmbeddingSet::new(dimension, records)
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    dimension: usize,
}

fn encode_jsonl(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let js = |e: serde_json::Error| Error::Parse(e.to_string());
    serde_json::to_writer(
        &mut out,
        &JsonHeader {
            dimension: set.dimension,
        },
    )
    .map_err(js)?;
    out.write_all(b"\n")?;
    for r in &set.records {
        serde_json::to_writer(&mut out, r).map_err(js)?;
        out.write_all(b"\n")?;
    }
    Ok(out)
}

fn decode_jsonl(bytes: &[u8]) -> Result<EmbeddingSet> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: JsonHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| Error::Parse("empty file".into()))?,
    )
    .map_err(|e| Error::Parse(format!("bad header: {e}")))?;
    let records = lines
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse(format!("record {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<EmbeddingRecord>>>()?;
    EmbeddingSet::new(header.dimension, records)
}

/// Writes a square matrix in the binary `HGEO1D` layout.
pub fn save_square_matrix(m: &DenseMatrix, path: &Path) -> Result<()> {
    if m.rows != m.cols {
        return Err(Error::Shape(format!(
            "{}x{} matrix is not square",
            m.rows, m.cols
        )));
    }
    let mut out = Vec::with_capacity(14 + 8 * m.data.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows as u64).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a square matrix from the binary layout or from dense CSV.
pub fn load_square_matrix(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    let m = if bytes.starts_with(MATRIX_MAGIC) {
        let mut cur = Cursor {
            bytes: &bytes,
            pos: MATRIX_MAGIC.len(),
        };
        let n = cur.u64()? as usize;
        if (n as u64).saturating_mul(n as u64).saturating_mul(8) != (bytes.len() - cur.pos) as u64 {
            return Err(Error::Parse(format!(
                "matrix payload does not match declared size {n}"
            )));
        }
        let data = (0..n * n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        DenseMatrix::new(n, n, data)?
    } else {
        parse_csv_matrix(&bytes)?
    };
    if m.rows != m.cols {
        return Err(Error::Shape(format!(
            "{}x{} matrix is not square",
            m.rows, m.cols
        )));
    }
    Ok(m)
}

pub fn parse_csv_matrix(bytes: &[u8]) -> Result<DenseMatrix> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Parse(format!(
                    "line {} has {} fields, expected {c}",
                    i + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    DenseMatrix::new(rows, cols.unwrap_or(0), data)
}

pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub(crate) fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::Precondition(format!(
            "{what} has norm {norm}, expected 1"
        )));
    }
    Ok(())
}
