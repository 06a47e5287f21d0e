//! Embedding matrices, relevance judgments, and their on-disk formats.
//!
//! Embeddings travel in the classic `.fvecs` layout: each record is a
//! little-endian `i32` dimension followed by that many little-endian `f32`
//! values, repeated once per vector. Integer lists (judgments, top-k caches)
//! use the sibling `.ivecs` layout: `i32` count then that many `i32` values
//! per record. Judgments may alternatively be a text file of
//! `query_row<TAB>doc_row` pairs, selected by a `.tsv` extension.
//!
//! Row ids are row indices into the corresponding file; there is no separate
//! id space.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// An immutable set of same-dimension float32 vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingSet {
    /// Wraps a row-major buffer. The length must be a multiple of `dim` and
    /// every element must be finite.
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "buffer of {} floats is not a whole number of dim-{} rows",
                values.len(),
                dim
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite embedding value at flat position {pos}"
            )));
        }
        Ok(Self { dim, values })
    }

    /// Builds a set from individual rows.
    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut values = Vec::with_capacity(dim * rows.len());
        for row in rows {
            if row.len() != dim {
                return Err(Error::Config(format!(
                    "row of dim {} in a dim-{} set",
                    row.len(),
                    dim
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(dim, values)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            values: Vec::new(),
        }
    }

    pub(crate) fn from_raw_unchecked(dim: usize, values: Vec<f32>) -> Self {
        debug_assert!(dim > 0 && values.len().is_multiple_of(dim));
        Self { dim, values }
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Reads an fvecs file, inferring the dimension from the first record.
    /// Empty files are rejected here because they carry no dimension; use
    /// [`EmbeddingSet::read_fvecs_with_dim`] when an empty set is legal.
    pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() {
            return Err(Error::file(
                path,
                "empty embedding file: dimension unknown, supply one explicitly",
            ));
        }
        Self::parse_fvecs(&bytes, None, path)
    }

    /// Reads an fvecs file that may be empty, validating records against the
    /// given dimension.
    pub fn read_fvecs_with_dim(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() {
            return Ok(Self::empty(dim));
        }
        Self::parse_fvecs(&bytes, Some(dim), path)
    }

    fn parse_fvecs(bytes: &[u8], expect_dim: Option<usize>, path: &Path) -> Result<Self> {
        let mut offset = 0usize;
        let mut dim = expect_dim;
        let mut values = Vec::new();
        let mut record = 0usize;
        while offset < bytes.len() {
            let header_off = offset;
            let raw = read_i32(bytes, &mut offset).ok_or_else(|| {
                Error::format(
                    path,
                    header_off as u64,
                    format!("truncated record {record}: missing dimension header"),
                )
            })?;
            if raw <= 0 {
                return Err(Error::format(
                    path,
                    header_off as u64,
                    format!("record {record} has non-positive dimension {raw}"),
                ));
            }
            let d = raw as usize;
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::format(
                        path,
                        header_off as u64,
                        format!("record {record} has dimension {d}, expected {expected}"),
                    ));
                }
                Some(_) => {}
            }
            for c in 0..d {
                let value_off = offset;
                let v = read_f32(bytes, &mut offset).ok_or_else(|| {
                    Error::format(
                        path,
                        value_off as u64,
                        format!("truncated record {record}: expected {d} values, got {c}"),
                    )
                })?;
                if !v.is_finite() {
                    return Err(Error::format(
                        path,
                        value_off as u64,
                        format!("non-finite value in record {record}, component {c}"),
                    ));
                }
                values.push(v);
            }
            record += 1;
        }
        // `dim` is set: the file was non-empty so at least one header parsed.
        Ok(Self::from_raw_unchecked(dim.unwrap(), values))
    }

    /// Writes the set in fvecs layout. An empty set produces a zero-length
    /// file (round-trips via [`EmbeddingSet::read_fvecs_with_dim`]).
    pub fn write_fvecs(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(self.count() * (4 + 4 * self.dim));
        for row in self.rows() {
            bytes.extend_from_slice(&(self.dim as i32).to_le_bytes());
            for v in row {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn read_i32(bytes: &[u8], offset: &mut usize) -> Option<i32> {
    let end = offset.checked_add(4)?;
    if end > bytes.len() {
        return None;
    }
    let v = i32::from_le_bytes(bytes[*offset..end].try_into().unwrap());
    *offset = end;
    Some(v)
}

fn read_f32(bytes: &[u8], offset: &mut usize) -> Option<f32> {
    let end = offset.checked_add(4)?;
    if end > bytes.len() {
        return None;
    }
    let v = f32::from_le_bytes(bytes[*offset..end].try_into().unwrap());
    *offset = end;
    Some(v)
}

/// Reads an ivecs file into one `Vec<u32>` per record. Negative values are
/// rejected: every integer in these files is a row id.
pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<u32>>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut offset = 0usize;
    let mut lists = Vec::new();
    let mut record = 0usize;
    while offset < bytes.len() {
        let header_off = offset;
        let raw = read_i32(&bytes, &mut offset).ok_or_else(|| {
            Error::format(
                path,
                header_off as u64,
                format!("truncated record {record}: missing count header"),
            )
        })?;
        if raw < 0 {
            return Err(Error::format(
                path,
                header_off as u64,
                format!("record {record} has negative count {raw}"),
            ));
        }
        let n = raw as usize;
        let mut list = Vec::with_capacity(n);
        for i in 0..n {
            let value_off = offset;
            let v = read_i32(&bytes, &mut offset).ok_or_else(|| {
                Error::format(
                    path,
                    value_off as u64,
                    format!("truncated record {record}: expected {n} ids, got {i}"),
                )
            })?;
            if v < 0 {
                return Err(Error::format(
                    path,
                    value_off as u64,
                    format!("negative id {v} in record {record}"),
                ));
            }
            list.push(v as u32);
        }
        lists.push(list);
        record += 1;
    }
    Ok(lists)
}

pub fn write_ivecs(lists: &[Vec<u32>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    for list in lists {
        bytes.extend_from_slice(&(list.len() as i32).to_le_bytes());
        for id in list {
            bytes.extend_from_slice(&(*id as i32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Ground-truth document lists, one per query row. Lists may be empty; a
/// query with no judged documents simply drops out of the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceJudgments {
    lists: Vec<Vec<u32>>,
}

impl RelevanceJudgments {
    /// Wraps per-query lists, rejecting duplicate doc ids within a query.
    pub fn new(lists: Vec<Vec<u32>>) -> Result<Self> {
        for (q, list) in lists.iter().enumerate() {
            let mut seen = HashSet::with_capacity(list.len());
            for d in list {
                if !seen.insert(*d) {
                    return Err(Error::Config(format!(
                        "duplicate doc id {d} in judgments for query {q}"
                    )));
                }
            }
        }
        Ok(Self { lists })
    }

    pub fn query_count(&self) -> usize {
        self.lists.len()
    }

    pub fn docs_for(&self, query: usize) -> &[u32] {
        &self.lists[query]
    }

    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    /// Checks that every judged doc id addresses a document in a corpus of
    /// `doc_count` rows.
    pub fn validate_doc_ids(&self, doc_count: usize) -> Result<()> {
        for (q, list) in self.lists.iter().enumerate() {
            for d in list {
                if *d as usize >= doc_count {
                    return Err(Error::Config(format!(
                        "judgments for query {q} reference doc {d}, corpus has {doc_count} docs"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads judgments from a `.tsv` file of `query<TAB>doc` pairs or from an
    /// ivecs file (anything else). `num_queries` fixes the number of lists;
    /// an ivecs file must carry exactly that many records.
    pub fn read(path: impl AsRef<Path>, num_queries: usize) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "tsv") {
            Self::read_tsv(path, num_queries)
        } else {
            let lists = read_ivecs(path)?;
            if lists.len() != num_queries {
                return Err(Error::file(
                    path,
                    format!(
                        "judgments hold {} records but the query set has {num_queries} rows",
                        lists.len()
                    ),
                ));
            }
            Self::new(lists)
        }
    }

    fn read_tsv(path: &Path, num_queries: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lists = vec![Vec::new(); num_queries];
        let mut offset = 0u64;
        for (lineno, line) in text.lines().enumerate() {
            let line_offset = offset;
            offset += line.len() as u64 + 1;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let parse = |field: Option<&str>| -> Option<u32> { field?.trim().parse().ok() };
            let (q, d) = match (parse(parts.next()), parse(parts.next()), parts.next()) {
                (Some(q), Some(d), None) => (q, d),
                _ => {
                    return Err(Error::format(
                        path,
                        line_offset,
                        format!("line {}: expected `query<TAB>doc`", lineno + 1),
                    ));
                }
            };
            if q as usize >= num_queries {
                return Err(Error::format(
                    path,
                    line_offset,
                    format!(
                        "line {}: query row {q} out of range ({num_queries} queries)",
                        lineno + 1
                    ),
                ));
            }
            lists[q as usize].push(d);
        }
        Self::new(lists)
    }

    /// Writes judgments, choosing TSV or ivecs from the path extension the
    /// same way [`RelevanceJudgments::read`] does.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "tsv") {
            let mut text = String::new();
            for (q, list) in self.lists.iter().enumerate() {
                for d in list {
                    text.push_str(&format!("{q}\t{d}\n"));
                }
            }
            fs::write(path, text).map_err(|e| Error::io(path, e))
        } else {
            write_ivecs(&self.lists, path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // Leak the dir so the file outlives the helper; tests are short-lived.
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn fvecs_round_trip_preserves_bits() {
        let set = EmbeddingSet::from_rows(
            4,
            &[
                vec![0.0, -0.0, 1.5, -2.25],
                vec![3.0e-40, 1.0, -1.0, 0.125],
                vec![42.0, -42.0, 7.0, 0.0],
            ],
        )
        .unwrap();
        let path = tmp("vecs.fvecs");
        set.write_fvecs(&path).unwrap();
        let back = EmbeddingSet::read_fvecs(&path).unwrap();
        assert_eq!(back.count(), 3);
        assert_eq!(back.dim(), 4);
        for (a, b) in set.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn empty_set_round_trips_with_explicit_dim() {
        let set = EmbeddingSet::empty(8);
        let path = tmp("empty.fvecs");
        set.write_fvecs(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
        let back = EmbeddingSet::read_fvecs_with_dim(&path, 8).unwrap();
        assert_eq!(back.count(), 0);
        assert_eq!(back.dim(), 8);
        // Without a dimension the empty file is unreadable.
        assert!(EmbeddingSet::read_fvecs(&path).is_err());
    }

    #[test]
    fn mismatched_record_dim_is_reported_with_position() {
        let path = tmp("bad.fvecs");
        let mut bytes = Vec::new();
        for dim in [3i32, 3, 2] {
            bytes.extend_from_slice(&dim.to_le_bytes());
            for _ in 0..dim {
                bytes.extend_from_slice(&1.0f32.to_le_bytes());
            }
        }
        std::fs::write(&path, bytes).unwrap();
        let err = EmbeddingSet::read_fvecs(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record 2"), "unhelpful error: {msg}");
        assert!(msg.contains("offset 32"), "missing offset: {msg}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let path = tmp("trunc.fvecs");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&4i32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // 3 values missing
        std::fs::write(&path, bytes).unwrap();
        let err = EmbeddingSet::read_fvecs(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn non_finite_value_is_rejected_with_offset() {
        let path = tmp("nan.fvecs");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2i32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = EmbeddingSet::read_fvecs(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite"), "{msg}");
        assert!(msg.contains("offset 8"), "{msg}");
    }

    #[test]
    fn ivecs_round_trip() {
        let lists = vec![vec![3, 1, 4], vec![], vec![1, 5]];
        let path = tmp("lists.ivecs");
        write_ivecs(&lists, &path).unwrap();
        assert_eq!(read_ivecs(&path).unwrap(), lists);
    }

    #[test]
    fn judgments_tsv_round_trip_and_validation() {
        let j = RelevanceJudgments::new(vec![vec![5], vec![], vec![0, 2]]).unwrap();
        let path = tmp("judgments.tsv");
        j.write(&path).unwrap();
        let back = RelevanceJudgments::read(&path, 3).unwrap();
        assert_eq!(back, j);
        assert!(back.validate_doc_ids(6).is_ok());
        assert!(back.validate_doc_ids(5).is_err());
    }

    #[test]
    fn duplicate_judged_doc_is_rejected() {
        assert!(RelevanceJudgments::new(vec![vec![1, 1]]).is_err());
    }

    proptest! {
        #[test]
        fn fvecs_round_trip_property(
            rows in prop::collection::vec(
                prop::collection::vec(
                    prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO,
                    3,
                ),
                0..20,
            )
        ) {
            let set = EmbeddingSet::from_rows(3, &rows).unwrap();
            let path = tmp("prop.fvecs");
            set.write_fvecs(&path).unwrap();
            let back = EmbeddingSet::read_fvecs_with_dim(&path, 3).unwrap();
            prop_assert_eq!(back.count(), rows.len());
            for (a, b) in set.values().iter().zip(back.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn inner_product_is_symmetric_and_bilinear(
            a in prop::collection::vec(-100.0f32..100.0, 64),
            b in prop::collection::vec(-100.0f32..100.0, 64),
            c in prop::collection::vec(-100.0f32..100.0, 64),
            alpha in -10.0f32..10.0,
        ) {
            use crate::vecmath::inner_product_f64;
            let ab = inner_product_f64(&a, &b);
            let ba = inner_product_f64(&b, &a);
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.abs().max(1.0));

            // <alpha*a + c, b> == alpha*<a,b> + <c,b>
            let scaled: Vec<f32> = a.iter().zip(&c).map(|(x, z)| alpha * x + z).collect();
            let lhs = inner_product_f64(&scaled, &b);
            let rhs = alpha as f64 * ab + inner_product_f64(&c, &b);
            // f32 rounding in `scaled` dominates the error budget.
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-4 * scale, "{lhs} vs {rhs}");
        }
    }
}
