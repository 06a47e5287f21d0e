//! The IVF+PQ index: coarse centroids, per-subspace codebooks, document
//! codes, and the index file format.
//!
//! A document is quantized in two stages. The IVF stage assigns it to the
//! nearest of `lists` coarse centroids under squared L2; the centroid is the
//! coarse reconstruction. The PQ stage splits the residual
//! `v - centroid` into `books` contiguous subvectors and replaces each with
//! the nearest codeword of that subspace's codebook. The full reconstruction
//! is `centroid + concat(codewords)`.
//!
//! Codebooks are trained on residuals, never on raw vectors, and document ids
//! are row indices into the corpus file.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, nearest, KMeansConfig};
use crate::seeds::derive_seed;
use crate::vecmath::l2_distance_sq;

/// Default number of inverted lists for full-scale corpora.
pub const DEFAULT_IVF_LISTS: usize = 10_000;
/// Default number of PQ codebooks (subspaces).
pub const DEFAULT_BOOKS: usize = 64;
/// Default number of codewords per codebook (8-bit codes).
pub const DEFAULT_CODEWORDS: usize = 256;

const INDEX_MAGIC: &[u8; 8] = b"RVQINDEX";
const INDEX_VERSION: u32 = 1;

const IVF_SEED_TAG: u64 = 0x1BF;
const PQ_SEED_TAG: u64 = 0x9C0DE;

/// Coarse centroid matrix, `lists x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfCentroids {
    lists: usize,
    dim: usize,
    values: Vec<f32>,
}

impl IvfCentroids {
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "centroid buffer of {} floats does not form dim-{dim} rows",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite centroid value".into()));
        }
        Ok(Self {
            lists: values.len() / dim,
            dim,
            values,
        })
    }

    pub fn lists(&self) -> usize {
        self.lists
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Flat mutable view, row-major; the optimizer addresses centroid
    /// entries as `list * dim + coordinate`.
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    fn as_embedding_set(&self) -> EmbeddingSet {
        EmbeddingSet::from_raw_unchecked(self.dim, self.values.clone())
    }
}

/// PQ codebooks: `books` codebooks of `codewords` codewords, each of
/// dimension `sub_dim` (= full dim / books). Stored flat, book-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebooks {
    books: usize,
    codewords: usize,
    sub_dim: usize,
    values: Vec<f32>,
}

impl PqCodebooks {
    pub fn new(books: usize, codewords: usize, sub_dim: usize, values: Vec<f32>) -> Result<Self> {
        if books == 0 || codewords < 2 || sub_dim == 0 {
            return Err(Error::Config(
                "codebooks need books >= 1, codewords >= 2, sub_dim >= 1".into(),
            ));
        }
        if values.len() != books * codewords * sub_dim {
            return Err(Error::Config(format!(
                "codebook buffer holds {} floats, expected {}",
                values.len(),
                books * codewords * sub_dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite codeword value".into()));
        }
        Ok(Self {
            books,
            codewords,
            sub_dim,
            values,
        })
    }

    pub fn books(&self) -> usize {
        self.books
    }

    pub fn codewords(&self) -> usize {
        self.codewords
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn codeword(&self, book: usize, code: usize) -> &[f32] {
        let start = (book * self.codewords + code) * self.sub_dim;
        &self.values[start..start + self.sub_dim]
    }

    pub fn codeword_mut(&mut self, book: usize, code: usize) -> &mut [f32] {
        let start = (book * self.codewords + code) * self.sub_dim;
        &mut self.values[start..start + self.sub_dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Flat mutable view; the optimizer addresses codeword entries as
    /// `(book * codewords + code) * sub_dim + coordinate`.
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    /// Nearest codeword id for a residual segment, lowest id on ties.
    pub fn nearest_codeword(&self, book: usize, segment: &[f32]) -> u16 {
        debug_assert_eq!(segment.len(), self.sub_dim);
        let mut best = 0u16;
        let mut best_d = f32::INFINITY;
        for j in 0..self.codewords {
            let d = l2_distance_sq(segment, self.codeword(book, j));
            if d < best_d {
                best_d = d;
                best = j as u16;
            }
        }
        best
    }
}

/// Quantization code of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentCode {
    pub ivf_id: u32,
    pub pq_ids: Vec<u16>,
}

/// Index build parameters. `seed` drives both k-means stages.
#[derive(Debug, Clone)]
pub struct IndexParams {
    pub lists: usize,
    pub books: usize,
    pub codewords: usize,
    pub kmeans_iters: usize,
    pub kmeans_tol: f32,
    pub seed: u64,
}

impl IndexParams {
    pub fn new(lists: usize, books: usize, codewords: usize, seed: u64) -> Self {
        Self {
            lists,
            books,
            codewords,
            kmeans_iters: crate::kmeans::DEFAULT_MAX_ITERS,
            kmeans_tol: crate::kmeans::DEFAULT_REL_TOLERANCE,
            seed,
        }
    }
}

/// A complete quantization index: centroids, codebooks, one code per
/// document, and the inverted lists (which partition the document ids).
#[derive(Debug, Clone, PartialEq)]
pub struct IndexArtifact {
    centroids: IvfCentroids,
    codebooks: PqCodebooks,
    ivf_ids: Vec<u32>,
    pq_ids: Vec<u16>, // doc-major, `books` entries per doc
    posting: Vec<Vec<u32>>,
}

impl IndexArtifact {
    /// Trains centroids and codebooks on the corpus and encodes every
    /// document. Centroids come from k-means over the raw vectors; codebooks
    /// from per-subspace k-means over the post-IVF residuals.
    pub fn build(docs: &EmbeddingSet, params: &IndexParams) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Config("cannot build an index on an empty corpus".into()));
        }
        if docs.count() > u32::MAX as usize {
            return Err(Error::Config("corpus too large for u32 doc ids".into()));
        }
        let dim = docs.dim();
        if params.books == 0 || !dim.is_multiple_of(params.books) {
            return Err(Error::Config(format!(
                "dim {dim} is not divisible into {} subspaces",
                params.books
            )));
        }
        if params.lists == 0 {
            return Err(Error::Config("need at least one inverted list".into()));
        }
        if params.codewords < 2 {
            return Err(Error::Config("need at least two codewords per book".into()));
        }
        let sub_dim = dim / params.books;

        let ivf_cfg = KMeansConfig {
            k: params.lists,
            max_iters: params.kmeans_iters,
            seed: derive_seed(params.seed, IVF_SEED_TAG),
            rel_tolerance: params.kmeans_tol,
        };
        let centroid_set = kmeans(docs, &ivf_cfg)?.centroids;
        let centroids = IvfCentroids::new(dim, centroid_set.values().to_vec())?;

        let n = docs.count();
        let ivf_ids: Vec<u32> = (0..n)
            .into_par_iter()
            .map(|d| nearest(docs.row(d), &centroid_set).0 as u32)
            .collect();

        let mut residuals = vec![0f32; n * dim];
        residuals
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(d, out)| {
                let row = docs.row(d);
                let cent = centroids.row(ivf_ids[d] as usize);
                for i in 0..dim {
                    out[i] = row[i] - cent[i];
                }
            });

        let mut book_values = vec![0f32; params.books * params.codewords * sub_dim];
        for m in 0..params.books {
            let mut segs = vec![0f32; n * sub_dim];
            for d in 0..n {
                let src = &residuals[d * dim + m * sub_dim..d * dim + (m + 1) * sub_dim];
                segs[d * sub_dim..(d + 1) * sub_dim].copy_from_slice(src);
            }
            let seg_set = EmbeddingSet::from_raw_unchecked(sub_dim, segs);
            let cfg = KMeansConfig {
                k: params.codewords,
                max_iters: params.kmeans_iters,
                seed: derive_seed(params.seed, PQ_SEED_TAG + m as u64),
                rel_tolerance: params.kmeans_tol,
            };
            let out = kmeans(&seg_set, &cfg)?;
            let dst = &mut book_values
                [m * params.codewords * sub_dim..(m + 1) * params.codewords * sub_dim];
            dst.copy_from_slice(out.centroids.values());
        }
        let codebooks = PqCodebooks::new(params.books, params.codewords, sub_dim, book_values)?;

        let codebooks_ref = &codebooks;
        let pq_ids: Vec<u16> = (0..n)
            .into_par_iter()
            .flat_map_iter(|d| {
                let res = &residuals[d * dim..(d + 1) * dim];
                (0..params.books).map(move |m| {
                    codebooks_ref.nearest_codeword(m, &res[m * sub_dim..(m + 1) * sub_dim])
                })
            })
            .collect();

        let posting = build_posting(params.lists, &ivf_ids);
        Ok(Self {
            centroids,
            codebooks,
            ivf_ids,
            pq_ids,
            posting,
        })
    }

    /// Assembles an index from already-trained parts and document codes.
    pub fn from_parts(
        centroids: IvfCentroids,
        codebooks: PqCodebooks,
        codes: &[DocumentCode],
    ) -> Result<Self> {
        if centroids.dim() != codebooks.books() * codebooks.sub_dim() {
            return Err(Error::Config(format!(
                "centroid dim {} != books {} x sub_dim {}",
                centroids.dim(),
                codebooks.books(),
                codebooks.sub_dim()
            )));
        }
        let mut ivf_ids = Vec::with_capacity(codes.len());
        let mut pq_ids = Vec::with_capacity(codes.len() * codebooks.books());
        for (d, code) in codes.iter().enumerate() {
            if code.ivf_id as usize >= centroids.lists() {
                return Err(Error::Config(format!(
                    "doc {d}: ivf id {} out of range",
                    code.ivf_id
                )));
            }
            if code.pq_ids.len() != codebooks.books() {
                return Err(Error::Config(format!(
                    "doc {d}: expected {} pq ids, got {}",
                    codebooks.books(),
                    code.pq_ids.len()
                )));
            }
            if let Some(bad) = code
                .pq_ids
                .iter()
                .find(|j| **j as usize >= codebooks.codewords())
            {
                return Err(Error::Config(format!("doc {d}: pq id {bad} out of range")));
            }
            ivf_ids.push(code.ivf_id);
            pq_ids.extend_from_slice(&code.pq_ids);
        }
        let posting = build_posting(centroids.lists(), &ivf_ids);
        Ok(Self {
            centroids,
            codebooks,
            ivf_ids,
            pq_ids,
            posting,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.ivf_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn lists(&self) -> usize {
        self.centroids.lists()
    }

    pub fn books(&self) -> usize {
        self.codebooks.books()
    }

    pub fn codewords(&self) -> usize {
        self.codebooks.codewords()
    }

    pub fn centroids(&self) -> &IvfCentroids {
        &self.centroids
    }

    pub fn centroids_mut(&mut self) -> &mut IvfCentroids {
        &mut self.centroids
    }

    pub fn codebooks(&self) -> &PqCodebooks {
        &self.codebooks
    }

    pub fn codebooks_mut(&mut self) -> &mut PqCodebooks {
        &mut self.codebooks
    }

    pub fn ivf_id_of(&self, doc: u32) -> u32 {
        self.ivf_ids[doc as usize]
    }

    pub fn pq_ids_of(&self, doc: u32) -> &[u16] {
        let m = self.codebooks.books();
        &self.pq_ids[doc as usize * m..(doc as usize + 1) * m]
    }

    pub fn code(&self, doc: u32) -> DocumentCode {
        DocumentCode {
            ivf_id: self.ivf_id_of(doc),
            pq_ids: self.pq_ids_of(doc).to_vec(),
        }
    }

    pub fn posting_list(&self, list: usize) -> &[u32] {
        &self.posting[list]
    }

    /// Quantizes an arbitrary vector with the trained parts.
    pub fn encode(&self, v: &[f32]) -> DocumentCode {
        encode_document(v, &self.centroids, &self.codebooks)
    }

    /// Coarse reconstruction of an indexed document.
    pub fn reconstruct_ivf_doc(&self, doc: u32) -> Vec<f32> {
        self.centroids.row(self.ivf_id_of(doc) as usize).to_vec()
    }

    /// Full reconstruction (centroid + codewords) of an indexed document.
    pub fn reconstruct_full_doc(&self, doc: u32) -> Vec<f32> {
        let mut out = self.reconstruct_ivf_doc(doc);
        self.add_codewords(doc, &mut out);
        out
    }

    pub(crate) fn reconstruct_full_into(&self, doc: u32, out: &mut [f32]) {
        out.copy_from_slice(self.centroids.row(self.ivf_id_of(doc) as usize));
        self.add_codewords(doc, out);
    }

    fn add_codewords(&self, doc: u32, out: &mut [f32]) {
        let sub = self.codebooks.sub_dim();
        for (m, j) in self.pq_ids_of(doc).iter().enumerate() {
            let cw = self.codebooks.codeword(m, *j as usize);
            for (o, c) in out[m * sub..(m + 1) * sub].iter_mut().zip(cw) {
                *o += c;
            }
        }
    }

    /// Re-derives every document's PQ ids from its current residual while
    /// keeping the IVF assignment fixed. Run after centroid or codebook
    /// updates so codes follow the trained parameters.
    pub fn reencode_pq(&mut self, docs: &EmbeddingSet) -> Result<()> {
        if docs.count() != self.doc_count() || docs.dim() != self.dim() {
            return Err(Error::Config(format!(
                "re-encode corpus is {}x{}, index holds {}x{}",
                docs.count(),
                docs.dim(),
                self.doc_count(),
                self.dim()
            )));
        }
        let dim = self.dim();
        let sub = self.codebooks.sub_dim();
        let books = self.codebooks.books();
        let centroids = &self.centroids;
        let codebooks = &self.codebooks;
        let ivf_ids = &self.ivf_ids;
        let new_ids: Vec<u16> = (0..docs.count())
            .into_par_iter()
            .flat_map_iter(|d| {
                let row = docs.row(d);
                let cent = centroids.row(ivf_ids[d] as usize);
                let mut res = vec![0f32; dim];
                for i in 0..dim {
                    res[i] = row[i] - cent[i];
                }
                (0..books).map(move |m| codebooks.nearest_codeword(m, &res[m * sub..(m + 1) * sub]))
            })
            .collect();
        self.pq_ids = new_ids;
        Ok(())
    }

    /// Mean squared reconstruction error over the corpus:
    /// `(coarse-only, full)`.
    pub fn mean_distortion(&self, docs: &EmbeddingSet) -> (f64, f64) {
        let n = self.doc_count();
        let dim = self.dim();
        let (ivf_sum, full_sum) = (0..n)
            .into_par_iter()
            .map(|d| {
                let row = docs.row(d);
                let coarse = self.centroids.row(self.ivf_ids[d] as usize);
                let ivf_err = crate::vecmath::l2_distance_sq_f64(row, coarse);
                let mut full = vec![0f32; dim];
                self.reconstruct_full_into(d as u32, &mut full);
                let full_err = crate::vecmath::l2_distance_sq_f64(row, &full);
                (ivf_err, full_err)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
        (ivf_sum / n as f64, full_sum / n as f64)
    }

    /// Structural invariants: posting lists partition the doc ids and agree
    /// with the stored IVF assignments.
    pub fn validate(&self) -> Result<()> {
        if self.posting.len() != self.lists() {
            return Err(Error::Config("posting list count != lists".into()));
        }
        let mut seen = vec![false; self.doc_count()];
        for (l, list) in self.posting.iter().enumerate() {
            for d in list {
                let di = *d as usize;
                if di >= self.doc_count() {
                    return Err(Error::Config(format!("posting list {l} has bad doc {d}")));
                }
                if seen[di] {
                    return Err(Error::Config(format!("doc {d} appears in two lists")));
                }
                seen[di] = true;
                if self.ivf_ids[di] as usize != l {
                    return Err(Error::Config(format!(
                        "doc {d} posted to list {l} but assigned to {}",
                        self.ivf_ids[di]
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("posting lists do not cover every doc".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let narrow_codes = self.codewords() <= 256;
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.lists() as u32).to_le_bytes());
        out.extend_from_slice(&(self.books() as u32).to_le_bytes());
        out.extend_from_slice(&(self.codewords() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.doc_count() as u32).to_le_bytes());
        for v in self.centroids.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.codebooks.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for d in 0..self.doc_count() {
            out.extend_from_slice(&self.ivf_ids[d].to_le_bytes());
            for j in self.pq_ids_of(d as u32) {
                if narrow_codes {
                    out.push(*j as u8);
                } else {
                    out.extend_from_slice(&j.to_le_bytes());
                }
            }
        }
        for list in &self.posting {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for d in list {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < INDEX_MAGIC.len() + 4 + 32 {
            return Err(Error::file(path, "file too short to be an index"));
        }
        if &bytes[..8] != INDEX_MAGIC {
            return Err(Error::file(path, "bad magic: not an index file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::file(
                path,
                "checksum mismatch: file is truncated or corrupt",
            ));
        }
        let mut cur = Cursor {
            bytes: body,
            offset: 8,
            path,
        };
        let version = cur.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::file(
                path,
                format!("unsupported index version {version} (expected {INDEX_VERSION})"),
            ));
        }
        let lists = cur.u32()? as usize;
        let books = cur.u32()? as usize;
        let codewords = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        let doc_count = cur.u32()? as usize;
        if lists == 0 || books == 0 || codewords < 2 || dim == 0 || !dim.is_multiple_of(books) {
            return Err(Error::file(path, "inconsistent header geometry"));
        }
        let sub_dim = dim / books;
        let centroids = IvfCentroids::new(dim, cur.f32s(lists * dim)?)?;
        let codebooks = PqCodebooks::new(books, codewords, sub_dim, cur.f32s(books * codewords * sub_dim)?)?;
        let narrow_codes = codewords <= 256;
        let mut ivf_ids = Vec::with_capacity(doc_count);
        let mut pq_ids = Vec::with_capacity(doc_count * books);
        for d in 0..doc_count {
            let ivf = cur.u32()?;
            if ivf as usize >= lists {
                return Err(Error::file(path, format!("doc {d}: ivf id {ivf} out of range")));
            }
            ivf_ids.push(ivf);
            for _ in 0..books {
                let j = if narrow_codes {
                    cur.u8()? as u16
                } else {
                    cur.u16()?
                };
                if j as usize >= codewords {
                    return Err(Error::file(path, format!("doc {d}: pq id {j} out of range")));
                }
                pq_ids.push(j);
            }
        }
        let mut posting = Vec::with_capacity(lists);
        for _ in 0..lists {
            let len = cur.u32()? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                list.push(cur.u32()?);
            }
            posting.push(list);
        }
        cur.expect_end()?;
        let artifact = Self {
            centroids,
            codebooks,
            ivf_ids,
            pq_ids,
            posting,
        };
        artifact
            .validate()
            .map_err(|e| Error::file(path, format!("invalid index structure: {e}")))?;
        Ok(artifact)
    }
}

/// Quantizes one vector: nearest centroid, then nearest codeword per residual
/// subspace. Ties go to the lowest id at both stages.
pub fn encode_document(
    v: &[f32],
    centroids: &IvfCentroids,
    codebooks: &PqCodebooks,
) -> DocumentCode {
    assert_eq!(v.len(), centroids.dim(), "dimension mismatch");
    let ivf_id = nearest(v, &centroids.as_embedding_set()).0;
    encode_with_ivf(v, ivf_id as u32, centroids, codebooks)
}

pub(crate) fn encode_with_ivf(
    v: &[f32],
    ivf_id: u32,
    centroids: &IvfCentroids,
    codebooks: &PqCodebooks,
) -> DocumentCode {
    let dim = centroids.dim();
    let sub = codebooks.sub_dim();
    let cent = centroids.row(ivf_id as usize);
    let mut res = vec![0f32; dim];
    for i in 0..dim {
        res[i] = v[i] - cent[i];
    }
    let pq_ids = (0..codebooks.books())
        .map(|m| codebooks.nearest_codeword(m, &res[m * sub..(m + 1) * sub]))
        .collect();
    DocumentCode { ivf_id, pq_ids }
}

/// Coarse reconstruction from a code: a copy of the assigned centroid.
pub fn reconstruct_ivf(code: &DocumentCode, centroids: &IvfCentroids) -> Result<Vec<f32>> {
    if code.ivf_id as usize >= centroids.lists() {
        return Err(Error::Config(format!(
            "ivf id {} out of range ({} lists)",
            code.ivf_id,
            centroids.lists()
        )));
    }
    Ok(centroids.row(code.ivf_id as usize).to_vec())
}

/// Full reconstruction from a code: centroid plus the assigned codeword in
/// each subspace.
pub fn reconstruct_full(
    code: &DocumentCode,
    centroids: &IvfCentroids,
    codebooks: &PqCodebooks,
) -> Result<Vec<f32>> {
    let mut out = reconstruct_ivf(code, centroids)?;
    if code.pq_ids.len() != codebooks.books() {
        return Err(Error::Config(format!(
            "code has {} pq ids, codebooks have {} books",
            code.pq_ids.len(),
            codebooks.books()
        )));
    }
    let sub = codebooks.sub_dim();
    for (m, j) in code.pq_ids.iter().enumerate() {
        if *j as usize >= codebooks.codewords() {
            return Err(Error::Config(format!("pq id {j} out of range")));
        }
        let cw = codebooks.codeword(m, *j as usize);
        for (o, c) in out[m * sub..(m + 1) * sub].iter_mut().zip(cw) {
            *o += c;
        }
    }
    Ok(out)
}

fn build_posting(lists: usize, ivf_ids: &[u32]) -> Vec<Vec<u32>> {
    let mut posting = vec![Vec::new(); lists];
    for (d, l) in ivf_ids.iter().enumerate() {
        posting[*l as usize].push(d as u32);
    }
    posting
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.offset.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.path,
                self.offset as u64,
                "unexpected end of index data",
            )),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn expect_end(&self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(Error::format(
                self.path,
                self.offset as u64,
                "trailing bytes after index data",
            ));
        }
        Ok(())
    }
}
