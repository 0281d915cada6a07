//! Query-time pipeline: embed the query, precompute the query-codeword
//! inner products in an `m x h` lookup table, score codes asymmetrically
//! and return the top-k ids.
//!
//! Scores are inner products; on the unit sphere MIPS ranking equals
//! ascending Euclidean ranking via `||q - x||^2 = 2 - 2 <q, x>`, and the
//! reported distance uses that identity.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{dot, CodeMatrix, Codebooks, FeatureMatrix};
use crate::embedder::EmbedderParams;
use crate::error::{Error, Result};

/// Query-specific table of inner products; entry `(j, c)` is
/// `<z_q, C_j[c]>`.
#[derive(Debug, Clone)]
pub struct LookupTable {
    m: usize,
    h: usize,
    values: Vec<f64>,
}

impl LookupTable {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn entry(&self, j: usize, c: usize) -> f64 {
        self.values[j * self.h + c]
    }
}

/// Codebooks stored per codeword as sorted `(index, value)` pairs, so lookup
/// tables cost work proportional to the number of nonzeros.
#[derive(Debug, Clone)]
pub struct SparseCodebooks {
    m: usize,
    h: usize,
    p: usize,
    /// One list per codeword, indexed `j * h + c`, sorted by dimension.
    entries: Vec<Vec<(u32, f64)>>,
}

impl SparseCodebooks {
    /// Keep only the exactly nonzero entries of each codeword.
    pub fn from_dense(books: &Codebooks) -> Self {
        let (m, h, p) = (books.m(), books.h(), books.p());
        let mut entries = Vec::with_capacity(m * h);
        for j in 0..m {
            for c in 0..h {
                let cw = books.codeword(j, c);
                entries.push(
                    cw.iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0.0)
                        .map(|(d, &v)| (d as u32, v))
                        .collect(),
                );
            }
        }
        Self { m, h, p, entries }
    }

    pub fn to_dense(&self) -> Codebooks {
        let mut vals = vec![0.0; self.m * self.h * self.p];
        for (a, list) in self.entries.iter().enumerate() {
            for &(d, v) in list {
                vals[a * self.p + d as usize] = v;
            }
        }
        Codebooks::new(self.m, self.h, self.p, vals).expect("sparse codebooks were valid")
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

fn check_query_dim(got: usize, p: usize) -> Result<()> {
    if got != p {
        return Err(Error::shape(
            "query embedding",
            format!("p = {p}"),
            format!("{got}"),
        ));
    }
    Ok(())
}

/// Exact inner products between the embedded query and every codeword.
pub fn build_lut(z_q: &[f64], books: &Codebooks) -> Result<LookupTable> {
    check_query_dim(z_q.len(), books.p())?;
    let (m, h) = (books.m(), books.h());
    let mut values = Vec::with_capacity(m * h);
    for j in 0..m {
        for c in 0..h {
            values.push(dot(z_q, books.codeword(j, c)));
        }
    }
    Ok(LookupTable { m, h, values })
}

/// Same table computed from the sparse codeword lists; work is proportional
/// to the total number of nonzeros.
pub fn build_lut_sparse(z_q: &[f64], books: &SparseCodebooks) -> Result<LookupTable> {
    check_query_dim(z_q.len(), books.p)?;
    let values = books
        .entries
        .iter()
        .map(|list| list.iter().map(|&(d, v)| z_q[d as usize] * v).sum())
        .collect();
    Ok(LookupTable {
        m: books.m,
        h: books.h,
        values,
    })
}

/// Approximate inner product of the query with one coded point:
/// `sum_j lut[j][code_j]`, `O(m)` lookups and additions.
pub fn adc_score(code: &[u8], lut: &LookupTable) -> f64 {
    debug_assert_eq!(code.len(), lut.m);
    code.iter()
        .enumerate()
        .map(|(j, &c)| lut.values[j * lut.h + c as usize])
        .sum()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    id: u64,
}

impl Candidate {
    /// Ranking order: higher score first, then lower id.
    fn beats(&self, other: &Candidate) -> bool {
        match self.score.partial_cmp(&other.score).expect("finite scores") {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => self.id < other.id,
        }
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.score == other.score && self.id == other.id
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // max-heap keeps the WORST candidate on top so it can be evicted
    fn cmp(&self, other: &Self) -> Ordering {
        if self.beats(other) {
            Ordering::Less
        } else if other.beats(self) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    }
}

/// Rank all coded points against a prebuilt lookup table; bounded priority
/// selection over one streaming pass.
pub fn rank_with_lut(lut: &LookupTable, codes: &CodeMatrix, k: usize) -> Result<Vec<(u64, f64)>> {
    if codes.n() == 0 {
        return Err(Error::EmptyDatabase);
    }
    if k == 0 {
        return Err(Error::Invalid("k must be >= 1".into()));
    }
    if codes.m() != lut.m || codes.h() != lut.h {
        return Err(Error::shape(
            "codes vs lookup table",
            format!("m={} h={}", lut.m, lut.h),
            format!("m={} h={}", codes.m(), codes.h()),
        ));
    }
    let k = k.min(codes.n());
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for (i, row) in codes.rows().enumerate() {
        let cand = Candidate {
            score: adc_score(row, lut),
            id: i as u64,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand.beats(heap.peek().expect("heap nonempty")) {
            heap.pop();
            heap.push(cand);
        }
    }
    let mut out: Vec<Candidate> = heap.into_vec();
    out.sort_by(|a, b| {
        if a.beats(b) {
            Ordering::Less
        } else if b.beats(a) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    });
    Ok(out.into_iter().map(|c| (c.id, c.score)).collect())
}

/// Embed a raw query and return the `min(k, n)` best database ids by
/// approximate inner product, descending; ties break toward the smaller id.
pub fn topk(
    query_raw: &[f64],
    params: &EmbedderParams,
    books: &Codebooks,
    codes: &CodeMatrix,
    k: usize,
) -> Result<Vec<(u64, f64)>> {
    let z_q = params.embed(query_raw)?;
    let lut = build_lut(&z_q, books)?;
    rank_with_lut(&lut, codes, k)
}

/// Which lookup-table path a batch search uses.
pub enum LutMode<'a> {
    Dense(&'a Codebooks),
    Sparse(&'a SparseCodebooks),
}

/// Rank every query row against the database; queries are independent and
/// run in parallel.
pub fn search_all(
    queries: &FeatureMatrix,
    params: &EmbedderParams,
    mode: &LutMode<'_>,
    codes: &CodeMatrix,
    k: usize,
) -> Result<Vec<Vec<(u64, f64)>>> {
    (0..queries.n())
        .into_par_iter()
        .map(|q| {
            let z_q = params.embed(queries.row(q))?;
            let lut = match mode {
                LutMode::Dense(books) => build_lut(&z_q, books)?,
                LutMode::Sparse(books) => build_lut_sparse(&z_q, books)?,
            };
            rank_with_lut(&lut, codes, k)
        })
        .collect()
}

/// Render search results as CSV rows
/// `query_id,rank,point_id,score,distance` with `distance = 2 - 2 * score`.
pub fn results_to_csv(results: &[Vec<(u64, f64)>]) -> String {
    let mut out = String::from("query_id,rank,point_id,score,distance\n");
    for (q, ranking) in results.iter().enumerate() {
        for (rank, (id, score)) in ranking.iter().enumerate() {
            let distance = 2.0 - 2.0 * score;
            out.push_str(&format!("{q},{},{id},{score},{distance}\n", rank + 1));
        }
    }
    out
}

pub fn write_results_csv(results: &[Vec<(u64, f64)>], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), results_to_csv(results)).map_err(|e| Error::io(path.as_ref(), e))
}

/// Parse rows written by [`results_to_csv`] back into per-query rankings.
pub fn parse_results_csv(text: &str) -> Result<Vec<Vec<(u64, f64)>>> {
    let mut rankings: Vec<Vec<(u64, f64)>> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Invalid(format!(
                "results line {}: expected 5 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_err =
            |what: &str| Error::Invalid(format!("results line {}: bad {what}", lineno + 1));
        let q: usize = fields[0].parse().map_err(|_| parse_err("query_id"))?;
        let id: u64 = fields[2].parse().map_err(|_| parse_err("point_id"))?;
        let score: f64 = fields[3].parse().map_err(|_| parse_err("score"))?;
        while rankings.len() <= q {
            rankings.push(Vec::new());
        }
        rankings[q].push((id, score));
    }
    Ok(rankings)
}
