//! Random linear network coding over generations of `h` source packets.
//!
//! Every coded packet carries its encoding vector (the tag) and the column
//! permutation of its generation, so relays can recode without coordination
//! and destinations can decode without knowing the network.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::gf::{Field, Matrix, Symbol};

/// ISO/IEC 7816-4 padding marker.
pub const PAD_MARKER: u8 = 0x80;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RlncError {
    #[error("tag has {got} symbols, generation block size is {expected}")]
    TagLengthMismatch { expected: usize, got: usize },
    #[error("payload has {got} symbols, generation packet length is {expected}")]
    PayloadLengthMismatch { expected: usize, got: usize },
    #[error("packet for generation {got} fed to generation {expected}")]
    GenerationMismatch { expected: u16, got: u16 },
    #[error("column permutation differs from the one already seen for this generation")]
    PermutationMismatch,
    #[error("cannot recode an empty buffer")]
    EmptyRecode,
    #[error("recode buffer mixes flows or generations")]
    MixedBuffer,
    #[error("no padding marker found")]
    MissingPadding,
    #[error("generation expects {expected} source packets, got {got}")]
    SourceCount { expected: usize, got: usize },
}

/// Split `data` into `packet_len`-byte packets grouped `block_size` at a time.
///
/// The byte after the data is 0x80 and everything after it is zero, so the
/// last real byte is always recoverable: data that exactly fills its last
/// packet gets one extra packet `[0x80, 0, ..]`, and an incomplete final group
/// is filled out with all-zero packets.
pub fn pad_block(data: &[u8], packet_len: usize, block_size: usize) -> Vec<Vec<Vec<u8>>> {
    assert!(packet_len > 0 && block_size > 0, "packet_len and block_size must be positive");
    let mut stream = Vec::with_capacity(data.len() + packet_len);
    stream.extend_from_slice(data);
    stream.push(PAD_MARKER);
    let npackets = stream.len().div_ceil(packet_len);
    let ngroups = npackets.div_ceil(block_size);
    stream.resize(ngroups * block_size * packet_len, 0);
    stream
        .chunks(packet_len * block_size)
        .map(|g| g.chunks(packet_len).map(<[u8]>::to_vec).collect())
        .collect()
}

/// Undo [`pad_block`] on the concatenated packets.
pub fn unpad<'a, I>(packets: I) -> Result<Vec<u8>, RlncError>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut out: Vec<u8> = packets.into_iter().flatten().copied().collect();
    let end = out.iter().rposition(|&b| b != 0).ok_or(RlncError::MissingPadding)?;
    if out[end] != PAD_MARKER {
        return Err(RlncError::MissingPadding);
    }
    out.truncate(end);
    Ok(out)
}

/// How encoding vectors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagSampling {
    /// Uniform over nonzero vectors.
    Uniform,
    /// Uniform over vectors outside the span of the rows drawn so far, until
    /// the batch reaches full rank.
    RankIncreasing,
    /// Row `i` combines only source packets `0..=i`, with a nonzero
    /// coefficient on packet `i`.
    #[default]
    LowerTriangular,
}

/// Source-side block of `h` packets, each `packet_len` symbols long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub id: u16,
    pub block_size: usize,
    pub packet_len: usize,
    rows: Vec<Vec<Symbol>>,
}

impl Generation {
    pub fn new(id: u16, block_size: usize, packet_len: usize) -> Self {
        Generation { id, block_size, packet_len, rows: Vec::with_capacity(block_size) }
    }

    pub fn from_rows(id: u16, rows: Vec<Vec<Symbol>>) -> Result<Self, RlncError> {
        let packet_len = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != packet_len) {
            return Err(RlncError::PayloadLengthMismatch { expected: packet_len, got: bad.len() });
        }
        Ok(Generation { id, block_size: rows.len(), packet_len, rows })
    }

    /// Build a generation from a padded byte group.
    pub fn from_bytes(field: &Field, id: u16, packets: &[Vec<u8>]) -> Result<Self, RlncError> {
        Self::from_rows(id, packets.iter().map(|p| field.unpack(p)).collect())
    }

    pub fn push(&mut self, row: Vec<Symbol>) -> Result<(), RlncError> {
        if row.len() != self.packet_len {
            return Err(RlncError::PayloadLengthMismatch { expected: self.packet_len, got: row.len() });
        }
        if self.rows.len() == self.block_size {
            return Err(RlncError::SourceCount { expected: self.block_size, got: self.rows.len() + 1 });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.block_size
    }

    pub fn rows(&self) -> &[Vec<Symbol>] {
        &self.rows
    }

    pub fn source_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.rows).expect("rows share packet_len")
    }
}

/// The unit of transfer: one coded row of one generation of one flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedPacket {
    pub flow: u8,
    pub generation: u16,
    /// Column permutation applied by the encoder: coded column `k` carries
    /// source packet `perm[k]`.
    pub perm: Vec<u8>,
    pub tag: Vec<Symbol>,
    pub payload: Vec<Symbol>,
}

impl CodedPacket {
    /// One past the last nonzero tag entry.
    pub fn span(&self) -> usize {
        self.tag.iter().rposition(|&c| c != 0).map_or(0, |i| i + 1)
    }

    /// The uncoded `index`-th source packet as a coded row with a unit tag.
    pub fn systematic(flow: u8, generation: u16, block_size: usize, index: usize, payload: Vec<Symbol>) -> Self {
        let mut tag = vec![0; block_size];
        tag[index] = 1;
        CodedPacket { flow, generation, perm: identity_perm(block_size), tag, payload }
    }

    pub fn block_size(&self) -> usize {
        self.tag.len()
    }
}

pub fn identity_perm(h: usize) -> Vec<u8> {
    (0..h as u8).collect()
}

fn random_symbol<R: Rng + ?Sized>(field: &Field, rng: &mut R) -> Symbol {
    rng.gen_range(0..field.order() as u16) as Symbol
}

fn random_nonzero<R: Rng + ?Sized>(field: &Field, rng: &mut R) -> Symbol {
    rng.gen_range(1..field.order() as u16) as Symbol
}

fn random_nonzero_vector<R: Rng + ?Sized>(field: &Field, len: usize, rng: &mut R) -> Vec<Symbol> {
    loop {
        let v: Vec<Symbol> = (0..len).map(|_| random_symbol(field, rng)).collect();
        if v.iter().any(|&s| s != 0) {
            return v;
        }
    }
}

/// Draws encoding vectors and applies them to generations.
#[derive(Debug, Clone)]
pub struct Encoder {
    field: Arc<Field>,
    pub sampling: TagSampling,
    /// Emit the first `h` packets uncoded (unit tags) before coding.
    pub systematic_first: bool,
}

impl Encoder {
    pub fn new(field: Arc<Field>, sampling: TagSampling) -> Self {
        Encoder { field, sampling, systematic_first: false }
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    /// `count` encoding vectors of length `h` under the configured sampling.
    pub fn draw_tags<R: Rng + ?Sized>(&self, h: usize, count: usize, rng: &mut R) -> Matrix {
        let f = &*self.field;
        let mut tags = Matrix::zeros(0, h);
        let mut span = Matrix::zeros(0, h);
        for i in 0..count {
            let row = if self.systematic_first && i < h {
                let mut t = vec![0; h];
                t[i] = 1;
                t
            } else {
                match self.sampling {
                    TagSampling::Uniform => random_nonzero_vector(f, h, rng),
                    TagSampling::RankIncreasing => {
                        if span.rows() >= h {
                            random_nonzero_vector(f, h, rng)
                        } else {
                            loop {
                                let v = random_nonzero_vector(f, h, rng);
                                let mut probe = span.clone();
                                probe.push_row(&v).expect("width h");
                                if probe.rank(f) > span.rows() {
                                    break v;
                                }
                            }
                        }
                    }
                    TagSampling::LowerTriangular => {
                        if i < h {
                            let mut t = vec![0; h];
                            for c in t.iter_mut().take(i) {
                                *c = random_symbol(f, rng);
                            }
                            t[i] = random_nonzero(f, rng);
                            t
                        } else {
                            random_nonzero_vector(f, h, rng)
                        }
                    }
                }
            };
            if span.rows() < h {
                let mut probe = span.clone();
                probe.push_row(&row).expect("width h");
                if probe.rank(f) > span.rows() {
                    span = probe;
                }
            }
            tags.push_row(&row).expect("width h");
        }
        tags
    }

    /// Encode `count` packets from a complete generation.
    pub fn encode_generation<R: Rng + ?Sized>(
        &self,
        flow: u8,
        generation: &Generation,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<CodedPacket>, RlncError> {
        let tags = self.draw_tags(generation.block_size, count, rng);
        self.encode_with_tags(flow, generation, &tags, &identity_perm(generation.block_size))
    }

    /// Encode with explicit tags over the columns reordered by `perm`.
    pub fn encode_with_tags(
        &self,
        flow: u8,
        generation: &Generation,
        tags: &Matrix,
        perm: &[u8],
    ) -> Result<Vec<CodedPacket>, RlncError> {
        if !generation.is_complete() {
            return Err(RlncError::SourceCount { expected: generation.block_size, got: generation.len() });
        }
        if tags.cols() != generation.block_size {
            return Err(RlncError::TagLengthMismatch { expected: generation.block_size, got: tags.cols() });
        }
        let source = generation.source_matrix();
        let permuted = Matrix::from_rows(
            &perm.iter().map(|&p| source.row(p as usize).to_vec()).collect::<Vec<_>>(),
        )
        .expect("rows share packet_len");
        Ok(tags
            .iter_rows()
            .map(|tag| CodedPacket {
                flow,
                generation: generation.id,
                perm: perm.to_vec(),
                tag: tag.to_vec(),
                payload: permuted.combine_rows(&self.field, tag),
            })
            .collect())
    }
}

fn check_buffer(buffered: &[CodedPacket]) -> Result<&CodedPacket, RlncError> {
    let first = buffered.first().ok_or(RlncError::EmptyRecode)?;
    if buffered.iter().any(|p| {
        p.flow != first.flow
            || p.generation != first.generation
            || p.perm != first.perm
            || p.tag.len() != first.tag.len()
            || p.payload.len() != first.payload.len()
    }) {
        return Err(RlncError::MixedBuffer);
    }
    Ok(first)
}

/// Apply the same combination to tags and payloads of buffered packets.
pub fn recode_with(field: &Field, buffered: &[CodedPacket], coeffs: &[Symbol]) -> Result<CodedPacket, RlncError> {
    let first = check_buffer(buffered)?;
    let mut tag = vec![0; first.tag.len()];
    let mut payload = vec![0; first.payload.len()];
    for (p, &c) in buffered.iter().zip(coeffs) {
        field.axpy(&mut tag, &p.tag, c);
        field.axpy(&mut payload, &p.payload, c);
    }
    Ok(CodedPacket { flow: first.flow, generation: first.generation, perm: first.perm.clone(), tag, payload })
}

/// Random nonzero combination of buffered packets of one flow and generation.
pub fn recode<R: Rng + ?Sized>(field: &Field, buffered: &[CodedPacket], rng: &mut R) -> Result<CodedPacket, RlncError> {
    check_buffer(buffered)?;
    let coeffs = random_nonzero_vector(field, buffered.len(), rng);
    recode_with(field, buffered, &coeffs)
}

/// Combination of the buffered rows whose tags vanish from column `span` on.
/// Every such row gets a nonzero coefficient, so a stream of growing spans
/// keeps the lower-triangular shape that earliest decoding relies on.
pub fn recode_prefix<R: Rng + ?Sized>(
    field: &Field,
    buffered: &[CodedPacket],
    span: usize,
    rng: &mut R,
) -> Result<CodedPacket, RlncError> {
    check_buffer(buffered)?;
    let mut rows: Vec<CodedPacket> = buffered.iter().filter(|p| p.span() <= span).cloned().collect();
    if rows.is_empty() {
        let least = buffered.iter().map(CodedPacket::span).min().unwrap_or(0);
        rows = buffered.iter().filter(|p| p.span() == least).cloned().collect();
    }
    let coeffs: Vec<Symbol> = (0..rows.len()).map(|_| random_nonzero(field, rng)).collect();
    recode_with(field, &rows, &coeffs)
}

/// Decoder flavour; both decode earliest, rank-deficient additionally
/// estimates still-ambiguous symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    #[default]
    FullRank,
    RankDeficient,
}

/// Incremental Gauss-Jordan decoder for one generation.
///
/// Rows are kept fully reduced and sorted by pivot column. A source packet is
/// decoded as soon as its pivot row has no other nonzero tag entry.
#[derive(Debug, Clone)]
pub struct Decoder {
    field: Arc<Field>,
    pub mode: DecoderMode,
    generation: u16,
    block_size: usize,
    packet_len: usize,
    perm: Option<Vec<u8>>,
    /// `[tag | payload]`, reduced.
    rows: Vec<Vec<Symbol>>,
    pivots: Vec<usize>,
    decoded: Vec<bool>,
    delivered: Vec<Option<Vec<Symbol>>>,
    received: usize,
}

/// A source packet released by the decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    /// Position within the generation, in the original (unpermuted) order.
    pub index: usize,
    pub payload: Vec<Symbol>,
}

impl Decoder {
    pub fn new(field: Arc<Field>, mode: DecoderMode, generation: u16, block_size: usize, packet_len: usize) -> Self {
        Decoder {
            field,
            mode,
            generation,
            block_size,
            packet_len,
            perm: None,
            rows: Vec::with_capacity(block_size),
            pivots: Vec::with_capacity(block_size),
            decoded: vec![false; block_size],
            delivered: vec![None; block_size],
            received: 0,
        }
    }

    pub fn generation(&self) -> u16 {
        self.generation
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn packet_len(&self) -> usize {
        self.packet_len
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.block_size
    }

    /// Packets offered so far, innovative or not.
    pub fn received(&self) -> usize {
        self.received
    }

    pub fn decoded_mask(&self) -> &[bool] {
        &self.decoded
    }

    pub fn decoded_count(&self) -> usize {
        self.decoded.iter().filter(|d| **d).count()
    }

    /// Recovered source packets by original index.
    pub fn delivered(&self) -> &[Option<Vec<Symbol>>] {
        &self.delivered
    }

    pub fn perm(&self) -> Option<&[u8]> {
        self.perm.as_deref()
    }

    /// Reduced `[tag | payload]` rows, sorted by pivot column.
    pub fn reduced_rows(&self) -> &[Vec<Symbol>] {
        &self.rows
    }

    pub fn pivot_cols(&self) -> &[usize] {
        &self.pivots
    }

    /// Tag part of the reduced rows.
    pub fn tag_matrix(&self) -> Matrix {
        let tags: Vec<&[Symbol]> = self.rows.iter().map(|r| &r[..self.block_size]).collect();
        if tags.is_empty() {
            Matrix::zeros(0, self.block_size)
        } else {
            Matrix::from_rows(&tags).expect("uniform width")
        }
    }

    fn validate(&self, pkt: &CodedPacket) -> Result<(), RlncError> {
        if pkt.generation != self.generation {
            return Err(RlncError::GenerationMismatch { expected: self.generation, got: pkt.generation });
        }
        if pkt.tag.len() != self.block_size {
            return Err(RlncError::TagLengthMismatch { expected: self.block_size, got: pkt.tag.len() });
        }
        if pkt.payload.len() != self.packet_len {
            return Err(RlncError::PayloadLengthMismatch { expected: self.packet_len, got: pkt.payload.len() });
        }
        if let Some(p) = &self.perm {
            if *p != pkt.perm {
                return Err(RlncError::PermutationMismatch);
            }
        }
        Ok(())
    }

    /// Would `pkt` raise the rank? Does not modify the decoder.
    pub fn is_innovative(&self, pkt: &CodedPacket) -> bool {
        let mut tag = pkt.tag.clone();
        for (row, &p) in self.rows.iter().zip(&self.pivots) {
            let c = tag[p];
            if c != 0 {
                self.field.axpy(&mut tag, &row[..self.block_size], c);
            }
        }
        tag.iter().any(|&s| s != 0)
    }

    /// Add a packet and return the source packets that became decodable.
    /// Linearly dependent packets change nothing.
    pub fn ingest(&mut self, pkt: &CodedPacket) -> Result<Vec<Decoded>, RlncError> {
        self.validate(pkt)?;
        self.received += 1;
        if self.perm.is_none() {
            self.perm = Some(pkt.perm.clone());
        }
        let h = self.block_size;
        let f = &*self.field;
        let mut row = Vec::with_capacity(h + self.packet_len);
        row.extend_from_slice(&pkt.tag);
        row.extend_from_slice(&pkt.payload);
        for (r, &p) in self.rows.iter().zip(&self.pivots) {
            let c = row[p];
            if c != 0 {
                f.axpy(&mut row, r, c);
            }
        }
        let Some(pivot) = row[..h].iter().position(|&s| s != 0) else {
            return Ok(Vec::new());
        };
        let inv = f.inv(row[pivot]).expect("nonzero pivot");
        f.scale(&mut row, inv);
        for r in self.rows.iter_mut() {
            let c = r[pivot];
            if c != 0 {
                f.axpy(r, &row, c);
            }
        }
        let at = self.pivots.partition_point(|&p| p < pivot);
        self.pivots.insert(at, pivot);
        self.rows.insert(at, row);
        Ok(self.collect_decoded())
    }

    fn collect_decoded(&mut self) -> Vec<Decoded> {
        let h = self.block_size;
        let perm = self.perm.clone().unwrap_or_else(|| identity_perm(h));
        let mut out = Vec::new();
        for (row, &p) in self.rows.iter().zip(&self.pivots) {
            let index = perm[p] as usize;
            if self.decoded[index] {
                continue;
            }
            let unit = row[..h].iter().enumerate().all(|(c, &s)| c == p || s == 0);
            if unit {
                let payload = row[h..].to_vec();
                self.decoded[index] = true;
                self.delivered[index] = Some(payload.clone());
                out.push(Decoded { index, payload });
            }
        }
        out.sort_by_key(|d| d.index);
        out
    }
}

/// Greedy column reordering so each row prefix has its pivots aligned left.
///
/// Row `r` is reduced against the pivots of rows `0..r`; the earliest column
/// at or after `r` with a nonzero reduced entry is swapped into column `r`.
/// Returns the reordered matrix and `perm` with `out[:, k] = g[:, perm[k]]`.
pub fn precondition_reorder(field: &Field, g: &Matrix) -> (Matrix, Vec<u8>) {
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = g.clone();
    let mut perm: Vec<u8> = (0..cols as u8).collect();
    let mut basis: Vec<(usize, Vec<Symbol>)> = Vec::new();
    for r in 0..rows.min(cols) {
        let mut reduced = out.row(r).to_vec();
        for (p, b) in &basis {
            let c = reduced[*p];
            if c != 0 {
                field.axpy(&mut reduced, b, c);
            }
        }
        let Some(c) = (r..cols).find(|&c| reduced[c] != 0) else {
            continue;
        };
        if c != r {
            out.swap_cols(r, c);
            perm.swap(r, c);
            reduced.swap(r, c);
            for (_, b) in basis.iter_mut() {
                b.swap(r, c);
            }
        }
        let inv = field.inv(reduced[r]).expect("nonzero");
        field.scale(&mut reduced, inv);
        for (_, b) in basis.iter_mut() {
            let k = b[r];
            if k != 0 {
                field.axpy(b, &reduced, k);
            }
        }
        basis.push((r, reduced));
    }
    (out, perm)
}

/// Per-symbol trust level of a rank-deficient estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Confidence {
    /// Uniquely determined by the received rows.
    Certain,
    /// Picked by the underdetermined-column strategy.
    Heuristic,
    Undecoded,
}

/// One payload column `l` of the reduced system: pivot rows expressed over
/// the free unknowns.
#[derive(Debug, Clone)]
pub struct ColumnSystem<'a> {
    pub block_size: usize,
    pub free_cols: &'a [usize],
    /// `(pivot column, coefficients on free_cols, right-hand side)`.
    pub rows: Vec<(usize, &'a [Symbol], Symbol)>,
}

/// Picks one solution from an underdetermined column, or gives up.
pub trait UnderdeterminedSolver: Send + Sync {
    /// Returns all `block_size` unknowns in coded-column order.
    fn resolve(&self, field: &Field, system: &ColumnSystem<'_>) -> Option<Vec<Symbol>>;

    /// Candidate evaluations so far (cost accounting); optional.
    fn cost_hint(&self, field: &Field, free: usize) -> u64 {
        let _ = (field, free);
        0
    }
}

/// Exhaustive minimum-Hamming-weight solution over at most `max_free` free
/// unknowns. Stands in for the lowest-weight LP decoder; ties go to the
/// first assignment in counting order (free values read as base-q digits).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinWeightSearch {
    pub max_free: usize,
}

impl Default for MinWeightSearch {
    fn default() -> Self {
        MinWeightSearch { max_free: 2 }
    }
}

impl UnderdeterminedSolver for MinWeightSearch {
    fn resolve(&self, field: &Field, system: &ColumnSystem<'_>) -> Option<Vec<Symbol>> {
        let nfree = system.free_cols.len();
        if nfree > self.max_free {
            return None;
        }
        let q = field.order();
        let total = q.pow(nfree as u32);
        let mut free_vals = vec![0 as Symbol; nfree];
        let mut best: Option<(usize, Vec<Symbol>)> = None;
        let mut pivot_vals = vec![0 as Symbol; system.rows.len()];
        for idx in 0..total {
            let mut x = idx;
            for v in free_vals.iter_mut() {
                *v = (x % q) as Symbol;
                x /= q;
            }
            let mut weight = free_vals.iter().filter(|&&v| v != 0).count();
            for (slot, (_, coeffs, rhs)) in pivot_vals.iter_mut().zip(&system.rows) {
                let val = coeffs.iter().zip(&free_vals).fold(*rhs, |acc, (a, v)| acc ^ field.mul(*a, *v));
                *slot = val;
                weight += (val != 0) as usize;
            }
            if best.as_ref().is_none_or(|(w, _)| weight < *w) {
                let mut sol = vec![0; system.block_size];
                for (&c, &v) in system.free_cols.iter().zip(&free_vals) {
                    sol[c] = v;
                }
                for ((p, _, _), &v) in system.rows.iter().zip(&pivot_vals) {
                    sol[*p] = v;
                }
                best = Some((weight, sol));
            }
        }
        best.map(|(_, s)| s)
    }

    fn cost_hint(&self, field: &Field, free: usize) -> u64 {
        if free > self.max_free {
            0
        } else {
            (field.order() as u64).pow(free as u32)
        }
    }
}

/// Symbol estimates for every source packet of a generation.
#[derive(Debug, Clone)]
pub struct RankDeficientEstimate {
    /// `h x N`, rows in original source order.
    pub values: Matrix,
    /// Row-major, same shape as `values`.
    pub confidence: Vec<Confidence>,
    /// Candidate assignments evaluated by the solver.
    pub candidates: u64,
}

impl RankDeficientEstimate {
    pub fn confidence_at(&self, row: usize, col: usize) -> Confidence {
        self.confidence[row * self.values.cols() + col]
    }

    pub fn count(&self, c: Confidence) -> usize {
        self.confidence.iter().filter(|&&x| x == c).count()
    }

    /// Symbols (certain or heuristic) equal to the true source rows.
    pub fn correct_symbols(&self, truth: &[Vec<Symbol>]) -> usize {
        let n = self.values.cols();
        let mut ok = 0;
        for (r, t) in truth.iter().enumerate().take(self.values.rows()) {
            for (c, &s) in t.iter().enumerate().take(n) {
                if self.confidence[r * n + c] != Confidence::Undecoded && self.values.get(r, c) == s {
                    ok += 1;
                }
            }
        }
        ok
    }
}

/// Solve `V_l = G W_l` column by column from the decoder's reduced rows.
///
/// Unknowns fixed by a unit pivot row are certain. The rest are resolved per
/// column by `solver` when the column is underdetermined, else undecoded.
pub fn rank_deficient_solve(field: &Field, decoder: &Decoder, solver: &dyn UnderdeterminedSolver) -> RankDeficientEstimate {
    let h = decoder.block_size();
    let n = decoder.packet_len();
    let rows = decoder.reduced_rows();
    let pivots = decoder.pivot_cols();
    let perm = decoder.perm().map(<[u8]>::to_vec).unwrap_or_else(|| identity_perm(h));
    let free_cols: Vec<usize> = (0..h).filter(|c| !pivots.contains(c)).collect();
    let free_coeffs: Vec<Vec<Symbol>> =
        rows.iter().map(|r| free_cols.iter().map(|&c| r[c]).collect()).collect();
    let certain_row: Vec<bool> = free_coeffs.iter().map(|fc| fc.iter().all(|&s| s == 0)).collect();

    // coded-column order first, permuted at the end
    let mut values = Matrix::zeros(h, n);
    let mut conf = vec![Confidence::Undecoded; h * n];
    for (i, (&p, row)) in pivots.iter().zip(rows).enumerate() {
        if certain_row[i] {
            values.row_mut(p).copy_from_slice(&row[h..]);
            conf[p * n..(p + 1) * n].fill(Confidence::Certain);
        }
    }
    let ambiguous: Vec<usize> = (0..rows.len()).filter(|&i| !certain_row[i]).collect();
    let mut candidates = 0u64;
    if !free_cols.is_empty() {
        let per_column = solver.cost_hint(field, free_cols.len());
        for l in 0..n {
            let system = ColumnSystem {
                block_size: h,
                free_cols: &free_cols,
                rows: ambiguous.iter().map(|&i| (pivots[i], free_coeffs[i].as_slice(), rows[i][h + l])).collect(),
            };
            candidates += per_column;
            if let Some(sol) = solver.resolve(field, &system) {
                for &c in free_cols.iter().chain(ambiguous.iter().map(|&i| &pivots[i])) {
                    values.set(c, l, sol[c]);
                    conf[c * n + l] = Confidence::Heuristic;
                }
            }
        }
    }
    let mut out_vals = Matrix::zeros(h, n);
    let mut out_conf = vec![Confidence::Undecoded; h * n];
    for (k, &src) in perm.iter().enumerate() {
        let src = src as usize;
        out_vals.row_mut(src).copy_from_slice(values.row(k));
        out_conf[src * n..(src + 1) * n].copy_from_slice(&conf[k * n..(k + 1) * n]);
    }
    RankDeficientEstimate { values: out_vals, confidence: out_conf, candidates }
}

/// Is coded packet `j` (1-based) of the prefix `{1..j}` a valid reduced
/// packet for source position `j`, equal to the ideal reduction applied to
/// the original data?
///
/// "Regular": eliminate the stacked `[tag | payload]` rows of the prefix.
/// "Ideal": reduce the tag rows alone and multiply by the source data.
pub fn prefix_equivalent(field: &Field, g: &Matrix, data: &Matrix, j: usize) -> bool {
    let h = g.cols();
    let tags = g.top(j);
    let coded = tags.mul(field, data).expect("dims");
    let mut regular = tags.hconcat(&coded).expect("dims");
    let pivots = regular.eliminate_in_place(field, h);
    if pivots.len() != j || pivots[j - 1] != j - 1 {
        return false;
    }
    let ideal_tags = tags.gaussian_eliminate(field).rref;
    let ideal_row = ideal_tags.row(j - 1);
    let ideal_payload = data.combine_rows(field, ideal_row);
    regular.row(j - 1)[..h] == *ideal_row && regular.row(j - 1)[h..] == ideal_payload[..]
}

/// Per-packet equivalence rates before and after column reordering.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PreconditionReport {
    pub trials: usize,
    pub block_size: usize,
    pub field_bits: u8,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// Random blocks with rank-increasing coding matrices and uniform data,
/// tested prefix by prefix, with and without [`precondition_reorder`].
pub fn preconditioning_experiment<R: Rng + ?Sized>(
    field: Arc<Field>,
    block_size: usize,
    packet_len: usize,
    trials: usize,
    rng: &mut R,
) -> PreconditionReport {
    let encoder = Encoder::new(field.clone(), TagSampling::RankIncreasing);
    let mut before = vec![0usize; block_size];
    let mut after = vec![0usize; block_size];
    for _ in 0..trials {
        let g = encoder.draw_tags(block_size, block_size, rng);
        let data = Matrix::random(&field, block_size, packet_len, rng);
        let (g2, perm) = precondition_reorder(&field, &g);
        let data2 = Matrix::from_rows(
            &perm.iter().map(|&p| data.row(p as usize).to_vec()).collect::<Vec<_>>(),
        )
        .expect("rows");
        for j in 1..=block_size {
            before[j - 1] += prefix_equivalent(&field, &g, &data, j) as usize;
            after[j - 1] += prefix_equivalent(&field, &g2, &data2, j) as usize;
        }
    }
    let rate = |v: Vec<usize>| v.into_iter().map(|c| c as f64 / trials.max(1) as f64).collect();
    PreconditionReport { trials, block_size, field_bits: field.bits(), before: rate(before), after: rate(after) }
}
