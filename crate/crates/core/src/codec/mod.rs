//! Systematic random linear network coding over GF(2^8).
//!
//! The first `k` packets of a generation are the source packets themselves; every
//! later packet is a uniformly random, nonzero linear combination of them. The
//! receiver keeps its coefficient rows in reduced row-echelon form.
//!
//! The byte layout produced by [`CodedPacket::to_bytes`] is described in
//! `docs/wire-format.md`.

mod gf256;

pub use gf256::FieldElement;

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};

const TAG_SYSTEMATIC: u8 = 0x00;
const TAG_CODED: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PacketKind {
    /// Source packet `index` (zero-based), carrying an implicit unit vector.
    Systematic(usize),
    /// Coefficient vector of length `k`.
    Coded(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedPacket {
    pub generation_id: u32,
    pub kind: PacketKind,
    pub payload: Vec<u8>,
}

impl CodedPacket {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.payload.len());
        out.extend_from_slice(&self.generation_id.to_be_bytes());
        match &self.kind {
            PacketKind::Systematic(i) => {
                out.push(TAG_SYSTEMATIC);
                out.extend_from_slice(&(*i as u16).to_be_bytes());
            }
            PacketKind::Coded(c) => {
                out.push(TAG_CODED);
                out.extend_from_slice(c);
            }
        }
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses a packet of a generation of size `k`.
    pub fn from_bytes(bytes: &[u8], k: usize) -> Result<Self> {
        let short = || Error::Codec("truncated packet".into());
        let head = bytes.get(..5).ok_or_else(short)?;
        let generation_id = u32::from_be_bytes([head[0], head[1], head[2], head[3]]);
        let (kind, rest) = match head[4] {
            TAG_SYSTEMATIC => {
                let ix = bytes.get(5..7).ok_or_else(short)?;
                let index = u16::from_be_bytes([ix[0], ix[1]]) as usize;
                if index >= k {
                    return Err(Error::Codec(format!("systematic index {index} >= k = {k}")));
                }
                (PacketKind::Systematic(index), &bytes[7..])
            }
            TAG_CODED => {
                let c = bytes.get(5..5 + k).ok_or_else(short)?;
                (PacketKind::Coded(c.to_vec()), &bytes[5 + k..])
            }
            t => return Err(Error::Codec(format!("unknown packet tag {t:#04x}"))),
        };
        Ok(Self {
            generation_id,
            kind,
            payload: rest.to_vec(),
        })
    }
}

/// The `k` source payloads of one generation.
#[derive(Debug, Clone)]
pub struct Generation {
    pub id: u32,
    payloads: Vec<Vec<u8>>,
}

impl Generation {
    pub fn new(id: u32, payloads: Vec<Vec<u8>>) -> Result<Self> {
        let Some(first) = payloads.first() else {
            return Err(Error::Codec("a generation needs at least one packet".into()));
        };
        if payloads.len() > u16::MAX as usize + 1 {
            return Err(Error::Codec("generation too large for the wire format".into()));
        }
        if payloads.iter().any(|p| p.len() != first.len()) {
            return Err(Error::Codec("payload lengths differ".into()));
        }
        Ok(Self { id, payloads })
    }

    pub fn k(&self) -> usize {
        self.payloads.len()
    }

    pub fn payloads(&self) -> &[Vec<u8>] {
        &self.payloads
    }

    /// Random nonzero combination of the source payloads.
    pub fn coded<R: Rng + ?Sized>(&self, rng: &mut R) -> CodedPacket {
        let k = self.k();
        let mut coeffs = vec![0u8; k];
        while coeffs.iter().all(|&c| c == 0) {
            rng.fill(coeffs.as_mut_slice());
        }
        let mut payload = vec![0u8; self.payloads[0].len()];
        for (c, p) in coeffs.iter().zip(&self.payloads) {
            gf256::axpy(&mut payload, *c, p);
        }
        CodedPacket {
            generation_id: self.id,
            kind: PacketKind::Coded(coeffs),
            payload,
        }
    }

    pub fn systematic(&self, index: usize) -> CodedPacket {
        CodedPacket {
            generation_id: self.id,
            kind: PacketKind::Systematic(index),
            payload: self.payloads[index].clone(),
        }
    }
}

/// The `m`-th transmission of a generation: source packet `m` while `m < k`,
/// a random combination afterwards.
pub fn encode<R: Rng + ?Sized>(generation: &Generation, m: usize, rng: &mut R) -> CodedPacket {
    if m < generation.k() {
        generation.systematic(m)
    } else {
        generation.coded(rng)
    }
}

#[derive(Debug, Clone)]
struct Row {
    pivot: usize,
    coeffs: Vec<u8>,
    payload: Vec<u8>,
}

/// Receiver side of one generation.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub generation_id: u32,
    k: usize,
    /// Sorted by pivot; each pivot column is zero in every other row.
    rows: Vec<Row>,
    seen_systematic: BTreeSet<usize>,
    payload_len: Option<usize>,
}

impl DecoderState {
    pub fn new(generation_id: u32, k: usize) -> Self {
        Self {
            generation_id,
            k,
            rows: Vec::with_capacity(k),
            seen_systematic: BTreeSet::new(),
            payload_len: None,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Degrees of freedom still missing.
    pub fn missing(&self) -> usize {
        self.k - self.rank()
    }

    pub fn is_complete(&self) -> bool {
        self.rank() == self.k
    }

    pub fn seen_systematic(&self) -> &BTreeSet<usize> {
        &self.seen_systematic
    }

    /// Adds a packet and reports whether it raised the rank.
    pub fn ingest(&mut self, pkt: &CodedPacket) -> Result<bool> {
        if pkt.generation_id != self.generation_id {
            return Err(Error::Codec(format!(
                "packet of generation {} offered to decoder of generation {}",
                pkt.generation_id, self.generation_id
            )));
        }
        match self.payload_len {
            Some(n) if n != pkt.payload.len() => {
                return Err(Error::Codec("payload length changed within a generation".into()))
            }
            _ => self.payload_len = Some(pkt.payload.len()),
        }
        let mut coeffs = match &pkt.kind {
            PacketKind::Systematic(i) if *i < self.k => {
                self.seen_systematic.insert(*i);
                let mut v = vec![0u8; self.k];
                v[*i] = 1;
                v
            }
            PacketKind::Coded(c) if c.len() == self.k => c.clone(),
            _ => return Err(Error::Codec("packet does not fit this generation size".into())),
        };
        if self.is_complete() {
            return Ok(false);
        }
        let mut payload = pkt.payload.clone();
        for row in &self.rows {
            let c = coeffs[row.pivot];
            if c != 0 {
                gf256::axpy(&mut coeffs, c, &row.coeffs);
                gf256::axpy(&mut payload, c, &row.payload);
            }
        }
        let Some(pivot) = coeffs.iter().position(|&c| c != 0) else {
            return Ok(false);
        };
        let inv = FieldElement(coeffs[pivot]).inv().expect("nonzero pivot").0;
        gf256::scale(&mut coeffs, inv);
        gf256::scale(&mut payload, inv);
        for row in &mut self.rows {
            let c = row.coeffs[pivot];
            if c != 0 {
                gf256::axpy(&mut row.coeffs, c, &coeffs);
                gf256::axpy(&mut row.payload, c, &payload);
            }
        }
        let at = self.rows.partition_point(|r| r.pivot < pivot);
        self.rows.insert(
            at,
            Row {
                pivot,
                coeffs,
                payload,
            },
        );
        Ok(true)
    }

    /// Source payloads, once the rank is full.
    pub fn decode(&self) -> Result<Vec<Vec<u8>>> {
        if !self.is_complete() {
            return Err(Error::Codec(format!(
                "rank {} of {} is not enough to decode",
                self.rank(),
                self.k
            )));
        }
        Ok(self.rows.iter().map(|r| r.payload.clone()).collect())
    }

    /// Number of leading source packets that can be handed to the application.
    pub fn deliverable_prefix(&self) -> usize {
        if self.is_complete() {
            return self.k;
        }
        (0..self.k)
            .take_while(|i| self.seen_systematic.contains(i))
            .count()
    }
}

/// Free-function form of [`DecoderState::ingest`].
pub fn ingest(state: &mut DecoderState, pkt: &CodedPacket) -> Result<bool> {
    state.ingest(pkt)
}

/// Free-function form of [`DecoderState::deliverable_prefix`].
pub fn deliverable_prefix(state: &DecoderState) -> usize {
    state.deliverable_prefix()
}
