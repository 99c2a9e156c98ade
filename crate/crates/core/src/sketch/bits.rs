//! Wire payloads: the uplink one-bit sketch and the downlink consensus.
//!
//! Sketch payload: `⌈m/8⌉` bytes, coordinate `i` in bit `i % 8` of byte
//! `i / 8` (least significant bit first), `1 ↦ +1`, `0 ↦ −1`. Unused high
//! bits of the last byte are zero.
//!
//! Consensus payload: `⌈m/4⌉` bytes of two-bit trits, coordinate `i` in bits
//! `2(i % 4)..2(i % 4)+2` of byte `i / 4`, `00 ↦ 0`, `01 ↦ +1`, `10 ↦ −1`.
//!
//! A message is an 8-byte little-endian `m` header followed by the payload.
//! Cost accounting counts payload bits only (`m` per sketch), never the
//! header or the byte padding.

use crate::error::{Error, Result};

const HEADER_LEN: usize = 8;

/// `sign(Φw)` packed one bit per coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OneBitSketch {
    m: usize,
    bits: Vec<u8>,
}

impl OneBitSketch {
    pub(crate) fn from_positive(m: usize, positive: impl Fn(usize) -> bool) -> Self {
        let mut bits = vec![0u8; m.div_ceil(8)];
        for i in 0..m {
            if positive(i) {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        Self { m, bits }
    }

    /// Builds a sketch from ±1 entries.
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        if let Some(i) = signs.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument(format!(
                "sketch entry {i} is {}, expected ±1",
                signs[i]
            )));
        }
        Ok(Self::from_positive(signs.len(), |i| signs[i] == 1))
    }

    /// Number of sign entries.
    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Coordinate `i` as ±1.
    pub fn sign(&self, i: usize) -> i8 {
        if self.bits[i / 8] >> (i % 8) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn signs(&self) -> Vec<i8> {
        (0..self.m).map(|i| self.sign(i)).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.sign(i) as f64).collect()
    }

    /// Bits charged to the communication ledger.
    pub fn payload_bits(&self) -> u64 {
        self.m as u64
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.clone()
    }

    pub fn from_bytes(bytes: &[u8], m: usize) -> Result<Self> {
        let want = m.div_ceil(8);
        if bytes.len() != want {
            return Err(Error::CorruptPayload(format!(
                "sketch of dimension {m} needs {want} bytes, got {}",
                bytes.len()
            )));
        }
        if !m.is_multiple_of(8) {
            let used = (1u16 << (m % 8)) - 1;
            if u16::from(bytes[want - 1]) & !used != 0 {
                return Err(Error::CorruptPayload("nonzero padding bits".into()));
            }
        }
        Ok(Self {
            m,
            bits: bytes.to_vec(),
        })
    }

    /// Header plus payload.
    pub fn encode_message(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bits.len());
        out.extend_from_slice(&(self.m as u64).to_le_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn decode_message(msg: &[u8]) -> Result<Self> {
        let (m, payload) = split_header(msg)?;
        Self::from_bytes(payload, m)
    }
}

/// How the consensus is charged and encoded on the downlink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownlinkMode {
    /// Two-bit trits; zero entries survive.
    #[default]
    Ternary,
    /// Ties forced to +1 and sent as a one-bit sketch.
    StrictOneBit,
}

impl DownlinkMode {
    pub fn bits_per_entry(self) -> u64 {
        match self {
            DownlinkMode::Ternary => 2,
            DownlinkMode::StrictOneBit => 1,
        }
    }
}

/// Server consensus with entries in {−1, 0, +1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConsensusVector {
    entries: Vec<i8>,
}

impl ConsensusVector {
    /// The all-zero consensus used before the first aggregation.
    pub fn zeros(m: usize) -> Self {
        Self { entries: vec![0; m] }
    }

    pub fn from_entries(entries: Vec<i8>) -> Result<Self> {
        if let Some(i) = entries.iter().position(|e| !(-1..=1).contains(e)) {
            return Err(Error::InvalidArgument(format!(
                "consensus entry {i} is {}, expected -1, 0 or 1",
                entries[i]
            )));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.entries.iter().map(|&e| e as f64).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&e| e == 0)
    }

    /// Ties resolved to +1.
    pub fn to_onebit(&self) -> OneBitSketch {
        OneBitSketch::from_positive(self.len(), |i| self.entries[i] >= 0)
    }

    /// The consensus the clients actually see under `mode`.
    pub fn as_received(&self, mode: DownlinkMode) -> ConsensusVector {
        match mode {
            DownlinkMode::Ternary => self.clone(),
            DownlinkMode::StrictOneBit => ConsensusVector {
                entries: self.to_onebit().signs(),
            },
        }
    }

    pub fn payload_bits(&self, mode: DownlinkMode) -> u64 {
        self.len() as u64 * mode.bits_per_entry()
    }

    pub fn to_trit_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len().div_ceil(4)];
        for (i, &e) in self.entries.iter().enumerate() {
            let code = match e {
                1 => 0b01,
                -1 => 0b10,
                _ => 0b00,
            };
            out[i / 4] |= code << (2 * (i % 4));
        }
        out
    }

    pub fn from_trit_bytes(bytes: &[u8], m: usize) -> Result<Self> {
        let want = m.div_ceil(4);
        if bytes.len() != want {
            return Err(Error::CorruptPayload(format!(
                "consensus of dimension {m} needs {want} bytes, got {}",
                bytes.len()
            )));
        }
        let mut entries = Vec::with_capacity(m);
        for i in 0..m {
            entries.push(match bytes[i / 4] >> (2 * (i % 4)) & 0b11 {
                0b00 => 0,
                0b01 => 1,
                0b10 => -1,
                _ => return Err(Error::CorruptPayload(format!("invalid trit code 11 at coordinate {i}"))),
            });
        }
        for i in m..want * 4 {
            if bytes[i / 4] >> (2 * (i % 4)) & 0b11 != 0 {
                return Err(Error::CorruptPayload("nonzero padding bits".into()));
            }
        }
        Ok(Self { entries })
    }

    /// Header plus trit payload.
    pub fn encode_message(&self) -> Vec<u8> {
        let mut out = (self.len() as u64).to_le_bytes().to_vec();
        out.extend(self.to_trit_bytes());
        out
    }

    pub fn decode_message(msg: &[u8]) -> Result<Self> {
        let (m, payload) = split_header(msg)?;
        Self::from_trit_bytes(payload, m)
    }
}

fn split_header(msg: &[u8]) -> Result<(usize, &[u8])> {
    if msg.len() < HEADER_LEN {
        return Err(Error::CorruptPayload(format!(
            "message of {} bytes is shorter than the header",
            msg.len()
        )));
    }
    let (head, payload) = msg.split_at(HEADER_LEN);
    let m = u64::from_le_bytes(head.try_into().expect("8-byte header"));
    let m = usize::try_from(m).map_err(|_| Error::CorruptPayload(format!("dimension {m} does not fit in memory")))?;
    Ok((m, payload))
}
