//! AIS packet framing.
//!
//! Builds the on-air bit sequence of a single-slot AIS packet (ramp-up,
//! training, HDLC flags, bit-stuffed data message) and runs the inverse
//! post-processing that validates decoder candidates: NRZI decoding, flag
//! search, destuffing, the 184-bit length check and the FCS check.
//!
//! Bits are `u8` values in `{0, 1}`, in transmission order. Line symbols are
//! `i8` levels in `{-1, +1}`.

use std::fmt;
use std::ops::Range;

use rand::Rng;

use thiserror::Error;

/// Number of AIS data bits in a single-slot message.
pub const PAYLOAD_BITS: usize = 168;
/// Width of the frame check sequence.
pub const FCS_BITS: usize = 16;
/// Payload followed by its FCS.
pub const MESSAGE_BITS: usize = PAYLOAD_BITS + FCS_BITS;

pub const RAMP_UP_BITS: usize = 8;
pub const TRAINING_BITS: usize = 24;
pub const FLAG_BITS: usize = 8;
pub const BUFFER_BITS: usize = 24;
/// One slot worth of bits.
pub const SLOT_BITS: usize = 256;
/// Symbols preceding the start flag (ramp-up and training).
pub const PREAMBLE_BITS: usize = RAMP_UP_BITS + TRAINING_BITS;
/// Smallest legal packet length.
pub const MIN_PACKET_BITS: usize = 224;

/// HDLC flag `01111110`.
pub const FLAG: [u8; FLAG_BITS] = [0, 1, 1, 1, 1, 1, 1, 0];

const FCS_POLY_REFLECTED: u16 = 0x8408;

/// A line symbol, `-1` or `+1`.
pub type Symbol = i8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("expected {expected} bits, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("bit {index} has value {value}, expected 0 or 1")]
    NotABit { index: usize, value: u8 },
    #[error("a run of six ones at bit {0} is not valid stuffed data")]
    InvalidStuffing(usize),
    #[error("stuffing added {0} bits, more than the {BUFFER_BITS}-bit buffer allows")]
    StuffingOverflow(usize),
    #[error("invalid hex string: {0}")]
    Hex(String),
}

/// Why a decoder candidate was discarded during post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rejection {
    FlagNotFound,
    InvalidStuffing,
    BadLength(usize),
    BadCrc,
}

impl Rejection {
    pub fn name(&self) -> &'static str {
        match self {
            Rejection::FlagNotFound => "flag_not_found",
            Rejection::InvalidStuffing => "invalid_stuffing",
            Rejection::BadLength(_) => "bad_length",
            Rejection::BadCrc => "bad_crc",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::BadLength(n) => write!(f, "bad_length({n})"),
            other => f.write_str(other.name()),
        }
    }
}

fn check_bits(bits: &[u8]) -> Result<(), FrameError> {
    match bits.iter().position(|&b| b > 1) {
        Some(index) => Err(FrameError::NotABit {
            index,
            value: bits[index],
        }),
        None => Ok(()),
    }
}

/// The 168-bit AIS data field.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payload(Vec<u8>);

impl Payload {
    pub fn new(bits: Vec<u8>) -> Result<Self, FrameError> {
        if bits.len() != PAYLOAD_BITS {
            return Err(FrameError::WrongLength {
                expected: PAYLOAD_BITS,
                got: bits.len(),
            });
        }
        check_bits(&bits)?;
        Ok(Payload(bits))
    }

    /// Uniform i.i.d. payload bits.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Payload((0..PAYLOAD_BITS).map(|_| rng.random_range(0..2u8)).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.0
    }
}

/// Payload followed by its FCS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataMessage(Vec<u8>);

impl DataMessage {
    pub fn from_payload(payload: &Payload) -> Self {
        let mut bits = payload.bits().to_vec();
        bits.extend_from_slice(&fcs_to_bits(fcs_value(payload.bits())));
        DataMessage(bits)
    }

    /// Accepts 184 bits whose trailing 16 bits are the FCS of the first 168.
    pub fn new(bits: Vec<u8>) -> Result<Self, FrameError> {
        if bits.len() != MESSAGE_BITS {
            return Err(FrameError::WrongLength {
                expected: MESSAGE_BITS,
                got: bits.len(),
            });
        }
        check_bits(&bits)?;
        Ok(DataMessage(bits))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn payload(&self) -> Payload {
        Payload(self.0[..PAYLOAD_BITS].to_vec())
    }

    pub fn is_valid(&self) -> bool {
        verify_fcs(&self.0)
    }
}

/// Bitwise HDLC FCS over an arbitrary bit stream: generator
/// x^16 + x^12 + x^5 + 1, register preset to ones, result complemented.
///
/// Bit `i` of the returned value is the `i`-th transmitted FCS bit.
pub fn fcs_value(bits: &[u8]) -> u16 {
    let mut reg: u16 = 0xFFFF;
    for &bit in bits {
        let feedback = (reg ^ bit as u16) & 1;
        reg >>= 1;
        if feedback != 0 {
            reg ^= FCS_POLY_REFLECTED;
        }
    }
    !reg
}

/// FCS bits in transmission order (least significant first).
pub fn fcs_to_bits(fcs: u16) -> [u8; FCS_BITS] {
    let mut out = [0u8; FCS_BITS];
    for (i, b) in out.iter_mut().enumerate() {
        *b = ((fcs >> i) & 1) as u8;
    }
    out
}

/// FCS of a 168-bit payload, as 16 bits in transmission order.
pub fn compute_fcs(payload: &[u8]) -> Result<[u8; FCS_BITS], FrameError> {
    if payload.len() != PAYLOAD_BITS {
        return Err(FrameError::WrongLength {
            expected: PAYLOAD_BITS,
            got: payload.len(),
        });
    }
    check_bits(payload)?;
    Ok(fcs_to_bits(fcs_value(payload)))
}

/// True when the trailing 16 bits are the FCS of everything before them.
pub fn verify_fcs(message: &[u8]) -> bool {
    if message.len() < FCS_BITS {
        return false;
    }
    let (data, fcs) = message.split_at(message.len() - FCS_BITS);
    fcs_to_bits(fcs_value(data)) == fcs
}

/// Inserts a 0 after every run of five consecutive ones.
pub fn bit_stuff(bits: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bits.len() + bits.len() / 5);
    let mut run = 0;
    for &b in bits {
        out.push(b);
        if b == 1 {
            run += 1;
            if run == 5 {
                out.push(0);
                run = 0;
            }
        } else {
            run = 0;
        }
    }
    out
}

/// Removes the 0 that follows every run of five ones.
///
/// Five ones followed by a one is rejected: inside a frame it can only come
/// from a corrupted candidate. Five ones at the very end are accepted.
pub fn bit_destuff(bits: &[u8]) -> Result<Vec<u8>, FrameError> {
    let mut out = Vec::with_capacity(bits.len());
    let mut run = 0;
    let mut skip_next = false;
    for (i, &b) in bits.iter().enumerate() {
        if skip_next {
            if b != 0 {
                return Err(FrameError::InvalidStuffing(i));
            }
            skip_next = false;
            run = 0;
            continue;
        }
        out.push(b);
        if b == 1 {
            run += 1;
            if run == 5 {
                skip_next = true;
            }
        } else {
            run = 0;
        }
    }
    Ok(out)
}

/// NRZI line coding: a 0 toggles the level, a 1 keeps it.
pub fn nrzi_encode(bits: &[u8], initial_level: Symbol) -> Vec<Symbol> {
    let mut level = initial_level;
    bits.iter()
        .map(|&b| {
            if b == 0 {
                level = -level;
            }
            level
        })
        .collect()
}

/// Inverse of [`nrzi_encode`]: a bit is 1 iff consecutive levels are equal.
pub fn nrzi_decode(symbols: &[Symbol], initial_level: Symbol) -> Vec<u8> {
    let mut prev = initial_level;
    symbols
        .iter()
        .map(|&s| {
            let bit = (s == prev) as u8;
            prev = s;
            bit
        })
        .collect()
}

/// Field boundaries of a packet, as bit index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketLayout {
    pub ramp_up: Range<usize>,
    pub training: Range<usize>,
    pub start_flag: Range<usize>,
    pub data: Range<usize>,
    pub end_flag: Range<usize>,
    /// Buffer bits left idle at the end of the slot.
    pub buffer: Range<usize>,
    pub stuffed_bits: usize,
}

/// The on-air bit sequence of one AIS packet.
///
/// `bits` holds everything that is transmitted (ramp-up through end flag).
/// The 24-bit buffer is idle time that absorbs stuffing, so the packet is
/// `256 - (24 - stuffed_bits)` bits long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub bits: Vec<u8>,
    pub layout: PacketLayout,
}

impl Packet {
    /// Number of transmitted bits.
    pub fn total_len(&self) -> usize {
        self.bits.len()
    }

    /// Line symbols for the whole packet.
    pub fn symbols(&self, initial_level: Symbol) -> Vec<Symbol> {
        nrzi_encode(&self.bits, initial_level)
    }

    /// Text dump of the field layout.
    pub fn dump(&self) -> String {
        let l = &self.layout;
        let field = |name: &str, r: &Range<usize>| {
            format!(
                "{name:<10} {:>3}..{:<3} {}\n",
                r.start,
                r.end,
                self.bits
                    .get(r.clone())
                    .map(bits_to_string)
                    .unwrap_or_default()
            )
        };
        let mut s = String::new();
        s += &field("ramp_up", &l.ramp_up);
        s += &field("training", &l.training);
        s += &field("start_flag", &l.start_flag);
        s += &field("data", &l.data);
        s += &field("end_flag", &l.end_flag);
        s += &format!(
            "{:<10} {:>3}..{:<3} ({} idle)\n",
            "buffer",
            l.buffer.start,
            l.buffer.end,
            l.buffer.len()
        );
        s += &format!("stuffed    {}\ntotal_len  {}\n", l.stuffed_bits, self.total_len());
        s
    }
}

/// Ramp-up and training bits; both are known to the receiver.
pub fn preamble_bits() -> [u8; PREAMBLE_BITS] {
    let mut bits = [0u8; PREAMBLE_BITS];
    for (i, b) in bits[RAMP_UP_BITS..].iter_mut().enumerate() {
        *b = (i % 2) as u8;
    }
    bits
}

pub fn build_packet(payload: &Payload) -> Result<Packet, FrameError> {
    let message = DataMessage::from_payload(payload);
    let stuffed = bit_stuff(message.bits());
    let stuffed_bits = stuffed.len() - MESSAGE_BITS;
    if stuffed_bits > BUFFER_BITS {
        return Err(FrameError::StuffingOverflow(stuffed_bits));
    }

    let mut bits = Vec::with_capacity(SLOT_BITS);
    bits.extend_from_slice(&preamble_bits());
    bits.extend_from_slice(&FLAG);
    let data_start = bits.len();
    bits.extend_from_slice(&stuffed);
    let data_end = bits.len();
    bits.extend_from_slice(&FLAG);
    let end = bits.len();

    let layout = PacketLayout {
        ramp_up: 0..RAMP_UP_BITS,
        training: RAMP_UP_BITS..PREAMBLE_BITS,
        start_flag: PREAMBLE_BITS..data_start,
        data: data_start..data_end,
        end_flag: data_end..end,
        buffer: end..SLOT_BITS,
        stuffed_bits,
    };
    Ok(Packet { bits, layout })
}

fn find_flag(bits: &[u8], from: usize) -> Option<usize> {
    if bits.len() < FLAG_BITS {
        return None;
    }
    (from..=bits.len() - FLAG_BITS).find(|&i| bits[i..i + FLAG_BITS] == FLAG)
}

/// Validates a decoder candidate that starts at the start flag.
///
/// Stages run in a fixed order and the first failure is reported:
/// NRZI decoding, flag search, destuffing, length check, FCS check.
pub fn post_process_candidate(
    symbols: &[Symbol],
    initial_level: Symbol,
) -> Result<Payload, Rejection> {
    let bits = nrzi_decode(symbols, initial_level);
    let start = find_flag(&bits, 0).ok_or(Rejection::FlagNotFound)?;
    let data_start = start + FLAG_BITS;
    let end = find_flag(&bits, data_start).ok_or(Rejection::FlagNotFound)?;
    let message = bit_destuff(&bits[data_start..end]).map_err(|_| Rejection::InvalidStuffing)?;
    if message.len() != MESSAGE_BITS {
        return Err(Rejection::BadLength(message.len()));
    }
    if !verify_fcs(&message) {
        return Err(Rejection::BadCrc);
    }
    Ok(Payload(message[..PAYLOAD_BITS].to_vec()))
}

pub fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
}

/// Hex encoding, most significant bit first within each byte. A trailing
/// partial byte is zero padded.
pub fn bits_to_hex(bits: &[u8]) -> String {
    bits.chunks(8)
        .map(|chunk| {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | (b << (7 - i)));
            format!("{byte:02x}")
        })
        .collect()
}

/// Decodes `hex` into exactly `n_bits` bits (most significant bit first).
pub fn hex_to_bits(hex: &str, n_bits: usize) -> Result<Vec<u8>, FrameError> {
    let hex = hex.trim();
    if !hex.is_ascii() || hex.len() % 2 != 0 || hex.len() * 4 < n_bits {
        return Err(FrameError::Hex(format!(
            "{} hex digits cannot hold {n_bits} bits",
            hex.len()
        )));
    }
    let mut bits = Vec::with_capacity(hex.len() * 4);
    for i in (0..hex.len()).step_by(2) {
        let byte = u8::from_str_radix(&hex[i..i + 2], 16)
            .map_err(|e| FrameError::Hex(format!("{:?}: {e}", &hex[i..i + 2])))?;
        bits.extend((0..8).map(|k| (byte >> (7 - k)) & 1));
    }
    bits.truncate(n_bits);
    Ok(bits)
}

/// Bits of a byte string, least significant bit of each byte first (the
/// on-air order of HDLC).
pub fn bytes_to_bits_lsb_first(data: &[u8]) -> Vec<u8> {
    data.iter()
        .flat_map(|&byte| (0..8).map(move |k| (byte >> k) & 1))
        .collect()
}
