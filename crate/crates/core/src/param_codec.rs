//! Entropy coding of the adaptive-layer residual — the side information an
//! encoder ships to the decoder.
//!
//! The online-trained weights are differenced against the baseline,
//! quantized on a `2^-prec` grid, and canonical-Huffman coded. Wire format:
//!
//! ```text
//! bytes 0..4   magic "ALRS"
//! byte  4      version (1)
//! byte  5      prec
//! bytes 6..8   symbol count, u16 LE
//! bytes 8..10  alphabet size A, u16 LE
//! 3*A bytes    records of (symbol i16 LE, code length u8)
//! rest         payload bits, MSB first, zero-padded to a byte
//! ```
//!
//! The decoder rebuilds the canonical code from the (symbol, length) table;
//! trailing pad bits are ignored.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::network::{AlSnapshot, ModelParams, NetworkError};
use crate::tensor::Scalar;

pub const STREAM_MAGIC: [u8; 4] = *b"ALRS";
pub const STREAM_VERSION: u8 = 1;
/// Fixed header bytes before the code-length table.
const HEADER_LEN: usize = 10;
const MAX_CODE_LEN: u8 = 32;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("snapshot lengths differ: {online} online vs {baseline} baseline")]
    LengthMismatch { online: usize, baseline: usize },
    #[error("cannot encode an empty symbol list")]
    EmptySymbols,
    #[error("{count} symbols exceed the u16 format limit")]
    TooManySymbols { count: usize },
    #[error("corrupt magic bytes")]
    CorruptMagic,
    #[error("unsupported stream version {version}")]
    UnsupportedVersion { version: u8 },
    #[error("header truncated")]
    TruncatedHeader,
    #[error("payload truncated")]
    TruncatedPayload,
    #[error("invalid code-length table: {reason}")]
    InvalidTable { reason: &'static str },
    #[error("payload contains a bit pattern outside the code")]
    InvalidCodeword,
    #[error("stream carries {found} symbols, model expects {expected}")]
    SymbolCount { expected: usize, found: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Quantized residual symbols plus the precision exponent that defines the
/// step `q = 2^-prec`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualSymbols {
    pub symbols: Vec<i16>,
    pub prec: u8,
}

impl ResidualSymbols {
    pub fn qstep(&self) -> f64 {
        (2.0f64).powi(-(self.prec as i32))
    }

    pub fn is_all_zero(&self) -> bool {
        self.symbols.iter().all(|s| *s == 0)
    }
}

/// Serialized, entropy-coded residual stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlResidualStream {
    bytes: Vec<u8>,
}

impl AlResidualStream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Total stream size in bits, header included.
pub fn stream_size_bits(stream: &AlResidualStream) -> u64 {
    stream.bytes.len() as u64 * 8
}

/// Quantize the difference between online-trained and baseline weights,
/// rounding half away from zero and clamping to the signed 16-bit range of
/// the wire format.
pub fn quantize_residual<F: Scalar>(
    online: &AlSnapshot<F>,
    baseline: &AlSnapshot<F>,
    prec: u8,
) -> Result<ResidualSymbols, CodecError> {
    if online.len() != baseline.len() {
        return Err(CodecError::LengthMismatch {
            online: online.len(),
            baseline: baseline.len(),
        });
    }
    let scale = (2.0f64).powi(prec as i32);
    let symbols = online
        .values()
        .iter()
        .zip(baseline.values())
        .map(|(o, b)| {
            let s = ((o.to_f64() - b.to_f64()) * scale).round();
            s.clamp(-32767.0, 32767.0) as i16
        })
        .collect();
    Ok(ResidualSymbols { symbols, prec })
}

/// Baseline weights plus dequantized residual. Used identically on both
/// sides of the channel, which is what makes encoder/decoder parity exact.
pub fn reconstruct_snapshot<F: Scalar>(
    baseline: &AlSnapshot<F>,
    symbols: &ResidualSymbols,
) -> Result<AlSnapshot<F>, CodecError> {
    if symbols.symbols.len() != baseline.len() {
        return Err(CodecError::SymbolCount {
            expected: baseline.len(),
            found: symbols.symbols.len(),
        });
    }
    let q = symbols.qstep();
    let values = baseline
        .values()
        .iter()
        .zip(&symbols.symbols)
        .map(|(b, s)| *b + F::from_f64(*s as f64 * q))
        .collect();
    Ok(AlSnapshot::new(values))
}

/// Decoder-side model update: adaptive-layer weights become
/// `baseline + symbol * 2^-prec`; frozen parameters are untouched.
pub fn apply_residual<F: Scalar>(
    baseline: &ModelParams<F>,
    symbols: &ResidualSymbols,
) -> Result<ModelParams<F>, CodecError> {
    let snap = reconstruct_snapshot(&baseline.al_snapshot(), symbols)?;
    let mut out = baseline.clone();
    out.set_al_snapshot(&snap)?;
    Ok(out)
}

/// Deterministic Huffman code lengths for the observed alphabet. Ties in
/// the tree merge are broken by creation order, with leaves created in
/// ascending symbol order.
fn code_lengths(freqs: &BTreeMap<i16, u64>) -> Vec<(i16, u8)> {
    if freqs.len() == 1 {
        let (sym, _) = freqs.iter().next().expect("len checked");
        return vec![(*sym, 1)];
    }
    struct Node {
        parent: Option<usize>,
    }
    let mut nodes: Vec<Node> = Vec::with_capacity(2 * freqs.len());
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    for (_, f) in freqs.iter() {
        nodes.push(Node { parent: None });
        heap.push(Reverse((*f, nodes.len() - 1)));
    }
    while heap.len() > 1 {
        let Reverse((fa, a)) = heap.pop().expect("len checked");
        let Reverse((fb, b)) = heap.pop().expect("len checked");
        nodes.push(Node { parent: None });
        let parent = nodes.len() - 1;
        nodes[a].parent = Some(parent);
        nodes[b].parent = Some(parent);
        heap.push(Reverse((fa + fb, parent)));
    }
    freqs
        .keys()
        .enumerate()
        .map(|(i, sym)| {
            let mut depth = 0u8;
            let mut at = i;
            while let Some(p) = nodes[at].parent {
                depth += 1;
                at = p;
            }
            (*sym, depth)
        })
        .collect()
}

/// Canonical code assignment: codes ordered by (length, symbol).
fn canonical_codes(table: &[(i16, u8)]) -> Vec<(i16, u8, u32)> {
    let mut sorted: Vec<(i16, u8)> = table.to_vec();
    sorted.sort_by_key(|(sym, len)| (*len, *sym));
    let mut out = Vec::with_capacity(sorted.len());
    let mut code = 0u32;
    let mut prev_len = 0u8;
    for (sym, len) in sorted {
        code <<= len - prev_len;
        out.push((sym, len, code));
        code += 1;
        prev_len = len;
    }
    out
}

struct BitWriter {
    bytes: Vec<u8>,
    bit: u8,
}

impl BitWriter {
    fn new(bytes: Vec<u8>) -> Self {
        Self { bytes, bit: 0 }
    }

    fn push_code(&mut self, code: u32, len: u8) {
        for i in (0..len).rev() {
            if self.bit == 0 {
                self.bytes.push(0);
            }
            if (code >> i) & 1 == 1 {
                *self.bytes.last_mut().expect("pushed above") |= 0x80 >> self.bit;
            }
            self.bit = (self.bit + 1) % 8;
        }
    }
}

/// Entropy-code a symbol sequence with a per-stream canonical Huffman code.
pub fn huffman_encode(symbols: &ResidualSymbols) -> Result<AlResidualStream, CodecError> {
    if symbols.symbols.is_empty() {
        return Err(CodecError::EmptySymbols);
    }
    if symbols.symbols.len() > u16::MAX as usize {
        return Err(CodecError::TooManySymbols {
            count: symbols.symbols.len(),
        });
    }
    let mut freqs: BTreeMap<i16, u64> = BTreeMap::new();
    for s in &symbols.symbols {
        *freqs.entry(*s).or_insert(0) += 1;
    }
    let lengths = code_lengths(&freqs);
    debug_assert!(lengths.iter().all(|(_, l)| *l <= MAX_CODE_LEN));
    let codes = canonical_codes(&lengths);
    let by_symbol: BTreeMap<i16, (u8, u32)> =
        codes.iter().map(|(s, l, c)| (*s, (*l, *c))).collect();

    let mut header = Vec::with_capacity(HEADER_LEN + 3 * lengths.len());
    header.extend_from_slice(&STREAM_MAGIC);
    header.push(STREAM_VERSION);
    header.push(symbols.prec);
    header.extend_from_slice(&(symbols.symbols.len() as u16).to_le_bytes());
    header.extend_from_slice(&(lengths.len() as u16).to_le_bytes());
    for (sym, len) in &lengths {
        header.extend_from_slice(&sym.to_le_bytes());
        header.push(*len);
    }
    let mut writer = BitWriter::new(header);
    for s in &symbols.symbols {
        let (len, code) = by_symbol[s];
        writer.push_code(code, len);
    }
    Ok(AlResidualStream {
        bytes: writer.bytes,
    })
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn next_bit(&mut self) -> Option<u8> {
        let byte = self.bytes.get(self.pos / 8)?;
        let bit = (byte >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Some(bit)
    }
}

/// Decode a residual stream, validating magic, version, table and payload.
pub fn huffman_decode(stream: &AlResidualStream) -> Result<ResidualSymbols, CodecError> {
    let bytes = stream.as_bytes();
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::TruncatedHeader);
    }
    if bytes[..4] != STREAM_MAGIC {
        return Err(CodecError::CorruptMagic);
    }
    if bytes[4] != STREAM_VERSION {
        return Err(CodecError::UnsupportedVersion { version: bytes[4] });
    }
    let prec = bytes[5];
    let count = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let alphabet = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    if alphabet == 0 {
        return Err(CodecError::InvalidTable {
            reason: "empty alphabet",
        });
    }
    let table_end = HEADER_LEN + 3 * alphabet;
    if bytes.len() < table_end {
        return Err(CodecError::TruncatedHeader);
    }
    let mut table = Vec::with_capacity(alphabet);
    for i in 0..alphabet {
        let at = HEADER_LEN + 3 * i;
        let sym = i16::from_le_bytes([bytes[at], bytes[at + 1]]);
        let len = bytes[at + 2];
        table.push((sym, len));
    }
    validate_table(&table)?;
    let codes = canonical_codes(&table);

    // canonical decoding tables: first code and symbol offset per length
    let max_len = codes.iter().map(|(_, l, _)| *l).max().expect("non-empty");
    let mut first_code = vec![0u32; max_len as usize + 1];
    let mut offset = vec![0usize; max_len as usize + 1];
    let mut len_count = vec![0usize; max_len as usize + 1];
    for (i, (_, len, code)) in codes.iter().enumerate() {
        let l = *len as usize;
        if len_count[l] == 0 {
            first_code[l] = *code;
            offset[l] = i;
        }
        len_count[l] += 1;
    }
    let ordered: Vec<i16> = codes.iter().map(|(s, _, _)| *s).collect();

    let mut reader = BitReader {
        bytes: &bytes[table_end..],
        pos: 0,
    };
    let mut symbols = Vec::with_capacity(count);
    for _ in 0..count {
        let mut acc = 0u32;
        let mut len = 0usize;
        loop {
            let bit = reader.next_bit().ok_or(CodecError::TruncatedPayload)?;
            acc = (acc << 1) | bit as u32;
            len += 1;
            if len > max_len as usize {
                return Err(CodecError::InvalidCodeword);
            }
            if len_count[len] > 0 {
                let rel = acc.wrapping_sub(first_code[len]);
                if acc >= first_code[len] && (rel as usize) < len_count[len] {
                    symbols.push(ordered[offset[len] + rel as usize]);
                    break;
                }
            }
        }
    }
    Ok(ResidualSymbols { symbols, prec })
}

fn validate_table(table: &[(i16, u8)]) -> Result<(), CodecError> {
    let mut seen = std::collections::BTreeSet::new();
    for (sym, len) in table {
        if !seen.insert(*sym) {
            return Err(CodecError::InvalidTable {
                reason: "duplicate symbol",
            });
        }
        if *len == 0 || *len > MAX_CODE_LEN {
            return Err(CodecError::InvalidTable {
                reason: "code length out of range",
            });
        }
    }
    if table.len() == 1 {
        if table[0].1 != 1 {
            return Err(CodecError::InvalidTable {
                reason: "single-symbol alphabet must use a 1-bit code",
            });
        }
        return Ok(());
    }
    // complete prefix code: Kraft sum must be exactly one
    let kraft: u64 = table
        .iter()
        .map(|(_, len)| 1u64 << (MAX_CODE_LEN - len) as u32)
        .sum();
    if kraft != 1u64 << MAX_CODE_LEN {
        return Err(CodecError::InvalidTable {
            reason: "code lengths violate the Kraft equality",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_oldn, oldn_forward, ModelConfig};
    use crate::tensor::Tensor4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn snap(values: Vec<f32>) -> AlSnapshot<f32> {
        AlSnapshot::new(values)
    }

    #[test]
    fn identical_snapshots_quantize_to_zero() {
        let a = snap(vec![1.0, 0.5, -0.25]);
        let syms = quantize_residual(&a, &a, 8).unwrap();
        assert_eq!(syms.symbols, vec![0, 0, 0]);
        assert!(syms.is_all_zero());
    }

    #[test]
    fn small_residual_rounds_half_away() {
        let online = snap(vec![1.004]);
        let base = snap(vec![1.0]);
        let syms = quantize_residual(&online, &base, 8).unwrap();
        // 0.004 * 256 = 1.024
        assert_eq!(syms.symbols, vec![1]);

        let err = quantize_residual(&online, &snap(vec![1.0, 2.0]), 8).unwrap_err();
        assert!(matches!(err, CodecError::LengthMismatch { .. }));
    }

    #[test]
    fn reconstruction_stays_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base: Vec<f32> = (0..256).map(|_| rng.gen_range(0.5..1.5)).collect();
        let online: Vec<f32> = base
            .iter()
            .map(|b| b + rng.gen_range(-0.05..0.05f32))
            .collect();
        for prec in [6u8, 8, 10] {
            let syms = quantize_residual(&snap(online.clone()), &snap(base.clone()), prec).unwrap();
            let rec = reconstruct_snapshot(&snap(base.clone()), &syms).unwrap();
            let q = syms.qstep();
            for (r, o) in rec.values().iter().zip(&online) {
                assert!(
                    (r - o).abs() as f64 <= q / 2.0 + 1e-9,
                    "prec {prec}: |{r} - {o}| > q/2"
                );
            }
        }
    }

    #[test]
    fn doubling_prec_halves_the_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base: Vec<f32> = (0..128).map(|_| rng.gen_range(0.8..1.2)).collect();
        let online: Vec<f32> = base.iter().map(|b| b + rng.gen_range(-0.03..0.03f32)).collect();
        let worst = |prec: u8| -> f64 {
            let syms = quantize_residual(&snap(online.clone()), &snap(base.clone()), prec).unwrap();
            let rec = reconstruct_snapshot(&snap(base.clone()), &syms).unwrap();
            rec.values()
                .iter()
                .zip(&online)
                .map(|(r, o)| (r - o).abs() as f64)
                .fold(0.0, f64::max)
        };
        // the error bound q/2 halves with each extra bit of precision, and
        // every observed error respects its bound
        for prec in 6u8..12 {
            let bound = (2.0f64).powi(-(prec as i32)) / 2.0;
            assert!(worst(prec) <= bound + 1e-9, "prec {prec} exceeded its bound");
        }
        let q8 = ResidualSymbols { symbols: vec![], prec: 8 }.qstep();
        let q9 = ResidualSymbols { symbols: vec![], prec: 9 }.qstep();
        assert_eq!(q9, q8 / 2.0);
    }

    #[test]
    fn all_zero_symbols_use_one_bit_each() {
        let syms = ResidualSymbols {
            symbols: vec![0; 128],
            prec: 8,
        };
        let stream = huffman_encode(&syms).unwrap();
        // header: 10 fixed + one 3-byte table record; payload: 128 bits
        assert_eq!(stream.as_bytes().len(), 10 + 3 + 16);
        assert_eq!(huffman_decode(&stream).unwrap(), syms);
    }

    #[test]
    fn skewed_input_beats_fixed_width_coding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let symbols: Vec<i16> = (0..1000)
            .map(|_| {
                if rng.gen::<f64>() < 0.9 {
                    0
                } else {
                    rng.gen_range(-40..=40)
                }
            })
            .collect();
        let count = symbols.len() as u64;
        let stream = huffman_encode(&ResidualSymbols { symbols, prec: 8 }).unwrap();
        assert!(stream_size_bits(&stream) < 16 * count);
    }

    #[test]
    fn stream_size_is_byte_aligned_and_rate_ordered() {
        let zeros = huffman_encode(&ResidualSymbols {
            symbols: vec![0; 128],
            prec: 8,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noisy = huffman_encode(&ResidualSymbols {
            symbols: (0..128).map(|_| rng.gen_range(-500..=500)).collect(),
            prec: 8,
        })
        .unwrap();
        assert_eq!(stream_size_bits(&zeros), zeros.as_bytes().len() as u64 * 8);
        assert!(stream_size_bits(&zeros) < stream_size_bits(&noisy));
        assert!(stream_size_bits(&zeros) >= 8 * 10);
    }

    #[test]
    fn rejects_empty_and_oversize_input() {
        assert_eq!(
            huffman_encode(&ResidualSymbols {
                symbols: vec![],
                prec: 8
            })
            .unwrap_err(),
            CodecError::EmptySymbols
        );
        assert!(matches!(
            huffman_encode(&ResidualSymbols {
                symbols: vec![1; 70000],
                prec: 8
            })
            .unwrap_err(),
            CodecError::TooManySymbols { .. }
        ));
    }

    #[test]
    fn malformed_streams_are_rejected() {
        let good = huffman_encode(&ResidualSymbols {
            symbols: vec![0, 1, 0, -1, 0, 0, 2],
            prec: 8,
        })
        .unwrap();

        let mut magic = good.clone().into_bytes();
        magic[0] ^= 0xFF;
        assert_eq!(
            huffman_decode(&AlResidualStream::from_bytes(magic)).unwrap_err(),
            CodecError::CorruptMagic
        );

        let mut version = good.clone().into_bytes();
        version[4] = 9;
        assert_eq!(
            huffman_decode(&AlResidualStream::from_bytes(version)).unwrap_err(),
            CodecError::UnsupportedVersion { version: 9 }
        );

        let mut truncated = good.clone().into_bytes();
        truncated.truncate(truncated.len() - 1);
        assert_eq!(
            huffman_decode(&AlResidualStream::from_bytes(truncated)).unwrap_err(),
            CodecError::TruncatedPayload
        );

        let short = good.clone().into_bytes()[..6].to_vec();
        assert_eq!(
            huffman_decode(&AlResidualStream::from_bytes(short)).unwrap_err(),
            CodecError::TruncatedHeader
        );

        // duplicate table entry
        let mut dup = good.clone().into_bytes();
        let (s0, l0) = (dup[10], dup[12]);
        dup[13] = s0;
        dup[14] = dup[11];
        dup[15] = l0;
        assert!(matches!(
            huffman_decode(&AlResidualStream::from_bytes(dup)).unwrap_err(),
            CodecError::InvalidTable { .. }
        ));

        // break the Kraft equality
        let mut kraft = good.into_bytes();
        kraft[12] = 30;
        assert!(matches!(
            huffman_decode(&AlResidualStream::from_bytes(kraft)).unwrap_err(),
            CodecError::InvalidTable { .. }
        ));
    }

    #[test]
    fn single_symbol_payload_rejects_a_one_bit() {
        let stream = huffman_encode(&ResidualSymbols {
            symbols: vec![7; 9],
            prec: 8,
        })
        .unwrap();
        let mut bytes = stream.clone().into_bytes();
        let payload_at = bytes.len() - 2;
        bytes[payload_at] = 0x80;
        assert_eq!(
            huffman_decode(&AlResidualStream::from_bytes(bytes)).unwrap_err(),
            CodecError::InvalidCodeword
        );
        assert_eq!(huffman_decode(&stream).unwrap().symbols, vec![7; 9]);
    }

    #[test]
    fn apply_residual_round_trips_through_a_model() {
        let cfg = ModelConfig::small(8);
        let baseline = build_oldn::<f32>(&cfg, 7).unwrap();

        // zero residual leaves the model bit-identical
        let zero = ResidualSymbols {
            symbols: vec![0; baseline.online_count()],
            prec: 8,
        };
        let dec = apply_residual(&baseline, &zero).unwrap();
        for (path, t) in baseline.tensors() {
            assert!(t.bit_eq(dec.get(path).unwrap()));
        }

        // a synthetic online run: perturb, quantize, ship, apply
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let online = AlSnapshot::new(
            baseline
                .al_snapshot()
                .values()
                .iter()
                .map(|v| v + rng.gen_range(-0.2..0.2f32))
                .collect(),
        );
        let syms = quantize_residual(&online, &baseline.al_snapshot(), 8).unwrap();
        let stream = huffman_encode(&syms).unwrap();
        let decoded = huffman_decode(&stream).unwrap();
        assert_eq!(decoded, syms);

        let decoder_model = apply_residual(&baseline, &decoded).unwrap();
        assert!(decoder_model.frozen_bit_eq(&baseline));

        // encoder applies its own quantized residual and must match the
        // decoder bit for bit, activations included
        let encoder_snap = reconstruct_snapshot(&baseline.al_snapshot(), &syms).unwrap();
        let mut encoder_model = baseline.clone();
        encoder_model.set_al_snapshot(&encoder_snap).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let luma = Tensor4::<f32>::from_fn([1, 1, 16, 16], |_, _, _, _| rng.gen_range(0.0..1.0));
        let chroma = Tensor4::<f32>::from_fn([1, 1, 8, 8], |_, _, _, _| rng.gen_range(0.0..1.0));
        let out_enc = oldn_forward(&encoder_model, &luma, &chroma).unwrap();
        let out_dec = oldn_forward(&decoder_model, &luma, &chroma).unwrap();
        assert!(out_enc.bit_eq(&out_dec));
    }

    #[test]
    fn apply_residual_checks_symbol_count() {
        let baseline = build_oldn::<f32>(&ModelConfig::small(8), 10).unwrap();
        let err = apply_residual(
            &baseline,
            &ResidualSymbols {
                symbols: vec![0; 3],
                prec: 8,
            },
        )
        .unwrap_err();
        assert!(matches!(err, CodecError::SymbolCount { expected: 16, found: 3 }));
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(symbols in proptest::collection::vec(any::<i16>(), 1..1200), prec in 0u8..16) {
            let syms = ResidualSymbols { symbols, prec };
            let stream = huffman_encode(&syms).unwrap();
            let back = huffman_decode(&stream).unwrap();
            prop_assert_eq!(back, syms);
        }

        #[test]
        fn round_trip_survives_skew(zeros in 1usize..400, value in any::<i16>()) {
            let mut symbols = vec![0i16; zeros];
            symbols.push(value);
            let syms = ResidualSymbols { symbols, prec: 8 };
            let back = huffman_decode(&huffman_encode(&syms).unwrap()).unwrap();
            prop_assert_eq!(back, syms);
        }
    }
}
