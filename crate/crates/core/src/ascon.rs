//! Software model of the Ascon state initialization and the 5-bit S-box.
//!
//! Only the pieces the attack needs are modelled: the 320-bit initial state
//! (IV ‖ key ‖ nonce), column slicing into per-S-box 5-bit inputs, the
//! substitution layer, and optionally the first round constant and the
//! linear diffusion layer.

/// Ascon-128 initial-vector word (k=128, r=64, a=12, b=6).
pub const ASCON128_IV: u64 = 0x8040_0c06_0000_0000;

/// First round constant of the 12-round permutation, XORed into x2.
pub const ROUND_CONSTANT_0: u8 = 0xf0;

/// Frozen Ascon S-box. Checked exhaustively against the bit-sliced algebra
/// in the test suite.
pub const SBOX: [u8; 32] = [
    4, 11, 31, 20, 26, 21, 9, 2, 27, 5, 8, 18, 29, 3, 6, 28, 30, 19, 7, 14, 0, 13, 17, 24, 16, 12,
    1, 25, 22, 10, 15, 23,
];

/// Applies the Ascon 5-bit S-box. Bijective over `0..32`.
///
/// Panics on out-of-range input.
pub fn sbox5(x: u8) -> u8 {
    assert!(x < 32, "S-box input {x} out of range (must be 5-bit)");
    SBOX[x as usize]
}

/// Bit `i` of a 64-bit state word, big-endian: bit 0 is the most
/// significant. Matches the convention "the i-th bit of the IV feeds
/// S-box i".
pub fn word_bit(word: u64, i: usize) -> u8 {
    assert!(i < 64, "bit index {i} out of range");
    ((word >> (63 - i)) & 1) as u8
}

fn set_word_bit(word: &mut u64, i: usize, bit: u8) {
    debug_assert!(bit <= 1);
    if bit != 0 {
        *word |= 1u64 << (63 - i);
    }
}

fn assert_bit(b: u8, name: &str) {
    assert!(b <= 1, "{name} must be 0 or 1, got {b}");
}

/// Packs one S-box input column: IV bit as MSB, then the two key bits,
/// then the two nonce bits as LSBs.
pub fn pack_sbox_input(iv_bit: u8, key_hi: u8, key_lo: u8, nonce_hi: u8, nonce_lo: u8) -> u8 {
    assert_bit(iv_bit, "iv_bit");
    assert_bit(key_hi, "key_hi");
    assert_bit(key_lo, "key_lo");
    assert_bit(nonce_hi, "nonce_hi");
    assert_bit(nonce_lo, "nonce_lo");
    (iv_bit << 4) | (key_hi << 3) | (key_lo << 2) | (nonce_hi << 1) | nonce_lo
}

/// The sensitive intermediate: S-box output for a column assembled from the
/// public nonce bits, the two targeted key bits and the IV bit.
pub fn sensitive_data(nonce_hi: u8, nonce_lo: u8, key_hi: u8, key_lo: u8, iv_bit: u8) -> u8 {
    sbox5(pack_sbox_input(iv_bit, key_hi, key_lo, nonce_hi, nonce_lo))
}

/// The five 64-bit words of the Ascon state right after loading
/// IV, key and nonce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsconInitState {
    pub words: [u64; 5],
}

impl AsconInitState {
    pub fn new(iv: u64, key: u128, nonce: u128) -> Self {
        Self {
            words: [
                iv,
                (key >> 64) as u64,
                key as u64,
                (nonce >> 64) as u64,
                nonce as u64,
            ],
        }
    }

    /// 5-bit input of S-box `i`: the i-th column of the five words,
    /// x0 bit as MSB.
    pub fn sbox_input(&self, i: usize) -> u8 {
        assert!(i < 64, "S-box index {i} out of range");
        let mut v = 0u8;
        for w in 0..5 {
            v = (v << 1) | word_bit(self.words[w], i);
        }
        v
    }

    /// Rebuilds the five words from all 64 column values.
    pub fn from_columns(columns: &[u8; 64]) -> Self {
        let mut words = [0u64; 5];
        for (i, &col) in columns.iter().enumerate() {
            assert!(col < 32, "column {i} value {col} out of range");
            for (w, word) in words.iter_mut().enumerate() {
                set_word_bit(word, i, (col >> (4 - w)) & 1);
            }
        }
        Self { words }
    }

    /// XORs the first round constant into x2.
    pub fn add_round_constant(&mut self) {
        self.words[2] ^= ROUND_CONSTANT_0 as u64;
    }

    /// Applies the S-box to every column.
    pub fn substitute(&self) -> Self {
        let mut cols = [0u8; 64];
        for (i, c) in cols.iter_mut().enumerate() {
            *c = sbox5(self.sbox_input(i));
        }
        Self::from_columns(&cols)
    }

    /// Ascon linear diffusion layer (per-word rotation sums).
    pub fn linear_diffusion(&self) -> Self {
        let [x0, x1, x2, x3, x4] = self.words;
        Self {
            words: [
                x0 ^ x0.rotate_right(19) ^ x0.rotate_right(28),
                x1 ^ x1.rotate_right(61) ^ x1.rotate_right(39),
                x2 ^ x2.rotate_right(1) ^ x2.rotate_right(6),
                x3 ^ x3.rotate_right(10) ^ x3.rotate_right(17),
                x4 ^ x4.rotate_right(7) ^ x4.rotate_right(41),
            ],
        }
    }
}

/// Everything the attacker knows about one window of a pooled S-box pair:
/// the fixed IV bit of that S-box, the two public nonce bits, and which
/// half of the 4-bit candidate applies (`slot` 0 = S-box 2p, 1 = 2p+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairObservation {
    pub iv_bit: u8,
    pub nonce_hi: u8,
    pub nonce_lo: u8,
    pub slot: u8,
}

impl PairObservation {
    pub fn new(iv: u64, nonce: u128, pair: usize, slot: u8) -> Self {
        assert!(pair < 32, "pair index {pair} out of range");
        assert!(slot < 2, "slot {slot} out of range");
        let sbox = 2 * pair + slot as usize;
        let n_hi = (nonce >> 64) as u64;
        let n_lo = nonce as u64;
        Self {
            iv_bit: word_bit(iv, sbox),
            nonce_hi: word_bit(n_hi, sbox),
            nonce_lo: word_bit(n_lo, sbox),
            slot,
        }
    }
}

/// The two key bits a 4-bit pair candidate assigns to one slot.
/// Candidate bit order is (k_2p, k_2p+64, k_2p+1, k_2p+65), MSB first.
pub fn candidate_key_bits(candidate: u8, slot: u8) -> (u8, u8) {
    assert!(candidate < 16, "candidate {candidate} out of range");
    assert!(slot < 2, "slot {slot} out of range");
    match slot {
        0 => ((candidate >> 3) & 1, (candidate >> 2) & 1),
        _ => ((candidate >> 1) & 1, candidate & 1),
    }
}

/// Sensitive value an observation would take under a candidate.
pub fn candidate_sensitive(obs: &PairObservation, candidate: u8) -> u8 {
    let (k_hi, k_lo) = candidate_key_bits(candidate, obs.slot);
    sensitive_data(obs.nonce_hi, obs.nonce_lo, k_hi, k_lo, obs.iv_bit)
}

/// The true 4-bit candidate for a pair under a known key.
pub fn true_pair_candidate(key: u128, pair: usize) -> u8 {
    assert!(pair < 32, "pair index {pair} out of range");
    let hi = (key >> 64) as u64;
    let lo = key as u64;
    let s0 = 2 * pair;
    let s1 = 2 * pair + 1;
    (word_bit(hi, s0) << 3) | (word_bit(lo, s0) << 2) | (word_bit(hi, s1) << 1) | word_bit(lo, s1)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: the v1.2 reference bit-sliced substitution
    /// algebra, evaluated on single bits.
    fn sbox_bitsliced(x: u8) -> u8 {
        let (mut x0, mut x1, mut x2, mut x3, mut x4) =
            ((x >> 4) & 1, (x >> 3) & 1, (x >> 2) & 1, (x >> 1) & 1, x & 1);
        x0 ^= x4;
        x4 ^= x3;
        x2 ^= x1;
        let t0 = (x0 ^ 1) & x1;
        let t1 = (x1 ^ 1) & x2;
        let t2 = (x2 ^ 1) & x3;
        let t3 = (x3 ^ 1) & x4;
        let t4 = (x4 ^ 1) & x0;
        x0 ^= t1;
        x1 ^= t2;
        x2 ^= t3;
        x3 ^= t4;
        x4 ^= t0;
        x1 ^= x0;
        x0 ^= x4;
        x3 ^= x2;
        x2 ^= 1;
        (x0 << 4) | (x1 << 3) | (x2 << 2) | (x3 << 1) | x4
    }

    #[test]
    fn frozen_table_matches_bitsliced_algebra() {
        for x in 0..32u8 {
            assert_eq!(sbox5(x), sbox_bitsliced(x), "mismatch at input {x}");
        }
    }

    #[test]
    fn sbox_is_a_bijection() {
        let mut outs: Vec<u8> = (0..32).map(sbox5).collect();
        outs.sort_unstable();
        assert_eq!(outs, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn sbox_zero_maps_to_four() {
        assert_eq!(sbox5(0), 4);
    }

    #[test]
    fn no_other_input_shares_the_image_of_31() {
        let v = sbox5(31);
        for x in 0..31u8 {
            assert_ne!(sbox5(x), v);
        }
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn sbox_rejects_out_of_range() {
        sbox5(32);
    }

    #[test]
    fn sensitive_data_zero_assembly() {
        assert_eq!(sensitive_data(0, 0, 0, 0, 0), sbox5(0));
    }

    #[test]
    fn sensitive_data_packing_order() {
        // iv=1, k=(0,1), n=(1,0) packs to 0b10110 = 22
        assert_eq!(sensitive_data(1, 0, 0, 1, 1), sbox5(22));
    }

    #[test]
    fn sensitive_data_matches_table_exhaustively() {
        for x in 0..32u8 {
            let iv = (x >> 4) & 1;
            let kh = (x >> 3) & 1;
            let kl = (x >> 2) & 1;
            let nh = (x >> 1) & 1;
            let nl = x & 1;
            assert_eq!(sensitive_data(nh, nl, kh, kl, iv), SBOX[x as usize]);
        }
    }

    #[test]
    fn nonce_to_sensitive_is_injective_per_key() {
        // brute force over the 4 nonce pairs x 4 key pairs x 2 iv bits
        for iv in 0..2u8 {
            for k in 0..4u8 {
                let mut seen = Vec::new();
                for n in 0..4u8 {
                    let x = sensitive_data(n >> 1, n & 1, k >> 1, k & 1, iv);
                    assert!(!seen.contains(&x));
                    seen.push(x);
                }
            }
        }
    }

    #[test]
    fn iv_constant_is_fixed() {
        assert_eq!(ASCON128_IV, ASCON128_IV);
        let st = AsconInitState::new(ASCON128_IV, 0, 0);
        for i in 0..64 {
            assert_eq!(word_bit(ASCON128_IV, i), (st.sbox_input(i) >> 4) & 1);
        }
    }

    #[test]
    fn zero_iv_override_gives_zero_msb_columns() {
        let st = AsconInitState::new(0, u128::MAX, 0);
        for i in 0..64 {
            assert_eq!((st.sbox_input(i) >> 4) & 1, 0);
        }
    }

    #[test]
    fn column_slicing_roundtrips() {
        let mut rng = 0x1234_5678_9abc_def0u64;
        let mut next = || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            rng
        };
        for _ in 0..16 {
            let iv = next();
            let key = ((next() as u128) << 64) | next() as u128;
            let nonce = ((next() as u128) << 64) | next() as u128;
            let st = AsconInitState::new(iv, key, nonce);
            let mut cols = [0u8; 64];
            for (i, c) in cols.iter_mut().enumerate() {
                *c = st.sbox_input(i);
            }
            assert_eq!(AsconInitState::from_columns(&cols), st);
        }
    }

    #[test]
    fn round_constant_touches_only_x2_low_byte_columns() {
        let st = AsconInitState::new(ASCON128_IV, 77, 12345);
        let mut with_rc = st;
        with_rc.add_round_constant();
        for i in 0..64 {
            let differs = st.sbox_input(i) != with_rc.sbox_input(i);
            let in_rc_byte = (56..64).contains(&i) && word_bit(ROUND_CONSTANT_0 as u64, i) == 1;
            assert_eq!(differs, in_rc_byte, "column {i}");
        }
    }

    #[test]
    fn substitution_slices_consistently() {
        let st = AsconInitState::new(ASCON128_IV, 0xdead_beef, 0xcafe);
        let sub = st.substitute();
        for i in 0..64 {
            assert_eq!(sub.sbox_input(i), sbox5(st.sbox_input(i)));
        }
    }

    #[test]
    fn candidate_bits_cover_pair_layout() {
        assert_eq!(candidate_key_bits(0b1010, 0), (1, 0));
        assert_eq!(candidate_key_bits(0b1010, 1), (1, 0));
        assert_eq!(candidate_key_bits(0b0110, 0), (0, 1));
        assert_eq!(candidate_key_bits(0b0110, 1), (1, 0));
    }

    #[test]
    fn true_candidate_recovers_planted_bits() {
        for pair in [0usize, 7, 31] {
            for cand in 0..16u8 {
                let mut hi = 0u64;
                let mut lo = 0u64;
                set_word_bit(&mut hi, 2 * pair, (cand >> 3) & 1);
                set_word_bit(&mut lo, 2 * pair, (cand >> 2) & 1);
                set_word_bit(&mut hi, 2 * pair + 1, (cand >> 1) & 1);
                set_word_bit(&mut lo, 2 * pair + 1, cand & 1);
                let key = ((hi as u128) << 64) | lo as u128;
                assert_eq!(true_pair_candidate(key, pair), cand);
            }
        }
    }

    #[test]
    fn observation_matches_state_columns() {
        let iv = ASCON128_IV;
        let key = 0x0123_4567_89ab_cdef_fedc_ba98_7654_3210u128;
        let nonce = 0x1111_2222_3333_4444_5555_6666_7777_8888u128;
        let st = AsconInitState::new(iv, key, nonce);
        for pair in 0..32 {
            for slot in 0..2u8 {
                let sbox = 2 * pair + slot as usize;
                let obs = PairObservation::new(iv, nonce, pair, slot);
                let cand = true_pair_candidate(key, pair);
                assert_eq!(candidate_sensitive(&obs, cand), sbox5(st.sbox_input(sbox)));
            }
        }
    }
}
