use nfcbms_core::frame::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reflected CRC-16/CCITT, init and xorout 0xFFFF, one bit at a time.
fn crc16_bitwise(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &b in data {
        crc ^= b as u16;
        for _ in 0..8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0x8408
            } else {
                crc >> 1
            };
        }
    }
    !crc
}

fn random_frame(rng: &mut impl Rng) -> RequestFrame {
    let command = Command::ALL[rng.gen_range(0..Command::ALL.len())];
    let uid = rng.gen_bool(0.5).then(|| Uid(rng.gen()));
    let mut f = RequestFrame::new(command, uid, rng.gen(), rng.gen());
    match command {
        Command::SramContentRead | Command::SramWrite => {
            f.block_count = rng.gen_range(1..=SRAM_BLOCKS as u8);
            f.block_address = rng.gen_range(0..=SRAM_BLOCKS - f.block_count as u16);
            if command == Command::SramWrite {
                f.payload = (0..f.block_count as usize * BLOCK_SIZE)
                    .map(|_| rng.gen())
                    .collect();
            }
        }
        Command::I2cWrite | Command::I2cRead => {
            f.block_address = rng.gen_range(0..=0x7F);
            let min = (command == Command::I2cWrite) as usize;
            f.payload = (0..rng.gen_range(min..16)).map(|_| rng.gen()).collect();
            if command == Command::I2cRead {
                f.block_count = rng.gen_range(1..=255);
            }
        }
        Command::SetConfig => f.payload = rng.gen::<[u8; 4]>().to_vec(),
        _ => {}
    }
    f
}

#[test]
fn crc_matches_bitwise_reference_and_check_value() {
    assert_eq!(crc16(b"123456789"), 0x906E);
    assert_eq!(crc16_bitwise(b"123456789"), 0x906E);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for len in 0..300 {
        let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        assert_eq!(crc16(&data), crc16_bitwise(&data));
    }
}

#[test]
fn round_trip_on_10k_random_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    for _ in 0..10_000 {
        let f = random_frame(&mut rng);
        let bytes = encode_request(&f).unwrap();
        assert_eq!(bytes.len(), f.header_len() + f.payload.len());
        assert_eq!(decode_request(&bytes).unwrap(), f);
    }
}

#[test]
fn header_lengths() {
    let uid = Uid([1, 2, 3, 4, 5, 6, 7, 8]);
    let addressed =
        encode_request(&RequestFrame::new(Command::ReadSignature, Some(uid), 0, 0)).unwrap();
    let plain = encode_request(&RequestFrame::new(Command::ReadSignature, None, 0, 0)).unwrap();
    let resp = encode_response(&ResponseFrame::ok(vec![]));
    assert_eq!(
        [addressed.len(), plain.len(), resp.len()],
        [
            ADDRESSED_HEADER_LEN,
            UNADDRESSED_HEADER_LEN,
            RESPONSE_HEADER_LEN
        ]
    );
    assert_eq!(
        [
            ADDRESSED_HEADER_LEN,
            UNADDRESSED_HEADER_LEN,
            RESPONSE_HEADER_LEN
        ],
        [15, 7, 3]
    );
}

#[test]
fn every_single_bit_flip_of_a_15_byte_frame_is_rejected() {
    let f = RequestFrame::new(
        Command::GetConfig,
        Some(Uid([0x04, 0x4E, 0x54, 0x41, 0x47, 0, 0, 1])),
        0,
        0,
    );
    let bytes = encode_request(&f).unwrap();
    assert_eq!(bytes.len(), 15);
    for bit in 0..bytes.len() * 8 {
        let mut b = bytes.clone();
        b[bit / 8] ^= 1 << (bit % 8);
        assert!(decode_request(&b).is_err(), "bit {bit} accepted");
    }
}

#[test]
fn every_single_bit_flip_of_a_response_is_rejected() {
    let bytes = encode_response(&ResponseFrame::ok(vec![0x0A, 0x5B, 0, 0, 0, 0, 0, 0]));
    for bit in 0..bytes.len() * 8 {
        let mut b = bytes.clone();
        b[bit / 8] ^= 1 << (bit % 8);
        assert!(decode_response(&b).is_err(), "bit {bit} accepted");
    }
}

proptest! {
    #[test]
    fn valid_crc_is_self_consistent(data in proptest::collection::vec(any::<u8>(), 0..64)) {
        let mut framed = data.clone();
        framed.extend_from_slice(&crc16(&data).to_le_bytes());
        prop_assert_eq!(crc16(&framed), CRC_RESIDUE);
    }

    #[test]
    fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..80)) {
        let _ = decode_request(&bytes);
        let _ = decode_response(&bytes);
    }

    #[test]
    fn hex_dump_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bytes = encode_request(&random_frame(&mut rng)).unwrap();
        prop_assert_eq!(parse_hex_dump(&to_hex_dump(&bytes)).unwrap(), bytes);
    }
}
