//! Textbook AES-128, CBC and CMAC, written from the block-cipher definition
//! with the S-box derived from GF(2^8) inversion.

fn gmul(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0;
    while b != 0 {
        if b & 1 != 0 {
            p ^= a;
        }
        let hi = a & 0x80;
        a <<= 1;
        if hi != 0 {
            a ^= 0x1B;
        }
        b >>= 1;
    }
    p
}

fn sbox() -> [u8; 256] {
    let mut s = [0u8; 256];
    for (x, out) in s.iter_mut().enumerate() {
        let mut inv = 0u8;
        if x != 0 {
            // x^254 = x^-1
            let mut acc = 1u8;
            for _ in 0..254 {
                acc = gmul(acc, x as u8);
            }
            inv = acc;
        }
        *out = inv
            ^ inv.rotate_left(1)
            ^ inv.rotate_left(2)
            ^ inv.rotate_left(3)
            ^ inv.rotate_left(4)
            ^ 0x63;
    }
    s
}

pub struct RefAes {
    sbox: [u8; 256],
    round_keys: [[u8; 16]; 11],
}

impl RefAes {
    pub fn new(key: &[u8; 16]) -> Self {
        let sbox = sbox();
        let mut w = [[0u8; 4]; 44];
        for i in 0..4 {
            w[i].copy_from_slice(&key[4 * i..4 * i + 4]);
        }
        let mut rcon = 1u8;
        for i in 4..44 {
            let mut t = w[i - 1];
            if i % 4 == 0 {
                t = [
                    sbox[t[1] as usize] ^ rcon,
                    sbox[t[2] as usize],
                    sbox[t[3] as usize],
                    sbox[t[0] as usize],
                ];
                rcon = gmul(rcon, 2);
            }
            for j in 0..4 {
                w[i][j] = w[i - 4][j] ^ t[j];
            }
        }
        let mut round_keys = [[0u8; 16]; 11];
        for (r, rk) in round_keys.iter_mut().enumerate() {
            for c in 0..4 {
                rk[4 * c..4 * c + 4].copy_from_slice(&w[4 * r + c]);
            }
        }
        RefAes { sbox, round_keys }
    }

    pub fn encrypt_block(&self, block: &[u8; 16]) -> [u8; 16] {
        let xor = |s: &mut [u8; 16], k: &[u8; 16]| s.iter_mut().zip(k).for_each(|(a, b)| *a ^= b);
        let mut s = *block;
        xor(&mut s, &self.round_keys[0]);
        for round in 1..=10 {
            for b in s.iter_mut() {
                *b = self.sbox[*b as usize];
            }
            let old = s;
            for r in 0..4 {
                for c in 0..4 {
                    s[r + 4 * c] = old[r + 4 * ((c + r) % 4)];
                }
            }
            if round != 10 {
                for c in 0..4 {
                    let a = [s[4 * c], s[4 * c + 1], s[4 * c + 2], s[4 * c + 3]];
                    s[4 * c] = gmul(a[0], 2) ^ gmul(a[1], 3) ^ a[2] ^ a[3];
                    s[4 * c + 1] = a[0] ^ gmul(a[1], 2) ^ gmul(a[2], 3) ^ a[3];
                    s[4 * c + 2] = a[0] ^ a[1] ^ gmul(a[2], 2) ^ gmul(a[3], 3);
                    s[4 * c + 3] = gmul(a[0], 3) ^ a[1] ^ a[2] ^ gmul(a[3], 2);
                }
            }
            xor(&mut s, &self.round_keys[round]);
        }
        s
    }

    pub fn cbc_encrypt(&self, iv: &[u8; 16], data: &[u8]) -> Vec<u8> {
        assert_eq!(data.len() % 16, 0);
        let mut prev = *iv;
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(16) {
            let mut b = [0u8; 16];
            for i in 0..16 {
                b[i] = chunk[i] ^ prev[i];
            }
            prev = self.encrypt_block(&b);
            out.extend_from_slice(&prev);
        }
        out
    }

    pub fn cmac(&self, msg: &[u8]) -> [u8; 16] {
        let dbl = |b: [u8; 16]| {
            let v = u128::from_be_bytes(b);
            let mut r = v << 1;
            if v >> 127 == 1 {
                r ^= 0x87;
            }
            r.to_be_bytes()
        };
        let k1 = dbl(self.encrypt_block(&[0u8; 16]));
        let k2 = dbl(k1);
        let n = msg.len().div_ceil(16).max(1);
        let complete = !msg.is_empty() && msg.len().is_multiple_of(16);
        let mut last = [0u8; 16];
        let tail = &msg[(n - 1) * 16..];
        last[..tail.len()].copy_from_slice(tail);
        if complete {
            last.iter_mut().zip(k1).for_each(|(a, b)| *a ^= b);
        } else {
            last[tail.len()] = 0x80;
            last.iter_mut().zip(k2).for_each(|(a, b)| *a ^= b);
        }
        let mut x = [0u8; 16];
        for i in 0..n {
            let block: [u8; 16] = if i == n - 1 {
                last
            } else {
                msg[16 * i..16 * i + 16].try_into().unwrap()
            };
            for j in 0..16 {
                x[j] ^= block[j];
            }
            x = self.encrypt_block(&x);
        }
        x
    }
}
