//! Bit-interleaved cell codes. Sorting by code gives a depth-first order
//! of the dyadic tree, so every subtree is a contiguous run.

fn spread2(v: u64) -> u64 {
    let mut x = v & 0xffff_ffff;
    x = (x | (x << 16)) & 0x0000_ffff_0000_ffff;
    x = (x | (x << 8)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

fn compact2(v: u64) -> u64 {
    let mut x = v & 0x5555_5555_5555_5555;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x >> 4)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x >> 8)) & 0x0000_ffff_0000_ffff;
    x = (x | (x >> 16)) & 0x0000_0000_ffff_ffff;
    x
}

fn spread3(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

fn compact3(v: u64) -> u64 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x
}

/// Interleave `dim` coordinates; coordinate 0 occupies the lowest bit of each group.
pub fn encode(dim: usize, c: [u32; 3]) -> u64 {
    match dim {
        1 => c[0] as u64,
        2 => spread2(c[0] as u64) | (spread2(c[1] as u64) << 1),
        3 => spread3(c[0] as u64) | (spread3(c[1] as u64) << 1) | (spread3(c[2] as u64) << 2),
        _ => panic!("unsupported dimension {dim}"),
    }
}

pub fn decode(dim: usize, code: u64) -> [u32; 3] {
    match dim {
        1 => [code as u32, 0, 0],
        2 => [compact2(code) as u32, compact2(code >> 1) as u32, 0],
        3 => [
            compact3(code) as u32,
            compact3(code >> 1) as u32,
            compact3(code >> 2) as u32,
        ],
        _ => panic!("unsupported dimension {dim}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_codes() {
        assert_eq!(encode(2, [1, 0, 0]), 1);
        assert_eq!(encode(2, [0, 1, 0]), 2);
        assert_eq!(encode(2, [3, 3, 0]), 15);
        assert_eq!(encode(3, [1, 1, 1]), 7);
        assert_eq!(encode(3, [2, 0, 0]), 8);
    }

    #[test]
    fn round_trip_extremes() {
        let m2 = (1u32 << 14) - 1;
        assert_eq!(decode(2, encode(2, [m2, 5, 0])), [m2, 5, 0]);
        let m3 = (1u32 << 9) - 1;
        assert_eq!(decode(3, encode(3, [m3, 0, m3])), [m3, 0, m3]);
    }
}
