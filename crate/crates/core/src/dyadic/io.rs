use super::DyadicSet;
use crate::error::{Error, Result};
use std::fmt::Write as _;

pub fn write_dyset(set: &DyadicSet) -> String {
    let mut out = format!("DYSET1 d={} depth={} count={}\n", set.dim(), set.depth(), set.len());
    for c in set.sorted_coords() {
        let parts: Vec<String> = c[..set.dim()].iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", parts.join(" "));
    }
    out
}

pub(crate) fn header_value<'a>(tokens: &'a [&str], key: &str) -> Result<&'a str> {
    tokens
        .iter()
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Format(format!("header missing `{key}=`")))
}

pub fn read_dyset(text: &str) -> Result<DyadicSet> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().ok_or_else(|| Error::Format("empty DYSET1 input".into()))?;
    let tokens: Vec<&str> = head.split_whitespace().collect();
    if tokens.first() != Some(&"DYSET1") {
        return Err(Error::Format("missing DYSET1 magic".into()));
    }
    let parse = |k: &str| -> Result<u64> {
        header_value(&tokens, k)?
            .parse()
            .map_err(|_| Error::Format(format!("bad header value for `{k}`")))
    };
    let (d, depth, count) = (parse("d")? as usize, parse("depth")? as u32, parse("count")? as usize);
    let mut cells = Vec::with_capacity(count);
    for line in lines {
        let mut c = [0u32; 3];
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != d {
            return Err(Error::Format(format!("expected {d} coordinates in `{line}`")));
        }
        for (i, v) in vals.iter().enumerate() {
            c[i] = v.parse().map_err(|_| Error::Format(format!("bad coordinate `{v}`")))?;
        }
        cells.push(c);
    }
    if cells.len() != count {
        return Err(Error::Format(format!("header says {count} cells, found {}", cells.len())));
    }
    DyadicSet::from_coords(d, depth, cells)
}

/// Binary PGM of a planar set; the top image row is the highest y index.
pub fn set_to_pgm(set: &DyadicSet) -> Result<Vec<u8>> {
    set_to_pgm_shaded(set, |_| 255)
}

pub(crate) fn set_to_pgm_shaded(set: &DyadicSet, shade: impl Fn(usize) -> u8) -> Result<Vec<u8>> {
    if set.dim() != 2 {
        return Err(Error::Parameter("raster dump only for d=2".into()));
    }
    let n = 1usize << set.depth();
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    let start = out.len();
    out.resize(start + n * n, 0);
    for (i, c) in set.cells().enumerate() {
        let row = n - 1 - c.coords[1] as usize;
        out[start + row * n + c.coords[0] as usize] = shade(i);
    }
    Ok(out)
}
