//! Binary (P5) greymap encoding with maxval 255.

use crate::error::{Error, Result};

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Returns `(width, height, pixels)`; pixels are rescaled to maxval 255.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let next_token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Load("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if next_token(&mut pos)? != "P5" {
        return Err(Error::Load("not a binary PGM (missing P5 magic)".into()));
    }
    let mut number = |what: &str| -> Result<usize> {
        let tok = next_token(&mut pos)?;
        tok.parse()
            .map_err(|_| Error::Load(format!("bad PGM {what} {tok:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::Load(format!(
            "unsupported PGM geometry {width}x{height} maxval {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::Load(format!(
            "truncated PGM raster: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let mut pixels = bytes[pos..pos + need].to_vec();
    if maxval != 255 {
        for p in &mut pixels {
            *p = ((*p as usize).min(maxval) * 255 / maxval) as u8;
        }
    }
    Ok((width, height, pixels))
}
