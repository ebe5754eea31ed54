//! Binary framing for out-of-process patch scorers.
//!
//! All integers are little-endian. The parent opens with the 4-byte magic
//! `PNS1` and the child echoes it. Then, per batch:
//!
//! ```text
//! request : u32 frame_len | u64 request_id | u32 count | count x (u32 w | u32 h | w*h*3 RGB bytes)
//! response: u32 frame_len | u64 request_id | u32 count | count x f32 prob
//! ```
//!
//! `frame_len` counts the bytes that follow it. Responses come back in
//! request order.

use std::io::{self, Read, Write};

use image::RgbImage;

pub const MAGIC: [u8; 4] = *b"PNS1";

/// Upper bound on a single frame, to reject garbage lengths before allocating.
pub const MAX_FRAME_LEN: u32 = 1 << 30;

pub fn encode_request(request_id: u64, patches: &[&RgbImage]) -> Vec<u8> {
    let body_len: usize = 12 + patches.iter().map(|p| 8 + p.as_raw().len()).sum::<usize>();
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.extend_from_slice(&request_id.to_le_bytes());
    out.extend_from_slice(&(patches.len() as u32).to_le_bytes());
    for p in patches {
        out.extend_from_slice(&p.width().to_le_bytes());
        out.extend_from_slice(&p.height().to_le_bytes());
        out.extend_from_slice(p.as_raw());
    }
    out
}

pub fn encode_response(request_id: u64, probs: &[f32]) -> Vec<u8> {
    let body_len = 12 + 4 * probs.len();
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.extend_from_slice(&request_id.to_le_bytes());
    out.extend_from_slice(&(probs.len() as u32).to_le_bytes());
    for p in probs {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Reads one length-prefixed frame body. `Ok(None)` on a clean EOF before
/// the length field.
fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len);
    if !(12..=MAX_FRAME_LEN).contains(&len) {
        return Err(invalid(format!("frame length {len} out of range")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn header(body: &[u8]) -> (u64, u32) {
    (
        u64::from_le_bytes(body[0..8].try_into().unwrap()),
        u32_at(body, 8),
    )
}

pub fn decode_request<R: Read>(r: &mut R) -> io::Result<Option<(u64, Vec<RgbImage>)>> {
    let Some(body) = read_frame(r)? else {
        return Ok(None);
    };
    let (id, count) = header(&body);
    let mut at = 12;
    let mut patches = Vec::with_capacity(count as usize);
    for _ in 0..count {
        if body.len() < at + 8 {
            return Err(invalid("truncated patch header"));
        }
        let (w, h) = (u32_at(&body, at), u32_at(&body, at + 4));
        at += 8;
        let n = w as usize * h as usize * 3;
        if body.len() < at + n {
            return Err(invalid("truncated patch pixels"));
        }
        patches.push(RgbImage::from_raw(w, h, body[at..at + n].to_vec()).unwrap());
        at += n;
    }
    if at != body.len() {
        return Err(invalid("trailing bytes in request frame"));
    }
    Ok(Some((id, patches)))
}

pub fn decode_response<R: Read>(r: &mut R) -> io::Result<Option<(u64, Vec<f32>)>> {
    let Some(body) = read_frame(r)? else {
        return Ok(None);
    };
    let (id, count) = header(&body);
    if body.len() != 12 + 4 * count as usize {
        return Err(invalid(format!(
            "response frame of {} bytes cannot hold {count} probabilities",
            body.len()
        )));
    }
    let probs = body[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some((id, probs)))
}

/// Child side of the protocol: answers the handshake with `magic` and then
/// scores every request with `score` until stdin closes.
pub fn serve<R, W, F>(mut input: R, mut output: W, magic: [u8; 4], mut score: F) -> io::Result<()>
where
    R: Read,
    W: Write,
    F: FnMut(&[RgbImage]) -> Vec<f32>,
{
    let mut hello = [0u8; 4];
    input.read_exact(&mut hello)?;
    if hello != MAGIC {
        return Err(invalid("bad handshake from parent"));
    }
    output.write_all(&magic)?;
    output.flush()?;
    while let Some((id, patches)) = decode_request(&mut input)? {
        let probs = score(&patches);
        output.write_all(&encode_response(id, &probs))?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trip() {
        let a = RgbImage::from_pixel(256, 256, image::Rgb([1, 2, 3]));
        let b = RgbImage::from_pixel(4, 2, image::Rgb([9, 8, 7]));
        let bytes = encode_request(77, &[&a, &b]);
        let (id, got) = decode_request(&mut bytes.as_slice()).unwrap().unwrap();
        assert_eq!(id, 77);
        assert_eq!(got, vec![a, b]);
    }

    #[test]
    fn response_round_trip_and_length_check() {
        let bytes = encode_response(5, &[0.0, 0.5, 1.0]);
        assert_eq!(u32::from_le_bytes(bytes[..4].try_into().unwrap()), 12 + 12);
        let (id, p) = decode_response(&mut bytes.as_slice()).unwrap().unwrap();
        assert_eq!((id, p), (5, vec![0.0, 0.5, 1.0]));
        let mut bad = bytes.clone();
        bad[12] = 4; // claims 4 probabilities
        assert!(decode_response(&mut bad.as_slice()).is_err());
        assert!(decode_response(&mut &[][..]).unwrap().is_none());
    }

    #[test]
    fn serve_answers_in_order() {
        let p = RgbImage::new(256, 256);
        let mut input = MAGIC.to_vec();
        input.extend(encode_request(1, &[&p, &p]));
        input.extend(encode_request(2, &[&p]));
        let mut out = Vec::new();
        let mut calls = 0;
        serve(input.as_slice(), &mut out, MAGIC, |ps| {
            calls += 1;
            vec![calls as f32 / 10.0; ps.len()]
        })
        .unwrap();
        let mut r = &out[4..];
        assert_eq!(
            decode_response(&mut r).unwrap().unwrap(),
            (1, vec![0.1, 0.1])
        );
        assert_eq!(decode_response(&mut r).unwrap().unwrap(), (2, vec![0.2]));
    }
}
