//! Byte-exact checks of the scorer wire format against frozen transcripts
//! (`fixtures/gen_protocol_golden.py`).

use image::{Rgb, RgbImage};
use pnstage::scoring::protocol::{decode_request, decode_response, encode_request, serve, MAGIC};

const REQUEST: &[u8] = include_bytes!("fixtures/protocol.golden");
const RESPONSE: &[u8] = include_bytes!("fixtures/protocol_response.golden");

fn patches() -> (RgbImage, RgbImage) {
    let white = RgbImage::from_pixel(256, 256, Rgb([255, 255, 255]));
    let ramp = RgbImage::from_fn(256, 256, |x, y| Rgb([x as u8, y as u8, 128]));
    (white, ramp)
}

#[test]
fn request_encoding_matches_transcript() {
    let (a, b) = patches();
    let mut bytes = MAGIC.to_vec();
    bytes.extend(encode_request(1, &[&a, &b]));
    assert_eq!(bytes.len(), REQUEST.len());
    assert!(bytes == REQUEST, "request bytes differ from the transcript");
}

#[test]
fn transcript_decodes_to_the_patches() {
    let mut r = &REQUEST[4..];
    let (id, got) = decode_request(&mut r).unwrap().unwrap();
    let (a, b) = patches();
    assert_eq!(id, 1);
    assert_eq!(got, vec![a, b]);
    assert!(decode_request(&mut r).unwrap().is_none());
}

#[test]
fn replaying_the_transcript_reproduces_the_response() {
    let mut out = Vec::new();
    serve(REQUEST, &mut out, MAGIC, |ps| vec![0.25; ps.len()]).unwrap();
    assert_eq!(out, RESPONSE);
    let mut r = &RESPONSE[4..];
    assert_eq!(
        decode_response(&mut r).unwrap(),
        Some((1, vec![0.25, 0.25]))
    );
}
