use std::path::Path;

use fmamba::image_io::{decode_pgm, encode_pgm, quantize, read_image, write_image};
use fmamba::{Error, Tensor};

fn p(name: &str) -> &Path {
    Path::new(name)
}

#[test]
fn eight_bit_pgm_fixture() {
    let mut bytes = b"P5\n# two by two\n2 2\n255\n".to_vec();
    bytes.extend([0, 255, 128, 64]);
    let t = decode_pgm(&bytes, p("fixture.pgm")).unwrap();
    assert_eq!(t.shape(), &[2, 2]);
    assert_eq!(t.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
}

#[test]
fn sixteen_bit_samples_are_big_endian() {
    let mut bytes = b"P5 2 1 65535\n".to_vec();
    bytes.extend([0x01, 0x00, 0xff, 0xff]);
    let t = decode_pgm(&bytes, p("wide.pgm")).unwrap();
    assert_eq!(t.data(), &[256.0 / 65535.0, 1.0]);
}

#[test]
fn truncated_payload_names_the_offset() {
    let mut bytes = b"P5\n3 2\n255\n".to_vec();
    let header = bytes.len();
    bytes.extend([1, 2, 3, 4]);
    match decode_pgm(&bytes, p("short.pgm")) {
        Err(Error::Format { offset, .. }) => assert!(offset >= header, "offset {offset}"),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn bad_header_values_are_rejected() {
    for bytes in [&b"P5\n0 2\n255\n"[..], b"P5\n2 2\n0\n", b"P5\n2 2\n70000\n", b"P5\nx 2\n255\n"] {
        assert!(decode_pgm(bytes, p("bad.pgm")).is_err(), "{:?}", String::from_utf8_lossy(bytes));
    }
}

#[test]
fn quantization_rounds_half_up_and_clamps() {
    assert_eq!(quantize(0.5), 128);
    assert_eq!(quantize(0.0), 0);
    assert_eq!(quantize(1.0), 255);
    assert_eq!(quantize(-0.3), 0);
    assert_eq!(quantize(1.7), 255);
    assert_eq!(quantize(2.0 / 255.0), 2);
}

#[test]
fn encode_header_and_file_round_trip() {
    let t = Tensor::from_fn(&[3, 5], |i| i as f64 / 14.0);
    let bytes = encode_pgm(&t).unwrap();
    assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.pgm");
    write_image(&t, &path).unwrap();
    let back = read_image(&path).unwrap();
    assert_eq!(back.shape(), &[3, 5]);
    assert!(back.max_abs_diff(&t) <= 0.5 / 255.0 + 1e-15);
}

#[test]
fn png_grayscale_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.png");
    {
        let file = std::fs::File::create(&path).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), 3, 2);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0, 51, 102, 153, 204, 255]).unwrap();
    }
    let t = read_image(&path).unwrap();
    assert_eq!(t.shape(), &[2, 3]);
    assert_eq!(t.data(), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
}

#[test]
fn unknown_magic_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bmp");
    std::fs::write(&path, b"BM....").unwrap();
    assert!(matches!(read_image(&path), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(read_image(&dir.path().join("none.pgm")), Err(Error::Io { .. })));
}
