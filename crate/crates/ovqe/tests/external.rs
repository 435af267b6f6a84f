use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use ovqe::codec::{ExternalCodec, ExternalSpec};
use ovqe_core::codec::Codec;
use ovqe_core::synthetic::moving_texture;

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
    p
}

fn spec(dir: &Path, enc: &str, dec: &str) -> ExternalSpec {
    ExternalSpec {
        encoder: script(dir, "enc.sh", enc),
        decoder: script(dir, "dec.sh", dec),
        encoder_args: ["{input}", "{bitstream}", "{qp}", "{width}", "{height}"].map(String::from).to_vec(),
        decoder_args: ["{bitstream}", "{output}"].map(String::from).to_vec(),
        extra_flags: vec![],
    }
}

#[test]
fn bitrate_from_bitstream_size() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    fs::create_dir(&work).unwrap();
    // The bitstream holds a fixed 1000 bytes; the decoder returns the input copy.
    let s = spec(
        dir.path(),
        "test \"$3\" = 37 && test \"$4\" = 32 || exit 9\ncp \"$1\" \"$2.yuv\"\nhead -c 1000 /dev/zero > \"$2\"",
        "cp \"$1.yuv\" \"$2\"",
    );
    let mut codec = ExternalCodec::new(s, &work, false).unwrap();
    let seq = moving_texture(4, 32, 32, 1);
    let r = codec.encode_decode(&seq, 37).unwrap();
    assert_eq!(r.bitstream_bytes, 1000);
    assert!((r.bitrate_kbps - 1000.0 * 8.0 * 30.0 / 4000.0).abs() < 1e-12);
    assert_eq!(r.decoded, seq);
    assert_eq!(fs::read_dir(&work).unwrap().count(), 0);
    assert!(matches!(codec.encode_decode(&seq, 64), Err(ovqe_core::Error::Argument(_))));
}

#[test]
fn short_decode_is_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), "cp \"$1\" \"$2\"", "head -c 1536 \"$1\" > \"$2\"");
    let mut codec = ExternalCodec::new(s, dir.path(), false).unwrap();
    let err = codec.encode_decode(&moving_texture(3, 32, 32, 1), 30).unwrap_err();
    assert!(matches!(err, ovqe_core::Error::Integrity(_)), "{err:?}");
}

#[test]
fn decoder_failure_carries_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), "cp \"$1\" \"$2\"", "echo 'bad stream' >&2; exit 4");
    let mut codec = ExternalCodec::new(s, dir.path(), false).unwrap();
    match codec.encode_decode(&moving_texture(2, 32, 32, 1), 30).unwrap_err() {
        ovqe_core::Error::Codec(msg) => assert!(msg.contains("bad stream"), "{msg}"),
        other => panic!("{other:?}"),
    }
}
