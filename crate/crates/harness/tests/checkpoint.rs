mod common;

use hcmarl_harness::ops::{train_seed, Registries};
use hcmarl_harness::{verify_checkpoint, Checkpoint};

fn trained_checkpoint(dir: &std::path::Path, iterations: usize) -> std::path::PathBuf {
    let mut cfg = common::tiny();
    cfg.iterations = iterations;
    train_seed(&cfg, 3, dir, &Registries::default())
        .unwrap()
        .checkpoint
}

#[test]
fn save_load_save_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for n in [0, 2] {
        let path = trained_checkpoint(&tmp.path().join(n.to_string()), n);
        let bytes = std::fs::read(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.state.iteration, n as u64);
        let again = tmp.path().join(format!("again{n}.ckpt"));
        ck.save(&again).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), bytes);
        assert_eq!(Checkpoint::load(&again).unwrap(), ck);
        verify_checkpoint(&path).unwrap();
    }
}

#[test]
fn truncation_is_an_integrity_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = trained_checkpoint(tmp.path(), 1);
    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 10, 80, bytes.len() / 2, bytes.len() - 1] {
        let e = Checkpoint::from_bytes(&bytes[..cut], "cut").unwrap_err();
        assert_eq!(e.class(), "integrity_error", "cut at {cut}: {e}");
    }
}

#[test]
fn flipped_byte_is_an_integrity_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = trained_checkpoint(tmp.path(), 1);
    let mut bytes = std::fs::read(&path).unwrap();
    let i = bytes.len() - 20;
    bytes[i] = if bytes[i] == b'1' { b'2' } else { b'1' };
    let e = Checkpoint::from_bytes(&bytes, "flipped").unwrap_err();
    assert_eq!(e.class(), "integrity_error");
}

#[test]
fn other_format_version_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = trained_checkpoint(tmp.path(), 0);
    let text = std::fs::read_to_string(&path).unwrap();
    let bumped = text.replacen("format_version=1", "format_version=2", 1);
    let e = Checkpoint::from_bytes(bumped.as_bytes(), "bumped").unwrap_err();
    assert_eq!(e.class(), "version_error");
}

#[test]
fn missing_file_is_an_io_error() {
    let e = Checkpoint::load(std::path::Path::new("/nonexistent/x.ckpt")).unwrap_err();
    assert_eq!(e.class(), "io_error");
}
