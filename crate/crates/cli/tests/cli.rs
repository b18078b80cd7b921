use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn freqsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freqsel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn named_mask_lists_24_channels() {
    let o = freqsel(&["mask", "--name", "DCT-24S"]);
    assert_eq!(o.status.code(), Some(0));
    let entries = stdout(&o).lines().filter(|l| !l.trim().is_empty() && !l.starts_with("FDMASK")).count();
    assert_eq!(entries, 24, "{}", stdout(&o));
}

#[test]
fn encode_with_named_mask() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let o = freqsel(&["gen-data", "--samples-per-class", "1", "--size", "64", "--out-dir", &path(&data)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let out = dir.path().join("x.fdt");
    let img = data.join("sample_000000.ppm");
    let o = freqsel(&["encode", "--in", &path(&img), "--mask", "DCT-24S", "--out", &path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("8x8x24"), "{}", stdout(&o));
    assert!(fs::metadata(&out).unwrap().len() > 8 * 8 * 24 * 4);
}

#[test]
fn corrupted_transform_fails_check() {
    let o = freqsel(&["check", "--corrupt-dct", "1.001"]);
    assert_eq!(o.status.code(), Some(3));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.contains("dct oracle")).expect("dct oracle row");
    assert!(line.contains("FAIL"), "{line}");
}

#[test]
fn unknown_flag_is_invalid() {
    assert_eq!(freqsel(&["mask", "--bogus"]).status.code(), Some(1));
}

#[test]
fn invalid_mask_counts_are_invalid() {
    assert_eq!(freqsel(&["mask", "--square", "65,1,1"]).status.code(), Some(1));
}

#[test]
fn missing_file_is_io_error() {
    let o = freqsel(&["stats", "--data", "/nonexistent/manifest.txt", "--out", "/tmp/never.txt"]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
}

#[test]
fn train_then_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let o = freqsel(&[
        "gen-data", "--samples-per-class", "6", "--test-per-class", "2", "--size", "32", "--out-dir", &path(&data),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let ckpt = dir.path().join("ck");
    let o = freqsel(&[
        "train", "--model", "freq", "--gate", "on", "--data", &path(&data.join("train/manifest.txt")),
        "--val", &path(&data.join("test/manifest.txt")), "--epochs", "2", "--batch-size", "8", "--out", &path(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let csv = fs::read_to_string(ckpt.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,split,loss,accuracy,mean_channels_on,lr"));
    assert_eq!(csv.lines().count(), 5);

    let prefix = dir.path().join("hm");
    let o = freqsel(&[
        "heatmap", "--ckpt", &path(&ckpt), "--data", &path(&data.join("test/manifest.txt")), "--out-prefix", &path(&prefix),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let freqs = freqsel::select::parse_heatmap_csv(&fs::read_to_string(dir.path().join("hm.csv")).unwrap()).unwrap();
    assert_eq!(freqs.len(), 192);
    assert!(freqs.iter().all(|f| (0.0..=1.0).contains(f)));
    for c in ["y", "cb", "cr"] {
        assert!(dir.path().join(format!("hm_{c}.pgm")).exists());
    }

    let o = freqsel(&["eval", "--ckpt", &path(&ckpt), "--data", &path(&data.join("test/manifest.txt"))]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).starts_with("accuracy "));
}

#[test]
fn spatial_rejects_gate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    freqsel(&["gen-data", "--samples-per-class", "2", "--size", "16", "--out-dir", &path(&data)]);
    let o = freqsel(&[
        "train", "--model", "spatial", "--gate", "on", "--data", &path(&data.join("manifest.txt")), "--out",
        &path(&dir.path().join("ck")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
