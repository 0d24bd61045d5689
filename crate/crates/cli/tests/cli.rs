use std::path::Path;
use std::process::{Command, Output};

use rawvid::dataset::{dataset_digest, write_srgb_sequences};
use rawvid::{Plane, VideoSequence};

fn rawvid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rawvid")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn srgb_input(dir: &Path) -> std::path::PathBuf {
    let seqs: Vec<_> = (0..2u8)
        .map(|s| VideoSequence {
            id: format!("clip{s}"),
            frame_rate: 30.0,
            frames: (0..3u8)
                .map(|t| [0u8, 1, 2].map(|c| Plane::from_fn(16, 16, |x, y| (x * 7 + y * 5) as u8 + 20 * c + 3 * t + s)))
                .collect(),
        })
        .collect();
    let dest = dir.join("srgb");
    write_srgb_sequences(&dest, &seqs).unwrap();
    dest
}

const SYNTH: [&str; 8] = [
    "--target-low",
    "0.02",
    "--target-high",
    "0.7",
    "--a",
    "0.01",
    "--b",
    "0.0004",
];

#[test]
fn manifest_replays_to_the_same_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let input = srgb_input(dir.path());
    let first = dir.path().join("first");
    let mut args = vec![
        "--seed",
        "5",
        "make-synthetic",
        "--input",
        p(&input),
        "--output",
        p(&first),
    ];
    args.extend(SYNTH);
    let out = rawvid(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = first.join("manifest.json");
    assert!(manifest.exists());

    let second = dir.path().join("second");
    let out = rawvid(&["--config", p(&manifest), "make-synthetic", "--output", p(&second)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for part in ["clean", "noisy"] {
        assert_eq!(
            dataset_digest(&first.join(part)).unwrap(),
            dataset_digest(&second.join(part)).unwrap()
        );
    }
}

#[test]
fn explicit_flags_beat_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = srgb_input(dir.path());
    let config = dir.path().join("run.cfg");
    std::fs::write(
        &config,
        "# defaults\nseed = 3\ntarget_low = 0.02\ntarget-high = 0.7\na = 0.01\nb = 0.0004\n",
    )
    .unwrap();
    let dest = dir.path().join("out");
    let out = rawvid(&[
        "--config",
        p(&config),
        "--seed",
        "9",
        "make-synthetic",
        "--input",
        p(&input),
        "--output",
        p(&dest),
        "--a",
        "0.02",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dest.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["a"], "0.02");
    assert_eq!(manifest["config"]["target-high"], "0.7");
}

#[test]
fn existing_output_is_refused_and_left_alone() {
    let dir = tempfile::tempdir().unwrap();
    let input = srgb_input(dir.path());
    let dest = dir.path().join("taken");
    std::fs::create_dir(&dest).unwrap();
    std::fs::write(dest.join("keep.txt"), "mine").unwrap();
    let mut args = vec!["make-synthetic", "--input", p(&input), "--output", p(&dest)];
    args.extend(SYNTH);
    let out = rawvid(&args);
    assert!(!out.status.success());
    let entries: Vec<_> = std::fs::read_dir(&dest).unwrap().collect();
    assert_eq!(entries.len(), 1);
    assert_eq!(std::fs::read_to_string(dest.join("keep.txt")).unwrap(), "mine");
}

#[test]
fn failures_leave_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = srgb_input(dir.path());
    let dest = dir.path().join("never");
    // Negative noise variance is rejected.
    let out = rawvid(&[
        "make-synthetic",
        "--input",
        p(&input),
        "--output",
        p(&dest),
        "--target-low",
        "0.02",
        "--target-high",
        "0.7",
        "--a",
        "-1",
        "--b",
        "0.0004",
    ]);
    assert!(!out.status.success());
    assert!(!dest.exists());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "srgb")
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");

    let missing = rawvid(&[
        "eval",
        "--denoised",
        p(&dir.path().join("nope")),
        "--reference",
        p(&input),
    ]);
    assert!(!missing.status.success());
    assert!(!missing.stderr.is_empty());
}
