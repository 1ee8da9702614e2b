//! End-to-end runs of the `gait` binary on tiny settings.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gait::checkpoint::Checkpoint;
use gait::data::DatasetManifest;
use gait::pipeline::{eval_paths, read_embedding_dump, read_loss_log};
use gait_core::recognition::evaluate_retrieval;

const TINY: &[&str] = &[
    "--set", "diffgait.channels=4",
    "--set", "diffgait.groups=2",
    "--set", "diffgait.batch_ids=2",
    "--set", "pgi.channels=3",
    "--set", "recognition.widths=[4,4,6,6]",
    "--set", "recognition.groups=2",
    "--set", "recognition.parts=4",
    "--set", "recognition.dim=6",
    "--set", "recognition.batch_ids=2",
    "--set", "recognition.batch_seqs=2",
    "--set", "recognition.frames=3",
    "--set", "recognition.steps=2",
    "--set", "eval.gallery_seqs=1",
];

fn gait(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gait")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gait(args);
    assert!(out.status.success(), "gait {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    [args, TINY].concat()
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn small_dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["gen-data", "--identities", "4", "--seqs-per-id", "3", "--frames", "4", "--seed", "3", "--out", &p(&data)]);
    data
}

fn trained_diffgait(dir: &Path, data: &Path, steps: &str) -> PathBuf {
    let out = dir.join("dg");
    ok(&with_tiny(&["train-diffgait", "--data", &p(data), "--out", &p(&out), "--steps", steps]));
    out.join("diffgait.ckpt")
}

#[test]
fn gen_data_counts_sequences_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let stdout = ok(&["gen-data", "--identities", "8", "--seqs-per-id", "8", "--frames", "30", "--out", &p(&data)]);
    assert!(stdout.contains("sequences 64"), "{stdout}");
    assert!(stdout.contains("frames 1920"), "{stdout}");
    let m = DatasetManifest::load(&data).unwrap();
    assert_eq!(m.entries.len(), 64);
    assert_eq!(m.identities().len(), 8);
    assert_eq!(m.frame_count().unwrap(), 1920);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(gait(&[]).status.code(), Some(1));
    assert_eq!(gait(&["gen-data", "--identities", "0", "--seqs-per-id", "1", "--frames", "1", "--out", "x"]).status.code(), Some(1));
    assert_eq!(gait(&["train-diffgait", "--bogus"]).status.code(), Some(1));
    assert_eq!(gait(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = gait(&["train-diffgait", "--data", &p(&missing), "--out", &p(&dir.path().join("o")), "--steps", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"ZGCK not really").unwrap();
    let skel = dir.path().join("s.json");
    std::fs::write(&skel, b"{}").unwrap();
    let out = gait(&["sample", "--ckpt", &p(&junk), "--skeletons", &p(&skel), "--out", &p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));

    let data = small_dataset(dir.path());
    let out = gait(&["train-diffgait", "--data", &p(&data), "--out", &p(&dir.path().join("o")), "--set", "nonsense.key=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let ckpt = trained_diffgait(dir.path(), &data, "2");
    let (data, ckpt, out) = (p(&data), p(&ckpt), p(&dir.path().join("zg")));
    let mut args = with_tiny(&["train-zipgait", "--data", &data, "--diffgait-ckpt", &ckpt, "--out", &out]);
    args.extend(["--set", "recognition.lr=1e30", "--set", "recognition.steps=20"]);
    let out = gait(&args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn smoke_training_logs_every_step_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let ckpt = trained_diffgait(dir.path(), &data, "10");
    let rows = read_loss_log(&dir.path().join("dg/diffgait_loss.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    assert!(rows.iter().all(|r| r.1.is_finite()));
    assert_eq!(Checkpoint::load(&ckpt).unwrap().step, 10);

    // 6 steps, then 4 more from the checkpoint, equals 10 in one go.
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    ok(&with_tiny(&["train-diffgait", "--data", &p(&data), "--out", &p(&first), "--steps", "6"]));
    ok(&["train-diffgait", "--data", &p(&data), "--out", &p(&second), "--steps", "4", "--resume", &p(&first.join("diffgait.ckpt"))]);
    let resumed = read_loss_log(&second.join("diffgait_loss.csv")).unwrap();
    assert_eq!(resumed.iter().map(|r| r.0).collect::<Vec<_>>(), vec![7, 8, 9, 10]);
    let (a, b) = (Checkpoint::load(&ckpt).unwrap(), Checkpoint::load(&second.join("diffgait.ckpt")).unwrap());
    assert_eq!(b.step, 10);
    assert_eq!(a.arrays, b.arrays);

    // A resume under a different config is refused.
    let out = gait(&["train-diffgait", "--data", &p(&data), "--out", &p(&second), "--steps", "1", "--resume", &p(&ckpt), "--set", "diffgait.lr=0.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_writes_every_level() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let ckpt = trained_diffgait(dir.path(), &data, "2");
    let skel = data.join("skeletons/id000_seq00.json");
    let out = dir.path().join("sample");
    ok(&["sample", "--ckpt", &p(&ckpt), "--skeletons", &p(&skel), "--steps", "3", "--out", &p(&out)]);
    let shape = |f: &str| {
        let bytes = std::fs::read(out.join(f)).unwrap();
        npyz::NpyFile::new(&bytes[..]).unwrap().shape().to_vec()
    };
    assert_eq!(shape("levels.npy"), vec![4, 3, 64, 44]);
    assert_eq!(shape("composite.npy"), vec![4, 64, 44]);
    assert!(out.join("png/frame000_p3.png").exists());
    assert!(!out.join("png/frame000_p4.png").exists());
    assert!(out.join("run_info.json").exists());
}

#[test]
fn eval_matches_the_library_on_the_dumped_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let ckpt = trained_diffgait(dir.path(), &data, "2");
    let zg = dir.path().join("zg");
    ok(&with_tiny(&["train-zipgait", "--data", &p(&data), "--diffgait-ckpt", &p(&ckpt), "--out", &p(&zg)]));
    assert_eq!(read_loss_log(&zg.join("zipgait_loss.csv")).unwrap().len(), 2);

    let out = dir.path().join("eval");
    let stdout = ok(&["eval", "--ckpt", &p(&zg.join("zipgait.ckpt")), "--data", &p(&data), "--out", &p(&out)]);
    assert!(stdout.contains("rank1"), "{stdout}");
    let (metrics, npy, sidecar, info) = eval_paths(&out);
    assert!(info.exists());
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&metrics).unwrap()).unwrap();
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["excluded_probes", "mAP", "mINP", "rank1", "rank5"]);

    let (gallery, probe) = read_embedding_dump(&npy, &sidecar).unwrap();
    assert_eq!((gallery.len(), probe.len()), (2, 4));
    let r = evaluate_retrieval(&gallery, &probe).unwrap();
    for (key, value) in [("rank1", r.rank1), ("rank5", r.rank5), ("mAP", r.map), ("mINP", r.minp)] {
        assert!((json[key].as_f64().unwrap() - value).abs() <= 1e-6, "{key}");
    }
    assert_eq!(json["excluded_probes"].as_u64().unwrap() as usize, r.excluded_probes);

    // A DiffGait checkpoint is not a recognizer.
    let out = gait(&["eval", "--ckpt", &p(&ckpt), "--data", &p(&data), "--out", &p(&out)]);
    assert_eq!(out.status.code(), Some(2));
}
