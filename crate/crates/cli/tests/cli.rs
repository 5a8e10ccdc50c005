use std::path::Path;
use std::process::Command;

use sqseg::arch::{build_squeeze_segnet, ParamStore};
use sqseg::dataio::{
    decode_ppm, encode_pgm, encode_ppm, load_checkpoint, save_checkpoint, Palette,
};
use sqseg::Rng;

/// Run the CLI in-process: `(exit code, stdout, stderr)`.
fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = sqseg_cli::run(
        std::iter::once("sqseg").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A zero-weight 2-class checkpoint whose final bias favors class 1.
fn constant_class_one(path: &Path) {
    let plan = build_squeeze_segnet(2).unwrap();
    let mut params = ParamStore::zeros(&plan).unwrap();
    params.get_mut("conv1_D.b").unwrap().data_mut()[1] = 1.0;
    save_checkpoint(&params, path).unwrap();
}

#[test]
fn summary_reports_table_and_totals() {
    let (code, out, _) = run(&["summary"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("layer | output (WxHxC) | filter | parameters\n"));
    assert!(out.contains("conv1 | 237x177x96 | 7x7/2 (x96) | 14208\n"));
    assert!(out.contains("conv1_D | 480x360x11 |"));
    assert!(out.contains("total | 2611939 (paper: 2714269; 3 documented deviations)"));
    assert!(out.contains("checkpoint payload | 10447756 bytes"));
    assert_eq!(out.matches("≠paper").count(), 3);
}

#[test]
fn summary_for_two_classes() {
    let (code, out, _) = run(&["summary", "--classes", "2"]);
    assert_eq!(code, 0);
    assert!(out.contains("conv1_D | 480x360x2 | 10x10/2 (x2) | 19202"));
    assert!(out.contains("(published for 11 classes: 480x360x11)"));
    assert_eq!(out.matches("≠paper").count(), 3);
}

#[test]
fn zero_iterations_write_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, stdout, err) = run(&[
        "train",
        "--max-iterations",
        "0",
        "--seed",
        "5",
        "--classes",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("class weights"));
    let plan = build_squeeze_segnet(3).unwrap();
    let init = ParamStore::init(&plan, &mut Rng::new(5)).unwrap();
    assert_eq!(load_checkpoint(&out.join("checkpoint.sqsg")).unwrap(), init);
    assert_eq!(
        std::fs::read_to_string(out.join("train_log.csv")).unwrap(),
        "iteration,loss,lr\n"
    );
}

#[test]
fn train_prints_camvid_names_for_eleven_classes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = run(&["train", "--max-iterations", "0", "--out", s(dir.path())]);
    assert_eq!(code, 0);
    for name in ["Sky", "Building", "Pedestrian", "Bicyclist"] {
        assert!(out.contains(name), "{name}");
    }
}

#[test]
fn predict_writes_uniform_class_color_at_input_size() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("c.sqsg");
    constant_class_one(&ckpt);
    let image = dir.path().join("street.ppm");
    std::fs::write(
        &image,
        encode_ppm(37, 33, &vec![90u8; 37 * 33 * 3]).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("pred");
    let (code, _, err) = run(&[
        "predict",
        s(&image),
        "--checkpoint",
        s(&ckpt),
        "--classes",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    let r = decode_ppm(&std::fs::read(out.join("street_prediction.ppm")).unwrap()).unwrap();
    assert_eq!((r.width, r.height), (37, 33));
    let color = Palette::generated(2).unwrap().color(1).unwrap();
    assert!(r.data.chunks(3).all(|px| px == color));
}

#[test]
fn eval_on_hand_built_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("c.sqsg");
    constant_class_one(&ckpt);
    // 32x32 image; 6 pixels of class 0, 4 of class 1, the rest ignored.
    let data = dir.path().join("data");
    std::fs::create_dir_all(data.join("images")).unwrap();
    std::fs::create_dir_all(data.join("labels")).unwrap();
    let mut labels = vec![255u8; 32 * 32];
    labels[..6].fill(0);
    labels[100..104].fill(1);
    std::fs::write(
        data.join("images/a.ppm"),
        encode_ppm(32, 32, &vec![0u8; 32 * 32 * 3]).unwrap(),
    )
    .unwrap();
    std::fs::write(
        data.join("labels/a.pgm"),
        encode_pgm(32, 32, &labels).unwrap(),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("run.cfg"),
        "dataset = data\nnum_classes = 2\nout = metrics\n",
    )
    .unwrap();

    let cfg = dir.path().join("run.cfg");
    let (code, out, err) = run(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt)]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].ends_with("Average Accuracy"), "{out}");
    let cells: Vec<&str> = lines[1].split_whitespace().collect();
    assert_eq!(cells, ["0.000", "1.000", "0.500"]);
    assert_eq!(lines[2], "global accuracy 0.400");
    let table = std::fs::read_to_string(dir.path().join("metrics/metrics.tsv")).unwrap();
    assert!(table.contains("class_average\t0.500000"));
    assert!(table.contains("\n0\t6\n0\t4\n"), "{table}");
}

#[test]
fn invalid_config_exits_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let cfg = dir.path().join("bad.cfg");
    for text in [
        "momentum = 2\n",
        "bogus = 1\n",
        "dataset = missing\n",
        "palette = none.txt\n",
    ] {
        std::fs::write(&cfg, text).unwrap();
        let (code, _, err) = run(&["train", "--config", s(&cfg), "--out", s(&out)]);
        assert_eq!(code, 1, "{text}: {err}");
        assert!(err.starts_with("error: "));
        assert!(!out.exists(), "{text}");
    }
    let (code, _, _) = run(&["train", "--classes", "1", "--out", s(&out)]);
    assert_eq!(code, 1);
    let (code, _, _) = run(&["predict", "nothing.ppm", "--out", s(&out)]);
    assert_eq!(code, 1);
    assert!(!out.exists());
}

#[test]
fn mismatched_checkpoint_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("c.sqsg");
    constant_class_one(&ckpt);
    let (code, _, err) = run(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("2-class") || err.contains("11-class"), "{err}");
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_sqseg");
    let ok = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let fault = Command::new(bin)
        .args(["gradcheck", "--inject-fault", "relu"])
        .output()
        .unwrap();
    assert_eq!(fault.status.code(), Some(2));
    let stdout = String::from_utf8(fault.stdout).unwrap();
    assert!(stdout.contains("FAIL relu"), "{stdout}");
    let strict = Command::new(bin)
        .args(["gradcheck", "--tolerance", "0"])
        .output()
        .unwrap();
    assert_eq!(strict.status.code(), Some(2));
    let fine = Command::new(bin).arg("gradcheck").output().unwrap();
    assert_eq!(fine.status.code(), Some(0));
}
