use std::path::Path;
use std::process::{Command, Output};

use wecodec::codec::{read_image, write_image, Model, ModelConfig};
use wecodec::train::synthetic_crops;

fn wecodec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wecodec")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Untrained toy checkpoint plus a small test image.
fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let model = Model::new(ModelConfig::toy()).unwrap();
    let ckpt = dir.join("toy.3dwp");
    model.init(5).unwrap().save(&ckpt).unwrap();
    let img = dir.join("in.png");
    write_image(&img, &synthetic_crops(1, 64, 3)[0]).unwrap();
    (ckpt, img)
}

#[test]
fn compress_decompress_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, img) = fixture(dir.path());
    let bin = dir.path().join("a.bin");
    let out = dir.path().join("out.ppm");
    let o = wecodec(&["compress", "-i", p(&img), "-o", p(&bin), "--model", p(&ckpt), "--profile", "toy"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("bpp"));
    let o = wecodec(&["decompress", "-i", p(&bin), "-o", p(&out), "--model", p(&ckpt)]);
    assert!(o.status.success(), "{o:?}");
    let decoded = read_image(&out).unwrap();
    assert_eq!((decoded.width, decoded.height), (64, 64));

    let o = wecodec(&["report", "-i", p(&bin), "--model", p(&ckpt), "--reference", p(&img)]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "subband\tbpp\tpercent");
    assert!(lines[1].starts_with("LLL\t"));
    assert!(text.contains("\ntotal\t") && text.contains("PSNR_dB\t"));

    let o = wecodec(&["eval", "-a", p(&img), "-b", p(&out)]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("PSNR_dB\t"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, img) = fixture(dir.path());
    let missing = dir.path().join("missing.png");
    let bin = dir.path().join("a.bin");
    let o = wecodec(&["compress", "-i", p(&missing), "-o", p(&bin), "--model", p(&ckpt)]);
    assert_eq!(o.status.code(), Some(3));

    let o = wecodec(&["compress", "-i", p(&img), "-o", p(&bin), "--model", p(&ckpt), "--profile", "paper"]);
    assert_eq!(o.status.code(), Some(5));

    assert!(wecodec(&["compress", "-i", p(&img), "-o", p(&bin), "--model", p(&ckpt)]).status.success());
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes.truncate(bytes.len() - 3);
    let cut = dir.path().join("cut.bin");
    std::fs::write(&cut, &bytes).unwrap();
    let o = wecodec(&["decompress", "-i", p(&cut), "-o", p(&dir.path().join("x.png")), "--model", p(&ckpt)]);
    assert_eq!(o.status.code(), Some(4));

    let o = wecodec(&["train-toy", "--stage", "2", "--out", p(&dir.path().join("s2.3dwp"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = wecodec(&["train-toy", "--stage", "2", "--w1", "0.8", "--w2", "1.2", "--out", "x", "--resume", p(&ckpt)]);
    assert_eq!(o.status.code(), Some(5));
    let o = wecodec(&["dwt", "-i", p(&img), "--levels", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dwt_summary_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (_, img) = fixture(dir.path());
    let o = wecodec(&["dwt", "-i", p(&img), "--levels", "2"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("7 subbands, 2 levels, 3x64x64"), "{}", stdout(&o));
    let o = wecodec(&["dwt", "-i", p(&img), "--wavelet", "haar", "--channel-wavelet", "haar", "--report"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 9, "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("LLL"));
}

#[test]
fn params_totals_agree() {
    let o = wecodec(&["params"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut sum = 0;
    let mut total = 0;
    for line in text.lines() {
        let (name, count) = line.split_once('\t').unwrap();
        let count: usize = count.parse().unwrap();
        if name == "total" {
            total = count;
        } else {
            sum += count;
        }
    }
    assert_eq!(sum, total);
    assert_eq!(total, Model::new(ModelConfig::toy()).unwrap().param_count());
}

#[test]
fn short_training_run_writes_trace_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s1.3dwp");
    let trace = dir.path().join("trace.csv");
    let o = wecodec(&["train-toy", "--iters", "2", "--batch", "1", "--out", p(&out), "--trace", p(&trace)]);
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,loss,D,bpp_latent,bpp_z");
    assert_eq!(lines.len(), 3);
    let (model, _) = Model::load(&out).unwrap();
    assert_eq!(model.cfg.lambda_index, 3);
}
