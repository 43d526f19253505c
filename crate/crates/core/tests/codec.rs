use wecodec::codec::{
    ms_ssim, psnr, read_image, report_subbands, write_image, Codec, Model, ModelConfig, RgbImage, HEADER_LEN,
};
use wecodec::{Error, SeededRng, Tensor3};

fn toy_codec(seed: u64) -> Codec {
    let model = Model::new(ModelConfig::toy()).unwrap();
    let store = model.init(seed).unwrap();
    Codec::new(model, store)
}

fn test_image(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut rng = SeededRng::new(seed);
    let noise: Vec<f64> = (0..w * h * 3).map(|_| rng.next_f64()).collect();
    let data = (0..w * h * 3)
        .map(|i| {
            let p = i / 3;
            let (x, y, c) = ((p % w) as f64, (p / w) as f64, i % 3);
            let v = 128.0 + 60.0 * ((x * 0.11 + c as f64).sin() + (y * 0.07).cos()) + 10.0 * noise[i];
            v.clamp(0.0, 255.0) as u8
        })
        .collect();
    RgbImage::new(w, h, data).unwrap()
}

#[test]
fn psnr_matches_direct_formula() {
    let a = Tensor3::from_fn(3, 4, 5, |c, y, x| ((c * 20 + y * 5 + x) as f64) / 60.0);
    let b = a.map(|v| v + 0.01);
    // MSE = 1e-4
    assert!((psnr(&a, &b).unwrap() - 40.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
}

fn naive_ms_ssim(a: &Tensor3, b: &Tensor3) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let mut x: Vec<Vec<f64>> = (0..a.height()).map(|y| (0..a.width()).map(|i| a.at(ch, y, i)).collect()).collect();
        let mut z: Vec<Vec<f64>> = (0..b.height()).map(|y| (0..b.width()).map(|i| b.at(ch, y, i)).collect()).collect();
        let mut prod = 1.0;
        for (scale, w) in weights.iter().enumerate() {
            let (h, wd) = (x.len(), x[0].len());
            let (mut ssim, mut cs, mut n) = (0.0, 0.0, 0.0);
            for oy in 0..=h - 11 {
                for ox in 0..=wd - 11 {
                    let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let k = g[i] * g[j];
                            let (p, q) = (x[oy + i][ox + j], z[oy + i][ox + j]);
                            ma += k * p;
                            mb += k * q;
                            aa += k * p * p;
                            bb += k * q * q;
                            ab += k * p * q;
                        }
                    }
                    let csv = (2.0 * (ab - ma * mb) + c2) / (aa - ma * ma + bb - mb * mb + c2);
                    ssim += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * csv;
                    cs += csv;
                    n += 1.0;
                }
            }
            let v: f64 = if scale == 4 { ssim / n } else { cs / n };
            prod *= v.max(0.0).powf(*w);
            let pool = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                (0..m.len() / 2)
                    .map(|y| {
                        (0..m[0].len() / 2)
                            .map(|i| 0.25 * (m[2 * y][2 * i] + m[2 * y][2 * i + 1] + m[2 * y + 1][2 * i] + m[2 * y + 1][2 * i + 1]))
                            .collect()
                    })
                    .collect()
            };
            x = pool(&x);
            z = pool(&z);
        }
        total += prod;
    }
    total / a.channels() as f64
}

#[test]
fn ms_ssim_matches_naive_reference() {
    let a = test_image(181, 177, 1).to_tensor();
    let mut rng = SeededRng::new(9);
    let b = Tensor3::from_fn(3, a.height(), a.width(), |c, y, x| (a.at(c, y, x) + 0.08 * (rng.next_f64() - 0.5)).clamp(0.0, 1.0));
    let fast = ms_ssim(&a, &b).unwrap();
    let slow = naive_ms_ssim(&a, &b);
    assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    assert!(fast < 1.0 && fast > 0.5);
    assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ms_ssim_rejects_small_images() {
    let a = Tensor3::zeros(3, 100, 200);
    assert!(matches!(ms_ssim(&a, &a), Err(Error::Argument(_))));
}

#[test]
fn ppm_and_png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = test_image(13, 7, 2);
    for name in ["a.ppm", "a.png"] {
        let p = dir.path().join(name);
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }
}

fn write_raw_png(path: &std::path::Path, color: png::ColorType, depth: png::BitDepth, data: &[u8], w: u32, h: u32) {
    let f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    let mut enc = png::Encoder::new(f, w, h);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut wr = enc.write_header().unwrap();
    wr.write_image_data(data).unwrap();
}

#[test]
fn sixteen_bit_png_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("deep.png");
    write_raw_png(&p, png::ColorType::Rgb, png::BitDepth::Sixteen, &[0u8; 2 * 2 * 6], 2, 2);
    assert!(matches!(read_image(&p), Err(Error::Io(_))));
}

#[test]
fn grayscale_png_expands_to_three_channels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gray.png");
    write_raw_png(&p, png::ColorType::Grayscale, png::BitDepth::Eight, &[0, 50, 100, 200, 250, 255], 3, 2);
    let img = read_image(&p).unwrap();
    assert_eq!((img.width, img.height), (3, 2));
    assert_eq!(&img.data[..6], &[0, 0, 0, 50, 50, 50]);
    assert_eq!(&img.data[15..], &[255, 255, 255]);
}

#[test]
fn unknown_format_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.bmp");
    std::fs::write(&p, b"BM not an image").unwrap();
    assert!(matches!(read_image(&p), Err(Error::Io(_))));
}

#[test]
fn odd_sizes_decode_to_input_dims() {
    let codec = toy_codec(5);
    let img = test_image(68, 61, 3);
    let enc = codec.encode(&img).unwrap();
    let dec = codec.decode(&enc.bytes).unwrap();
    assert_eq!((dec.image.width, dec.image.height), (68, 61));
    assert_eq!(dec.y_hat, enc.y_hat);
}

#[test]
fn encoding_is_deterministic() {
    let codec = toy_codec(6);
    let img = test_image(64, 64, 4);
    let a = codec.encode(&img).unwrap();
    let b = codec.encode(&img).unwrap();
    assert_eq!(a.bytes, b.bytes);
    let other = toy_codec(6);
    assert_eq!(other.encode(&img).unwrap().bytes, a.bytes);
    assert_eq!(codec.decode(&a.bytes).unwrap().image, other.decode(&a.bytes).unwrap().image);
}

#[test]
fn decoder_rejects_a_different_model() {
    let img = test_image(64, 64, 4);
    let bytes = toy_codec(1).encode(&img).unwrap().bytes;
    assert!(matches!(toy_codec(2).decode(&bytes), Err(Error::Config(_))));
}

#[test]
fn truncated_stream_is_a_decode_error() {
    let codec = toy_codec(1);
    let bytes = codec.encode(&test_image(64, 64, 4)).unwrap().bytes;
    for cut in [10, HEADER_LEN + 2, bytes.len() - 1] {
        assert!(matches!(codec.decode(&bytes[..cut]), Err(Error::Decode(_)) | Err(Error::Parse(_))), "cut {cut}");
    }
}

#[test]
fn report_rows_add_up() {
    let codec = toy_codec(3);
    let img = test_image(70, 64, 8);
    let bytes = codec.encode(&img).unwrap().bytes;
    let rep = report_subbands(&codec, &bytes, Some(&img)).unwrap();
    let labels: Vec<&str> = rep.subbands.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["LLL", "HLL", "LLH", "LHL", "LHH", "HLH", "HHL", "HHH"]);
    let total = bytes.len() as f64 * 8.0 / (70.0 * 64.0);
    assert_eq!(rep.total_bpp, total);
    assert!((rep.latent_bpp() + rep.z.bpp - total).abs() < 1e-9);
    let pct: f64 = rep.subbands.iter().map(|r| r.percent).sum::<f64>() + rep.z.percent;
    assert!((pct - 100.0).abs() < 0.2);
    assert!(rep.psnr.unwrap().is_finite());
    assert!(rep.ms_ssim.is_none());
    let tsv = rep.to_tsv();
    assert!(tsv.lines().nth(1).unwrap().starts_with("LLL\t"));
    assert!(tsv.contains("\nz\t") && tsv.contains("\ntotal\t"));
}
