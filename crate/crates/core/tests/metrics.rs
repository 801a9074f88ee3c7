mod common;

use attn_gan::data::{synth_domains, load_dataset, Split};
use attn_gan::eval::{emit_grids, evaluate_translation, mse, psnr, psnr_from_mse};
use attn_gan::generator::{Generator, GeneratorSpec};
use attn_gan::{Domain, TrainConfig};
use rand::SeedableRng;

#[test]
fn hand_cases_and_both_aggregations() {
    common::metrics_cases().unwrap();
}

#[test]
fn metrics_are_symmetric_and_monotone() {
    let a = [10u8, 20, 30, 40, 50, 60];
    let b = [12u8, 25, 30, 33, 50, 70];
    assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
    assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    let sweep: Vec<f64> = (1..200).map(|k| psnr_from_mse(k as f64 * 7.5)).collect();
    assert!(sweep.windows(2).all(|w| w[1] < w[0]));
}

fn tiny_generator() -> Generator<f32> {
    let spec = GeneratorSpec::standard(0.0625, true);
    Generator::new(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(4)).unwrap()
}

#[test]
fn identity_model_scores_saturated() {
    let tmp = tempfile::tempdir().unwrap();
    synth_domains(tmp.path(), 3, 32, 1).unwrap();
    let cfg = TrainConfig {
        image_size: 32,
        ..TrainConfig::default()
    };
    let test = load_dataset(tmp.path(), Split::Test, Domain::X, &cfg).unwrap();
    let mut g = tiny_generator();
    g.set_mask_override(Some(0.0));
    let rep = evaluate_translation(&g, &test, None).unwrap();
    assert_eq!(rep.n_images, 3);
    assert!(rep.per_image.iter().all(|m| m.mse == 0.0 && m.saturated()));
    assert!(rep.records_jsonl().lines().all(|l| l.contains("\"psnr\":null")));
}

#[test]
fn grids_are_named_deterministic_and_show_identity() {
    let tmp = tempfile::tempdir().unwrap();
    synth_domains(&tmp.path().join("d"), 2, 32, 1).unwrap();
    let cfg = TrainConfig {
        image_size: 32,
        ..TrainConfig::default()
    };
    let test = load_dataset(&tmp.path().join("d"), Split::Test, Domain::X, &cfg).unwrap();
    let b = test.batch(&[0, 1], &[false, false]).unwrap();
    let mut g = tiny_generator();
    let rev = tiny_generator();
    let first = emit_grids(&g, Some(&rev), &b, &tmp.path().join("a"), 0).unwrap();
    let names: Vec<_> = first.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["grid_00000.png", "grid_00001.png"]);
    let again = emit_grids(&g, Some(&rev), &b, &tmp.path().join("b"), 0).unwrap();
    for (p, q) in first.iter().zip(&again) {
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(q).unwrap());
    }

    g.set_mask_override(Some(0.0));
    let closed = emit_grids(&g, None, &b, &tmp.path().join("c"), 0).unwrap();
    let img = image::open(&closed[0]).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (4 * 32, 32));
    for y in 0..32 {
        for x in 0..32 {
            assert_eq!(img.get_pixel(32 + x, y).0, [0, 0, 0]);
            assert_eq!(img.get_pixel(x, y), img.get_pixel(96 + x, y));
        }
    }
}

#[test]
fn unwritable_grid_directory_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let g = tiny_generator();
    let b = attn_gan::ImageBatch::new(attn_gan::Tensor::zeros([1, 3, 32, 32]), Domain::X).unwrap();
    let err = emit_grids(&g, None, &b, &blocker.join("sub"), 0).unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}
