use std::path::Path;

use attn_gan::data::{domain_dir, list_images, load_dataset, load_dataset_sized, sidecar_dir, synth_domains, Split};
use attn_gan::{Domain, Error, TrainConfig};
use image::{Rgb, RgbImage};

fn write_png(path: &Path, w: u32, h: u32, seed: u8) {
    let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 + y) as u8 ^ seed, (y * 13) as u8, seed.wrapping_mul(3)]));
    img.save(path).unwrap();
}

#[test]
fn loads_sorted_and_repeatably() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = domain_dir(tmp.path(), Split::Train, Domain::X);
    std::fs::create_dir_all(&dir).unwrap();
    for (name, s) in [("c.png", 3), ("a.png", 1), ("b.png", 2)] {
        write_png(&dir.join(name), 32, 32, s);
    }
    std::fs::write(dir.join("notes.txt"), "ignored").unwrap();
    let cfg = TrainConfig {
        image_size: 32,
        ..TrainConfig::default()
    };
    let a = load_dataset(tmp.path(), Split::Train, Domain::X, &cfg).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a.names, ["a.png", "b.png", "c.png"]);
    let b = load_dataset(tmp.path(), Split::Train, Domain::X, &cfg).unwrap();
    assert_eq!(a.images(), b.images());
}

#[test]
fn unscaled_images_round_trip_to_source_pixels() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = domain_dir(tmp.path(), Split::Test, Domain::Y);
    std::fs::create_dir_all(&dir).unwrap();
    write_png(&dir.join("x.png"), 32, 32, 9);
    let ds = load_dataset_sized(tmp.path(), Split::Test, Domain::Y, 32).unwrap();
    let src = image::open(dir.join("x.png")).unwrap().to_rgb8();
    let b = ds.batch(&[0], &[false]).unwrap();
    assert_eq!(b.to_rgb8(0), src.into_raw());
}

#[test]
fn rescales_to_config_size() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = domain_dir(tmp.path(), Split::Train, Domain::Y);
    std::fs::create_dir_all(&dir).unwrap();
    write_png(&dir.join("big.png"), 80, 48, 5);
    let ds = load_dataset_sized(tmp.path(), Split::Train, Domain::Y, 32).unwrap();
    assert_eq!(ds.images().shape(), [1, 3, 32, 32]);
}

#[test]
fn missing_and_empty_domains_are_explained() {
    let tmp = tempfile::tempdir().unwrap();
    let err = load_dataset_sized(tmp.path(), Split::Train, Domain::X, 32).unwrap_err();
    assert!(err.to_string().contains("trainA"), "{err}");
    std::fs::create_dir_all(domain_dir(tmp.path(), Split::Train, Domain::X)).unwrap();
    let err = load_dataset_sized(tmp.path(), Split::Train, Domain::X, 32).unwrap_err();
    assert!(matches!(&err, Error::Dataset(m) if m.contains("empty domain")), "{err}");
}

#[test]
fn undecodable_file_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = domain_dir(tmp.path(), Split::Train, Domain::X);
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("broken.png"), b"garbage").unwrap();
    let err = load_dataset_sized(tmp.path(), Split::Train, Domain::X, 32).unwrap_err();
    assert!(err.to_string().contains("broken.png"), "{err}");
}

#[test]
fn synthetic_tree_has_expected_counts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let s = synth_domains(&a, 10, 64, 5).unwrap();
    assert_eq!((s.images.len(), s.masks.len()), (40, 40));
    synth_domains(&b, 10, 64, 5).unwrap();
    for split in [Split::Train, Split::Test] {
        for d in [Domain::X, Domain::Y] {
            let fa = list_images(&domain_dir(&a, split, d)).unwrap();
            assert_eq!(fa.len(), 10);
            assert_eq!(list_images(&sidecar_dir(&a, split, d)).unwrap().len(), 10);
            for f in fa {
                let g = domain_dir(&b, split, d).join(f.file_name().unwrap());
                assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(g).unwrap());
            }
        }
    }
}

#[test]
fn sidecar_regions_are_small() {
    let tmp = tempfile::tempdir().unwrap();
    synth_domains(tmp.path(), 20, 64, 2).unwrap();
    let cfg = TrainConfig::default();
    for d in [Domain::X, Domain::Y] {
        let ds = load_dataset(tmp.path(), Split::Train, d, &cfg).unwrap();
        for i in 0..ds.len() {
            let m = ds.sidecar(i).unwrap().unwrap();
            let frac = m.iter().filter(|&&v| v).count() as f64 / m.len() as f64;
            assert!(frac > 0.0 && frac < 0.25, "{frac}");
        }
    }
}
