use std::collections::BTreeMap;

use satl_core::data::*;
use satl_core::Error;
use satl_tensor::{Prng, Tensor};

fn synth(n: usize, ratio: f64, size: usize, seed: u64) -> DatasetIndex {
    let cfg = SynthConfig {
        n,
        pos_ratio: ratio,
        image_size: (size, size),
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, &Prng::new(seed)).unwrap()
}

#[test]
fn exact_class_counts() {
    let ds = synth(100, 0.5, 32, 1);
    assert_eq!(ds.class_counts(), Some((50, 50)));
    let ds = synth(400, 0.1, 16, 2);
    assert_eq!(ds.class_counts(), Some((360, 40)));
}

#[test]
fn same_seed_same_bytes() {
    let a = synth(20, 0.5, 32, 9);
    let b = synth(20, 0.5, 32, 9);
    assert_eq!(encode_pack(&a), encode_pack(&b));
    assert_ne!(encode_pack(&a), encode_pack(&synth(20, 0.5, 32, 10)));
}

#[test]
fn labels_follow_stored_ratios_with_margin() {
    let ds = synth(300, 0.5, 32, 3);
    for item in &ds.items {
        let cdr = item.cdr.unwrap() as f64;
        let expected = if cdr > 0.5 { 1 } else { 0 };
        assert_eq!(item.label, Some(expected), "{}", item.id);
        assert!((cdr - 0.5).abs() >= 0.05 - 1e-6 && (0.2..=0.95).contains(&cdr));
        assert!(item.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

/// Rows of the mask column through the ellipse center.
fn vertical_extent(mask: &[bool], w: usize, col: usize) -> usize {
    mask.chunks(w).filter(|row| row[col]).count()
}

#[test]
fn rendered_ratio_matches_sampled_ratio() {
    let mut prng = Prng::new(17);
    let size = 64;
    for _ in 0..50 {
        let disc_v = prng.uniform_range(0.16, 0.24) * size as f64;
        let cdr = prng.uniform_range(0.2, 0.95);
        let center = (prng.uniform_range(0.35, 0.65) * size as f64, prng.uniform_range(0.35, 0.65) * size as f64);
        let geom = FundusGeometry {
            disc_center: center,
            disc_axes: (disc_v, disc_v),
            cup_center: center,
            cup_axes: (cdr * disc_v, cdr * disc_v * 0.9),
            cdr,
        };
        let r = render_fundus(size, size, &geom, &mut prng);
        let col = center.1.floor() as usize;
        let disc = vertical_extent(&r.disc_mask, size, col) as f64;
        let cup = vertical_extent(&r.cup_mask, size, col) as f64;
        assert!((cup - cdr * disc).abs() <= 2.0, "cup {cup} disc {disc} cdr {cdr}");
    }
}

#[test]
fn identity_style_is_a_no_op() {
    let ds = synth(10, 0.5, 16, 4);
    let out = apply_domain_shift(&ds, &DomainStyle::IDENTITY, &Prng::new(0)).unwrap();
    assert_eq!(out, ds);
}

#[test]
fn shift_preserves_labels_and_count() {
    let ds = synth(40, 0.5, 16, 5);
    for preset in StylePreset::ALL {
        let out = apply_domain_shift(&ds, &preset.style(), &Prng::new(1)).unwrap();
        assert_eq!(out.labels(), ds.labels());
        assert_eq!(out.len(), ds.len());
    }
}

#[test]
fn brightness_offset_shifts_the_mean() {
    let img = Tensor::<f32>::full(&[3, 8, 8], 0.4);
    let ds = DatasetIndex::new(
        "flat",
        vec![LabeledImage {
            id: "a".into(),
            pixels: img,
            label: None,
            cdr: None,
        }],
    );
    let style = DomainStyle {
        brightness_offset: 0.1,
        ..DomainStyle::IDENTITY
    };
    let out = apply_domain_shift(&ds, &style, &Prng::new(0)).unwrap();
    let mean = out.items[0].pixels.data().iter().sum::<f32>() / 192.0;
    assert!((mean - 0.5).abs() < 1e-6);
}

#[test]
fn invalid_style_is_rejected() {
    let style = DomainStyle {
        contrast: -1.0,
        ..DomainStyle::IDENTITY
    };
    let ds = synth(2, 0.5, 16, 5);
    assert!(matches!(apply_domain_shift(&ds, &style, &Prng::new(0)), Err(Error::Config(_))));
}

fn labeled(pos: usize, neg: usize) -> DatasetIndex {
    let items = (0..pos + neg)
        .map(|i| LabeledImage {
            id: format!("x{i}"),
            pixels: Tensor::zeros(&[1, 1, 1]),
            label: Some(u8::from(i < pos)),
            cdr: None,
        })
        .collect();
    DatasetIndex::new("t", items)
}

#[test]
fn split_counts_follow_floor_rule() {
    let (train, val) = stratified_split(&labeled(10, 10), 0.7, &Prng::new(0)).unwrap();
    assert_eq!(train.class_counts(), Some((7, 7)));
    assert_eq!(val.class_counts(), Some((3, 3)));

    let (train, val) = stratified_split(&labeled(3143, 1689), 0.7, &Prng::new(0)).unwrap();
    assert_eq!(train.class_counts(), Some((1182, 2200)));
    assert_eq!(val.class_counts(), Some((507, 943)));
    assert_eq!(train.len(), 3382);
    assert_eq!(val.len(), 1450);
}

#[test]
fn split_needs_both_classes_and_labels() {
    assert!(matches!(stratified_split(&labeled(0, 5), 0.7, &Prng::new(0)), Err(Error::Contract(_))));
    let unlabeled = labeled(3, 3).without_labels();
    assert!(stratified_split(&unlabeled, 0.7, &Prng::new(0)).is_err());
}

#[test]
fn batches_cover_everything_once() {
    let ds = labeled(50, 50);
    let all: Vec<Batch> = batches(&ds, 16, Some(Prng::new(3))).unwrap().collect();
    assert_eq!(all.len(), 7);
    assert_eq!(all.last().unwrap().ids.len(), 4);
    assert_eq!(all[0].images.shape(), &[16, 1, 1, 1]);
    let mut ids: Vec<String> = all.iter().flat_map(|b| b.ids.clone()).collect();
    let again: Vec<String> = batches(&ds, 16, Some(Prng::new(3))).unwrap().flat_map(|b| b.ids).collect();
    assert_eq!(ids, again);
    ids.sort();
    let mut expected: Vec<String> = ds.items.iter().map(|i| i.id.clone()).collect();
    expected.sort();
    assert_eq!(ids, expected);
    assert!(batches(&ds, 0, None).is_err());
}

#[test]
fn pack_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = synth(6, 0.5, 16, 8);
    ds.items[2].label = None;
    let path = dir.path().join("set.satd");
    write_pack(&path, &ds).unwrap();
    let back = read_pack(&path).unwrap();
    assert_eq!(back.len(), 6);
    for (a, b) in back.items.iter().zip(&ds.items) {
        assert_eq!((&a.id, a.label, &a.pixels), (&b.id, b.label, &b.pixels));
    }
    let bytes = encode_pack(&ds);
    assert_eq!(&bytes[..4], PACK_MAGIC);
    assert!(decode_pack(&bytes[..bytes.len() - 1]).is_err());
    let mut bad_label = bytes.clone();
    bad_label[8 + 4 + ds.items[0].id.len()] = 7;
    assert!(decode_pack(&bad_label).unwrap_err().contains("label"));
}

fn write_ppm(path: &std::path::Path, w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            bytes.extend_from_slice(&f(x, y));
        }
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn directory_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["a.ppm", "b.ppm", "c.ppm"].iter().enumerate() {
        write_ppm(&dir.path().join(name), 8, 6, |x, _| [(x * 30) as u8, i as u8 * 100, 255]);
    }
    let csv = dir.path().join("labels.csv");
    std::fs::write(&csv, "filename,label\na.ppm,1\nb.ppm,0\nc.ppm,1\n").unwrap();
    let ds = load_directory(dir.path(), Some(&csv), (4, 4)).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.class_counts(), Some((1, 2)));
    assert_eq!(ds.items[0].pixels.shape(), &[3, 4, 4]);
    assert!(ds.items[0].pixels.data()[32..].iter().all(|&v| v == 1.0));

    let unlabeled = load_directory(dir.path(), None, (4, 4)).unwrap();
    assert_eq!(unlabeled.len(), 3);
    assert_eq!(unlabeled.class_counts(), None);

    std::fs::write(&csv, "filename,label\na.ppm,2\n").unwrap();
    let err = load_directory(dir.path(), Some(&csv), (4, 4)).unwrap_err();
    assert!(matches!(err, Error::Ingestion { .. }) && err.to_string().contains("\"2\""), "{err}");

    std::fs::write(&csv, "filename,label\nmissing.ppm,1\n").unwrap();
    let err = load_directory(dir.path(), Some(&csv), (4, 4)).unwrap_err();
    assert!(err.to_string().contains("missing.ppm"), "{err}");

    std::fs::write(dir.path().join("bad.ppm"), b"P6\nnot an image").unwrap();
    std::fs::write(&csv, "filename,label\nbad.ppm,1\n").unwrap();
    let err = load_directory(dir.path(), Some(&csv), (4, 4)).unwrap_err();
    assert!(err.to_string().contains("bad.ppm"), "{err}");
}

#[test]
fn bilinear_checkerboard_averages() {
    let data: Vec<f32> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f32).collect();
    let img = Tensor::new(&[1, 4, 4], data).unwrap();
    let out = resize_bilinear(&img, 2, 2);
    assert!(out.data().iter().all(|&v| v == 0.5));
}

#[test]
fn synthetic_ids_are_unique() {
    let ds = synth(50, 0.3, 16, 1);
    let mut seen = BTreeMap::new();
    for item in &ds.items {
        assert!(seen.insert(item.id.clone(), ()).is_none());
    }
}
