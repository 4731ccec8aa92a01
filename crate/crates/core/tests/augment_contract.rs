use std::collections::BTreeMap;

use ctxnet::augment::{
    augment_sample, geometric_distort, hflip, photometric, sample_seed, sentence_shuffle, synonym_replace, AugmentPolicy, Lexicon,
    Photometric, Warp,
};
use ctxnet::data::{generate_dataset, generate_sample, side_of_column, Attrs, Extent, GenConfig, Sample, Side, Zone};
use ctxnet::rng::rng_from;

fn sample() -> Sample {
    generate_sample(11, &GenConfig::default()).unwrap()
}

#[test]
fn double_flip_is_identity_and_columns_mirror() {
    let s = sample();
    let f = hflip(&s);
    assert_eq!(hflip(&f), s);
    let n = s.size;
    for r in [0, 17, n - 1] {
        for c in 0..n {
            assert_eq!(f.image[r * n + c], s.image[r * n + n - 1 - c]);
            assert_eq!(f.mask[r * n + c], s.mask[r * n + n - 1 - c]);
        }
    }
    assert_eq!(f.report, s.report);
    let before = side_of_column(s.mask_centroid_column().unwrap(), n);
    let after = side_of_column(f.mask_centroid_column().unwrap(), n);
    assert_eq!(before, s.attrs.side);
    assert_eq!(after, s.attrs.side.opposite());
}

#[test]
fn neutral_photometrics_are_identity_and_outputs_stay_in_range() {
    let s = sample();
    for kind in [Photometric::Brightness(0.0), Photometric::Contrast(1.0), Photometric::Gamma(1.0)] {
        assert_eq!(photometric(&s.image, kind).unwrap(), s.image);
    }
    for kind in [Photometric::Brightness(0.2), Photometric::Brightness(-0.2), Photometric::Contrast(1.2), Photometric::Gamma(0.8)] {
        assert!(photometric(&s.image, kind).unwrap().iter().all(|x| (0.0..=1.0).contains(x)));
    }
    for bad in [Photometric::Brightness(0.3), Photometric::Contrast(1.5), Photometric::Gamma(2.0)] {
        assert!(photometric(&s.image, bad).is_err());
    }
}

#[test]
fn contrast_two_pixel_hand_value() {
    // mean 0.5; 0.5 + 1.2 * (0.3 - 0.5) = 0.26, 0.5 + 1.2 * 0.2 = 0.74
    let out = photometric(&[0.3, 0.7], Photometric::Contrast(1.2)).unwrap();
    assert!((out[0] - 0.26).abs() < 1e-6 && (out[1] - 0.74).abs() < 1e-6, "{out:?}");
}

#[test]
fn zero_magnitude_warps_are_exact_identities() {
    let s = sample();
    let warps = [
        Warp::Elastic { alpha: 0.0, sigma: 0.08 },
        Warp::Grid { steps: 5, limit: 0.0 },
        Warp::Optical { k: 0.0 },
        Warp::Ssr { shift_x: 0.0, shift_y: 0.0, scale: 1.0, rotate: 0.0 },
    ];
    for w in warps {
        let out = geometric_distort(&s, &w, 0.25, &mut rng_from(1)).unwrap();
        assert_eq!(out, s, "{w:?}");
    }
}

#[test]
fn warps_keep_masks_binary_and_images_in_range() {
    let samples = generate_dataset(20, 2, &GenConfig::default()).unwrap();
    let warps = [
        Warp::Elastic { alpha: 0.03, sigma: 0.08 },
        Warp::Grid { steps: 5, limit: 0.15 },
        Warp::Optical { k: 0.1 },
        Warp::Optical { k: -0.1 },
        Warp::Ssr { shift_x: 0.06, shift_y: -0.06, scale: 0.9, rotate: 10.0 },
    ];
    let mut rng = rng_from(3);
    for s in &samples {
        for w in &warps {
            let out = geometric_distort(s, w, 1.0, &mut rng).unwrap();
            assert!(out.mask.iter().all(|&m| m <= 1));
            assert!(out.image.iter().all(|x| (0.0..=1.0).contains(x)));
            assert_ne!(out.image, s.image);
        }
    }
}

fn disk(n: usize, radius: f64) -> Sample {
    let c = (n as f64 - 1.0) / 2.0;
    let mask: Vec<u8> = (0..n * n)
        .map(|i| {
            let (r, col) = ((i / n) as f64 - c, (i % n) as f64 - c);
            (r * r + col * col <= radius * radius) as u8
        })
        .collect();
    let image = mask.iter().map(|&m| m as f32).collect();
    let attrs = Attrs { present: true, side: Side::None, zone: Zone::None, size: Extent::None, ambiguous: false };
    Sample { id: "disk".into(), size: n, image, mask, report: String::new(), attrs, seed: 0 }
}

#[test]
fn rotating_a_centered_disk_preserves_its_area() {
    let d = disk(64, 20.0);
    let before = d.mask.iter().filter(|&&m| m != 0).count() as f64;
    let w = Warp::Ssr { shift_x: 0.0, shift_y: 0.0, scale: 1.0, rotate: 10.0 };
    let out = geometric_distort(&d, &w, 0.25, &mut rng_from(0)).unwrap();
    let after = out.mask.iter().filter(|&&m| m != 0).count() as f64;
    assert!((after - before).abs() / before <= 0.03, "{before} -> {after}");
}

#[test]
fn heavy_loss_is_rejected() {
    let d = disk(32, 6.0);
    let w = Warp::Ssr { shift_x: 0.5, shift_y: 0.0, scale: 1.0, rotate: 0.0 };
    assert!(geometric_distort(&d, &w, 0.25, &mut rng_from(0)).is_err());
}

#[test]
fn sentence_shuffle_permutes_sentences() {
    let mut rng = rng_from(4);
    assert_eq!(sentence_shuffle("Only one sentence.", &mut rng), "Only one sentence.");
    let text = "A one. B two! C three? D four.";
    let sorted = |t: &str| {
        let mut v: Vec<String> = t.split_inclusive(['.', '!', '?']).map(|s| s.trim().to_string()).collect();
        v.sort();
        v
    };
    let mut seen = std::collections::HashSet::new();
    for seed in 0..20 {
        let out = sentence_shuffle(text, &mut rng_from(seed));
        assert_eq!(sorted(&out), sorted(text));
        seen.insert(out);
    }
    assert!(seen.len() > 1);
    assert_eq!(sentence_shuffle(text, &mut rng_from(9)), sentence_shuffle(text, &mut rng_from(9)));
}

#[test]
fn synonym_replacement_extremes() {
    let lex = Lexicon(BTreeMap::from([("pneumothorax".to_string(), vec!["ptx".to_string()])]));
    let text = "Large pneumothorax. Pneumothorax again, pneumothorax";
    assert_eq!(synonym_replace(text, &lex, 0.0, &mut rng_from(0)).0, text);
    assert_eq!(synonym_replace(text, &lex, 1.0, &mut rng_from(0)).0, "Large ptx. ptx again, ptx");
}

#[test]
fn synonym_rate_matches_probability() {
    let lex = Lexicon::default();
    let mut rng = rng_from(15);
    let hits: usize = (0..10_000).map(|_| synonym_replace("pneumothorax", &lex, 0.15, &mut rng).1).sum();
    let rate = hits as f64 / 10_000.0;
    assert!((0.14..=0.16).contains(&rate), "{rate}");
}

#[test]
fn lexicon_file_rules() {
    assert!(Lexicon::from_json(r#"{"large": ["big"]}"#).is_ok());
    assert!(Lexicon::from_json(r#"{"Large": ["big"]}"#).is_err());
    assert!(Lexicon::from_json(r#"{"large": []}"#).is_err());
    assert!(Lexicon::default().0.keys().all(|k| k != "left" && k != "right"));
}

#[test]
fn inert_policy_is_identity_and_seeded_policy_is_deterministic() {
    let s = sample();
    let lex = Lexicon::default();
    assert_eq!(augment_sample(&s, &AugmentPolicy::none(), &lex, 5), s);
    let p = AugmentPolicy { p_photometric: 1.0, p_distort: 1.0, p_ssr: 1.0, text_shuffle: true, text_synonym_p: 0.5, ..AugmentPolicy::default() };
    p.validate().unwrap();
    assert_eq!(augment_sample(&s, &p, &lex, 5), augment_sample(&s, &p, &lex, 5));
    assert_ne!(augment_sample(&s, &p, &lex, 5), augment_sample(&s, &p, &lex, 6));
    assert_ne!(sample_seed(1, 0, 3), sample_seed(1, 1, 3));
}

#[test]
fn default_policy_never_breaks_concordance() {
    let samples = generate_dataset(1000, 21, &GenConfig::default()).unwrap();
    let lex = Lexicon::default();
    let p = AugmentPolicy { p_photometric: 1.0, p_distort: 1.0, p_ssr: 1.0, ..AugmentPolicy::default() };
    for (i, s) in samples.iter().enumerate() {
        let out = augment_sample(s, &p, &lex, sample_seed(0, 0, i as u64));
        let c = out.mask_centroid_column().expect("mask survives");
        assert_eq!(side_of_column(c, out.size), s.attrs.side, "{}", s.id);
        let rows: Vec<usize> = (0..out.mask.len()).filter(|&k| out.mask[k] != 0).map(|k| k / out.size).collect();
        let mean_row = rows.iter().sum::<usize>() as f64 / rows.len() as f64;
        assert_eq!(mean_row < out.size as f64 / 2.0, s.attrs.zone == Zone::Apical, "{}", s.id);
        assert!(out.mask.iter().all(|&m| m <= 1));
    }
}

#[test]
fn policy_bounds_are_enforced() {
    AugmentPolicy::default().validate().unwrap();
    for bad in [
        AugmentPolicy { brightness: 0.3, ..AugmentPolicy::default() },
        AugmentPolicy { ssr_rotate: 20.0, ..AugmentPolicy::default() },
        AugmentPolicy { p_hflip: 1.5, ..AugmentPolicy::default() },
        AugmentPolicy { gamma: (0.5, 1.0), ..AugmentPolicy::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}
