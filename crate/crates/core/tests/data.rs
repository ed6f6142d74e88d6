use std::collections::{BTreeMap, BTreeSet};

use amvc_core::data::*;
use amvc_core::tensor::Tensor;
use amvc_core::Error;
use proptest::prelude::*;

fn small(n: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        frames: 4,
        height: 8,
        width: 8,
        n_per_class: n,
        seed,
        ..Default::default()
    }
}

fn files(dir: &std::path::Path, m: &Manifest) -> Vec<Vec<u8>> {
    m.records.iter().map(|r| std::fs::read(dir.join(&r.path)).unwrap()).collect()
}

#[test]
fn ten_per_class_gives_eighty_records() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(10, 1), &DomainSpec::source(), dir.path()).unwrap();
    assert_eq!(m.records.len(), 80);
    assert_eq!(m.header.classes, 8);
    let back = Manifest::read(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(back, m);
    let test: usize = m.split(Split::Test).count();
    assert_eq!(test, 8 * 2);
    for class in 0..8 {
        assert_eq!(m.records.iter().filter(|r| r.label == class).count(), 10);
    }
}

#[test]
fn default_geometry_matches_the_benchmark() {
    let spec = DatasetSpec::default();
    assert_eq!(spec.clip_shape(), [16, 3, 32, 32]);
    let clips = generate_clips(&DatasetSpec { n_per_class: 1, ..spec }, &DomainSpec::target(0.8)).unwrap();
    assert_eq!(clips.len(), 8);
    assert_eq!(clips[0].0.frames.shape(), &[16, 3, 32, 32]);
}

#[test]
fn zero_gap_domains_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = small(3, 9);
    let ms = generate_dataset(&spec, &DomainSpec::source(), a.path()).unwrap();
    let mt = generate_dataset(&spec, &DomainSpec::target(0.0), b.path()).unwrap();
    assert_eq!(files(a.path(), &ms), files(b.path(), &mt));
    assert!(mt.records.iter().all(|r| r.domain == Domain::Target));
}

#[test]
fn regeneration_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = small(2, 4);
    let ma = generate_dataset(&spec, &DomainSpec::target(0.8), a.path()).unwrap();
    let mb = generate_dataset(&spec, &DomainSpec::target(0.8), b.path()).unwrap();
    assert_eq!(files(a.path(), &ma), files(b.path(), &mb));
    assert_eq!(
        std::fs::read(a.path().join("manifest.csv")).unwrap(),
        std::fs::read(b.path().join("manifest.csv")).unwrap()
    );
    let c = tempfile::tempdir().unwrap();
    let mc = generate_dataset(&small(2, 5), &DomainSpec::target(0.8), c.path()).unwrap();
    assert_ne!(files(a.path(), &ma), files(c.path(), &mc));
}

#[test]
fn clip_randomness_ignores_generation_order() {
    let spec = small(2, 3);
    let classes = class_specs(spec.speed());
    let all = generate_clips(&spec, &DomainSpec::target(0.5)).unwrap();
    // clip 11 is the second clip of class 5
    let direct = render_clip(&spec, &DomainSpec::target(0.5), &classes[5], 11);
    assert_eq!(all[11].0.frames, direct);
}

#[test]
fn classes_cover_the_shape_direction_grid() {
    let cs = class_specs(1.0);
    assert_eq!(cs.len(), NUM_CLASSES);
    let pairs: BTreeSet<(bool, (i8, i8))> = cs
        .iter()
        .map(|c| {
            let (r, col) = c.direction.delta();
            (c.shape == Shape::Square, (r as i8, col as i8))
        })
        .collect();
    assert_eq!(pairs.len(), 8);
    assert!(cs.iter().enumerate().all(|(i, c)| c.id == i));
}

#[test]
fn gap_parameter_validation() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        generate_dataset(&small(1, 0), &DomainSpec::target(1.5), dir.path()),
        Err(Error::Config(_))
    ));
    assert!(generate_dataset(&small(0, 0), &DomainSpec::source(), dir.path()).is_err());
    let mut bad = small(1, 0);
    bad.height = 4;
    assert!(bad.validate().is_err());
}

#[test]
fn domain_params_interpolate() {
    let t = DomainSpec::target(0.0).params();
    assert_eq!(t, DomainParams::SOURCE);
    let t = DomainSpec::target(1.0).params();
    assert_eq!(t, DomainParams::TARGET_EXTREME);
    let h = DomainSpec::target(0.5).params();
    assert!((h.brightness - 0.15).abs() < 1e-12);
    assert_eq!(DomainSpec::source().params(), DomainParams::SOURCE);
}

#[test]
fn class_distribution_matches_across_domains() {
    let spec = small(5, 2);
    let count = |d: DomainSpec| {
        let mut c = BTreeMap::new();
        for (clip, split) in generate_clips(&spec, &d).unwrap() {
            *c.entry((clip.label.unwrap(), split)).or_insert(0) += 1;
        }
        c
    };
    assert_eq!(count(DomainSpec::source()), count(DomainSpec::target(0.8)));
}

#[test]
fn imbalance_knob_skews_later_classes() {
    let spec = DatasetSpec {
        imbalance: 0.75,
        ..small(20, 0)
    };
    let counts: Vec<usize> = (0..8).map(|c| spec.clips_for_class(c)).collect();
    assert_eq!(counts[0], 20);
    assert_eq!(counts[7], 5);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(plan(&spec).len(), counts.iter().sum::<usize>());
}

#[test]
fn clip_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let clips = generate_clips(&small(1, 7), &DomainSpec::target(0.8)).unwrap();
    let clip = &clips[3].0.frames;
    let a = dir.path().join("a.clip");
    let b = dir.path().join("b.clip");
    write_clip(&a, clip).unwrap();
    let back = read_clip(&a).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(clip));
    assert_eq!(back.shape(), clip.shape());
    write_clip(&b, &back).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let bytes = std::fs::read(&a).unwrap();
    let payload_start = 12 + 4 * 4;
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    assert_eq!(crc, crc32fast_hash(&bytes[payload_start..bytes.len() - 4]));
}

fn crc32fast_hash(b: &[u8]) -> u32 {
    // bitwise CRC-32 (IEEE), written out as an independent oracle
    let mut crc = !0u32;
    for &byte in b {
        crc ^= byte as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

#[test]
fn clip_file_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let clip = Tensor::<f32>::from_f64(&[2, 3, 2, 2], &[0.5; 24]).unwrap();
    let p = dir.path().join("c.clip");
    write_clip(&p, &clip).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    let q = dir.path().join("bad.clip");
    let load = |b: &[u8]| {
        std::fs::write(&q, b).unwrap();
        read_clip(&q).err().unwrap()
    };

    let mut m = bytes.clone();
    m[2] ^= 1;
    assert!(matches!(load(&m), Error::BadMagic(_)));
    let mut v = bytes.clone();
    v[8] = 7;
    assert!(matches!(load(&v), Error::VersionMismatch { found: 7, .. }));
    let mut c = bytes.clone();
    c[40] ^= 0x10;
    assert!(matches!(load(&c), Error::Checksum { .. }));
    let mut d = bytes.clone();
    d[10] = 1;
    assert!(matches!(load(&d), Error::Format { .. }));
    for len in [0, 4, 9, 20, bytes.len() - 1] {
        assert!(matches!(load(&bytes[..len]), Error::Truncated(_)), "len {len}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(load(&extra), Error::Format { .. }));

    assert!(matches!(
        read_clip_expecting(&p, &[2, 3, 4, 4]),
        Err(Error::ExtentMismatch { .. })
    ));
    assert!(read_clip_expecting(&p, &[2, 3, 2, 2]).is_ok());
}

#[test]
fn manifest_validation() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(1, 0), &DomainSpec::source(), dir.path()).unwrap();
    let text = m.to_text().unwrap();
    assert!(text.lines().next().unwrap().starts_with('{'));
    assert_eq!(text.lines().nth(1).unwrap(), "clips/00000.clip,0,source,test,0".replace(",test,", ",train,"));

    let head = text.lines().next().unwrap();
    let bad = |line: &str| Manifest::parse(&format!("{head}\n{line}\n")).err().unwrap();
    assert!(matches!(bad("x.clip,8,source,train,0"), Error::Manifest(_)));
    assert!(matches!(bad("x.clip,1,elsewhere,train,0"), Error::Manifest(_)));
    assert!(matches!(bad("x.clip,1,source,val,0"), Error::Manifest(_)));
    assert!(matches!(bad("x.clip,1,source,train"), Error::Manifest(_)));
    assert!(matches!(bad("x.clip,1,source,train,0\nx.clip,1,source,test,0"), Error::Manifest(_)));
    assert!(Manifest::parse("").is_err());
    assert!(Manifest::parse("{\"format\":\"other\"}\n").is_err());

    std::fs::remove_file(dir.path().join(&m.records[2].path)).unwrap();
    assert!(matches!(Manifest::read(&dir.path().join("manifest.csv")), Err(Error::Manifest(_))));
}

#[test]
fn dataset_loading_checks_extents() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = generate_dataset(&small(2, 0), &DomainSpec::source(), dir.path()).unwrap();
    let ds = Dataset::load(&dir.path().join("manifest.csv"), Split::Train).unwrap();
    assert_eq!(ds.len(), 16);
    assert_eq!(ds.clips[0].frames.shape(), &[4, 3, 8, 8]);
    m.header.height = 16;
    m.write(&dir.path().join("manifest.csv")).unwrap();
    assert!(matches!(
        Dataset::load(&dir.path().join("manifest.csv"), Split::Train),
        Err(Error::ExtentMismatch { .. })
    ));
}

#[test]
fn batching_arithmetic_and_order() {
    let plan = BatchPlan::new(80, 80, 8, 3, true).unwrap();
    assert_eq!(plan.batches_per_epoch(), 10);
    let again = BatchPlan::new(80, 80, 8, 3, true).unwrap();
    assert_eq!(plan.epoch(0), again.epoch(0));
    assert_ne!(plan.epoch(0), plan.epoch(1));
    assert_ne!(plan.epoch(0), BatchPlan::new(80, 80, 8, 4, true).unwrap().epoch(0));
    assert_eq!(plan.batch(13), plan.epoch(1)[3]);

    let plan = BatchPlan::new(83, 90, 8, 1, true).unwrap();
    let e = plan.epoch(0);
    assert_eq!(e.len(), 10);
    let src: BTreeSet<usize> = e.iter().flat_map(|(s, _)| s.clone()).collect();
    assert_eq!(src.len(), 80);
    assert!(src.iter().all(|&i| i < 83));
    assert!(e.iter().all(|(s, t)| s.len() == 8 && t.len() == 8));

    let ordered = BatchPlan::new(16, 16, 4, 1, false).unwrap();
    assert_eq!(ordered.epoch(0)[1].0, vec![4, 5, 6, 7]);
    assert_eq!(ordered.epoch(0), ordered.epoch(5));

    assert!(BatchPlan::new(0, 8, 4, 0, true).is_err());
    assert!(BatchPlan::new(8, 8, 0, 0, true).is_err());
    assert!(BatchPlan::new(8, 3, 4, 0, true).is_err());
}

#[test]
fn batch_iterator_pairs_labelled_source_with_target() {
    let spec = small(3, 0);
    let header = |d: Domain| ManifestHeader {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        domain: d,
        classes: 8,
        frames: 4,
        channels: 3,
        height: 8,
        width: 8,
        gamma: 0.8,
        seed: 0,
        n_per_class: 3,
        test_fraction: 0.2,
    };
    let to_ds = |d: DomainSpec| {
        let clips = generate_clips(&spec, &d).unwrap().into_iter().map(|(c, _)| c).collect();
        Dataset::from_clips(header(d.domain), clips)
    };
    let (s, t) = (to_ds(DomainSpec::source()), to_ds(DomainSpec::target(0.8)));
    let it = batch_iterator(&s, &t, 5, 11, true).unwrap();
    assert_eq!(it.plan().batches_per_epoch(), 4);
    let batches: Vec<DomainBatch> = it.take(9).map(Result::unwrap).collect();
    for b in &batches {
        assert_eq!(b.source.shape(), &[5, 4, 3, 8, 8]);
        assert_eq!(b.target.shape(), &[5, 4, 3, 8, 8]);
        let expect: Vec<usize> = b.source_indices.iter().map(|&i| s.clips[i].label.unwrap()).collect();
        assert_eq!(b.labels, expect);
    }
    let again: Vec<Vec<usize>> = batch_iterator(&s, &t, 5, 11, true)
        .unwrap()
        .take(9)
        .map(|b| b.unwrap().target_indices)
        .collect();
    assert_eq!(again, batches.iter().map(|b| b.target_indices.clone()).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pixels_stay_in_unit_interval(seed in any::<u64>(), class in 0usize..8, index in 0u64..1000, gamma in 0.0f64..=1.0) {
        let spec = small(1, seed);
        let cs = class_specs(spec.speed());
        let clip = render_clip(&spec, &DomainSpec::target(gamma), &cs[class], index);
        prop_assert!(clip.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn epoch_is_a_permutation_prefix(len in 1usize..200, batch in 1usize..20, seed in any::<u64>(), epoch in 0u64..5) {
        prop_assume!(batch <= len);
        let plan = BatchPlan::new(len, len, batch, seed, true).unwrap();
        let e = plan.epoch(epoch);
        let seen: BTreeSet<usize> = e.iter().flat_map(|(s, _)| s.clone()).collect();
        prop_assert_eq!(seen.len(), (len / batch) * batch);
        prop_assert!(seen.iter().all(|&i| i < len));
    }
}
