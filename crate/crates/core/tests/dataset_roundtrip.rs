use std::io::Cursor;

use gdc::dataset::{
    load_features, read_binary, read_csv, write_binary, write_csv, write_features, DatasetError, FeatureDataset,
    FileFormat, SplitManifest,
};
use proptest::prelude::*;

fn records() -> impl Strategy<Value = (usize, Vec<u32>, Vec<f32>)> {
    (1usize..8, 1usize..40).prop_flat_map(|(dim, n)| {
        (
            Just(dim),
            prop::collection::vec(0u32..1000, n),
            prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n * dim),
        )
    })
}

proptest! {
    #[test]
    fn binary_roundtrip_is_bit_exact((dim, labels, values) in records()) {
        let mut buf = Vec::new();
        write_binary(&mut buf, dim, &labels, &values, None).unwrap();
        let back = read_binary(&mut Cursor::new(&buf)).unwrap();
        prop_assert_eq!(back.dim, dim);
        prop_assert_eq!(&back.labels, &labels);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.values), bits(&values));
        prop_assert!(back.origins.is_none());
    }

    #[test]
    fn origin_bytes_roundtrip((dim, labels, values) in records(), seed in any::<u8>()) {
        let origins: Vec<u8> = (0..labels.len()).map(|i| (i as u8 ^ seed) & 1).collect();
        let mut buf = Vec::new();
        write_binary(&mut buf, dim, &labels, &values, Some(&origins)).unwrap();
        let back = read_binary(&mut Cursor::new(&buf)).unwrap();
        prop_assert_eq!(back.origins, Some(origins));
    }

    #[test]
    fn csv_roundtrip_within_tolerance((dim, labels, values) in records()) {
        let values: Vec<f32> = values.iter().map(|v| v.clamp(-1e6, 1e6)).collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, dim, &labels, &values).unwrap();
        let back = read_csv(&mut Cursor::new(&buf)).unwrap();
        prop_assert_eq!(&back.labels, &labels);
        for (a, b) in back.values.iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn truncation_is_reported((dim, labels, values) in records(), cut in 1usize..64) {
        let mut buf = Vec::new();
        write_binary(&mut buf, dim, &labels, &values, None).unwrap();
        let keep = buf.len().saturating_sub(cut);
        prop_assert!(read_binary(&mut Cursor::new(&buf[..keep])).is_err());
    }
}

#[test]
fn bad_magic_is_rejected() {
    let mut buf = Vec::new();
    write_binary(&mut buf, 2, &[1], &[0.5, 1.5], None).unwrap();
    buf[0] = b'X';
    assert!(matches!(read_binary(&mut Cursor::new(&buf)), Err(DatasetError::BadMagic { .. })));
}

#[test]
fn files_roundtrip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = SplitManifest::new([0, 1], [2], [3]);
    let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
    let values: Vec<f32> = (0..16).map(|i| i as f32 * 0.25 - 1.0).collect();
    let ds = FeatureDataset::new(2, labels, values, manifest).unwrap();
    for (name, format) in [("f.gdcf", FileFormat::Binary), ("f.csv", FileFormat::Csv)] {
        let features = dir.path().join(name);
        let manifest = dir.path().join(format!("{name}.json"));
        write_features(&ds, &features, &manifest, format).unwrap();
        assert_eq!(FileFormat::from_path(&features), format);
        let back = load_features(&features, &manifest, format).unwrap();
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.values(), ds.values());
        assert_eq!(back.manifest(), ds.manifest());
    }
}

#[test]
fn overlapping_manifest_is_rejected() {
    let m = SplitManifest::new([0, 1], [1], [3]);
    assert!(matches!(m.check_disjoint(), Err(DatasetError::Overlap { class_id: 1, .. })));
    let ds = FeatureDataset::new(1, vec![0, 1, 3], vec![0.0, 1.0, 2.0], m);
    assert!(ds.is_err());
}
