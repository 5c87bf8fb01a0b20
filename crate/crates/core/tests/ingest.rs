use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use proptest::prelude::*;

use melreject_core::fixture::{generate, FixtureConfig};
use melreject_core::ingest::*;

fn touch(path: &Path) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, b"img").unwrap();
}

#[test]
fn folder_layout_two_files() {
    let dir = tempfile::tempdir().unwrap();
    touch(&dir.path().join("melanoma/a.jpg"));
    touch(&dir.path().join("nevus/b.jpg"));
    let m = parse_dataset_layout(dir.path(), &LayoutDescriptor::folder_per_class("ph2")).unwrap();
    let labels: Vec<&str> = m.entries.iter().map(|e| e.raw_label.as_str()).collect();
    assert_eq!(labels, ["melanoma", "nevus"]);
    assert_eq!(m.entries[0].entry_id, "melanoma/a.jpg");
    assert_eq!(m.layout, LayoutKind::FolderPerClass);
}

#[test]
fn folder_layout_without_classes_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("loose.jpg"), b"x").unwrap();
    assert!(parse_dataset_layout(dir.path(), &LayoutDescriptor::folder_per_class("x")).is_err());
}

#[test]
fn folder_layout_counts_match_independent_walk() {
    let dir = tempfile::tempdir().unwrap();
    let sizes = [("melanoma", 7), ("nevus", 21), ("bcc", 12)];
    for (class, n) in sizes {
        for i in 0..n {
            // Nest some files one level down.
            let rel = if i % 4 == 0 {
                format!("{class}/sub/img{i}.png")
            } else {
                format!("{class}/img{i}.jpg")
            };
            touch(&dir.path().join(rel));
        }
    }
    let m = parse_dataset_layout(dir.path(), &LayoutDescriptor::folder_per_class("mixed")).unwrap();
    assert_eq!(m.len(), 40);

    fn count_files(p: &Path) -> usize {
        fs::read_dir(p)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                if e.file_type().unwrap().is_dir() {
                    count_files(&e.path())
                } else {
                    1
                }
            })
            .sum()
    }
    let mut by_label: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &m.entries {
        *by_label.entry(e.raw_label.as_str()).or_default() += 1;
    }
    for (class, _) in sizes {
        assert_eq!(by_label[class], count_files(&dir.path().join(class)), "{class}");
    }
}

#[test]
fn csv_layout_keeps_row_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("image,diagnosis\n");
    for (i, label) in ["MEL", "NV", "BCC", "MEL", "NV"].iter().enumerate() {
        touch(&dir.path().join(format!("images/ISIC_{i}.jpg")));
        csv.push_str(&format!("ISIC_{i},{label}\n"));
    }
    fs::write(dir.path().join("labels.csv"), csv).unwrap();
    let mut desc = LayoutDescriptor::csv_labels("isic", "image", "diagnosis");
    desc.path_template = Some("images/{}.jpg".into());
    let m = parse_dataset_layout(dir.path(), &desc).unwrap();
    let ids: Vec<&str> = m.entries.iter().map(|e| e.entry_id.as_str()).collect();
    assert_eq!(ids, ["ISIC_0", "ISIC_1", "ISIC_2", "ISIC_3", "ISIC_4"]);
    assert_eq!(m.entries[2].raw_label, "BCC");
    assert_eq!(m.entries[2].path, "images/ISIC_2.jpg");
}

#[test]
fn csv_layout_one_hot_columns() {
    let dir = tempfile::tempdir().unwrap();
    touch(&dir.path().join("a.jpg"));
    touch(&dir.path().join("b.jpg"));
    fs::write(dir.path().join("gt.csv"), "image,MEL,NV\na.jpg,1.0,0.0\nb.jpg,0.0,1.0\n").unwrap();
    let desc = LayoutDescriptor {
        label_column: None,
        label_columns: Some(vec!["MEL".into(), "NV".into()]),
        labels_file: "gt.csv".into(),
        ..LayoutDescriptor::csv_labels("isic2019", "image", "unused")
    };
    let m = parse_dataset_layout(dir.path(), &desc).unwrap();
    assert_eq!(m.entries[0].raw_label, "MEL");
    assert_eq!(m.entries[1].raw_label, "NV");
}

#[test]
fn csv_layout_missing_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    touch(&dir.path().join("a.jpg"));
    fs::write(dir.path().join("labels.csv"), "path,label\na.jpg,mel\ngone.jpg,nv\n").unwrap();
    let err = parse_dataset_layout(dir.path(), &LayoutDescriptor::csv_labels("s", "path", "label")).unwrap_err();
    assert!(err.to_string().contains("gone.jpg"), "{err}");
}

#[test]
fn descriptor_loads_from_toml_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("d.toml");
    fs::write(
        &toml_path,
        "kind = \"csv-labels\"\nsource_name = \"kaggle\"\npath_column = \"p\"\nlabel_column = \"l\"\nroot = \"data\"\n",
    )
    .unwrap();
    let d = LayoutDescriptor::load(&toml_path).unwrap();
    assert_eq!(d.kind, LayoutKind::CsvLabels);
    assert_eq!(d.root.unwrap(), dir.path().join("data"));
    let json_path = dir.path().join("d.json");
    fs::write(&json_path, r#"{"kind":"folder-per-class","source_name":"mednode"}"#).unwrap();
    assert_eq!(LayoutDescriptor::load(&json_path).unwrap().kind, LayoutKind::FolderPerClass);
}

#[test]
fn bundled_layout_descriptors_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/layouts");
    let mut names = HashSet::new();
    for entry in fs::read_dir(&dir).unwrap() {
        let d = LayoutDescriptor::load(&entry.unwrap().path()).unwrap();
        names.insert(d.source_name.unwrap());
    }
    assert_eq!(names.len(), 10);
}

#[test]
fn generated_file_counts_match_generator() {
    let fx = generate(&FixtureConfig {
        n: 1000,
        positive_fraction: 0.23,
        seed: 9,
        ..FixtureConfig::default()
    })
    .unwrap();
    let text = to_csv(&fx.test);
    let set = parse_predictions(text.as_bytes(), PredictionFormat::Csv, &ParseOptions::default()).unwrap();
    assert_eq!(set.len(), 1000);
    assert_eq!(set.class_counts(), vec![fx.sidecar.test.melanoma, fx.sidecar.test.non_melanoma]);
    assert_eq!(fx.sidecar.test.melanoma, 230);
}

fn arb_set() -> impl Strategy<Value = EvaluationSet> {
    prop::collection::vec((0.0f64..=1.0, prop::option::of(0usize..2)), 0..60).prop_map(|rows| {
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(i, (p, label))| {
                PredictionRecord::new(format!("s{i}"), label, ClassProbabilities::new(vec![p, 1.0 - p]).unwrap())
            })
            .collect();
        EvaluationSet::new("rt", vec!["Melanoma".into(), "NonMelanoma".into()], 0, records, Role::Test).unwrap()
    })
}

proptest! {
    #[test]
    fn csv_and_json_round_trip(set in arb_set()) {
        let opts = ParseOptions { name: "rt".into(), ..ParseOptions::default() };
        let csv = parse_predictions(to_csv(&set).as_bytes(), PredictionFormat::Csv, &opts).unwrap();
        prop_assert_eq!(&csv, &set);
        let json = parse_predictions(to_json(&set).as_bytes(), PredictionFormat::Json, &opts).unwrap();
        prop_assert_eq!(&json, &set);
    }
}

fn arb_manifest(name: String) -> impl Strategy<Value = DatasetManifest> {
    prop::collection::vec(any::<bool>(), 0..30).prop_map(move |labels| DatasetManifest {
        source_name: name.clone(),
        layout: LayoutKind::FolderPerClass,
        entries: labels
            .iter()
            .enumerate()
            .map(|(i, &mel)| ManifestEntry {
                entry_id: format!("img{i}"),
                path: format!("img{i}.jpg"),
                raw_label: if mel { "MEL".into() } else { "NV".into() },
                binary_label: None,
                split: Split::Train,
                source: None,
            })
            .collect(),
    })
}

fn binarized_sources(k: usize) -> impl Strategy<Value = Vec<DatasetManifest>> {
    (0..k)
        .map(|i| arb_manifest(format!("{}", (b'A' + i as u8) as char)))
        .collect::<Vec<_>>()
        .prop_map(|ms| {
            ms.iter()
                .map(|m| binarize_labels(m, &LabelPolicy::default()).unwrap())
                .collect()
        })
}

proptest! {
    #[test]
    fn merge_sizes_add_up(sources in (1usize..=10).prop_flat_map(binarized_sources)) {
        let merged = merge_manifests(&sources).unwrap();
        prop_assert_eq!(merged.len(), sources.iter().map(|m| m.len()).sum::<usize>());
        let ids: HashSet<&str> = merged.entries.iter().map(|e| e.entry_id.as_str()).collect();
        prop_assert_eq!(ids.len(), merged.len());
    }

    #[test]
    fn binarize_is_idempotent(m in arb_manifest("s".into())) {
        let policy = LabelPolicy::default();
        let once = binarize_labels(&m, &policy).unwrap();
        prop_assert_eq!(binarize_labels(&once, &policy).unwrap(), once);
    }

    #[test]
    fn split_is_a_deterministic_partition(
        m in arb_manifest("s".into()),
        ratio in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let m = binarize_labels(&m, &LabelPolicy::default()).unwrap();
        let (mel, non) = m.class_counts(Split::Train).unwrap();
        match make_split(&m, ratio, seed) {
            Err(_) => prop_assert!(mel == 0 || non == 0),
            Ok(out) => {
                prop_assert_eq!(&make_split(&m, ratio, seed).unwrap(), &out);
                prop_assert_eq!(out.len(), m.len());
                for (a, b) in m.entries.iter().zip(&out.entries) {
                    prop_assert_eq!(&a.entry_id, &b.entry_id);
                    prop_assert!(matches!(b.split, Split::Train | Split::Validation));
                }
                let (tm, tn) = out.class_counts(Split::Train).unwrap();
                prop_assert_eq!(tm, (ratio * mel as f64).round() as usize);
                prop_assert_eq!(tn, (ratio * non as f64).round() as usize);
            }
        }
    }

    #[test]
    fn oversample_balances(mel in 1usize..40, non in 1usize..400) {
        let mut entries = Vec::new();
        for i in 0..mel + non {
            entries.push(ManifestEntry {
                entry_id: format!("e{i:04}"),
                path: String::new(),
                raw_label: String::new(),
                binary_label: Some(if i < mel { BinaryLabel::Melanoma } else { BinaryLabel::NonMelanoma }),
                split: Split::Train,
                source: None,
            });
        }
        let m = DatasetManifest { source_name: "s".into(), layout: LayoutKind::CsvLabels, entries };
        let plan = build_oversample_plan(&m).unwrap();
        let (a, b) = plan.totals();
        prop_assert_eq!(a, b);
        prop_assert!(plan.entries.iter().all(|e| e.count >= 1));
    }
}
