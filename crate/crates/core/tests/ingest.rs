use std::fs;

use laydiff_core::ingest::{self, dataset_stats, synth, Adapter, IngestOptions, Profile, Split};
use laydiff_core::metrics::overlap;
use serde_json::json;

#[test]
fn canonical_reingest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (schema, layouts) = synth(Profile::MobileList, 120, 2).unwrap();
    let first = dir.path().join("a");
    fs::create_dir_all(&first).unwrap();
    fs::write(first.join("schema.json"), serde_json::to_string(&schema).unwrap()).unwrap();
    laydiff_core::layout::write_jsonl(&first.join("all.jsonl"), &layouts, &schema).unwrap();
    let out_a = ingest::ingest(&first.join("all.jsonl"), Adapter::Canonical, &IngestOptions::default()).unwrap();
    let a = dir.path().join("b");
    ingest::write_dataset(&a, &out_a).unwrap();
    let out_b = ingest::ingest(&a, Adapter::Canonical, &IngestOptions::default()).unwrap();
    let b = dir.path().join("c");
    ingest::write_dataset(&b, &out_b).unwrap();
    assert_eq!(out_a.report.kept_layouts, 120);
    for split in Split::ALL {
        let name = format!("{}.jsonl", split.name());
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
    assert_eq!(out_a.splits, out_b.splits);
}

#[test]
fn publaynet_coco_files_keep_official_splits() {
    let dir = tempfile::tempdir().unwrap();
    let categories = json!([{"id": 1, "name": "text"}, {"id": 2, "name": "title"}, {"id": 3, "name": "figure"}]);
    let train = json!({
        "images": [
            {"id": 1, "file_name": "p1.png", "width": 600, "height": 800},
            {"id": 2, "file_name": "p2.png", "width": 600, "height": 800},
            {"id": 3, "file_name": "p3.png", "width": 600, "height": 800}
        ],
        "annotations": [
            {"image_id": 1, "category_id": 1, "bbox": [60.0, 80.0, 300.0, 200.0]},
            {"image_id": 1, "category_id": 2, "bbox": [500.0, 700.0, 200.0, 200.0]},
            {"image_id": 1, "category_id": 3, "bbox": [10.0, 10.0, 0.0, 30.0]},
            {"image_id": 2, "category_id": 1, "bbox": [0.0, 0.0, 600.0, 800.0]}
        ],
        "categories": categories
    });
    let val = json!({
        "images": [{"id": 9, "file_name": "v1.png", "width": 600, "height": 800}],
        "annotations": [{"image_id": 9, "category_id": 3, "bbox": [150.0, 200.0, 300.0, 400.0]}],
        "categories": categories
    });
    fs::write(dir.path().join("train.json"), train.to_string()).unwrap();
    fs::write(dir.path().join("val.json"), val.to_string()).unwrap();
    let out = ingest::ingest(dir.path(), Adapter::Publaynet, &IngestOptions::default()).unwrap();
    assert_eq!(out.schema.classes, vec!["text", "title", "figure"]);
    assert_eq!(out.report.input_layouts, 4);
    assert_eq!(out.report.kept_layouts, 3);
    assert_eq!(out.report.dropped_layouts.get("empty"), Some(&1));
    assert_eq!(out.report.dropped_components.get("degenerate_box"), Some(&1));
    let train = &out.splits[&Split::Train];
    assert_eq!(train.len(), 2);
    let p1 = train.iter().find(|l| l.len() == 2).unwrap();
    let text = &p1.components[0].bbox;
    assert!((text.cx - 0.35).abs() < 1e-6 && (text.cy - 0.225).abs() < 1e-6);
    // The title box is clipped to the canvas.
    let title = &p1.components[1].bbox;
    assert!((title.w - 100.0 / 600.0).abs() < 1e-6 && (title.h - 0.125).abs() < 1e-6);
    let v = &out.splits[&Split::Val][0].components[0].bbox;
    assert!((v.cx - 0.5).abs() < 1e-6 && (v.h - 0.5).abs() < 1e-6);
}

#[test]
fn rico_hierarchy_is_flattened_to_top_classes() {
    let dir = tempfile::tempdir().unwrap();
    let screen = |labels: &[&str]| {
        let children: Vec<_> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| json!({"componentLabel": l, "bounds": [0, i * 200, 1440, i * 200 + 150], "children": []}))
            .collect();
        json!({"bounds": [0, 0, 1440, 2560], "children": [{"class": "Layout", "children": children}]})
    };
    fs::write(dir.path().join("1.json"), screen(&["Text", "Image", "Text"]).to_string()).unwrap();
    fs::write(dir.path().join("2.json"), screen(&["Toolbar", "Text"]).to_string()).unwrap();
    let out = ingest::ingest(dir.path(), Adapter::Rico, &IngestOptions::default()).unwrap();
    assert_eq!(out.schema.classes, vec!["Text", "Image", "Toolbar"]);
    assert_eq!(out.schema.canvas, [1440, 2560]);
    assert_eq!(out.report.kept_layouts, 2);
    let all: Vec<_> = out.splits.values().flatten().collect();
    assert!(all.iter().any(|l| l.len() == 3));
}

#[test]
fn magazine_polygons_become_bounding_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let xml = r#"<annotation><filename>m1</filename><size><width>225</width><height>300</height></size>
        <layout><element label="text" polygon_x="10 100 100 10" polygon_y="20 20 80 80"/>
        <element label="image" polygon_x="0,225,225,0" polygon_y="150 150 300 300"/></layout></annotation>"#;
    fs::write(dir.path().join("m1.xml"), xml).unwrap();
    let bad = r#"<annotation><size><width>225</width><height>300</height></size>
        <layout><element label="sticker" polygon_x="1 5" polygon_y="1 5"/></layout></annotation>"#;
    fs::write(dir.path().join("m2.xml"), bad).unwrap();
    let out = ingest::ingest(dir.path(), Adapter::Magazine, &IngestOptions::default()).unwrap();
    assert_eq!(out.report.kept_layouts, 1);
    assert_eq!(out.report.dropped_layouts.get("class_not_in_schema"), Some(&1));
    let l = out.splits.values().flatten().next().unwrap();
    let t = &l.components[0].bbox;
    assert!((t.left() - 10.0 / 225.0).abs() < 1e-6 && (t.h - 0.2).abs() < 1e-6);
    assert!((l.components[1].bbox.w - 1.0).abs() < 1e-9);
}

#[test]
fn oversized_layouts_are_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let page = |n: usize| {
        let elems: String = (0..n)
            .map(|i| format!(r#"<element label="text" polygon_x="10 50" polygon_y="{} {}"/>"#, i * 50, i * 50 + 40))
            .collect();
        format!("<annotation><size><width>225</width><height>300</height></size><layout>{elems}</layout></annotation>")
    };
    fs::write(dir.path().join("small.xml"), page(4)).unwrap();
    fs::write(dir.path().join("big.xml"), page(5)).unwrap();
    let opts = IngestOptions {
        n_max: 4,
        ..Default::default()
    };
    let out = ingest::ingest(dir.path(), Adapter::Magazine, &opts).unwrap();
    assert_eq!(out.report.kept_layouts, 1);
    assert_eq!(out.report.dropped_layouts.get("too_many_components"), Some(&1));
}

#[test]
fn synthetic_profiles_have_expected_statistics() {
    let (schema, layouts) = synth(Profile::TwoColumnDoc, 300, 1).unwrap();
    let stats = dataset_stats(&layouts, &schema).unwrap();
    assert_eq!(stats.n_layouts, 300);
    assert_eq!(stats.class_histogram.values().sum::<u64>() as usize, stats.n_components);
    assert_eq!(stats.count_histogram.iter().sum::<u64>(), 300);
    assert!(layouts.iter().all(|l| overlap(l) == 0.0));
    for profile in [Profile::Grid, Profile::MobileList] {
        let (schema, layouts) = synth(profile, 50, 3).unwrap();
        assert!(layouts.iter().all(|l| l.validate(&schema).is_ok() && !l.is_empty()));
    }
}
