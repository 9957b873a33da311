//! Source-format readers.
//!
//! - PubLayNet: COCO JSON (`images`, `annotations` with `bbox = [x, y, w, h]`,
//!   `categories`). The source is a single file or a directory holding
//!   `train.json` / `val.json` / `test.json`; files named after a split
//!   are taken as that official split.
//! - RICO: a directory tree of semantic view-hierarchy JSON files. Every
//!   node with a `componentLabel` and `bounds = [x1, y1, x2, y2]` becomes a
//!   component; the root bounds give the canvas. The layout id is the file
//!   stem.
//! - Magazine: a directory tree of XML files with `<size><width/><height/></size>`
//!   and `<layout><element label=".." polygon_x=".." polygon_y=".."/></layout>`;
//!   each element's box is the polygon's bounding box.
//! - Canonical: a JSON Lines file or a directory of `{train,val,test}.jsonl`
//!   plus an optional `schema.json`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{modal_canvas, RawLayout, Split};
use crate::error::{Error, Result};
use crate::layout::{read_jsonl, AbsBox, DatasetSchema, LayoutRecord};

pub type AdapterOutput = (Vec<RawLayout>, DatasetSchema, Vec<String>);

pub const RICO_TOP_CLASSES: usize = 13;
pub const MAGAZINE_CLASSES: [&str; 6] = ["text", "image", "headline", "text-over-image", "headline-over-image", "background"];

fn parse_err(path: &Path, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// All files below `dir` with the given extension, sorted.
pub fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().and_then(|e| e.to_str()) == Some(ext) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn split_from_stem(path: &Path) -> Option<Split> {
    match path.file_stem()?.to_str()? {
        "train" => Some(Split::Train),
        "val" | "valid" | "validation" => Some(Split::Val),
        "test" => Some(Split::Test),
        _ => None,
    }
}

fn canvas_default(raws: &[RawLayout], fallback: [u32; 2]) -> [u32; 2] {
    modal_canvas(raws.iter().map(|r| &r.canvas)).unwrap_or(fallback)
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Deserialize)]
struct Coco {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

pub fn publaynet(source: &Path, n_max: usize) -> Result<AdapterOutput> {
    let files: Vec<(PathBuf, Option<Split>)> = if source.is_dir() {
        files_with_ext(source, "json")?
            .into_iter()
            .filter_map(|p| split_from_stem(&p).map(|s| (p, Some(s))))
            .collect()
    } else {
        vec![(source.to_path_buf(), None)]
    };
    if files.is_empty() {
        return Err(parse_err(source, "no train/val/test COCO files found"));
    }
    let mut notes = Vec::new();
    let mut classes: Option<Vec<(u64, String)>> = None;
    let mut raws = Vec::new();
    for (path, split) in files {
        let text = std::fs::read_to_string(&path)?;
        let coco: Coco = serde_json::from_str(&text).map_err(|e| parse_err(&path, e))?;
        let mut cats: Vec<(u64, String)> = coco.categories.iter().map(|c| (c.id, c.name.clone())).collect();
        cats.sort();
        match &classes {
            None => classes = Some(cats.clone()),
            Some(prev) if *prev != cats => {
                return Err(Error::SchemaMismatch(format!("{} lists different categories", path.display())))
            }
            _ => {}
        }
        let names: HashMap<u64, &str> = cats.iter().map(|(i, n)| (*i, n.as_str())).collect();
        let mut by_image: BTreeMap<u64, Vec<(String, AbsBox)>> = BTreeMap::new();
        for a in &coco.annotations {
            let name = names
                .get(&a.category_id)
                .ok_or_else(|| parse_err(&path, format!("unknown category id {}", a.category_id)))?;
            let [x, y, w, h] = a.bbox;
            by_image.entry(a.image_id).or_default().push((name.to_string(), AbsBox { x, y, w, h }));
        }
        for img in &coco.images {
            raws.push(RawLayout {
                id: img.file_name.clone(),
                canvas: [img.width, img.height],
                components: by_image.remove(&img.id).unwrap_or_default(),
                split,
            });
        }
        if let Some(s) = split {
            notes.push(format!("{} used as the official {} split", path.display(), s.name()));
        }
    }
    let classes: Vec<String> = classes.unwrap_or_default().into_iter().map(|(_, n)| n).collect();
    let schema = DatasetSchema::new("publaynet", classes, n_max, canvas_default(&raws, [612, 792]))?;
    Ok((raws, schema, notes))
}

fn rico_nodes(node: &serde_json::Value, out: &mut Vec<(String, AbsBox)>) {
    if let (Some(label), Some(bounds)) = (node.get("componentLabel").and_then(|v| v.as_str()), node.get("bounds")) {
        if let Some(b) = bounds.as_array().filter(|b| b.len() == 4) {
            let v: Vec<f64> = b.iter().filter_map(|x| x.as_f64()).collect();
            if v.len() == 4 {
                out.push((
                    label.to_string(),
                    AbsBox {
                        x: v[0],
                        y: v[1],
                        w: v[2] - v[0],
                        h: v[3] - v[1],
                    },
                ));
            }
        }
    }
    if let Some(children) = node.get("children").and_then(|c| c.as_array()) {
        for c in children {
            rico_nodes(c, out);
        }
    }
}

pub fn rico(source: &Path, n_max: usize) -> Result<AdapterOutput> {
    let files = files_with_ext(source, "json")?;
    let mut raws = Vec::with_capacity(files.len());
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for path in files {
        let text = std::fs::read_to_string(&path)?;
        let root: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_err(&path, e))?;
        let canvas = root
            .get("bounds")
            .and_then(|b| b.as_array())
            .filter(|b| b.len() == 4)
            .and_then(|b| {
                let w = b[2].as_f64()? - b[0].as_f64()?;
                let h = b[3].as_f64()? - b[1].as_f64()?;
                (w > 0.0 && h > 0.0).then_some([w.round() as u32, h.round() as u32])
            })
            .unwrap_or([1440, 2560]);
        let mut comps = Vec::new();
        rico_nodes(&root, &mut comps);
        for (c, _) in &comps {
            *freq.entry(c.clone()).or_default() += 1;
        }
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        raws.push(RawLayout {
            id,
            canvas,
            components: comps,
            split: None,
        });
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top: Vec<String> = ranked.iter().take(RICO_TOP_CLASSES).map(|(c, _)| c.clone()).collect();
    let note = format!(
        "top {} classes by frequency: {}",
        RICO_TOP_CLASSES,
        ranked
            .iter()
            .take(RICO_TOP_CLASSES)
            .map(|(c, n)| format!("{c} ({n})"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    log::info!("{note}");
    let schema = DatasetSchema::new("rico", top, n_max, canvas_default(&raws, [1440, 2560]))?;
    Ok((raws, schema, vec![note]))
}

fn parse_numbers(s: &str) -> Vec<f64> {
    s.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .filter_map(|t| t.parse().ok())
        .collect()
}

pub fn magazine_layout(path: &Path) -> Result<RawLayout> {
    let text = std::fs::read_to_string(path)?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| parse_err(path, e))?;
    let root = doc.root_element();
    let dim = |name: &str| -> Option<u32> {
        let size = root.descendants().find(|n| n.has_tag_name("size"))?;
        let node = size.children().find(|n| n.has_tag_name(name))?;
        node.text()?.trim().parse::<f64>().ok().map(|v| v.round() as u32)
    };
    let canvas = [
        dim("width").ok_or_else(|| parse_err(path, "missing size/width"))?,
        dim("height").ok_or_else(|| parse_err(path, "missing size/height"))?,
    ];
    let mut components = Vec::new();
    for el in root.descendants().filter(|n| n.has_tag_name("element")) {
        let label = el.attribute("label").ok_or_else(|| parse_err(path, "element without label"))?;
        let xs = parse_numbers(el.attribute("polygon_x").unwrap_or_default());
        let ys = parse_numbers(el.attribute("polygon_y").unwrap_or_default());
        if xs.is_empty() || ys.is_empty() {
            return Err(parse_err(path, format!("element {label:?} has no polygon")));
        }
        let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (y0, y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        components.push((
            label.to_string(),
            AbsBox {
                x: x0,
                y: y0,
                w: x1 - x0,
                h: y1 - y0,
            },
        ));
    }
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    Ok(RawLayout {
        id,
        canvas,
        components,
        split: None,
    })
}

pub fn magazine(source: &Path, n_max: usize) -> Result<AdapterOutput> {
    let raws = files_with_ext(source, "xml")?
        .iter()
        .map(|p| magazine_layout(p))
        .collect::<Result<Vec<_>>>()?;
    let classes = MAGAZINE_CLASSES.iter().map(|s| s.to_string()).collect();
    let schema = DatasetSchema::new("magazine", classes, n_max, canvas_default(&raws, [225, 300]))?;
    Ok((raws, schema, Vec::new()))
}

pub fn canonical(source: &Path, schema: Option<&DatasetSchema>) -> Result<AdapterOutput> {
    let (dir, files): (PathBuf, Vec<(PathBuf, Option<Split>)>) = if source.is_dir() {
        let files = files_with_ext(source, "jsonl")?
            .into_iter()
            .filter_map(|p| split_from_stem(&p).map(|s| (p, Some(s))))
            .collect();
        (source.to_path_buf(), files)
    } else {
        (source.parent().unwrap_or(Path::new(".")).to_path_buf(), vec![(source.to_path_buf(), None)])
    };
    let schema = match schema {
        Some(s) => s.clone(),
        None => super::read_schema(&dir.join("schema.json"))?,
    };
    let mut raws = Vec::new();
    for (path, split) in files {
        for layout in read_jsonl(&path, &schema)? {
            let record = LayoutRecord::from_layout(&layout, &schema)?;
            let id = serde_json::to_string(&record)?;
            let (w, h) = (layout.canvas[0] as f64, layout.canvas[1] as f64);
            let components = layout
                .components
                .iter()
                .map(|c| {
                    let b = &c.bbox;
                    (
                        schema.classes[c.class].clone(),
                        AbsBox {
                            x: b.left() * w,
                            y: b.top() * h,
                            w: b.w * w,
                            h: b.h * h,
                        },
                    )
                })
                .collect();
            raws.push(RawLayout {
                id,
                canvas: layout.canvas,
                components,
                split,
            });
        }
    }
    Ok((raws, schema, Vec::new()))
}

/// Split manifest: `{"train": [ids], "val": [ids], "test": [ids]}`.
pub fn read_split_manifest(path: &Path) -> Result<HashMap<String, Split>> {
    let text = std::fs::read_to_string(path)?;
    let m: BTreeMap<Split, Vec<String>> = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
    let mut out = HashMap::new();
    for (split, ids) in m {
        for id in ids {
            if out.insert(id.clone(), split).is_some_and(|prev| prev != split) {
                return Err(parse_err(path, format!("id {id:?} listed in two splits")));
            }
        }
    }
    Ok(out)
}
