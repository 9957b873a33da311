//! Canonical layout representation shared by every other module.
//!
//! Boxes are stored as center/size fractions of the canvas. The diffusion
//! chains work in a signal space obtained by the affine map
//! `v = (2u - 1) * S` applied to each coordinate.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on components per layout.
pub const N_MAX: usize = 10;

/// Default half-width of the signal range.
pub const SIGNAL_SCALE: f64 = 2.0;

/// Smallest width/height a box may take after leaving signal space.
pub const MIN_SIZE: f64 = 1e-3;

/// Number of decimals kept when layouts are serialized.
pub const FRACTION_DECIMALS: i32 = 6;

/// Class vocabulary and shape limits for one dataset.
///
/// Class indices run `0..k()`; index `k()` is the absorbing MASK class and
/// never appears in a clean layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub classes: Vec<String>,
    pub n_max: usize,
    /// Canvas used when emitting generated layouts.
    pub canvas: [u32; 2],
}

impl DatasetSchema {
    pub fn new(name: impl Into<String>, classes: Vec<String>, n_max: usize, canvas: [u32; 2]) -> Result<Self> {
        let schema = Self {
            name: name.into(),
            classes,
            n_max,
            canvas,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("schema needs at least one class".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::Config(format!("class {i} has an empty name")));
            }
            if self.classes[..i].contains(c) {
                return Err(Error::Config(format!("duplicate class name {c:?}")));
            }
        }
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be positive".into()));
        }
        if self.canvas[0] == 0 || self.canvas[1] == 0 {
            return Err(Error::Config("canvas dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Number of real classes.
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    /// Index of the MASK class.
    pub fn mask(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    /// Name of a class index; the empty string for MASK.
    pub fn class_name(&self, index: usize) -> Option<&str> {
        if index == self.mask() {
            Some("")
        } else {
            self.classes.get(index).map(String::as_str)
        }
    }

    pub fn label(&self, index: usize) -> Option<ClassLabel> {
        self.class_name(index).map(|name| ClassLabel {
            index,
            name: name.to_string(),
        })
    }
}

/// A class index together with its human readable name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLabel {
    pub index: usize,
    pub name: String,
}

/// Axis-aligned box in canvas fractions, center/size parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_ltwh(left: f64, top: f64, w: f64, h: f64) -> Self {
        Self::new(left + w / 2.0, top + h / 2.0, w, h)
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.left().max(other.left());
        let ih = self.bottom().min(other.bottom()) - self.top().max(other.top());
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Data-space invariants: centers in `[0, 1]`, sizes in `(0, 1]`.
    pub fn is_clean(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.cx) && unit(self.cy) && self.w > 0.0 && self.w <= 1.0 && self.h > 0.0 && self.h <= 1.0
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Map into diffusion space with the default signal scale.
    pub fn to_signal(&self) -> [f64; 4] {
        self.to_signal_scaled(SIGNAL_SCALE)
    }

    pub fn to_signal_scaled(&self, scale: f64) -> [f64; 4] {
        self.to_array().map(|u| (2.0 * u - 1.0) * scale)
    }

    /// Inverse of [`BBox::to_signal`], clamped back into data-space ranges.
    pub fn from_signal(v: [f64; 4]) -> Self {
        Self::from_signal_scaled(v, SIGNAL_SCALE)
    }

    pub fn from_signal_scaled(v: [f64; 4], scale: f64) -> Self {
        let u = v.map(|x| (x / scale + 1.0) / 2.0);
        let u = if u.iter().all(|x| x.is_finite()) { u } else { [0.5, 0.5, 0.5, 0.5] };
        Self::new(
            u[0].clamp(0.0, 1.0),
            u[1].clamp(0.0, 1.0),
            u[2].clamp(MIN_SIZE, 1.0),
            u[3].clamp(MIN_SIZE, 1.0),
        )
    }

    fn rounded(&self) -> [f64; 4] {
        self.to_array().map(round_fraction)
    }
}

pub fn round_fraction(v: f64) -> f64 {
    let scale = 10f64.powi(FRACTION_DECIMALS);
    (v * scale).round() / scale
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub class: usize,
    pub bbox: BBox,
}

impl Component {
    pub const fn new(class: usize, bbox: BBox) -> Self {
        Self { class, bbox }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub canvas: [u32; 2],
    pub components: Vec<Component>,
}

impl Layout {
    pub fn new(canvas: [u32; 2], components: Vec<Component>) -> Self {
        Self { canvas, components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn boxes(&self) -> impl Iterator<Item = &BBox> + '_ {
        self.components.iter().map(|c| &c.bbox)
    }

    pub fn classes(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.class).collect()
    }

    /// Checks the clean-layout invariants against a schema.
    pub fn validate(&self, schema: &DatasetSchema) -> Result<()> {
        if self.canvas[0] == 0 || self.canvas[1] == 0 {
            return Err(Error::InvalidLayout("canvas dimensions must be positive".into()));
        }
        if self.components.len() > schema.n_max {
            return Err(Error::InvalidLayout(format!(
                "{} components exceeds the limit of {}",
                self.components.len(),
                schema.n_max
            )));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.class >= schema.k() {
                return Err(Error::InvalidLayout(format!("component {i} has class index {} (MASK or unknown)", c.class)));
            }
            if !c.bbox.is_clean() {
                return Err(Error::InvalidLayout(format!("component {i} has an out-of-range box {:?}", c.bbox)));
            }
        }
        Ok(())
    }
}

/// Box in absolute pixels, top-left corner format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Convert absolute-pixel, top-left boxes into canvas fractions.
pub fn normalize(canvas: [u32; 2], components: &[(usize, AbsBox)]) -> Result<Layout> {
    let [cw, ch] = canvas;
    if cw == 0 || ch == 0 {
        return Err(Error::InvalidLayout("canvas dimensions must be positive".into()));
    }
    let (fw, fh) = (cw as f64, ch as f64);
    let mut out = Vec::with_capacity(components.len());
    for (index, &(class, b)) in components.iter().enumerate() {
        let inside = b.x >= 0.0 && b.y >= 0.0 && b.w > 0.0 && b.h > 0.0 && b.x + b.w <= fw && b.y + b.h <= fh;
        if !inside {
            return Err(Error::OutsideCanvas {
                index,
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
                canvas_w: cw,
                canvas_h: ch,
            });
        }
        let bbox = BBox::new((b.x + b.w / 2.0) / fw, (b.y + b.h / 2.0) / fh, b.w / fw, b.h / fh);
        out.push(Component::new(class, bbox));
    }
    Ok(Layout::new(canvas, out))
}

/// Per-slot conditioning: a present value means the attribute is pinned.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SlotCondition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    /// Pinned `(cx, cy)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
    /// Pinned `(w, h)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<[f64; 2]>,
}

impl SlotCondition {
    pub fn flags(&self) -> AttrFlags {
        AttrFlags {
            pos: self.position.is_some(),
            size: self.size.is_some(),
            cls: self.class.is_some(),
        }
    }

    /// Pin every attribute of a component.
    pub fn full(c: &Component) -> Self {
        Self {
            class: Some(c.class),
            position: Some([c.bbox.cx, c.bbox.cy]),
            size: Some([c.bbox.w, c.bbox.h]),
        }
    }
}

/// Which attribute groups of a slot are conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttrFlags {
    pub pos: bool,
    pub size: bool,
    pub cls: bool,
}

impl AttrFlags {
    pub const NONE: AttrFlags = AttrFlags {
        pos: false,
        size: false,
        cls: false,
    };
    pub const ALL: AttrFlags = AttrFlags {
        pos: true,
        size: true,
        cls: true,
    };

    /// Per-coordinate flags in `(cx, cy, w, h)` order.
    pub fn coords(&self) -> [bool; 4] {
        [self.pos, self.pos, self.size, self.size]
    }
}

/// Which attributes of which component slots are pinned, and to what.
///
/// An empty spec (no pins) is unconditioned generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub n_components: usize,
    pub slots: Vec<SlotCondition>,
}

impl ConditionSpec {
    pub fn unconditioned(n_components: usize) -> Self {
        Self {
            n_components,
            slots: vec![SlotCondition::default(); n_components],
        }
    }

    /// Pin the classes of every component of a reference layout.
    pub fn category(layout: &Layout) -> Self {
        Self {
            n_components: layout.len(),
            slots: layout
                .components
                .iter()
                .map(|c| SlotCondition {
                    class: Some(c.class),
                    ..Default::default()
                })
                .collect(),
        }
    }

    /// Pin classes and sizes of every component of a reference layout.
    pub fn category_size(layout: &Layout) -> Self {
        Self {
            n_components: layout.len(),
            slots: layout
                .components
                .iter()
                .map(|c| SlotCondition {
                    class: Some(c.class),
                    size: Some([c.bbox.w, c.bbox.h]),
                    position: None,
                })
                .collect(),
        }
    }

    /// Pin everything.
    pub fn full(layout: &Layout) -> Self {
        Self {
            n_components: layout.len(),
            slots: layout.components.iter().map(SlotCondition::full).collect(),
        }
    }

    pub fn flags(&self, i: usize) -> AttrFlags {
        self.slots.get(i).map(SlotCondition::flags).unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(|s| s.flags() == AttrFlags::NONE)
    }

    pub fn validate(&self, schema: &DatasetSchema) -> Result<()> {
        if self.n_components > schema.n_max {
            return Err(Error::InvalidCondition(format!(
                "n_components {} exceeds the limit of {}",
                self.n_components, schema.n_max
            )));
        }
        if self.slots.len() != self.n_components {
            return Err(Error::InvalidCondition(format!(
                "{} slot conditions for {} components",
                self.slots.len(),
                self.n_components
            )));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let size_ok = |v: f64| v > 0.0 && v <= 1.0;
        for (i, s) in self.slots.iter().enumerate() {
            if let Some(c) = s.class {
                if c >= schema.k() {
                    return Err(Error::InvalidCondition(format!("slot {i}: class index {c} is not a real class")));
                }
            }
            if let Some([cx, cy]) = s.position {
                if !unit(cx) || !unit(cy) {
                    return Err(Error::InvalidCondition(format!("slot {i}: position ({cx}, {cy}) outside [0, 1]")));
                }
            }
            if let Some([w, h]) = s.size {
                if !size_ok(w) || !size_ok(h) {
                    return Err(Error::InvalidCondition(format!("slot {i}: size ({w}, {h}) outside (0, 1]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub class: String,
    pub bbox: [f64; 4],
}

/// One line of the canonical JSON Lines format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub canvas: [u32; 2],
    pub components: Vec<ComponentRecord>,
}

impl LayoutRecord {
    pub fn from_layout(layout: &Layout, schema: &DatasetSchema) -> Result<Self> {
        let components = layout
            .components
            .iter()
            .map(|c| {
                let class = schema
                    .classes
                    .get(c.class)
                    .ok_or_else(|| Error::InvalidLayout(format!("class index {} not in schema", c.class)))?;
                Ok(ComponentRecord {
                    class: class.clone(),
                    bbox: c.bbox.rounded(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            canvas: layout.canvas,
            components,
        })
    }

    pub fn to_layout(&self, schema: &DatasetSchema) -> Result<Layout> {
        let components = self
            .components
            .iter()
            .map(|c| Ok(Component::new(schema.class_index(&c.class)?, BBox::from_array(c.bbox))))
            .collect::<Result<Vec<_>>>()?;
        let layout = Layout::new(self.canvas, components);
        layout.validate(schema)?;
        Ok(layout)
    }
}

pub fn read_jsonl(path: &Path, schema: &DatasetSchema) -> Result<Vec<Layout>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", lineno + 1),
        };
        let record: LayoutRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(record.to_layout(schema).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, layouts: &[Layout], schema: &DatasetSchema) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl_to(&mut w, layouts, schema)?;
    w.flush()?;
    Ok(())
}

pub fn write_jsonl_to<W: Write>(w: &mut W, layouts: &[Layout], schema: &DatasetSchema) -> Result<()> {
    for layout in layouts {
        layout.validate(schema)?;
        let record = LayoutRecord::from_layout(layout, schema)?;
        serde_json::to_writer(&mut *w, &record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> DatasetSchema {
        DatasetSchema::new("t", vec!["text".into(), "title".into()], N_MAX, [100, 100]).unwrap()
    }

    #[test]
    fn normalize_converts_corner_boxes() {
        let l = normalize(
            [100, 200],
            &[(
                0,
                AbsBox {
                    x: 10.0,
                    y: 20.0,
                    w: 30.0,
                    h: 40.0,
                },
            )],
        )
        .unwrap();
        let b = l.components[0].bbox;
        assert!((b.cx - 0.25).abs() < 1e-12);
        assert!((b.cy - 0.2).abs() < 1e-12);
        assert!((b.w - 0.3).abs() < 1e-12);
        assert!((b.h - 0.2).abs() < 1e-12);
    }

    #[test]
    fn normalize_full_canvas_and_empty() {
        let full = AbsBox {
            x: 0.0,
            y: 0.0,
            w: 100.0,
            h: 100.0,
        };
        let l = normalize([100, 100], &[(1, full)]).unwrap();
        assert_eq!(l.components[0].bbox, BBox::new(0.5, 0.5, 1.0, 1.0));
        assert!(normalize([100, 100], &[]).unwrap().is_empty());
    }

    #[test]
    fn normalize_reports_offending_index() {
        let ok = AbsBox {
            x: 0.0,
            y: 0.0,
            w: 10.0,
            h: 10.0,
        };
        let bad = AbsBox {
            x: 95.0,
            y: 0.0,
            w: 10.0,
            h: 10.0,
        };
        match normalize([100, 100], &[(0, ok), (0, bad)]) {
            Err(Error::OutsideCanvas { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn signal_map_examples() {
        assert_eq!(BBox::new(0.5, 0.5, 0.5, 0.5).to_signal(), [0.0; 4]);
        let s = BBox::new(1.0, 0.0, 1.0, 0.5).to_signal_scaled(2.0);
        assert_eq!(s[0], 2.0);
        assert_eq!(s[1], -2.0);
    }

    #[test]
    fn from_signal_clamps() {
        let b = BBox::from_signal([10.0, -10.0, -10.0, 10.0]);
        assert_eq!(b, BBox::new(1.0, 0.0, MIN_SIZE, 1.0));
        let nan = BBox::from_signal([f64::NAN, 0.0, 0.0, 0.0]);
        assert!(nan.is_clean());
    }

    #[test]
    fn jsonl_round_trip_rounds_to_six_decimals() {
        let s = schema();
        let l = Layout::new([100, 100], vec![Component::new(1, BBox::new(0.1234564, 0.5, 0.25, 0.3))]);
        let mut buf = Vec::new();
        write_jsonl_to(&mut buf, &[l], &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.trim(),
            r#"{"canvas":[100,100],"components":[{"class":"title","bbox":[0.123456,0.5,0.25,0.3]}]}"#
        );
    }

    #[test]
    fn condition_validation() {
        let s = schema();
        let mut c = ConditionSpec::unconditioned(2);
        assert!(c.is_empty());
        c.validate(&s).unwrap();
        c.slots[0].class = Some(2);
        assert!(c.validate(&s).is_err());
        c.slots[0].class = Some(1);
        c.slots[1].size = Some([0.0, 0.5]);
        assert!(c.validate(&s).is_err());
        assert!(ConditionSpec::unconditioned(11).validate(&s).is_err());
    }

    #[test]
    fn schema_rejects_duplicates() {
        assert!(DatasetSchema::new("x", vec!["a".into(), "a".into()], 10, [1, 1]).is_err());
        assert_eq!(schema().mask(), 2);
        assert_eq!(schema().class_name(2), Some(""));
    }

    proptest! {
        #[test]
        fn signal_round_trip(cx in 0.0..=1.0f64, cy in 0.0..=1.0f64, w in 1e-3..=1.0f64, h in 1e-3..=1.0f64) {
            let b = BBox::new(cx, cy, w, h);
            let r = BBox::from_signal(b.to_signal());
            for (a, e) in r.to_array().iter().zip(b.to_array()) {
                prop_assert!((a - e).abs() <= 1e-9);
            }
        }

        #[test]
        fn normalize_preserves_order_and_length(boxes in proptest::collection::vec((0usize..2, 0.0..50.0f64, 0.0..50.0f64, 1.0..50.0f64, 1.0..50.0f64), 0..10)) {
            let comps: Vec<_> = boxes.iter().map(|&(c, x, y, w, h)| (c, AbsBox { x, y, w, h })).collect();
            let l = normalize([100, 100], &comps).unwrap();
            prop_assert_eq!(l.len(), comps.len());
            for (c, (cls, b)) in l.components.iter().zip(&comps) {
                prop_assert_eq!(c.class, *cls);
                prop_assert!((c.bbox.left() * 100.0 - b.x).abs() < 1e-9);
            }
        }
    }
}
