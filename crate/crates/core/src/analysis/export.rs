//! Marteloscope and inventory exports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::inventory::{ForestInventory, TreeInstance};
use super::stem::{stem_volume, Frustum, StemCircle, TraitFlags};
use crate::error::{Error, Result};

/// SVG circle radius per metre of DBH.
pub const SVG_DBH_SCALE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarteloscopeRow {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub dbh: Option<f64>,
    pub height: Option<f64>,
    pub coverage_bins: usize,
    /// Semicolon separated flag labels.
    pub flags: String,
}

impl MarteloscopeRow {
    pub fn from_tree(t: &TreeInstance) -> Self {
        Self {
            id: t.id,
            x: t.base[0],
            y: t.base[1],
            dbh: t.traits.dbh,
            height: t.traits.height,
            coverage_bins: t.coverage.len(),
            flags: t.traits.flags.labels().join(";"),
        }
    }
}

pub fn marteloscope_rows(inv: &ForestInventory) -> Vec<MarteloscopeRow> {
    inv.trees.values().map(MarteloscopeRow::from_tree).collect()
}

pub fn marteloscope_csv(rows: &[MarteloscopeRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    if rows.is_empty() {
        w.write_record(["id", "x", "y", "dbh", "height", "coverage_bins", "flags"])
            .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn parse_marteloscope_csv(text: &str) -> std::result::Result<Vec<MarteloscopeRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect()
}

pub fn marteloscope_geojson(rows: &[MarteloscopeRow]) -> serde_json::Value {
    let features: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            json!({
                "type": "Feature",
                "id": r.id,
                "geometry": {"type": "Point", "coordinates": [r.x, r.y]},
                "properties": {
                    "dbh": r.dbh,
                    "height": r.height,
                    "coverage_bins": r.coverage_bins,
                    "flags": r.flags,
                },
            })
        })
        .collect();
    json!({
        "type": "FeatureCollection",
        "crs": {"type": "name", "properties": {"name": "local map frame (m)"}},
        "features": features,
    })
}

/// Top-down plot in map metres, y up. Trees without DBH are drawn hollow.
pub fn marteloscope_svg(rows: &[MarteloscopeRow]) -> String {
    let (mut x0, mut y0, mut x1, mut y1) = (0.0f64, 0.0f64, 1.0f64, 1.0f64);
    if let Some(r) = rows.first() {
        (x0, y0, x1, y1) = (r.x, r.y, r.x, r.y);
    }
    for r in rows {
        x0 = x0.min(r.x);
        y0 = y0.min(r.y);
        x1 = x1.max(r.x);
        y1 = y1.max(r.y);
    }
    let m = 5.0;
    let (w, h) = (x1 - x0 + 2.0 * m, y1 - y0 + 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.3} {:.3} {w:.3} {h:.3}" width="{:.0}" height="{:.0}">"#,
        x0 - m,
        -(y1 + m),
        w * 8.0,
        h * 8.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{:.3}" y="{:.3}" width="{w:.3}" height="{h:.3}" fill="white"/>"#,
        x0 - m,
        -(y1 + m)
    );
    for r in rows {
        let (rad, fill) = match r.dbh {
            Some(d) => (d * SVG_DBH_SCALE, "forestgreen"),
            None => (0.3, "none"),
        };
        let _ = writeln!(
            s,
            r#"<circle id="tree-{}" cx="{:.3}" cy="{:.3}" r="{rad:.3}" fill="{fill}" stroke="black" stroke-width="0.05"><title>{} dbh={} h={}</title></circle>"#,
            r.id,
            r.x,
            -r.y,
            r.id,
            r.dbh.map_or("-".into(), |d| format!("{:.3}", d)),
            r.height.map_or("-".into(), |d| format!("{:.2}", d)),
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeDump {
    pub id: u32,
    pub base: [f64; 3],
    pub dbh: Option<f64>,
    pub height: Option<f64>,
    pub flags: TraitFlags,
    pub coverage: Vec<u8>,
    pub anchors: Vec<usize>,
    pub points: usize,
    pub volume: f64,
    pub circles: Vec<StemCircle>,
    pub frustums: Vec<Frustum>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InventoryDump {
    pub revision: u64,
    pub payloads: usize,
    pub trees: Vec<TreeDump>,
}

pub fn inventory_dump(inv: &ForestInventory) -> InventoryDump {
    InventoryDump {
        revision: inv.revision,
        payloads: inv.payloads.len(),
        trees: inv
            .trees
            .values()
            .map(|t| TreeDump {
                id: t.id,
                base: t.base,
                dbh: t.traits.dbh,
                height: t.traits.height,
                flags: t.traits.flags,
                coverage: t.coverage.iter().copied().collect(),
                anchors: t.anchors().into_iter().collect(),
                points: t.point_count(),
                volume: stem_volume(&t.frustums),
                circles: t.circles.clone(),
                frustums: t.frustums.clone(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportPaths {
    pub csv: PathBuf,
    pub geojson: PathBuf,
    pub svg: PathBuf,
    pub inventory: PathBuf,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the marteloscope CSV, GeoJSON and SVG plus the inventory dump into `dir`.
pub fn export_marteloscope(inv: &ForestInventory, dir: &Path) -> Result<ExportPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = marteloscope_rows(inv);
    let paths = ExportPaths {
        csv: dir.join("marteloscope.csv"),
        geojson: dir.join("marteloscope.geojson"),
        svg: dir.join("marteloscope.svg"),
        inventory: dir.join("inventory.json"),
    };
    write(&paths.csv, &marteloscope_csv(&rows))?;
    let geo = serde_json::to_string_pretty(&marteloscope_geojson(&rows))
        .map_err(|e| Error::json(&paths.geojson, e))?;
    write(&paths.geojson, &geo)?;
    write(&paths.svg, &marteloscope_svg(&rows))?;
    let dump = serde_json::to_string_pretty(&inventory_dump(inv))
        .map_err(|e| Error::json(&paths.inventory, e))?;
    write(&paths.inventory, &dump)?;
    Ok(paths)
}
