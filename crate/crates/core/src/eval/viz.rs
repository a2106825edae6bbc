//! Grayscale dumps of condition maps and Intra weights, with text sidecars
//! holding the raw range so a flat map is not mistaken for a contrasty one.
//!
//! For query `q`, class `c` and support `i`:
//! `q{q}_c{c}_s{i}_condition.pgm` / `.txt`, `q{q}_c{c}_s{i}_weights.pgm` /
//! `.txt` (only when Intra weights exist), and `q{q}_c{c}_contributions.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use icpe_tensor::Tensor;

use crate::data::episode::Episode;
use crate::data::io::write_pgm;
use crate::detector::Model;
use crate::error::{IcpeError, Result};

pub const HEATMAP_HEADER: &str = "icpe-heatmap v1";
pub const CONTRIBUTIONS_HEADER: &str = "icpe-contributions v1";

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapMeta {
    pub min: f64,
    pub max: f64,
    pub constant: bool,
    pub width: usize,
    pub height: usize,
}

impl HeatmapMeta {
    pub fn to_text(&self) -> String {
        format!(
            "{HEATMAP_HEADER}\nmin {}\nmax {}\nconstant {}\nwidth {}\nheight {}\n",
            self.min, self.max, self.constant, self.width, self.height
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: &str| IcpeError::invalid(format!("heatmap sidecar: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(HEATMAP_HEADER) {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key}`")))
        };
        let num = |s: String| s.parse::<f64>().map_err(|_| bad("bad number"));
        let int = |s: String| s.parse::<usize>().map_err(|_| bad("bad integer"));
        Ok(HeatmapMeta {
            min: num(field("min")?)?,
            max: num(field("max")?)?,
            constant: field("constant")?.parse().map_err(|_| bad("bad bool"))?,
            width: int(field("width")?)?,
            height: int(field("height")?)?,
        })
    }
}

/// Min-max scales a `[H, W]` map to bytes. A constant map becomes mid-gray.
pub fn to_gray(map: &Tensor) -> (Vec<u8>, HeatmapMeta) {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let d = map.data();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let constant = max - min <= 1e-12 * max.abs().max(1.0);
    let pixels = d
        .iter()
        .map(|&v| {
            if constant {
                128
            } else {
                ((v - min) / (max - min) * 255.0).round() as u8
            }
        })
        .collect();
    (
        pixels,
        HeatmapMeta {
            min,
            max,
            constant,
            width: w,
            height: h,
        },
    )
}

fn write_heatmap(dir: &Path, stem: &str, map: &Tensor, written: &mut Vec<PathBuf>) -> Result<()> {
    let (pixels, meta) = to_gray(map);
    let pgm = dir.join(format!("{stem}.pgm"));
    write_pgm(&pgm, meta.width, meta.height, &pixels)?;
    let txt = dir.join(format!("{stem}.txt"));
    fs::write(&txt, meta.to_text())?;
    written.push(pgm);
    written.push(txt);
    Ok(())
}

pub fn contributions_text(values: &[f64]) -> String {
    let mut s = format!("{CONTRIBUTIONS_HEADER}\n");
    for (i, v) in values.iter().enumerate() {
        writeln!(s, "support {i} {v}").unwrap();
    }
    s
}

pub fn parse_contributions(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    if lines.next() != Some(CONTRIBUTIONS_HEADER) {
        return Err(IcpeError::invalid("contributions: missing header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next().map(str::parse::<usize>), parts.next()) {
                (Some("support"), Some(Ok(j)), Some(v)) if j == i => {
                    v.parse().map_err(|_| IcpeError::invalid("contributions: bad value"))
                }
                _ => Err(IcpeError::invalid(format!("contributions: bad line `{line}`"))),
            }
        })
        .collect()
}

/// Runs every query of `episode` against its supports and writes the maps
/// into `out_dir`. Returns the written paths.
pub fn dump_visualizations(model: &Model, episode: &Episode, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let model = model.frozen()?;
    let support_feats = model.support_features(&episode.supports)?;
    let mut written = Vec::new();
    for (qi, q) in episode.queries.iter().enumerate() {
        let feat = model.query_features(&q.image)?;
        let set = model.prototypes(&feat, &support_feats)?;
        for (c, coupled) in &set.coupled {
            for (i, cf) in coupled.iter().enumerate() {
                write_heatmap(out_dir, &format!("q{qi}_c{c}_s{i}_condition"), &cf.condition, &mut written)?;
                if let Some(w) = &set.images[c][i].weights {
                    write_heatmap(out_dir, &format!("q{qi}_c{c}_s{i}_weights"), w, &mut written)?;
                }
            }
            let path = out_dir.join(format!("q{qi}_c{c}_contributions.txt"));
            fs::write(&path, contributions_text(&set.classes[c].contributions))?;
            written.push(path);
        }
    }
    Ok(written)
}
