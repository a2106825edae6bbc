//! Binary PPM/PGM images and the dataset manifest.
//!
//! Manifest layout (one record per line):
//!
//! ```text
//! icpe-dataset v1
//! image images/00000.ppm
//! 12,30,40,52,3
//! support supports/00000.ppm supports/00000.pgm 5
//! ```
//!
//! Box lines `x1,y1,x2,y2,class` belong to the preceding `image` line.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::boxes::{BBox, BoxAnnotation};
use crate::data::raster::RgbImage;
use crate::data::world::{AnnotatedImage, Dataset, SupportRendition};
use crate::error::{IcpeError, Result};

pub const MANIFEST_HEADER: &str = "icpe-dataset v1";
pub const MANIFEST_NAME: &str = "manifest.txt";

fn format_err(path: &Path, msg: impl Into<String>) -> IcpeError {
    IcpeError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary PNM header with magic `magic`; returns
/// `(width, height, payload)`. Comments are not supported.
fn decode_pnm<'a>(bytes: &'a [u8], magic: &str, channels: usize) -> std::result::Result<(usize, usize, &'a [u8]), String> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?);
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    if fields[0] != magic {
        return Err(format!("expected {magic}, found {}", fields[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field `{s}`: {e}"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(format!("only maxval 255 is supported, got {maxval}"));
    }
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != w * h * channels {
        return Err(format!("payload has {} bytes, expected {}", payload.len(), w * h * channels));
    }
    Ok((w, h, payload))
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let (width, height, data) = decode_pnm(bytes, "P6", 3)?;
    Ok(RgbImage {
        width,
        height,
        data: data.to_vec(),
    })
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let (w, h, data) = decode_pnm(bytes, "P5", 1)?;
    Ok((w, h, data.to_vec()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, pixels))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&fs::read(path)?).map_err(|m| format_err(path, m))
}

fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&fs::read(path)?).map_err(|m| format_err(path, m))
}

/// Writes images, masks and the manifest under `dir`.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("supports"))?;
    let mut manifest = String::new();
    manifest.push_str(MANIFEST_HEADER);
    manifest.push('\n');
    for (i, img) in data.images.iter().enumerate() {
        let rel = format!("images/{i:05}.ppm");
        fs::write(dir.join(&rel), encode_ppm(&img.image))?;
        manifest.push_str(&format!("image {rel}\n"));
        for a in &img.annotations {
            let b = a.bbox;
            manifest.push_str(&format!("{},{},{},{},{}\n", b.x1, b.y1, b.x2, b.y2, a.class_id));
        }
    }
    for (i, s) in data.supports.iter().enumerate() {
        let img_rel = format!("supports/{i:05}.ppm");
        let mask_rel = format!("supports/{i:05}.pgm");
        fs::write(dir.join(&img_rel), encode_ppm(&s.image))?;
        let pixels: Vec<u8> = s.mask.iter().map(|&m| m * 255).collect();
        write_pgm(&dir.join(&mask_rel), s.image.width, s.image.height, &pixels)?;
        manifest.push_str(&format!("support {img_rel} {mask_rel} {}\n", s.class_id));
    }
    let mut f = fs::File::create(dir.join(MANIFEST_NAME))?;
    f.write_all(manifest.as_bytes())?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_NAME);
    let reader = BufReader::new(fs::File::open(&path)?);
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h == MANIFEST_HEADER => {}
        _ => return Err(format_err(&path, format!("missing `{MANIFEST_HEADER}` header"))),
    }
    let mut data = Dataset {
        images: Vec::new(),
        supports: Vec::new(),
    };
    for (no, line) in lines {
        let line = line?;
        let at = |m: String| format_err(&path, format!("line {}: {m}", no + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [] => {}
            ["image", rel] => data.images.push(AnnotatedImage {
                image: read_ppm(&dir.join(rel))?,
                annotations: Vec::new(),
            }),
            ["support", img_rel, mask_rel, class] => {
                let image = read_ppm(&dir.join(img_rel))?;
                let (w, h, pixels) = read_pgm(&dir.join(mask_rel))?;
                if (w, h) != (image.width, image.height) {
                    return Err(at(format!("mask {w}x{h} does not match image")));
                }
                let class_id = class.parse().map_err(|e| at(format!("bad class: {e}")))?;
                data.supports.push(SupportRendition {
                    image,
                    mask: pixels.iter().map(|&p| u8::from(p > 127)).collect(),
                    class_id,
                });
            }
            [record] => {
                let fields: Vec<&str> = record.split(',').collect();
                if fields.len() != 5 {
                    return Err(at(format!("expected x1,y1,x2,y2,class, got `{record}`")));
                }
                let coord = |s: &str| s.parse::<f64>().map_err(|e| at(format!("bad coordinate `{s}`: {e}")));
                let bbox = BBox::new(coord(fields[0])?, coord(fields[1])?, coord(fields[2])?, coord(fields[3])?);
                let class_id = fields[4].parse().map_err(|e| at(format!("bad class: {e}")))?;
                let img = data
                    .images
                    .last_mut()
                    .ok_or_else(|| at("box before any image".into()))?;
                img.annotations.push(BoxAnnotation { bbox, class_id });
            }
            _ => return Err(at(format!("unrecognized record `{line}`"))),
        }
    }
    Ok(data)
}
