use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::ops::IGNORE_ID;

use super::pnm::{decode_ppm, encode_ppm};
use super::LabelMap;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaletteEntry {
    pub class_id: u8,
    pub rgb: [u8; 3],
    pub name: String,
}

/// Class id ↔ color mapping. An entry with id 255 names the ignore class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    entries: Vec<PaletteEntry>,
}

const CAMVID11: [(&str, [u8; 3]); 11] = [
    ("Sky", [128, 128, 128]),
    ("Building", [128, 0, 0]),
    ("Pole", [192, 192, 128]),
    ("Road", [128, 64, 128]),
    ("Sidewalk", [0, 0, 192]),
    ("Tree", [128, 128, 0]),
    ("Sign", [192, 128, 128]),
    ("Car", [64, 0, 128]),
    ("Fence", [64, 64, 128]),
    ("Pedestrian", [64, 64, 0]),
    ("Bicyclist", [0, 128, 192]),
];

impl Palette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Data("palette has no entries".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            for prev in &entries[..i] {
                if prev.class_id == e.class_id {
                    return Err(Error::Data(format!(
                        "palette repeats class id {}",
                        e.class_id
                    )));
                }
                if prev.rgb == e.rgb {
                    return Err(Error::Data(format!(
                        "palette color {:?} used by both `{}` and `{}`",
                        e.rgb, prev.name, e.name
                    )));
                }
            }
        }
        Ok(Palette { entries })
    }

    /// The 11 CamVid classes with the usual SegNet colors.
    pub fn camvid11() -> Self {
        let entries = CAMVID11
            .iter()
            .enumerate()
            .map(|(i, (name, rgb))| PaletteEntry {
                class_id: i as u8,
                rgb: *rgb,
                name: (*name).to_string(),
            })
            .collect();
        Palette { entries }
    }

    /// `k` distinct colors; CamVid colors first, then a deterministic
    /// spread for larger `k`.
    pub fn generated(k: usize) -> Result<Self> {
        if !(1..=255).contains(&k) {
            return Err(Error::Config(format!(
                "cannot build a palette for {k} classes"
            )));
        }
        let mut entries: Vec<PaletteEntry> =
            Palette::camvid11().entries.into_iter().take(k).collect();
        let mut i = 0u32;
        while entries.len() < k {
            let h = i.wrapping_mul(0x9E37_79B9);
            let rgb = [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8];
            i += 1;
            if rgb == [0, 0, 0] || entries.iter().any(|e| e.rgb == rgb) {
                continue;
            }
            entries.push(PaletteEntry {
                class_id: entries.len() as u8,
                rgb,
                name: format!("class{}", entries.len()),
            });
        }
        Palette::new(entries)
    }

    /// Parse `class_id,r,g,b,name` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Data(format!("palette line {}: {msg}: `{line}`", n + 1));
            let fields: Vec<&str> = line.splitn(5, ',').map(str::trim).collect();
            if fields.len() != 5 || fields[4].is_empty() {
                return Err(bad("expected class_id,r,g,b,name"));
            }
            let num = |s: &str| s.parse::<u8>().map_err(|_| bad("value outside 0..=255"));
            entries.push(PaletteEntry {
                class_id: num(fields[0])?,
                rgb: [num(fields[1])?, num(fields[2])?, num(fields[3])?],
                name: fields[4].to_string(),
            });
        }
        Palette::new(entries)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Palette::parse(&std::fs::read_to_string(path)?)
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    /// Entries excluding the ignore id, in file order.
    pub fn classes(&self) -> impl Iterator<Item = &PaletteEntry> {
        self.entries.iter().filter(|e| e.class_id != IGNORE_ID)
    }

    pub fn num_classes(&self) -> usize {
        self.classes().count()
    }

    pub fn color(&self, id: u8) -> Option<[u8; 3]> {
        self.entries
            .iter()
            .find(|e| e.class_id == id)
            .map(|e| e.rgb)
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.class_id == id)
            .map(|e| e.name.as_str())
    }

    pub fn class_of(&self, rgb: [u8; 3]) -> Option<u8> {
        self.entries
            .iter()
            .find(|e| e.rgb == rgb)
            .map(|e| e.class_id)
    }

    /// True when ids `0..k` all have an entry.
    pub fn covers(&self, k: usize) -> bool {
        (0..k).all(|id| self.color(id as u8).is_some())
    }

    /// RGB bytes for a label grid; the ignore id is black unless the
    /// palette gives it a color.
    pub fn colorize_rgb(&self, labels: &LabelMap) -> Result<Vec<u8>> {
        let lut: HashMap<u8, [u8; 3]> = self.entries.iter().map(|e| (e.class_id, e.rgb)).collect();
        let mut out = Vec::with_capacity(labels.ids.len() * 3);
        for (i, &id) in labels.ids.iter().enumerate() {
            let rgb = match lut.get(&id) {
                Some(c) => *c,
                None if id == IGNORE_ID => [0, 0, 0],
                None => {
                    return Err(Error::Data(format!(
                        "class id {id} at pixel ({}, {}) has no palette color",
                        i / labels.width,
                        i % labels.width
                    )))
                }
            };
            out.extend_from_slice(&rgb);
        }
        Ok(out)
    }

    /// Map palette colors back to ids. Black maps to the ignore id when no
    /// entry claims it.
    pub fn decode_rgb(&self, width: usize, height: usize, rgb: &[u8]) -> Result<LabelMap> {
        let lut: HashMap<[u8; 3], u8> = self.entries.iter().map(|e| (e.rgb, e.class_id)).collect();
        let ids = rgb
            .chunks_exact(3)
            .enumerate()
            .map(|(i, px)| {
                let c = [px[0], px[1], px[2]];
                match lut.get(&c) {
                    Some(&id) => Ok(id),
                    None if c == [0, 0, 0] => Ok(IGNORE_ID),
                    None => Err(Error::Data(format!(
                        "color {c:?} at pixel ({}, {}) is not in the palette",
                        i / width,
                        i % width
                    ))),
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        LabelMap::new(height, width, ids)
    }
}

impl fmt::Display for Palette {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{},{},{},{},{}",
                e.class_id, e.rgb[0], e.rgb[1], e.rgb[2], e.name
            )?;
        }
        Ok(())
    }
}

/// Label grid → binary PPM.
pub fn colorize(labels: &LabelMap, palette: &Palette) -> Result<Vec<u8>> {
    let rgb = palette.colorize_rgb(labels)?;
    encode_ppm(labels.width, labels.height, &rgb)
}

/// Binary PPM of palette colors → label grid.
pub fn decolorize(ppm: &[u8], palette: &Palette) -> Result<LabelMap> {
    let r = decode_ppm(ppm)?;
    palette.decode_rgb(r.width, r.height, &r.data)
}
