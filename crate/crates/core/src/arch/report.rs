//! Layer table for a 480x360 input, set against the published reference
//! table of the architecture.

use std::fmt;

use crate::error::Result;

use super::plan::{LayerKind, NetworkPlan};

/// One row of the published layer table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PublishedRow {
    pub name: &'static str,
    /// `WxHxC`
    pub output: &'static str,
    pub params: usize,
}

const fn row(name: &'static str, output: &'static str, params: usize) -> PublishedRow {
    PublishedRow {
        name,
        output,
        params,
    }
}

/// Reference input, `(h, w, c)`.
pub const REFERENCE_INPUT: (usize, usize, usize) = (360, 480, 3);

pub const PUBLISHED_TOTAL: usize = 2_714_269;

pub const PUBLISHED_MODEL_SIZE: &str = "10.35MB";

/// The 26 layer rows, combined rows (e.g. "Fire2,Fire3") split per layer.
pub const PUBLISHED_TABLE: [PublishedRow; 26] = [
    row("conv1", "237x177x96", 14_208),
    row("maxpool1", "118x88x96", 0),
    row("fire2", "118x88x128", 11_920),
    row("fire3", "118x88x128", 12_432),
    row("fire4", "118x88x256", 45_344),
    row("maxpool4", "59x44x256", 0),
    row("fire5", "59x44x256", 49_440),
    row("fire6", "59x44x384", 104_880),
    row("fire7", "59x44x384", 111_024),
    row("fire8", "59x44x512", 188_992),
    row("maxpool8", "29x22x512", 0),
    row("fire9", "29x22x512", 197_184),
    row("conv10", "31x24x1000", 513_000),
    row("conv10_D", "29x22x512", 512_512),
    row("dfire9", "29x22x512", 197_184),
    row("upsample8", "59x44x512", 0),
    row("dfire8", "59x44x384", 188_864),
    row("dfire7", "59x44x384", 111_024),
    row("dfire6", "59x44x256", 104_752),
    row("dfire5", "59x44x256", 74_032),
    row("upsample4", "118x88x256", 0),
    row("dfire4", "118x88x128", 45_216),
    row("dfire3", "118x88x128", 12_432),
    row("dfire2", "118x88x96", 12_432),
    row("upsample1", "237x177x96", 3_760),
    row("conv1_D", "480x360x11", 203_637),
];

/// Rows whose published parameter count this reconstruction does not
/// reproduce, with the reason.
pub const KNOWN_DEVIATIONS: [(&str, &str); 3] = [
    (
        "dfire2",
        "no integral equal expand width gives 12432 for 128->96; uses 8+8 (mirrors fire2 squeeze 16); 12432 repeats dfire3",
    ),
    (
        "upsample1",
        "index unpooling has no parameters; no conv/bias shape over 96 channels totals 3760",
    ),
    (
        "conv1_D",
        "a 10x10/2 deconvolution over 96 channels has 96*10*10*K + K parameters",
    ),
];

pub fn published_row(name: &str) -> Option<&'static PublishedRow> {
    PUBLISHED_TABLE.iter().find(|r| r.name == name)
}

pub fn deviation_reason(name: &str) -> Option<&'static str> {
    KNOWN_DEVIATIONS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, r)| *r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    /// `WxHxC` of the last plan layer folded into this row.
    pub output: String,
    pub filter: String,
    pub params: usize,
    pub published: Option<PublishedRow>,
}

impl SummaryRow {
    pub fn output_matches(&self) -> bool {
        self.published.is_some_and(|p| p.output == self.output)
    }

    pub fn params_match(&self) -> bool {
        self.published.is_some_and(|p| p.params == self.params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub num_classes: usize,
    pub rows: Vec<SummaryRow>,
    pub total: usize,
    pub checkpoint_payload_bytes: usize,
}

/// Group plan layers into table rows and evaluate them on `input`.
pub fn summarize(plan: &NetworkPlan, input: (usize, usize, usize)) -> Result<Summary> {
    let shapes = plan.infer_shapes(input)?;
    let mut rows: Vec<SummaryRow> = Vec::new();
    for (layer, (_, shape)) in plan.layers.iter().zip(&shapes) {
        let params = layer.parameter_count();
        match rows.last_mut() {
            Some(last) if last.name == layer.table_row => {
                last.output = shape.to_whc();
                last.params += params;
            }
            _ => rows.push(SummaryRow {
                name: layer.table_row.clone(),
                output: shape.to_whc(),
                filter: match layer.kind {
                    LayerKind::Fire(_) | LayerKind::DFire(_) | LayerKind::Unpool { .. } => {
                        String::new()
                    }
                    _ => layer.filter_label(),
                },
                params,
                published: published_row(&layer.table_row).copied(),
            }),
        }
    }
    let total = plan.count_parameters().total;
    Ok(Summary {
        num_classes: plan.num_classes,
        rows,
        total,
        checkpoint_payload_bytes: 4 * total,
    })
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layer | output (WxHxC) | filter | parameters")?;
        for r in &self.rows {
            write!(f, "{} | {} | {} | {}", r.name, r.output, r.filter, r.params)?;
            if let Some(p) = r.published {
                if p.params != r.params {
                    write!(f, " ≠paper {}", p.params)?;
                    if let Some(reason) = deviation_reason(&r.name) {
                        write!(f, " ({reason})")?;
                    }
                }
                if p.output != r.output {
                    if r.output.rsplit_once('x').map(|(wh, _)| wh)
                        == p.output.rsplit_once('x').map(|(wh, _)| wh)
                    {
                        write!(f, " (published for 11 classes: {})", p.output)?;
                    } else {
                        write!(f, " ≠paper output {}", p.output)?;
                    }
                }
            }
            writeln!(f)?;
        }
        let deviations = self
            .rows
            .iter()
            .filter(|r| r.published.is_some_and(|p| p.params != r.params))
            .count();
        writeln!(
            f,
            "total | {} (paper: {}; {} documented deviations)",
            self.total, PUBLISHED_TOTAL, deviations
        )?;
        write!(
            f,
            "checkpoint payload | {} bytes = 4 x {} ({:.2} MiB; published: {})",
            self.checkpoint_payload_bytes,
            self.total,
            self.checkpoint_payload_bytes as f64 / (1024.0 * 1024.0),
            PUBLISHED_MODEL_SIZE
        )
    }
}
