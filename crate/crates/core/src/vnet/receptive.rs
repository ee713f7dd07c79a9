//! Receptive-field bookkeeping for the stage layout.
//!
//! A stride-`s` layer with kernel `k` grows the field by `(k - 1) * jump` and
//! then multiplies the jump by `s`. A stride-2 transposed convolution first
//! halves the jump and then grows the field by `(k - 1) * jump`.

use serde::Serialize;

use super::{LEFT_CONV_COUNTS, RIGHT_CONV_COUNTS, STAGE_KERNEL, TRANSITION_KERNEL};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RfRow {
    pub layer: String,
    pub input_size: usize,
    pub receptive_field: usize,
}

/// Receptive field at the end of every stage for arbitrary per-stage conv
/// counts. `left` lists stages 1..=5, `right` lists stages 4..=1.
pub fn receptive_fields(left: &[usize], right: &[usize], input_extent: usize) -> Vec<RfRow> {
    let mut rows = Vec::with_capacity(left.len() + right.len() + 1);
    let mut rf = 1usize;
    let mut jump = 1usize;

    for (i, &convs) in left.iter().enumerate() {
        rf += convs * (STAGE_KERNEL - 1) * jump;
        rows.push(RfRow {
            layer: format!("Left Stage {}", i + 1),
            input_size: input_extent >> i,
            receptive_field: rf,
        });
        if i + 1 < left.len() {
            rf += (TRANSITION_KERNEL - 1) * jump;
            jump *= 2;
        }
    }

    let deepest = left.len().saturating_sub(1);
    for (j, &convs) in right.iter().enumerate() {
        let level = deepest - 1 - j;
        jump /= 2;
        rf += (TRANSITION_KERNEL - 1) * jump;
        rf += convs * (STAGE_KERNEL - 1) * jump;
        rows.push(RfRow {
            layer: format!("Right Stage {}", level + 1),
            input_size: input_extent >> level,
            receptive_field: rf,
        });
    }

    // The 1×1×1 output convolution leaves the field unchanged.
    rows.push(RfRow { layer: "Output".into(), input_size: input_extent, receptive_field: rf });
    rows
}

/// The receptive-field table for the standard stage layout.
pub fn receptive_field_table(input_extent: usize) -> Vec<RfRow> {
    receptive_fields(&LEFT_CONV_COUNTS, &RIGHT_CONV_COUNTS, input_extent)
}

/// Renders rows as an aligned text table, left side and right side paired
/// per line.
pub fn format_table(rows: &[RfRow]) -> String {
    fn cell(row: Option<&RfRow>) -> String {
        match row {
            Some(r) => {
                let rf = format!("{0}x{0}x{0}", r.receptive_field);
                format!("{:<14} {:>10}  {:<15}", r.layer, r.input_size, rf)
            }
            None => String::new(),
        }
    }
    let left: Vec<&RfRow> = rows.iter().filter(|r| r.layer.starts_with("Left")).collect();
    let right: Vec<&RfRow> = rows.iter().filter(|r| !r.layer.starts_with("Left")).collect();
    let mut out = format!(
        "{:<14} {:>10}  {:<15} | {:<14} {:>10}  {:<15}\n",
        "Layer", "Input Size", "Receptive Field", "Layer", "Input Size", "Receptive Field"
    );
    for i in 0..left.len().max(right.len()) {
        let line = format!("{} | {}", cell(left.get(i).copied()), cell(right.get(i).copied()));
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
