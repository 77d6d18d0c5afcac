//! Closed-form tag storage arithmetic and the access latency table.
//!
//! Sizes are reported in 1024-based KiB together with exact bit counts.

use crate::cache::{access_latency, CacheGeometry};

/// Valid + dirty.
pub const STATUS_BITS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagLayout {
    pub tag_bits: u32,
    pub entry_bits: u32,
    pub tag_storage_bits: u64,
    pub tag_storage_kib: f64,
}

/// Tag layout for a conventional cache (`full_tag = false`), or for a cache
/// with encrypted indices that must keep the whole line address in the tag.
pub fn tag_layout(geometry: &CacheGeometry, full_tag: bool) -> TagLayout {
    let tag_bits = if full_tag {
        geometry.line_address_bits()
    } else {
        geometry.tag_bits()
    };
    layout_from_entry(geometry, tag_bits, tag_bits + STATUS_BITS)
}

fn layout_from_entry(geometry: &CacheGeometry, tag_bits: u32, entry_bits: u32) -> TagLayout {
    let tag_storage_bits = entry_bits as u64 * geometry.num_lines();
    TagLayout {
        tag_bits,
        entry_bits,
        tag_storage_bits,
        tag_storage_kib: bits_to_kib(tag_storage_bits),
    }
}

fn bits_to_kib(bits: u64) -> f64 {
    bits as f64 / 8.0 / 1024.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageTotals {
    pub data_kib: f64,
    pub tag_kib: f64,
    pub total_kib: f64,
    /// Relative growth of the total over the conventional cache.
    pub overhead_vs_conventional: f64,
}

pub fn total_storage(geometry: &CacheGeometry, full_tag: bool) -> StorageTotals {
    let conventional = tag_layout(geometry, false).entry_bits;
    let chosen = tag_layout(geometry, full_tag).entry_bits;
    storage_from_entry_bits(geometry, chosen, conventional)
}

/// Totals for an arbitrary tag entry width, compared against a conventional
/// entry of `conventional_entry_bits`.
pub fn storage_from_entry_bits(
    geometry: &CacheGeometry,
    entry_bits: u32,
    conventional_entry_bits: u32,
) -> StorageTotals {
    let data_kib = geometry.total_size_bytes() as f64 / 1024.0;
    let tag_kib = bits_to_kib(entry_bits as u64 * geometry.num_lines());
    let base_kib = bits_to_kib(conventional_entry_bits as u64 * geometry.num_lines());
    let total_kib = data_kib + tag_kib;
    StorageTotals {
        data_kib,
        tag_kib,
        total_kib,
        overhead_vs_conventional: total_kib / (data_kib + base_kib) - 1.0,
    }
}

/// `(H, cycles)` for `H = 1..=h_max`.
pub fn latency_table(num_banks: u32, h_max: u32) -> Vec<(u32, u32)> {
    (1..=h_max).map(|h| (h, access_latency(h, num_banks))).collect()
}

/// One printable row of the storage comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadRow {
    pub design: &'static str,
    pub layout: TagLayout,
    pub totals: StorageTotals,
}

pub fn overhead_rows(geometry: &CacheGeometry) -> Vec<OverheadRow> {
    [("conventional", false), ("ceaser-sh", true), ("sea", true)]
        .into_iter()
        .map(|(design, full)| OverheadRow {
            design,
            layout: tag_layout(geometry, full),
            totals: total_storage(geometry, full),
        })
        .collect()
}
