//! Report rows, number formatting and the machine-readable output formats.
//!
//! kB is decimal: 1 kB = 1000 bytes.

use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion_graph::{FusionGraph, FusionSetting};
use crate::optimizer::{heuristic_head_fusion, Constraint, PlanResult, SweepEntry};

pub const SCHEMA_VERSION: u32 = 1;

/// `r` rounded half-up to `places` decimals.
pub fn format_ratio(r: Ratio<u64>, places: u32) -> String {
    let scale = 10u128.pow(places);
    let num = *r.numer() as u128 * scale;
    let den = *r.denom() as u128;
    let scaled = (2 * num + den) / (2 * den);
    let int = scaled / scale;
    if places == 0 {
        return int.to_string();
    }
    format!("{int}.{:0width$}", scaled % scale, width = places as usize)
}

/// Decimal rendering without trailing zeros, e.g. `1.1`, `2`.
pub fn format_ratio_short(r: Ratio<u64>) -> String {
    let s = format_ratio(r, 6);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Overhead factor for tables: exactly `1` when there is no overhead.
pub fn format_factor(r: Ratio<u64>, places: u32) -> String {
    if r == Ratio::from_integer(1) {
        "1".to_string()
    } else {
        format_ratio(r, places)
    }
}

/// Bytes as kB with three decimals.
pub fn format_kb(bytes: u64) -> String {
    format!("{}.{:03}", bytes / 1000, bytes % 1000)
}

/// Compact byte quantity: `16kB`, `1GB`, `1234B`.
pub fn format_bytes(bytes: u64) -> String {
    for (unit, size) in [("GB", 1_000_000_000u64), ("MB", 1_000_000), ("kB", 1000)] {
        if bytes >= size && bytes.is_multiple_of(size) {
            return format!("{}{unit}", bytes / size);
        }
    }
    format!("{bytes}B")
}

/// Parses an exact non-negative decimal such as `1.25` into a ratio.
fn parse_decimal(text: &str) -> Option<Ratio<u64>> {
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 12 {
        return None;
    }
    let den = 10u64.pow(frac.len() as u32);
    let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac_val: u64 = if frac.is_empty() {
        0
    } else {
        frac.parse().ok()?
    };
    Some(Ratio::new(
        int.checked_mul(den)?.checked_add(frac_val)?,
        den,
    ))
}

/// RAM cap: `inf`, plain bytes, or a decimal with a `B`, `kB`, `MB` or
/// `GB` suffix (powers of 1000).
pub fn parse_ram_limit(text: &str) -> Result<Option<u64>> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("inf") {
        return Ok(None);
    }
    let split = t.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(t.len());
    let (number, unit) = t.split_at(split);
    let scale: u64 = match unit.to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" => 1000,
        "m" | "mb" => 1_000_000,
        "g" | "gb" => 1_000_000_000,
        _ => return Err(Error::Schema(format!("unknown size unit in `{text}`"))),
    };
    let value =
        parse_decimal(number).ok_or_else(|| Error::Schema(format!("invalid size `{text}`")))?;
    let bytes = value * Ratio::from_integer(scale);
    if !bytes.is_integer() || bytes == Ratio::from_integer(0) {
        return Err(Error::Schema(format!(
            "size `{text}` must be a positive whole number of bytes"
        )));
    }
    Ok(Some(bytes.to_integer()))
}

/// Overhead cap: `inf` or an exact decimal `>= 1`.
pub fn parse_factor_limit(text: &str) -> Result<Option<Ratio<u64>>> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("inf") {
        return Ok(None);
    }
    let r = parse_decimal(t).ok_or_else(|| Error::Schema(format!("invalid factor `{text}`")))?;
    if r < Ratio::from_integer(1) {
        return Err(Error::Schema(format!(
            "overhead cap `{text}` must be at least 1"
        )));
    }
    Ok(Some(r))
}

/// Comma-separated grid of constraints.
pub fn parse_grid(text: &str, p1: bool) -> Result<Vec<Constraint>> {
    let items: Vec<&str> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Error::Schema("empty constraint grid".into()));
    }
    items
        .into_iter()
        .map(|s| {
            Ok(if p1 {
                Constraint::MaxOverheadFactor(parse_factor_limit(s)?)
            } else {
                Constraint::MaxPeakRam(parse_ram_limit(s)?)
            })
        })
        .collect()
}

pub fn constraint_label(c: &Constraint) -> String {
    match c {
        Constraint::MaxOverheadFactor(None) => "P1:F_max=inf".into(),
        Constraint::MaxOverheadFactor(Some(r)) => format!("P1:F_max={}", format_ratio_short(*r)),
        Constraint::MaxPeakRam(None) => "P2:P_max=inf".into(),
        Constraint::MaxPeakRam(Some(b)) => format!("P2:P_max={}", format_bytes(*b)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Ok,
    NoSolution,
    SameAsAbove,
}

impl RowStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::NoSolution => "no-solution",
            RowStatus::SameAsAbove => "same-as-above",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub label: String,
    pub status: RowStatus,
    pub result: Option<PlanResult>,
}

impl ReportRow {
    fn from_result(
        label: impl Into<String>,
        result: Option<PlanResult>,
        same_as_above: bool,
    ) -> Self {
        let status = match (&result, same_as_above) {
            (None, _) => RowStatus::NoSolution,
            (Some(_), true) => RowStatus::SameAsAbove,
            (Some(_), false) => RowStatus::Ok,
        };
        Self {
            label: label.into(),
            status,
            result,
        }
    }

    pub fn ram_kb(&self) -> Option<String> {
        self.result.as_ref().map(|r| format_kb(r.peak_ram_bytes))
    }
}

/// Vanilla and heuristic baselines followed by one row per sweep entry.
pub fn sweep_rows(graph: &FusionGraph, entries: &[SweepEntry]) -> Result<Vec<ReportRow>> {
    let vanilla = PlanResult::evaluate(graph, FusionSetting::vanilla(graph)?, None);
    let mut rows = vec![ReportRow::from_result("Vanilla", Some(vanilla), false)];
    rows.push(ReportRow::from_result(
        "Heuristic",
        heuristic_head_fusion(graph),
        false,
    ));
    rows.extend(entries.iter().map(|e| {
        ReportRow::from_result(
            constraint_label(&e.constraint),
            e.result.clone(),
            e.same_as_above,
        )
    }));
    Ok(rows)
}

pub fn segments_text(setting: &FusionSetting) -> String {
    setting
        .spans()
        .iter()
        .map(|s| {
            if s.len() == 1 {
                s.start.to_string()
            } else {
                format!("[{}..{}]", s.start, s.end - 1)
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_markdown(model: &str, rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## {model}\n");
    let _ = writeln!(out, "| Setting | RAM (kB) | F | MACs | Segments |");
    let _ = writeln!(out, "|---|---:|---:|---:|---|");
    for row in rows {
        let cells = match (&row.status, &row.result) {
            (RowStatus::Ok, Some(r)) => [
                format_kb(r.peak_ram_bytes),
                format_factor(r.overhead_factor, 2),
                r.total_macs.to_string(),
                segments_text(&r.setting),
            ],
            (RowStatus::SameAsAbove, _) => {
                ["(SAA)".into(), "(SAA)".into(), String::new(), String::new()]
            }
            _ => [
                "(No Solution)".into(),
                String::new(),
                String::new(),
                String::new(),
            ],
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            row.label, cells[0], cells[1], cells[2], cells[3]
        );
    }
    out
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "label,status,peak_ram_bytes,ram_kb,total_macs,overhead_factor,overhead_exact\n",
    );
    for row in rows {
        match &row.result {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}/{}",
                    row.label,
                    row.status.as_str(),
                    r.peak_ram_bytes,
                    format_kb(r.peak_ram_bytes),
                    r.total_macs,
                    format_factor(r.overhead_factor, 3),
                    r.overhead_factor.numer(),
                    r.overhead_factor.denom()
                );
            }
            None => {
                let _ = writeln!(out, "{},{},,,,,", row.label, row.status.as_str());
            }
        }
    }
    out
}

fn rational_string(r: Ratio<u64>) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub fused: bool,
}

/// The exported artifact: a fusion setting plus its costs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedSetting {
    pub schema: u32,
    pub model: String,
    pub segments: Vec<Segment>,
    pub peak_ram_bytes: u64,
    pub total_macs: u64,
    pub overhead_factor: String,
}

impl ExportedSetting {
    pub fn new(model: &str, result: &PlanResult) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            model: model.to_string(),
            segments: segments(&result.setting),
            peak_ram_bytes: result.peak_ram_bytes,
            total_macs: result.total_macs,
            overhead_factor: rational_string(result.overhead_factor),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    /// Resolves the segments against `graph`.
    pub fn setting(&self, graph: &FusionGraph) -> Result<FusionSetting> {
        let spans: Vec<_> = self.segments.iter().map(|s| s.start..s.end).collect();
        FusionSetting::from_spans(graph, &spans)
    }
}

fn segments(setting: &FusionSetting) -> Vec<Segment> {
    setting
        .edges()
        .iter()
        .map(|e| Segment {
            start: e.src,
            end: e.dst,
            fused: e.is_fused(),
        })
        .collect()
}

fn result_json(r: &PlanResult) -> serde_json::Value {
    serde_json::json!({
        "segments": segments(&r.setting),
        "peak_ram_bytes": r.peak_ram_bytes,
        "ram_kb": format_kb(r.peak_ram_bytes),
        "total_macs": r.total_macs,
        "overhead_factor": rational_string(r.overhead_factor),
        "overhead_decimal": format_ratio(r.overhead_factor, 3),
        "constraint_satisfied": r.constraint_satisfied,
    })
}

pub fn plan_json(
    model: &str,
    constraint: &Constraint,
    result: Option<&PlanResult>,
) -> serde_json::Value {
    let mut v = serde_json::json!({
        "schema": SCHEMA_VERSION,
        "model": model,
        "constraint": constraint_label(constraint),
        "status": if result.is_some() { "ok" } else { "no-solution" },
    });
    if let Some(r) = result {
        let obj = v.as_object_mut().expect("object");
        for (k, val) in result_json(r).as_object().expect("object") {
            obj.insert(k.clone(), val.clone());
        }
        if let Some(trace) = &r.candidate_trace {
            obj.insert("candidates_examined".into(), trace.len().into());
        }
    }
    v
}

pub fn render_plan_markdown(
    model: &str,
    constraint: &Constraint,
    result: Option<&PlanResult>,
) -> String {
    let mut out = format!("## {model}: {}\n\n", constraint_label(constraint));
    match result {
        None => out.push_str("(No Solution)\n"),
        Some(r) => {
            let _ = writeln!(out, "| Layers | Fused | RAM (B) | MACs |");
            let _ = writeln!(out, "|---|---|---:|---:|");
            for e in r.setting.edges() {
                let _ = writeln!(
                    out,
                    "| {}..{} | {} | {} | {} |",
                    e.src,
                    e.dst,
                    if e.is_fused() { "yes" } else { "no" },
                    e.ram_bytes,
                    e.macs
                );
            }
            let _ = writeln!(
                out,
                "\npeak RAM {} kB, {} MACs, F = {}",
                format_kb(r.peak_ram_bytes),
                r.total_macs,
                format_factor(r.overhead_factor, 2)
            );
        }
    }
    out
}

pub fn render_json(model: &str, rows: &[ReportRow]) -> String {
    let rows: Vec<_> = rows
        .iter()
        .map(|row| {
            let mut v = serde_json::json!({ "label": row.label, "status": row.status });
            if let Some(r) = &row.result {
                let obj = v.as_object_mut().expect("object");
                for (k, val) in result_json(r).as_object().expect("object") {
                    obj.insert(k.clone(), val.clone());
                }
            }
            v
        })
        .collect();
    let doc = serde_json::json!({ "schema": SCHEMA_VERSION, "model": model, "rows": rows });
    serde_json::to_string_pretty(&doc).expect("report serializes")
}
