//! Workload spec files.
//!
//! The on-disk grammar is hierarchical key-value text (TOML syntax) with one
//! document per mix:
//!
//! ```toml
//! name = "example"
//! classification = "mixed"
//!
//! [app.0]
//! instances = 2
//!
//! [app.0.kernel.0]
//! text = 65536          # section sizes in bytes (all optional)
//! data = 1048576
//!
//! [app.0.kernel.0.microblock.0]
//! serial = false
//! screens = 4
//! instructions = 40000          # microblock total, split evenly (rounded up)
//! ldst_ratio = 0.45
//! input_range = [0, 262144]     # [start, len]; tiled across the screens
//! output_range = [262144, 262144]
//! ```
//!
//! Unknown keys are rejected with their location; instance ranges are shifted
//! per instance by the application's page-group-aligned footprint stride.

use super::{
    ApplicationSpec, ByteRange, KernelDescriptor, MicroblockSpec, MixClass, ScreenSpec,
    SectionTable, ValidationLimits, WorkloadError, WorkloadMix,
};
use std::fmt::Write as _;
use toml::Value;

fn syntax_error(text: &str, err: toml::de::Error) -> WorkloadError {
    let location = match err.span() {
        Some(span) => {
            let upto = &text[..span.start.min(text.len())];
            let line = upto.matches('\n').count() + 1;
            let col = upto.len() - upto.rfind('\n').map_or(0, |p| p + 1) + 1;
            format!("line {line}, column {col}")
        }
        None => "unknown position".to_string(),
    };
    WorkloadError::Syntax {
        location,
        message: err.message().to_string(),
    }
}

fn invariant(field: impl Into<String>, message: impl Into<String>) -> WorkloadError {
    WorkloadError::Invariant {
        field: field.into(),
        message: message.into(),
    }
}

fn as_table<'v>(v: &'v Value, at: &str) -> Result<&'v toml::Table, WorkloadError> {
    v.as_table().ok_or_else(|| invariant(at, "expected a table"))
}

fn as_u64(v: &Value, at: &str) -> Result<u64, WorkloadError> {
    match v.as_integer() {
        Some(i) if i >= 0 => Ok(i as u64),
        _ => Err(invariant(at, "expected a non-negative integer")),
    }
}

fn as_f64(v: &Value, at: &str) -> Result<f64, WorkloadError> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| invariant(at, "expected a number"))
}

fn as_bool(v: &Value, at: &str) -> Result<bool, WorkloadError> {
    v.as_bool().ok_or_else(|| invariant(at, "expected a boolean"))
}

fn as_range(v: &Value, at: &str) -> Result<ByteRange, WorkloadError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| invariant(at, "expected [start, len]"))?;
    Ok(ByteRange::new(as_u64(&arr[0], at)?, as_u64(&arr[1], at)?))
}

/// Numeric child tables of `v` ("0", "1", ...) in ascending id order.
fn numbered_children<'v>(
    v: &'v Value,
    at: &str,
) -> Result<Vec<(u32, &'v Value)>, WorkloadError> {
    let table = as_table(v, at)?;
    let mut out = Vec::with_capacity(table.len());
    for (k, child) in table {
        let id: u32 = k
            .parse()
            .map_err(|_| invariant(format!("{at}.{k}"), "expected a numeric id"))?;
        out.push((id, child));
    }
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}

/// Parses and validates a workload document.
pub fn parse_workload(text: &str, limits: &ValidationLimits) -> Result<WorkloadMix, WorkloadError> {
    let root: toml::Table = text.parse().map_err(|e| syntax_error(text, e))?;

    let mut name = "workload".to_string();
    let mut classification = MixClass::Mixed;
    let mut applications = Vec::new();

    for (key, value) in &root {
        match key.as_str() {
            "name" => {
                name = value
                    .as_str()
                    .ok_or_else(|| invariant("name", "expected a string"))?
                    .to_string();
            }
            "classification" => {
                let s = value
                    .as_str()
                    .ok_or_else(|| invariant("classification", "expected a string"))?;
                classification = MixClass::parse(s).ok_or_else(|| {
                    invariant(
                        "classification",
                        "expected data-intensive | compute-intensive | mixed",
                    )
                })?;
            }
            "app" => {
                for (app_id, app_val) in numbered_children(value, "app")? {
                    applications.push(parse_app(app_id, app_val)?);
                }
            }
            other => {
                return Err(WorkloadError::UnknownKey {
                    section: "document root".into(),
                    key: other.to_string(),
                })
            }
        }
    }

    let mix = WorkloadMix {
        name,
        classification,
        applications,
    };
    mix.validate(limits)?;
    Ok(mix)
}

fn parse_app(app_id: u32, value: &Value) -> Result<ApplicationSpec, WorkloadError> {
    let at = format!("app.{app_id}");
    let table = as_table(value, &at)?;
    let mut instance_count = 1;
    let mut kernels = Vec::new();
    for (key, v) in table {
        match key.as_str() {
            "instances" => instance_count = as_u64(v, &format!("{at}.instances"))? as u32,
            "kernel" => {
                for (kernel_id, kv) in numbered_children(v, &format!("{at}.kernel"))? {
                    kernels.push(parse_kernel(app_id, kernel_id, kv)?);
                }
            }
            other => {
                return Err(WorkloadError::UnknownKey {
                    section: at,
                    key: other.to_string(),
                })
            }
        }
    }
    Ok(ApplicationSpec {
        app_id,
        kernels,
        instance_count,
    })
}

fn parse_kernel(app_id: u32, kernel_id: u32, value: &Value) -> Result<KernelDescriptor, WorkloadError> {
    let at = format!("app.{app_id}.kernel.{kernel_id}");
    let table = as_table(value, &at)?;
    let mut sections = SectionTable::default();
    let mut data_explicit = false;
    let mut microblocks = Vec::new();
    for (key, v) in table {
        match key.as_str() {
            "text" => sections.text = as_u64(v, &format!("{at}.text"))?,
            "data" => {
                sections.data = as_u64(v, &format!("{at}.data"))?;
                data_explicit = true;
            }
            "heap" => sections.heap = as_u64(v, &format!("{at}.heap"))?,
            "stack" => sections.stack = as_u64(v, &format!("{at}.stack"))?,
            "microblock" => {
                for (mblk_id, mv) in numbered_children(v, &format!("{at}.microblock"))? {
                    microblocks.push(parse_microblock(&at, mblk_id, mv)?);
                }
            }
            other => {
                return Err(WorkloadError::UnknownKey {
                    section: at,
                    key: other.to_string(),
                })
            }
        }
    }
    if !data_explicit {
        let footprint = microblocks
            .iter()
            .flat_map(|m: &MicroblockSpec| &m.screens)
            .map(|s| s.input_range.len + s.output_range.len)
            .max()
            .unwrap_or(0);
        sections.data = sections.data.max(footprint);
    }
    Ok(KernelDescriptor {
        app_id,
        kernel_id,
        microblocks,
        section_table: sections,
    })
}

fn parse_microblock(kernel_at: &str, mblk_id: u32, value: &Value) -> Result<MicroblockSpec, WorkloadError> {
    let at = format!("{kernel_at}.microblock.{mblk_id}");
    let table = as_table(value, &at)?;
    let mut serial = None;
    let mut screens = 1u64;
    let mut instructions = 0u64;
    let mut ldst_ratio = 0.0;
    let mut input_range = ByteRange::default();
    let mut output_range = ByteRange::default();
    for (key, v) in table {
        match key.as_str() {
            "serial" => serial = Some(as_bool(v, &format!("{at}.serial"))?),
            "screens" => screens = as_u64(v, &format!("{at}.screens"))?,
            "instructions" => instructions = as_u64(v, &format!("{at}.instructions"))?,
            "ldst_ratio" => ldst_ratio = as_f64(v, &format!("{at}.ldst_ratio"))?,
            "input_range" => input_range = as_range(v, &format!("{at}.input_range"))?,
            "output_range" => output_range = as_range(v, &format!("{at}.output_range"))?,
            other => {
                return Err(WorkloadError::UnknownKey {
                    section: at,
                    key: other.to_string(),
                })
            }
        }
    }
    if screens == 0 {
        return Err(invariant(format!("{at}.screens"), "must be >= 1"));
    }
    if instructions < screens {
        return Err(WorkloadError::EmptyScreen { field: at });
    }
    let serial = serial.unwrap_or(screens == 1);
    let per_screen_instr = instructions.div_ceil(screens);

    // Tile the microblock ranges evenly across its screens.
    let tile = |range: ByteRange, which: &str| -> Result<Vec<ByteRange>, WorkloadError> {
        if range.is_empty() {
            return Ok(vec![ByteRange::default(); screens as usize]);
        }
        if !range.len.is_multiple_of(screens) {
            return Err(invariant(
                format!("{at}.{which}"),
                format!("length {} does not split across {screens} screens", range.len),
            ));
        }
        let per = range.len / screens;
        Ok((0..screens)
            .map(|i| ByteRange::new(range.start + i * per, per))
            .collect())
    };
    let inputs = tile(input_range, "input_range")?;
    let outputs = tile(output_range, "output_range")?;

    Ok(MicroblockSpec {
        microblock_id: mblk_id,
        is_serial: serial,
        screens: (0..screens as u32)
            .map(|i| ScreenSpec {
                screen_id: i,
                compute_instructions: per_screen_instr,
                ldst_ratio,
                input_range: inputs[i as usize],
                output_range: outputs[i as usize],
            })
            .collect(),
    })
}

/// Renders a mix back into the document grammar. `parse_workload` of the
/// result reproduces the mix exactly for every generated preset.
pub fn serialize_workload(mix: &WorkloadMix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name = {:?}", mix.name);
    let _ = writeln!(out, "classification = {:?}", mix.classification.as_str());
    for app in &mix.applications {
        let _ = writeln!(out, "\n[app.{}]", app.app_id);
        let _ = writeln!(out, "instances = {}", app.instance_count);
        for kernel in &app.kernels {
            let _ = writeln!(out, "\n[app.{}.kernel.{}]", app.app_id, kernel.kernel_id);
            let st = &kernel.section_table;
            let _ = writeln!(out, "text = {}", st.text);
            let _ = writeln!(out, "data = {}", st.data);
            let _ = writeln!(out, "heap = {}", st.heap);
            let _ = writeln!(out, "stack = {}", st.stack);
            for mblk in &kernel.microblocks {
                let _ = writeln!(
                    out,
                    "\n[app.{}.kernel.{}.microblock.{}]",
                    app.app_id, kernel.kernel_id, mblk.microblock_id
                );
                let _ = writeln!(out, "serial = {}", mblk.is_serial);
                let _ = writeln!(out, "screens = {}", mblk.screens.len());
                let _ = writeln!(out, "instructions = {}", mblk.total_instructions());
                let _ = writeln!(out, "ldst_ratio = {}", float_literal(mblk.screens[0].ldst_ratio));
                let (i0, ilen) = contiguous_span(mblk.screens.iter().map(|s| s.input_range));
                let _ = writeln!(out, "input_range = [{i0}, {ilen}]");
                let (o0, olen) = contiguous_span(mblk.screens.iter().map(|s| s.output_range));
                let _ = writeln!(out, "output_range = [{o0}, {olen}]");
            }
        }
    }
    out
}

fn contiguous_span(ranges: impl Iterator<Item = ByteRange>) -> (u64, u64) {
    let mut start = 0;
    let mut len = 0;
    for (i, r) in ranges.enumerate() {
        if i == 0 {
            start = r.start;
        }
        len += r.len;
    }
    (start, len)
}

fn float_literal(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') {
        s
    } else {
        format!("{s}.0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::presets::{build_mix, by_name, preset_names, PresetOptions};

    const MINIMAL: &str = r#"
name = "tiny"
classification = "mixed"

[app.0]
instances = 1

[app.0.kernel.0]
data = 131072

[app.0.kernel.0.microblock.0]
serial = true
screens = 1
instructions = 1000
ldst_ratio = 0.5
input_range = [0, 65536]
output_range = [65536, 65536]
"#;

    #[test]
    fn minimal_document_parses() {
        let mix = parse_workload(MINIMAL, &ValidationLimits::default()).unwrap();
        assert_eq!(mix.applications.len(), 1);
        let k = &mix.applications[0].kernels[0];
        assert_eq!(k.microblocks.len(), 1);
        assert_eq!(k.microblocks[0].screens.len(), 1);
    }

    #[test]
    fn unknown_key_rejected_with_location() {
        let doc = MINIMAL.replace("instances = 1", "instances = 1\nbogus = 3");
        let err = parse_workload(&doc, &ValidationLimits::default()).unwrap_err();
        match err {
            WorkloadError::UnknownKey { section, key } => {
                assert_eq!(section, "app.0");
                assert_eq!(key, "bogus");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_workload("name = \"x\nbroken", &ValidationLimits::default()).unwrap_err();
        match err {
            WorkloadError::Syntax { location, .. } => assert!(location.contains("line 1"), "{location}"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn capacity_violation_surfaces() {
        let doc = MINIMAL.replace("input_range = [0, 65536]", "input_range = [34359738368, 65536]");
        let err = parse_workload(&doc, &ValidationLimits::default()).unwrap_err();
        assert!(matches!(err, WorkloadError::Capacity { .. }), "{err}");
    }

    #[test]
    fn presets_round_trip() {
        let limits = ValidationLimits::default();
        for name in preset_names() {
            let mix = by_name(name, &PresetOptions::default()).unwrap();
            let text = serialize_workload(&mix);
            let back = parse_workload(&text, &limits).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(mix, back, "round trip mismatch for {name}");
        }
        for id in 1..=4 {
            let mix = build_mix(id, 4).unwrap();
            let back = parse_workload(&serialize_workload(&mix), &limits).unwrap();
            assert_eq!(mix, back, "round trip mismatch for mix{id}");
        }
    }
}
