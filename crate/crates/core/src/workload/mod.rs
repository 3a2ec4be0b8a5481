//! Kernel/microblock/screen workload model.
//!
//! A workload mix is a set of applications; each application carries one or
//! more offloadable kernels plus an instance count. Kernels are ordered lists
//! of microblocks (serialized by data dependency), microblocks hold screens
//! (the parallel scheduling granule), and every screen carries a compute
//! demand plus flash-mapped input/output ranges.

mod parse;
mod presets;

pub use parse::{parse_workload, serialize_workload};
pub use presets::{
    build_mix, build_mix_with, by_name, demo_inter_mix, demo_intra_mix, mix_members, preset,
    preset_from_table, preset_names, PresetOptions, Table2Row, MIX_COUNT, TABLE2,
};

use thiserror::Error;

/// Half-open byte range on the flash backbone address space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ByteRange {
    pub start: u64,
    pub len: u64,
}

impl ByteRange {
    pub fn new(start: u64, len: u64) -> Self {
        Self { start, len }
    }

    pub fn end(&self) -> u64 {
        self.start + self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn overlaps(&self, other: &ByteRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.start < other.end() && other.start < self.end()
    }

    pub fn shifted(&self, offset: u64) -> ByteRange {
        if self.is_empty() {
            *self
        } else {
            ByteRange::new(self.start + offset, self.len)
        }
    }
}

/// One parallel-executable partition of a microblock's work.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenSpec {
    /// Ordinal within the microblock.
    pub screen_id: u32,
    pub compute_instructions: u64,
    /// Fraction of instructions that are loads/stores, in [0, 1].
    pub ldst_ratio: f64,
    pub input_range: ByteRange,
    pub output_range: ByteRange,
}

/// A group of code segments whose execution is serialized against the other
/// microblocks of the same kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroblockSpec {
    /// Ordinal within the kernel; execution follows ascending ids.
    pub microblock_id: u32,
    pub is_serial: bool,
    pub screens: Vec<ScreenSpec>,
}

impl MicroblockSpec {
    pub fn total_instructions(&self) -> u64 {
        self.screens.iter().map(|s| s.compute_instructions).sum()
    }
}

/// Sizes of the executable's sections. Only the data section maps to
/// DDR3L/flash; the rest stay L2-resident.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionTable {
    pub text: u64,
    pub data: u64,
    pub heap: u64,
    pub stack: u64,
}

impl Default for SectionTable {
    fn default() -> Self {
        Self {
            text: 64 * crate::units::KIB,
            data: 64 * crate::units::KIB,
            heap: 64 * crate::units::KIB,
            stack: 16 * crate::units::KIB,
        }
    }
}

/// An offloadable kernel: the descriptor the host downloads over PCIe.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDescriptor {
    pub app_id: u32,
    pub kernel_id: u32,
    pub microblocks: Vec<MicroblockSpec>,
    pub section_table: SectionTable,
}

impl KernelDescriptor {
    pub fn total_instructions(&self) -> u64 {
        self.microblocks.iter().map(|m| m.total_instructions()).sum()
    }

    pub fn screen_count(&self) -> usize {
        self.microblocks.iter().map(|m| m.screens.len()).sum()
    }

    /// Total bytes this kernel moves through flash (inputs + outputs).
    pub fn io_footprint(&self) -> u64 {
        self.microblocks
            .iter()
            .flat_map(|m| &m.screens)
            .map(|s| s.input_range.len + s.output_range.len)
            .sum()
    }

    fn range_span(&self) -> Option<(u64, u64)> {
        let mut lo = u64::MAX;
        let mut hi = 0;
        for s in self.microblocks.iter().flat_map(|m| &m.screens) {
            for r in [&s.input_range, &s.output_range] {
                if !r.is_empty() {
                    lo = lo.min(r.start);
                    hi = hi.max(r.end());
                }
            }
        }
        (hi > 0 || lo != u64::MAX).then_some((lo, hi))
    }
}

/// An application: ordered kernels plus the number of identical instances to
/// launch. Instances are expanded at run time with disjoint flash ranges,
/// shifted by the application's instance stride.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplicationSpec {
    pub app_id: u32,
    pub kernels: Vec<KernelDescriptor>,
    pub instance_count: u32,
}

impl ApplicationSpec {
    /// Lowest/highest flash byte touched by instance 0, if any.
    pub fn range_span(&self) -> Option<(u64, u64)> {
        let spans: Vec<_> = self.kernels.iter().filter_map(|k| k.range_span()).collect();
        if spans.is_empty() {
            return None;
        }
        let lo = spans.iter().map(|s| s.0).min().unwrap();
        let hi = spans.iter().map(|s| s.1).max().unwrap();
        Some((lo, hi))
    }

    /// Byte offset between consecutive instances' flash ranges, aligned up to
    /// the page-group size.
    pub fn instance_stride(&self, page_group_size: u64) -> u64 {
        match self.range_span() {
            Some((lo, hi)) => (hi - lo).div_ceil(page_group_size) * page_group_size,
            None => 0,
        }
    }
}

/// Workload classification used for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixClass {
    DataIntensive,
    ComputeIntensive,
    Mixed,
}

impl MixClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            MixClass::DataIntensive => "data-intensive",
            MixClass::ComputeIntensive => "compute-intensive",
            MixClass::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "data-intensive" => Some(MixClass::DataIntensive),
            "compute-intensive" => Some(MixClass::ComputeIntensive),
            "mixed" => Some(MixClass::Mixed),
            _ => None,
        }
    }
}

/// A complete workload: what one simulation run executes.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadMix {
    pub name: String,
    pub classification: MixClass,
    pub applications: Vec<ApplicationSpec>,
}

/// Backbone-derived bounds the workload must respect.
#[derive(Debug, Clone, Copy)]
pub struct ValidationLimits {
    pub page_group_size: u64,
    /// Writable logical capacity (total capacity minus over-provisioning).
    pub addressable_bytes: u64,
}

impl Default for ValidationLimits {
    fn default() -> Self {
        crate::flashvisor::BackboneGeometry::default().validation_limits()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("syntax error at {location}: {message}")]
    Syntax { location: String, message: String },
    #[error("unknown key `{key}` in {section}")]
    UnknownKey { section: String, key: String },
    #[error("invariant violation in {field}: {message}")]
    Invariant { field: String, message: String },
    #[error("flash range {field} [{start}, +{len}) exceeds addressable backbone capacity ({limit} bytes)")]
    Capacity {
        field: String,
        start: u64,
        len: u64,
        limit: u64,
    },
    #[error("unknown mix id {0} (valid: 1..={MIX_COUNT})")]
    UnknownMix(u32),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{field}: split yields less than one instruction per screen")]
    EmptyScreen { field: String },
}

impl WorkloadMix {
    /// Checks every type invariant and the backbone capacity bound.
    pub fn validate(&self, limits: &ValidationLimits) -> Result<(), WorkloadError> {
        if self.applications.is_empty() {
            return Err(WorkloadError::Invariant {
                field: "applications".into(),
                message: "mix has no applications".into(),
            });
        }
        for app in &self.applications {
            app.validate(limits)?;
        }
        Ok(())
    }

    pub fn total_input_bytes(&self) -> u64 {
        self.applications
            .iter()
            .map(|a| {
                a.instance_count as u64
                    * a.kernels
                        .iter()
                        .flat_map(|k| &k.microblocks)
                        .flat_map(|m| &m.screens)
                        .map(|s| s.input_range.len)
                        .sum::<u64>()
            })
            .sum()
    }
}

impl ApplicationSpec {
    fn validate(&self, limits: &ValidationLimits) -> Result<(), WorkloadError> {
        if self.instance_count < 1 {
            return Err(WorkloadError::Invariant {
                field: format!("app.{}.instances", self.app_id),
                message: "instance_count must be >= 1".into(),
            });
        }
        if self.kernels.is_empty() {
            return Err(WorkloadError::Invariant {
                field: format!("app.{}", self.app_id),
                message: "application has no kernels".into(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for k in &self.kernels {
            if !seen.insert(k.kernel_id) {
                return Err(WorkloadError::Invariant {
                    field: format!("app.{}.kernel.{}", self.app_id, k.kernel_id),
                    message: "duplicate kernel id within application".into(),
                });
            }
            k.validate(limits)?;
        }
        // All instances must fit below the addressable bound.
        if let Some((_, hi)) = self.range_span() {
            let stride = self.instance_stride(limits.page_group_size);
            let last_end = hi + stride * (self.instance_count as u64 - 1);
            if last_end > limits.addressable_bytes {
                return Err(WorkloadError::Capacity {
                    field: format!("app.{}.instances", self.app_id),
                    start: hi,
                    len: stride * (self.instance_count as u64 - 1),
                    limit: limits.addressable_bytes,
                });
            }
        }
        Ok(())
    }
}

impl KernelDescriptor {
    fn validate(&self, limits: &ValidationLimits) -> Result<(), WorkloadError> {
        let tag = format!("app.{}.kernel.{}", self.app_id, self.kernel_id);
        if self.microblocks.is_empty() {
            return Err(WorkloadError::Invariant {
                field: tag,
                message: "kernel has no microblocks".into(),
            });
        }
        for (name, size) in [
            ("text", self.section_table.text),
            ("data", self.section_table.data),
            ("heap", self.section_table.heap),
            ("stack", self.section_table.stack),
        ] {
            if size == 0 {
                return Err(WorkloadError::Invariant {
                    field: format!("{tag}.{name}"),
                    message: "section size must be > 0".into(),
                });
            }
        }
        let mut max_footprint = 0;
        for (i, m) in self.microblocks.iter().enumerate() {
            if m.microblock_id != i as u32 {
                return Err(WorkloadError::Invariant {
                    field: format!("{tag}.microblock.{}", m.microblock_id),
                    message: format!("microblock ids must be dense and ordered (expected {i})"),
                });
            }
            m.validate(&tag, limits)?;
            for s in &m.screens {
                max_footprint = max_footprint.max(s.input_range.len + s.output_range.len);
            }
        }
        if self.section_table.data < max_footprint {
            return Err(WorkloadError::Invariant {
                field: format!("{tag}.data"),
                message: format!(
                    "data section ({}) smaller than largest screen footprint ({max_footprint})",
                    self.section_table.data
                ),
            });
        }
        Ok(())
    }
}

impl MicroblockSpec {
    fn validate(&self, kernel_tag: &str, limits: &ValidationLimits) -> Result<(), WorkloadError> {
        let tag = format!("{kernel_tag}.microblock.{}", self.microblock_id);
        if self.screens.is_empty() {
            return Err(WorkloadError::Invariant {
                field: tag,
                message: "microblock has no screens".into(),
            });
        }
        if self.is_serial != (self.screens.len() == 1) {
            return Err(WorkloadError::Invariant {
                field: tag,
                message: "is_serial must hold exactly when the microblock has one screen".into(),
            });
        }
        for (i, s) in self.screens.iter().enumerate() {
            let stag = format!("{tag}.screen.{i}");
            if s.screen_id != i as u32 {
                return Err(WorkloadError::Invariant {
                    field: stag,
                    message: format!("screen ids must be dense and ordered (expected {i})"),
                });
            }
            if s.compute_instructions == 0 {
                return Err(WorkloadError::Invariant {
                    field: stag,
                    message: "compute_instructions must be > 0".into(),
                });
            }
            if !(0.0..=1.0).contains(&s.ldst_ratio) {
                return Err(WorkloadError::Invariant {
                    field: stag,
                    message: format!("ldst_ratio {} outside [0, 1]", s.ldst_ratio),
                });
            }
            for (rname, r) in [("input_range", &s.input_range), ("output_range", &s.output_range)] {
                if r.len % limits.page_group_size != 0 || r.start % limits.page_group_size != 0 {
                    return Err(WorkloadError::Invariant {
                        field: format!("{stag}.{rname}"),
                        message: format!(
                            "range [{}, +{}) not aligned to the {}-byte page group",
                            r.start, r.len, limits.page_group_size
                        ),
                    });
                }
                if !r.is_empty() && r.end() > limits.addressable_bytes {
                    return Err(WorkloadError::Capacity {
                        field: format!("{stag}.{rname}"),
                        start: r.start,
                        len: r.len,
                        limit: limits.addressable_bytes,
                    });
                }
            }
        }
        // No write-after-write hazards by construction: a screen's ranges may
        // not overlap another screen's output within the same microblock.
        for (i, a) in self.screens.iter().enumerate() {
            for (j, b) in self.screens.iter().enumerate() {
                if i == j {
                    continue;
                }
                if a.output_range.overlaps(&b.output_range) && i < j {
                    return Err(WorkloadError::Invariant {
                        field: format!("{tag}.screen.{j}.output_range"),
                        message: format!("overlaps screen {i}'s output range"),
                    });
                }
                if a.input_range.overlaps(&b.output_range) {
                    return Err(WorkloadError::Invariant {
                        field: format!("{tag}.screen.{i}.input_range"),
                        message: format!("overlaps screen {j}'s output range"),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_limits() -> ValidationLimits {
        ValidationLimits {
            page_group_size: 64 * crate::units::KIB,
            addressable_bytes: 32 * crate::units::GIB,
        }
    }

    fn screen(id: u32, input: ByteRange, output: ByteRange) -> ScreenSpec {
        ScreenSpec {
            screen_id: id,
            compute_instructions: 1000,
            ldst_ratio: 0.5,
            input_range: input,
            output_range: output,
        }
    }

    fn one_screen_mix(input: ByteRange, output: ByteRange) -> WorkloadMix {
        WorkloadMix {
            name: "t".into(),
            classification: MixClass::Mixed,
            applications: vec![ApplicationSpec {
                app_id: 0,
                instance_count: 1,
                kernels: vec![KernelDescriptor {
                    app_id: 0,
                    kernel_id: 0,
                    section_table: SectionTable {
                        data: 1 << 30,
                        ..SectionTable::default()
                    },
                    microblocks: vec![MicroblockSpec {
                        microblock_id: 0,
                        is_serial: true,
                        screens: vec![screen(0, input, output)],
                    }],
                }],
            }],
        }
    }

    #[test]
    fn minimal_mix_validates() {
        let g = 64 * crate::units::KIB;
        let mix = one_screen_mix(ByteRange::new(0, g), ByteRange::new(g, g));
        assert!(mix.validate(&unit_limits()).is_ok());
    }

    #[test]
    fn misaligned_range_rejected() {
        let mix = one_screen_mix(ByteRange::new(0, 1234), ByteRange::default());
        let err = mix.validate(&unit_limits()).unwrap_err();
        assert!(matches!(err, WorkloadError::Invariant { .. }), "{err}");
    }

    #[test]
    fn range_beyond_capacity_rejected() {
        let g = 64 * crate::units::KIB;
        let mix = one_screen_mix(ByteRange::new(32 * crate::units::GIB, g), ByteRange::default());
        let err = mix.validate(&unit_limits()).unwrap_err();
        assert!(matches!(err, WorkloadError::Capacity { .. }), "{err}");
    }

    #[test]
    fn serial_flag_must_match_screen_count() {
        let g = 64 * crate::units::KIB;
        let mut mix = one_screen_mix(ByteRange::new(0, g), ByteRange::default());
        mix.applications[0].kernels[0].microblocks[0].is_serial = false;
        assert!(mix.validate(&unit_limits()).is_err());
    }

    #[test]
    fn overlapping_outputs_within_microblock_rejected() {
        let g = 64 * crate::units::KIB;
        let mut mix = one_screen_mix(ByteRange::new(0, g), ByteRange::new(g, g));
        let mb = &mut mix.applications[0].kernels[0].microblocks[0];
        mb.screens.push(screen(1, ByteRange::new(2 * g, g), ByteRange::new(g, g)));
        mb.is_serial = false;
        let err = mix.validate(&unit_limits()).unwrap_err();
        assert!(err.to_string().contains("output range"), "{err}");
    }

    #[test]
    fn instance_stride_is_group_aligned() {
        let g = 64 * crate::units::KIB;
        let mix = one_screen_mix(ByteRange::new(0, g), ByteRange::new(g, g));
        assert_eq!(mix.applications[0].instance_stride(g), 2 * g);
    }
}
