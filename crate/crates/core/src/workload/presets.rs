//! Workload presets: the fourteen single-application characteristics rows,
//! the fourteen heterogeneous mixes built from them, and two small synthetic
//! scheduler-demonstration workloads.

use super::{
    ApplicationSpec, ByteRange, KernelDescriptor, MicroblockSpec, MixClass, ScreenSpec,
    SectionTable, WorkloadError, WorkloadMix,
};
use crate::units::{KIB, MIB};

/// One row of the workload characteristics table.
#[derive(Debug, Clone, Copy)]
pub struct Table2Row {
    pub name: &'static str,
    pub description: &'static str,
    pub mblks: u32,
    pub serial_mblks: u32,
    pub input_mb: u64,
    pub ldst_pct: f64,
    /// Bytes processed per thousand instructions.
    pub bki: f64,
    /// Mix membership bitmask; bit (n-1) set means the app is in mix n.
    pub mixes: u16,
}

const fn mixes(ids: &[u16]) -> u16 {
    let mut mask = 0;
    let mut i = 0;
    while i < ids.len() {
        mask |= 1 << (ids[i] - 1);
        i += 1;
    }
    mask
}

pub const MIX_COUNT: u32 = 14;

pub const TABLE2: [Table2Row; 14] = [
    Table2Row { name: "atax", description: "Matrix Transpose & Multiplication", mblks: 2, serial_mblks: 1, input_mb: 640, ldst_pct: 45.61, bki: 68.86, mixes: mixes(&[1, 5, 10, 11]) },
    Table2Row { name: "bicg", description: "BiCG Sub Kernel", mblks: 2, serial_mblks: 1, input_mb: 640, ldst_pct: 46.0, bki: 72.3, mixes: mixes(&[1, 6, 9, 13]) },
    Table2Row { name: "2dcon", description: "2-Dimension Convolution", mblks: 1, serial_mblks: 0, input_mb: 640, ldst_pct: 23.96, bki: 35.59, mixes: mixes(&[1, 5, 10, 12, 13]) },
    Table2Row { name: "mvt", description: "Matrix Vector Product & Transpose", mblks: 1, serial_mblks: 0, input_mb: 640, ldst_pct: 45.1, bki: 72.05, mixes: mixes(&[1, 3, 6, 7, 10, 11, 12, 13, 14]) },
    Table2Row { name: "adi", description: "Alternating Direction Implicit solver", mblks: 3, serial_mblks: 1, input_mb: 1920, ldst_pct: 23.96, bki: 35.59, mixes: mixes(&[2, 3, 6, 7, 9, 11, 12, 13, 14]) },
    Table2Row { name: "fdtd", description: "2-D Finite Time Domain", mblks: 3, serial_mblks: 1, input_mb: 1920, ldst_pct: 27.27, bki: 38.52, mixes: mixes(&[2, 4, 6, 7, 10, 11, 12, 14]) },
    Table2Row { name: "gesum", description: "Scalar, Vector & Multiplication", mblks: 1, serial_mblks: 0, input_mb: 640, ldst_pct: 48.08, bki: 72.13, mixes: mixes(&[2, 3, 5, 8, 10, 11, 12, 14]) },
    Table2Row { name: "syrk", description: "Symmetric rank-k operations", mblks: 1, serial_mblks: 0, input_mb: 1280, ldst_pct: 28.21, bki: 5.29, mixes: mixes(&[1, 3, 5, 8, 9]) },
    Table2Row { name: "3mm", description: "3-Matrix Multiplications", mblks: 3, serial_mblks: 1, input_mb: 2560, ldst_pct: 33.68, bki: 2.48, mixes: mixes(&[1, 3, 6, 7]) },
    Table2Row { name: "covar", description: "Covariance Computation", mblks: 3, serial_mblks: 1, input_mb: 640, ldst_pct: 34.33, bki: 2.86, mixes: mixes(&[2, 3, 4, 5, 8]) },
    Table2Row { name: "gemm", description: "Matrix-Multiply", mblks: 1, serial_mblks: 0, input_mb: 192, ldst_pct: 30.77, bki: 5.29, mixes: mixes(&[2, 4, 5, 8, 9, 12, 13, 14]) },
    Table2Row { name: "2mm", description: "2-Matrix Multiplications", mblks: 2, serial_mblks: 1, input_mb: 2560, ldst_pct: 33.33, bki: 3.76, mixes: mixes(&[2, 4, 6, 7, 8, 9, 13]) },
    Table2Row { name: "syr2k", description: "Symmetric rank-2k operations", mblks: 1, serial_mblks: 0, input_mb: 1280, ldst_pct: 30.19, bki: 1.85, mixes: mixes(&[4, 8, 10, 11]) },
    Table2Row { name: "corr", description: "Correlation Computation", mblks: 4, serial_mblks: 1, input_mb: 640, ldst_pct: 33.04, bki: 2.79, mixes: mixes(&[4, 7, 9, 14]) },
];

/// Data-intensive vs compute-intensive split by computation complexity.
fn classify(bki: f64) -> MixClass {
    if bki >= 20.0 {
        MixClass::DataIntensive
    } else {
        MixClass::ComputeIntensive
    }
}

/// Knobs for preset generation. The characteristics table does not state
/// screens per microblock or output sizes, so both are parameters.
#[derive(Debug, Clone, Copy)]
pub struct PresetOptions {
    /// Identical instances launched per application.
    pub instance_count: u32,
    /// Screens per non-serial microblock (default: worker LWP count).
    pub screens_per_parallel_mblk: u32,
    /// Scales the table's per-instance input size.
    pub input_scale: f64,
    /// Output bytes per screen = input / this divisor (min one page group).
    pub output_divisor: u64,
    pub page_group_size: u64,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            instance_count: 6,
            screens_per_parallel_mblk: 6,
            input_scale: 1.0,
            output_divisor: 16,
            page_group_size: 64 * KIB,
        }
    }
}

impl PresetOptions {
    /// Defaults for heterogeneous mixes: four instances per kernel and inputs
    /// scaled to fit six full applications on the backbone.
    pub fn for_mix() -> Self {
        Self {
            instance_count: 4,
            input_scale: 0.25,
            ..Self::default()
        }
    }
}

fn align_up(v: u64, to: u64) -> u64 {
    v.div_ceil(to) * to
}

/// Builds one application from characteristics-table values.
///
/// Total instructions = input_bytes / bki * 1000, split evenly across
/// microblocks, then across the screens of each parallel microblock, rounding
/// up per screen so no screen is empty. Input ranges are tiled contiguously
/// (page-group aligned) from `base`, outputs after all inputs.
#[allow(clippy::too_many_arguments)]
pub fn preset_from_table(
    name: &str,
    input_mb: u64,
    bki: f64,
    ldst_pct: f64,
    mblks: u32,
    serial_mblks: u32,
    screens_per_parallel_mblk: u32,
) -> Result<ApplicationSpec, WorkloadError> {
    let opts = PresetOptions::default();
    build_application(
        name,
        0,
        1,
        input_mb,
        bki,
        ldst_pct,
        mblks,
        serial_mblks,
        screens_per_parallel_mblk,
        0,
        &opts,
    )
    .map(|(app, _)| app)
}

#[allow(clippy::too_many_arguments)]
fn build_application(
    name: &str,
    app_id: u32,
    instance_count: u32,
    input_mb: u64,
    bki: f64,
    ldst_pct: f64,
    mblks: u32,
    serial_mblks: u32,
    screens_per_parallel_mblk: u32,
    base: u64,
    opts: &PresetOptions,
) -> Result<(ApplicationSpec, u64), WorkloadError> {
    assert!(mblks > 0 && serial_mblks <= mblks && screens_per_parallel_mblk > 0);
    assert!(input_mb > 0 && bki > 0.0 && ldst_pct >= 0.0);

    let group = opts.page_group_size;
    let input_bytes = ((input_mb * MIB) as f64 * opts.input_scale) as u64;
    let total_instructions = ((input_bytes as f64) * 1000.0 / bki).ceil() as u64;
    let ldst_ratio = ldst_pct / 100.0;

    let screens_of = |mblk: u32| -> u32 {
        if mblk < serial_mblks {
            1
        } else {
            screens_per_parallel_mblk
        }
    };
    let total_screens: u32 = (0..mblks).map(screens_of).sum();
    if total_instructions < total_screens as u64 {
        return Err(WorkloadError::EmptyScreen {
            field: format!("preset {name}"),
        });
    }

    let per_mblk_instr = total_instructions as f64 / mblks as f64;
    let per_mblk_input = input_bytes / mblks as u64;

    // Inputs first, outputs after, all tiles disjoint and group-aligned.
    let mut microblocks = Vec::with_capacity(mblks as usize);
    let mut cursor = base;
    let mut input_tiles: Vec<Vec<ByteRange>> = Vec::new();
    for m in 0..mblks {
        let screens = screens_of(m);
        let per_screen_input = align_up(per_mblk_input.div_ceil(screens as u64).max(1), group);
        let mut tiles = Vec::with_capacity(screens as usize);
        for _ in 0..screens {
            tiles.push(ByteRange::new(cursor, per_screen_input));
            cursor += per_screen_input;
        }
        input_tiles.push(tiles);
    }
    for m in 0..mblks {
        let screens = screens_of(m);
        let per_screen_instr = (per_mblk_instr / screens as f64).ceil() as u64;
        let mut specs = Vec::with_capacity(screens as usize);
        for s in 0..screens {
            let input_range = input_tiles[m as usize][s as usize];
            let out_len = align_up((input_range.len / opts.output_divisor).max(1), group);
            let output_range = ByteRange::new(cursor, out_len);
            cursor += out_len;
            specs.push(ScreenSpec {
                screen_id: s,
                compute_instructions: per_screen_instr,
                ldst_ratio,
                input_range,
                output_range,
            });
        }
        microblocks.push(MicroblockSpec {
            microblock_id: m,
            is_serial: screens == 1,
            screens: specs,
        });
    }

    let max_footprint = microblocks
        .iter()
        .flat_map(|m| &m.screens)
        .map(|s| s.input_range.len + s.output_range.len)
        .max()
        .unwrap();
    let kernel = KernelDescriptor {
        app_id,
        kernel_id: 0,
        microblocks,
        section_table: SectionTable {
            data: max_footprint.max(64 * KIB),
            ..SectionTable::default()
        },
    };
    let app = ApplicationSpec {
        app_id,
        kernels: vec![kernel],
        instance_count,
    };
    let stride = app.instance_stride(group);
    let next_base = cursor + stride * (instance_count as u64 - 1);
    Ok((app, align_up(next_base, group)))
}

fn find_row(name: &str) -> Option<&'static Table2Row> {
    TABLE2.iter().find(|r| r.name.eq_ignore_ascii_case(name))
}

/// Single-application workload from a characteristics-table row.
pub fn preset(name: &str, opts: &PresetOptions) -> Result<WorkloadMix, WorkloadError> {
    let row = find_row(name).ok_or_else(|| WorkloadError::UnknownPreset(name.to_string()))?;
    let (app, _) = build_application(
        row.name,
        0,
        opts.instance_count,
        row.input_mb,
        row.bki,
        row.ldst_pct,
        row.mblks,
        row.serial_mblks,
        opts.screens_per_parallel_mblk,
        0,
        opts,
    )?;
    Ok(WorkloadMix {
        name: row.name.to_string(),
        classification: classify(row.bki),
        applications: vec![app],
    })
}

/// Heterogeneous workload: the six applications marked for the given mix
/// column, each launched `instance_per_kernel` times.
pub fn build_mix(mix_id: u32, instance_per_kernel: u32) -> Result<WorkloadMix, WorkloadError> {
    build_mix_with(mix_id, instance_per_kernel, &PresetOptions::for_mix())
}

pub fn build_mix_with(
    mix_id: u32,
    instance_per_kernel: u32,
    opts: &PresetOptions,
) -> Result<WorkloadMix, WorkloadError> {
    if !(1..=MIX_COUNT).contains(&mix_id) {
        return Err(WorkloadError::UnknownMix(mix_id));
    }
    let bit = 1u16 << (mix_id - 1);
    let mut applications = Vec::new();
    let mut base = 0;
    for row in TABLE2.iter().filter(|r| r.mixes & bit != 0) {
        let app_id = applications.len() as u32;
        let (app, next) = build_application(
            row.name,
            app_id,
            instance_per_kernel,
            row.input_mb,
            row.bki,
            row.ldst_pct,
            row.mblks,
            row.serial_mblks,
            opts.screens_per_parallel_mblk,
            base,
            opts,
        )?;
        applications.push(app);
        base = next;
    }
    Ok(WorkloadMix {
        name: format!("mix{mix_id}"),
        classification: MixClass::Mixed,
        applications,
    })
}

/// Member names of a mix column, in table order.
pub fn mix_members(mix_id: u32) -> Result<Vec<&'static str>, WorkloadError> {
    if !(1..=MIX_COUNT).contains(&mix_id) {
        return Err(WorkloadError::UnknownMix(mix_id));
    }
    let bit = 1u16 << (mix_id - 1);
    Ok(TABLE2.iter().filter(|r| r.mixes & bit != 0).map(|r| r.name).collect())
}

// Synthetic scheduler-demonstration workloads: unit screens (4000
// instructions = 1 us at default IPC/frequency), no flash I/O, four workers.

fn demo_screen(id: u32) -> ScreenSpec {
    ScreenSpec {
        screen_id: id,
        compute_instructions: 4000,
        ldst_ratio: 0.0,
        input_range: ByteRange::default(),
        output_range: ByteRange::default(),
    }
}

fn demo_kernel(app_id: u32, kernel_id: u32, screens_per_mblk: &[u32]) -> KernelDescriptor {
    KernelDescriptor {
        app_id,
        kernel_id,
        microblocks: screens_per_mblk
            .iter()
            .enumerate()
            .map(|(m, &n)| MicroblockSpec {
                microblock_id: m as u32,
                is_serial: n == 1,
                screens: (0..n).map(demo_screen).collect(),
            })
            .collect(),
        section_table: SectionTable::default(),
    }
}

/// Two applications of two serial-stream kernels each (durations 2, 2, 3 and
/// 3 units); on four workers the dynamic inter-kernel scheduler finishes the
/// second kernel of each application 2 and 3 units earlier than the static
/// one.
pub fn demo_inter_mix() -> WorkloadMix {
    WorkloadMix {
        name: "demo-inter".into(),
        classification: MixClass::ComputeIntensive,
        applications: vec![
            ApplicationSpec {
                app_id: 0,
                instance_count: 1,
                kernels: vec![demo_kernel(0, 0, &[2]), demo_kernel(0, 1, &[2])],
            },
            ApplicationSpec {
                app_id: 2,
                instance_count: 1,
                kernels: vec![demo_kernel(2, 0, &[3]), demo_kernel(2, 1, &[3])],
            },
        ],
    }
}

/// Intra-kernel scheduling scenario on four workers: in-order halves the
/// first kernel's latency vs the static scheduler, and out-of-order saves
/// exactly 2/4/4 units for the first three kernels.
pub fn demo_intra_mix() -> WorkloadMix {
    WorkloadMix {
        name: "demo-intra".into(),
        classification: MixClass::ComputeIntensive,
        applications: vec![
            ApplicationSpec {
                app_id: 0,
                instance_count: 1,
                kernels: vec![demo_kernel(0, 0, &[2, 2]), demo_kernel(0, 1, &[1, 1, 1])],
            },
            ApplicationSpec {
                app_id: 2,
                instance_count: 1,
                kernels: vec![demo_kernel(2, 0, &[4, 4]), demo_kernel(2, 1, &[4])],
            },
        ],
    }
}

/// Every preset name accepted by `by_name`.
pub fn preset_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = TABLE2.iter().map(|r| r.name).collect();
    names.push("demo-inter");
    names.push("demo-intra");
    names
}

pub fn by_name(name: &str, opts: &PresetOptions) -> Result<WorkloadMix, WorkloadError> {
    match name {
        "demo-inter" => Ok(demo_inter_mix()),
        "demo-intra" => Ok(demo_intra_mix()),
        other => preset(other, opts),
    }
}
