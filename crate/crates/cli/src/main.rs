//! `mle` — command-line front end for the endoscopy processing library.
//!
//! Every pipeline is a subcommand; all outputs land inside `--out-dir`, and
//! runs with identical inputs and `--seed` are byte-reproducible. Exit codes:
//! 0 success, 2 validation error, 1 runtime (I/O) error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use mle_core::imgcore::io as mio;
use mle_core::imgcore::{
    deinterlace, gaussian_smooth, subtract_dark, Field, IllumTag, SpectralCube,
    MLE_WAVELENGTHS_NM,
};
use mle_core::{acqsim, colorsim, lsci, pse, spectral, statkit, synthlab};
use mle_core::{MleError, Result};

#[derive(Parser)]
#[command(name = "mle", version, about = "Multi-contrast laser endoscopy processing toolkit")]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Directory receiving all outputs; created if missing.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Summary format printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dark subtraction, optional deinterlacing, Gaussian smoothing.
    Preprocess {
        /// Input field (.mlec).
        #[arg(long)]
        input: PathBuf,
        /// Dark field to subtract (.mlec).
        #[arg(long)]
        dark: Option<PathBuf>,
        /// Split into odd/even fields instead of one output.
        #[arg(long)]
        deinterlace: bool,
        /// Gaussian smoothing sigma in pixels (off when absent).
        #[arg(long)]
        smooth_sigma: Option<f64>,
    },
    /// Reflectance normalization, Beer-Lambert unmixing, StO2 map.
    Sto2 {
        /// Reflectance (or raw, with --white) cube (.mlec).
        #[arg(long)]
        cube: PathBuf,
        /// White-reference cube; when given, the input is treated as raw.
        #[arg(long)]
        white: Option<PathBuf>,
        /// Extinction coefficient CSV overriding the bundled table.
        #[arg(long)]
        extinction: Option<PathBuf>,
        /// Report ROI as r0:r1:c0:c1 (defaults to the whole map).
        #[arg(long)]
        roi: Option<String>,
    },
    /// Speckle contrast, flow mapping, registered temporal averaging.
    Lsci {
        /// Directory of speckle fields (.mlec), ordered by filename.
        #[arg(long)]
        frames: PathBuf,
        /// Spatial contrast window (odd).
        #[arg(long, default_value_t = 5)]
        window: usize,
        /// Temporal averaging window in frames (0 = all frames).
        #[arg(long, default_value_t = 0)]
        temporal: usize,
        /// Directory of registration reference fields (defaults to --frames).
        #[arg(long)]
        color_dir: Option<PathBuf>,
        /// First ROI (r0:r1:c0:c1) for RMS contrast.
        #[arg(long)]
        roi_a: Option<String>,
        /// Second ROI (r0:r1:c0:c1) for RMS contrast.
        #[arg(long)]
        roi_b: Option<String>,
    },
    /// Photometric stereo: normals, high-pass, height, relighting.
    Pse {
        /// Directory with one field (.mlec) per rig light, ordered by filename.
        #[arg(long = "in")]
        in_dir: PathBuf,
        /// Light rig JSON (defaults to the built-in three-light rig).
        #[arg(long)]
        rig: Option<PathBuf>,
        /// High-pass sigma in pixels.
        #[arg(long, default_value_t = 150.0)]
        sigma: f64,
        /// Virtual relight direction "x,y,z".
        #[arg(long, default_value = "0,0,1")]
        light: String,
    },
    /// Simulated color rendering of a spectral cube.
    Render {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, value_enum)]
        mode: RenderMode,
        /// SE weight file (required for --mode se).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// CIEDE2000-maximizing spectral-enhancement weight optimization.
    OptimizeSe {
        #[arg(long)]
        cube: PathBuf,
        /// Normal-tissue ROI (r0:r1:c0:c1).
        #[arg(long)]
        normal_roi: String,
        /// Lesion ROI (r0:r1:c0:c1).
        #[arg(long)]
        lesion_roi: String,
        /// Pixels sampled per ROI.
        #[arg(long, default_value_t = 64)]
        pixels: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 40)]
        iters: usize,
    },
    /// Deterministic acquisition-loop simulation with auto-exposure.
    Acqsim {
        /// Loop configuration JSON (defaults to the gamma-scene setup).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Synthetic phantom generation.
    Synth {
        /// Built-in phantom with default parameters.
        #[arg(long, value_enum, conflicts_with = "spec")]
        kind: Option<SynthKind>,
        /// Full phantom description JSON.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Paired comparisons of one family with Holm-Bonferroni adjustment.
    Stats {
        /// Long-format CSV (`sample_id,group,value`).
        #[arg(long)]
        table: PathBuf,
        /// Baseline group name.
        #[arg(long)]
        baseline: String,
        /// Comma-separated comparison groups (default: all other groups).
        #[arg(long)]
        compare: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderMode {
    Wle,
    Nbi,
    Se,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    SpeckleFlow,
    LambertianSurface,
    SpectralScene,
    Macbeth,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    weights: [Vec<f64>; 3],
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    if let Err(e) = std::fs::create_dir_all(&cli.out_dir) {
        eprintln!("error: cannot create out dir: {e}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(summary) => {
            match cli.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&summary).unwrap()),
                Format::Text => print_text(&summary, 0),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                MleError::Io(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn print_text(v: &Value, indent: usize) {
    match v {
        Value::Object(map) => {
            for (k, val) in map {
                match val {
                    Value::Object(_) => {
                        println!("{:indent$}{k}:", "");
                        print_text(val, indent + 2);
                    }
                    _ => println!("{:indent$}{k}: {val}", ""),
                }
            }
        }
        other => println!("{:indent$}{other}", ""),
    }
}

fn run(cli: &Cli) -> Result<Value> {
    let out = &cli.out_dir;
    match &cli.cmd {
        Cmd::Preprocess { input, dark, deinterlace: split, smooth_sigma } => {
            run_preprocess(out, input, dark.as_deref(), *split, *smooth_sigma)
        }
        Cmd::Sto2 { cube, white, extinction, roi } => {
            run_sto2(out, cube, white.as_deref(), extinction.as_deref(), roi.as_deref())
        }
        Cmd::Lsci { frames, window, temporal, color_dir, roi_a, roi_b } => run_lsci(
            out,
            frames,
            *window,
            *temporal,
            color_dir.as_deref(),
            roi_a.as_deref(),
            roi_b.as_deref(),
        ),
        Cmd::Pse { in_dir, rig, sigma, light } => {
            run_pse(out, in_dir, rig.as_deref(), *sigma, light)
        }
        Cmd::Render { cube, mode, weights } => run_render(out, cube, *mode, weights.as_deref()),
        Cmd::OptimizeSe { cube, normal_roi, lesion_roi, pixels, lr, iters } => {
            run_optimize_se(out, cube, normal_roi, lesion_roi, *pixels, *lr, *iters, cli.seed)
        }
        Cmd::Acqsim { config } => run_acqsim(out, config.as_deref()),
        Cmd::Synth { kind, spec } => run_synth(out, *kind, spec.as_deref(), cli.seed),
        Cmd::Stats { table, baseline, compare, alpha } => {
            run_stats(out, table, baseline, compare.as_deref(), *alpha, cli.seed)
        }
    }
}

/// Parses "r0:r1:c0:c1" into row/column ranges.
fn parse_roi(s: &str) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let parts: Vec<usize> = s
        .split(':')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| MleError::InvalidInput(format!("bad ROI spec '{s}', want r0:r1:c0:c1")))?;
    if parts.len() != 4 || parts[0] >= parts[1] || parts[2] >= parts[3] {
        return Err(MleError::InvalidInput(format!("bad ROI spec '{s}', want r0:r1:c0:c1")));
    }
    Ok((parts[0]..parts[1], parts[2]..parts[3]))
}

/// All .mlec fields in a directory, sorted by filename.
fn read_field_dir(dir: &Path) -> Result<Vec<Field>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "mlec").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(MleError::InvalidInput(format!("no .mlec files in {}", dir.display())));
    }
    paths.iter().map(|p| mio::read_field(p)).collect()
}

fn masked_stats(map: &Array2<f64>, mask: &Array2<bool>, roi: Option<&str>) -> Result<Value> {
    let (rows, cols) = match roi {
        Some(s) => parse_roi(s)?,
        None => (0..map.nrows(), 0..map.ncols()),
    };
    let mut vals = Vec::new();
    for r in rows.clone() {
        for c in cols.clone() {
            if mask[(r, c)] {
                vals.push(map[(r, c)]);
            }
        }
    }
    if vals.is_empty() {
        return Ok(json!({ "n": 0 }));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(json!({ "n": vals.len(), "mean": mean, "std": var.sqrt() }))
}

fn run_preprocess(
    out: &Path,
    input: &Path,
    dark: Option<&Path>,
    split: bool,
    smooth_sigma: Option<f64>,
) -> Result<Value> {
    let mut field = mio::read_field(input)?;
    if let Some(d) = dark {
        let dark_field = mio::read_field(d)?;
        field = subtract_dark(&field, &dark_field)?;
    }
    let smooth = |f: &Field| -> Field {
        match smooth_sigma {
            Some(s) => {
                let size = 2 * (3.0 * s).ceil() as usize + 1;
                gaussian_smooth(f, size, s)
            }
            None => f.clone(),
        }
    };
    let mut written = Vec::new();
    if split {
        let (odd, even) = deinterlace(&field)?;
        for (name, f) in [("odd.mlec", smooth(&odd)), ("even.mlec", smooth(&even))] {
            mio::write_field(&out.join(name), &f)?;
            written.push(name);
        }
    } else {
        mio::write_field(&out.join("preprocessed.mlec"), &smooth(&field))?;
        written.push("preprocessed.mlec");
    }
    Ok(json!({
        "command": "preprocess",
        "height": field.height(),
        "width": field.width(),
        "outputs": written,
    }))
}

fn run_sto2(
    out: &Path,
    cube_path: &Path,
    white: Option<&Path>,
    extinction: Option<&Path>,
    roi: Option<&str>,
) -> Result<Value> {
    let mut cube = mio::read_cube(cube_path)?;
    if let Some(wp) = white {
        let white_cube = mio::read_cube(wp)?;
        let to_fields = |c: &SpectralCube| -> Result<Vec<(f64, Field)>> {
            (0..c.n_wavelengths())
                .map(|i| {
                    Ok((c.wavelengths_nm[i], Field::from_plane(c.plane(i), i as u64, IllumTag::white())?))
                })
                .collect()
        };
        let ones = vec![1.0; cube.n_wavelengths()];
        cube = spectral::normalize_reflectance(
            &to_fields(&cube)?,
            &to_fields(&white_cube)?,
            &ones,
            &ones,
        )?;
    }
    let table = match extinction {
        Some(p) => spectral::ExtinctionTable::from_csv_path(p)?.aligned_to(&cube.wavelengths_nm)?,
        None => spectral::ExtinctionTable::builtin().aligned_to(&cube.wavelengths_nm)?,
    };
    let absorb = spectral::absorbance(&cube)?;
    let maps = spectral::unmix(&absorb, &cube.mask, &table)?;

    let mut sto2_field = Field::from_plane(maps.sto2.clone(), 0, IllumTag::white())?;
    sto2_field.mask = maps.mask.clone();
    mio::write_field(&out.join("sto2.mlec"), &sto2_field)?;
    mio::write_false_color_png(&out.join("sto2.png"), &maps.sto2, &maps.mask, 0.0, 1.0)?;

    Ok(json!({
        "command": "sto2",
        "wavelengths": cube.wavelengths_nm.len(),
        "roi_sto2": masked_stats(&maps.sto2, &maps.mask, roi)?,
        "outputs": ["sto2.mlec", "sto2.png"],
    }))
}

fn percentile(vals: &mut Vec<f64>, q: f64) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals[((vals.len() - 1) as f64 * q) as usize]
}

#[allow(clippy::too_many_arguments)]
fn run_lsci(
    out: &Path,
    frames_dir: &Path,
    window: usize,
    temporal: usize,
    color_dir: Option<&Path>,
    roi_a: Option<&str>,
    roi_b: Option<&str>,
) -> Result<Value> {
    let frames = read_field_dir(frames_dir)?;
    let colors = match color_dir {
        Some(d) => read_field_dir(d)?,
        None => frames.clone(),
    };
    let contrasts: Vec<lsci::ContrastMap> = frames
        .par_iter()
        .map(|f| lsci::speckle_contrast(f, window))
        .collect::<Result<_>>()?;
    let flows: Vec<lsci::FlowMap> = contrasts.iter().map(lsci::flow_from_contrast).collect();
    let t_window = if temporal == 0 { flows.len() } else { temporal };
    let avg = lsci::temporal_average(&flows, &colors, t_window)?;

    let center = &contrasts[contrasts.len() - 1 - (t_window.min(flows.len()) - 1) / 2];
    mio::write_false_color_png(&out.join("contrast.png"), &center.k, &center.mask, 0.0, 1.2)?;
    let mut flow_field = Field::from_plane(avg.v.clone(), 0, IllumTag::white())?;
    flow_field.mask = avg.mask.clone();
    mio::write_field(&out.join("flow_avg.mlec"), &flow_field)?;
    let mut masked: Vec<f64> =
        avg.v.indexed_iter().filter(|(i, _)| avg.mask[*i]).map(|(_, v)| *v).collect();
    let vmax = percentile(&mut masked, 0.99).max(1e-12);
    mio::write_false_color_png(&out.join("flow_avg.png"), &avg.v, &avg.mask, 0.0, vmax)?;

    let rms = match (roi_a, roi_b) {
        (Some(a), Some(b)) => {
            Some(lsci::rms_contrast(&avg.v, &avg.mask, parse_roi(a)?, parse_roi(b)?)?)
        }
        (None, None) => None,
        _ => {
            return Err(MleError::InvalidInput(
                "RMS contrast needs both --roi-a and --roi-b".into(),
            ))
        }
    };
    Ok(json!({
        "command": "lsci",
        "frames": frames.len(),
        "frames_averaged": avg.frames_averaged,
        "mean_contrast": masked_stats(&center.k, &center.mask, None)?,
        "rms_contrast": rms,
        "outputs": ["contrast.png", "flow_avg.mlec", "flow_avg.png"],
    }))
}

fn run_pse(
    out: &Path,
    in_dir: &Path,
    rig_path: Option<&Path>,
    sigma: f64,
    light: &str,
) -> Result<Value> {
    let fields = read_field_dir(in_dir)?;
    let rig = match rig_path {
        Some(p) => pse::LightRig::from_json_str(&std::fs::read_to_string(p)?)?,
        None => pse::LightRig::default_rig(),
    };
    let light_dir: Vec<f64> = light
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| MleError::InvalidInput(format!("bad light spec '{light}', want x,y,z")))?;
    if light_dir.len() != 3 {
        return Err(MleError::InvalidInput(format!("bad light spec '{light}', want x,y,z")));
    }

    let (clean, specular) = pse::inpaint_speculars(&fields, pse::SPECULAR_THRESHOLD)?;
    let sf = pse::solve_normals(&clean, &rig)?;
    let filtered = pse::highpass_normals(&sf, sigma);
    let height = pse::integrate_normals(&filtered)?;
    let relit =
        pse::render_relit(&height.height, [light_dir[0], light_dir[1], light_dir[2]], &pse::PhongParams::default(), None)?;

    let rgb = pse::normals_to_rgb(&filtered.normals);
    let rgb_f = rgb.mapv(|b| b as f64 / 255.0);
    mio::write_rgb_png(&out.join("normals.png"), &rgb_f)?;
    let mut height_field = Field::from_plane(height.height.clone(), 0, IllumTag::white())?;
    height_field.mask = filtered.mask.clone();
    mio::write_field(&out.join("height.mlec"), &height_field)?;
    mio::write_rgb_png(&out.join("relit.png"), &relit)?;

    let specular_fraction =
        specular.iter().filter(|&&s| s).count() as f64 / specular.len() as f64;
    Ok(json!({
        "command": "pse",
        "images": fields.len(),
        "specular_fraction": specular_fraction,
        "clamped_gradients": height.clamped.iter().filter(|&&c| c).count(),
        "outputs": ["normals.png", "height.mlec", "relit.png"],
    }))
}

fn run_render(out: &Path, cube_path: &Path, mode: RenderMode, weights: Option<&Path>) -> Result<Value> {
    let cube = mio::read_cube(cube_path)?;
    let (name, rgb) = match mode {
        RenderMode::Wle => {
            let resp = colorsim::SpectralResponse::builtin();
            ("render_wle.png", colorsim::render_color(&cube, &resp)?)
        }
        RenderMode::Nbi => {
            let resp = colorsim::SpectralResponse::builtin_nbi();
            ("render_nbi.png", colorsim::render_nbi(&cube, &resp)?)
        }
        RenderMode::Se => {
            let wp = weights.ok_or_else(|| {
                MleError::InvalidInput("--mode se needs --weights from optimize-se".into())
            })?;
            let wf: WeightsFile = serde_json::from_str(&std::fs::read_to_string(wp)?)?;
            let n = cube.n_wavelengths();
            if wf.weights.iter().any(|row| row.len() != n) {
                return Err(MleError::DimensionMismatch(format!(
                    "weights are not 3 x {n}"
                )));
            }
            let resp = colorsim::SpectralResponse {
                wavelengths_nm: cube.wavelengths_nm.clone(),
                illum: vec![1.0; n],
                bayer: wf.weights,
                omega: [1.0, 1.0, 1.0],
            };
            ("render_se.png", colorsim::render_color(&cube, &resp)?)
        }
    };
    let norm_mode = match mode {
        RenderMode::Se => colorsim::DisplayNorm::PixelMax,
        _ => colorsim::DisplayNorm::ImageMean,
    };
    let (display, _) = colorsim::normalize_display(&rgb, norm_mode);
    mio::write_rgb_png(&out.join(name), &display)?;
    Ok(json!({
        "command": "render",
        "height": cube.height(),
        "width": cube.width(),
        "mean_intensity": display.mean().unwrap_or(0.0),
        "outputs": [name],
    }))
}

fn roi_mask(shape: (usize, usize), spec: &str) -> Result<Array2<bool>> {
    let (rows, cols) = parse_roi(spec)?;
    if rows.end > shape.0 || cols.end > shape.1 {
        return Err(MleError::InvalidInput(format!("ROI '{spec}' exceeds {shape:?}")));
    }
    let mut m = Array2::from_elem(shape, false);
    for r in rows {
        for c in cols.clone() {
            m[(r, c)] = true;
        }
    }
    Ok(m)
}

#[allow(clippy::too_many_arguments)]
fn run_optimize_se(
    out: &Path,
    cube_path: &Path,
    normal_roi: &str,
    lesion_roi: &str,
    pixels: usize,
    lr: f64,
    iters: usize,
    seed: u64,
) -> Result<Value> {
    let cube = mio::read_cube(cube_path)?;
    let shape = (cube.height(), cube.width());
    let n = cube.n_wavelengths();
    let init = [vec![1.0; n], vec![1.0; n], vec![1.0; n]];
    let result = colorsim::optimize_se(
        &cube,
        &roi_mask(shape, normal_roi)?,
        &roi_mask(shape, lesion_roi)?,
        pixels,
        &init,
        lr,
        iters,
        seed,
    )?;

    let wf = WeightsFile { weights: result.weights.clone() };
    std::fs::write(out.join("weights.json"), serde_json::to_string_pretty(&wf)?)?;
    let mut trace = String::from("step,objective\n");
    for (i, v) in result.trace.iter().enumerate() {
        trace.push_str(&format!("{i},{v:.6}\n"));
    }
    std::fs::write(out.join("trace.csv"), trace)?;

    Ok(json!({
        "command": "optimize-se",
        "initial_objective": result.trace.first().copied().unwrap_or(0.0),
        "final_objective": result.trace.last().copied().unwrap_or(0.0),
        "steps": result.trace.len() - 1,
        "outputs": ["weights.json", "trace.csv"],
    }))
}

fn run_acqsim(out: &Path, config: Option<&Path>) -> Result<Value> {
    let cfg: acqsim::AcqConfig = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => acqsim::AcqConfig::default(),
    };
    let log = acqsim::run_acquisition_loop(&cfg)?;
    std::fs::write(out.join("acq_log.csv"), log.to_csv_string())?;

    let settle = log
        .entries
        .iter()
        .find(|e| (e.mean_intensity - acqsim::I_TARGET).abs() <= 1.0)
        .map(|e| e.frame_id);
    let last = log.entries.last().unwrap();
    Ok(json!({
        "command": "acqsim",
        "frames": log.entries.len(),
        "updates": log.update_frames.len(),
        "dropped_packets": log.dropped_packets,
        "settle_frame": settle,
        "final_pulse_us": last.pulse_us,
        "final_intensity": last.mean_intensity,
        "outputs": ["acq_log.csv"],
    }))
}

fn default_spec(kind: SynthKind, seed: u64) -> synthlab::PhantomSpec {
    match kind {
        SynthKind::SpeckleFlow => synthlab::PhantomSpec::SpeckleFlow {
            height: 96,
            width: 96,
            velocity_mm_s: 5.0,
            exposure_ms: 5.0,
            frames: 10,
            seed,
        },
        SynthKind::LambertianSurface => synthlab::PhantomSpec::LambertianSurface {
            height: 128,
            width: 128,
            bump_amplitude: 4.0,
            bump_sigma: 20.0,
            albedo: 0.8,
            noise_sigma: 0.0,
            seed,
        },
        SynthKind::SpectralScene => synthlab::PhantomSpec::SpectralScene {
            height: 128,
            width: 128,
            sto2_low: 0.4,
            sto2_high: 0.9,
            thb: 1e-5,
            offset: 0.1,
            noise_sigma: 0.0,
            seed,
        },
        SynthKind::Macbeth => synthlab::PhantomSpec::Macbeth { patch_px: 24, seed },
    }
}

fn run_synth(out: &Path, kind: Option<SynthKind>, spec: Option<&Path>, seed: u64) -> Result<Value> {
    let spec = match (kind, spec) {
        (Some(k), None) => default_spec(k, seed),
        (None, Some(p)) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        _ => {
            return Err(MleError::InvalidInput(
                "synth needs exactly one of --kind or --spec".into(),
            ))
        }
    };
    let mut outputs: Vec<String> = Vec::new();
    let summary = match &spec {
        synthlab::PhantomSpec::SpeckleFlow { height, width, velocity_mm_s, exposure_ms, frames, seed } => {
            let ph = synthlab::gen_dynamic_speckle(
                *height, *width, *velocity_mm_s, *exposure_ms, *frames, *seed,
            )?;
            for (i, f) in ph.frames.iter().enumerate() {
                let name = format!("frame_{i:03}.mlec");
                mio::write_field(&out.join(&name), f)?;
                outputs.push(name);
            }
            // PNG rather than .mlec so frame-directory consumers do not
            // pick the mask up as a frame.
            let chan = ph.channel.mapv(|b| if b { 1.0 } else { 0.0 });
            let all = Array2::from_elem(chan.dim(), true);
            mio::write_false_color_png(&out.join("channel.png"), &chan, &all, 0.0, 1.0)?;
            outputs.push("channel.png".into());
            json!({ "frames": ph.frames.len() })
        }
        synthlab::PhantomSpec::LambertianSurface {
            height, width, bump_amplitude, bump_sigma, albedo, noise_sigma, seed,
        } => {
            let hm = synthlab::bump_height_map(*height, *width, *bump_amplitude, *bump_sigma);
            let rig = pse::LightRig::default_rig();
            let ph = synthlab::gen_lambertian_scene(&hm, &rig, *albedo, *noise_sigma, *seed)?;
            for (i, f) in ph.images.iter().enumerate() {
                let name = format!("img_{i}.mlec");
                mio::write_field(&out.join(&name), f)?;
                outputs.push(name);
            }
            mio::write_field(
                &out.join("truth_height.mlec"),
                &Field::from_plane(ph.height_map.clone(), 0, IllumTag::white())?,
            )?;
            let (h, w, _) = ph.normals.dim();
            let normals_field = Field::new(ph.normals.clone(), 0, IllumTag::white())?;
            mio::write_field(&out.join("truth_normals.mlec"), &normals_field)?;
            outputs.push("truth_height.mlec".into());
            outputs.push("truth_normals.mlec".into());
            json!({ "lights": ph.images.len(), "height": h, "width": w })
        }
        synthlab::PhantomSpec::SpectralScene {
            height, width, sto2_low, sto2_high, thb, offset, noise_sigma, seed,
        } => {
            let sto2 = Array2::from_shape_fn((*height, *width), |(_, c)| {
                sto2_low + (sto2_high - sto2_low) * c as f64 / (*width - 1).max(1) as f64
            });
            let thb_map = Array2::from_elem((*height, *width), *thb);
            let off_map = Array2::from_elem((*height, *width), *offset);
            let table = spectral::ExtinctionTable::builtin().aligned_to(&MLE_WAVELENGTHS_NM)?;
            let cube =
                synthlab::gen_spectral_scene(&sto2, &thb_map, &off_map, &table, *noise_sigma, *seed)?;
            mio::write_cube(&out.join("cube.mlec"), &cube)?;
            mio::write_field(
                &out.join("truth_sto2.mlec"),
                &Field::from_plane(sto2, 0, IllumTag::white())?,
            )?;
            outputs.push("cube.mlec".into());
            outputs.push("truth_sto2.mlec".into());
            json!({ "wavelengths": cube.n_wavelengths() })
        }
        synthlab::PhantomSpec::Macbeth { patch_px, .. } => {
            let (cube, patches) = synthlab::gen_macbeth_cube(*patch_px)?;
            mio::write_cube(&out.join("cube.mlec"), &cube)?;
            let mut csv = String::from("patch,row0,row1,col0,col1\n");
            for p in &patches {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    p.name, p.rows.start, p.rows.end, p.cols.start, p.cols.end
                ));
            }
            std::fs::write(out.join("patches.csv"), csv)?;
            outputs.push("cube.mlec".into());
            outputs.push("patches.csv".into());
            json!({ "patches": patches.len() })
        }
    };
    Ok(json!({
        "command": "synth",
        "phantom": summary,
        "outputs": outputs,
    }))
}

fn run_stats(
    out: &Path,
    table: &Path,
    baseline: &str,
    compare: Option<&str>,
    alpha: f64,
    seed: u64,
) -> Result<Value> {
    let records = statkit::parse_long_csv(&std::fs::read_to_string(table)?)?;
    let comparisons: Vec<String> = match compare {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => {
            let mut groups: Vec<String> = Vec::new();
            for r in &records {
                if r.group != baseline && !groups.contains(&r.group) {
                    groups.push(r.group.clone());
                }
            }
            groups
        }
    };
    if comparisons.is_empty() {
        return Err(MleError::InvalidInput("no comparison groups found".into()));
    }
    let refs: Vec<&str> = comparisons.iter().map(|s| s.as_str()).collect();
    let rows = statkit::compare_family(&records, baseline, &refs, alpha, seed)?;
    std::fs::write(out.join("comparisons.csv"), statkit::comparison_csv(&rows))?;

    let significant = rows.iter().filter(|r| r.p_adj < alpha).count();
    Ok(json!({
        "command": "stats",
        "baseline": baseline,
        "comparisons": rows.len(),
        "significant_adjusted": significant,
        "outputs": ["comparisons.csv"],
    }))
}
