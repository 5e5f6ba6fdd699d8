use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use polardet::codec::{decode_polar, encode_polar, PolarCode};
use polardet::dataio::{
    format_dota_annotation, format_result_line, merge_patch_detections, parse_dota_annotation,
    parse_dota_results, parse_tile_name, remap_annotations_to_window, split_windows, tile_name,
    Annotation, ResultRecord, Window,
};
use polardet::eval::{evaluate_obb_map, ApMetric, EvalConfig, ScoredDet};
use polardet::experiments::{
    boundary_case, compare_representations, comparison_csv, curve_csv, iou_angle_curve, trace_csv,
    FitConfig, SweepConfig,
};
use polardet::geometry::{iou_quad, Point2, Quad};
use polardet::postprocess::{rotated_nms, Detection};
use polardet::targets::{build_targets, TargetParams};
use polardet::{ErrorKind, Exec};

#[derive(Parser)]
#[command(name = "polardet", version, about = "Polar oriented-box toolkit")]
struct Cli {
    /// Seed for randomized commands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores). Never changes output.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// DOTA annotation file -> polar-code CSV.
    Encode {
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        stride: u32,
        #[command(flatten)]
        out: OutArg,
    },
    /// Polar-code CSV -> DOTA annotation file.
    Decode {
        input: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// IoU of two convex quads given as 16 numbers.
    Iou {
        #[arg(num_args = 16, allow_negative_numbers = true, required = true)]
        coords: Vec<f64>,
    },
    /// Rotated NMS over a Task1 result file, per image.
    Nms {
        input: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        iou_thresh: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Annotation file -> binary target-map dump with a JSON header line.
    Targets {
        input: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        /// Comma-separated class names; the index is the channel.
        #[arg(long, value_delimiter = ',', required = true)]
        classes: Vec<String>,
        #[arg(long, default_value_t = 4)]
        stride: u32,
        #[arg(long, default_value_t = 0.7)]
        min_overlap: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Cut annotations of large images into overlapping patches.
    Split {
        /// Directory of `<stem>.txt` annotation files.
        #[arg(long)]
        ann_dir: PathBuf,
        /// Lines of `stem width height`.
        #[arg(long)]
        sizes: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1024)]
        patch: usize,
        #[arg(long, default_value_t = 200)]
        overlap: usize,
        /// Objects with less of their area inside a patch become difficult.
        #[arg(long, default_value_t = 0.7)]
        keep_ratio: f64,
    },
    /// Merge per-patch Task1 results back onto the source images.
    Merge {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        iou_thresh: f64,
    },
    /// Per-class AP and mAP of Task1 results against DOTA ground truth.
    Eval {
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        det_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Voc07)]
        metric: Metric,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Class vocabulary; defaults to every class seen in either input.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[command(flatten)]
        out: OutArg,
    },
    /// IoU against angle bias for several aspect ratios.
    Curves {
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,8")]
        ars: Vec<f64>,
        #[arg(long, default_value_t = 45.0)]
        bias_max: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Fit box representations by gradient descent on their parameters.
    Fit(FitArgs),
}

#[derive(Args)]
struct OutArg {
    /// Output file (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Trace the rotated/swapped boundary case instead of the sweep.
    #[arg(long)]
    boundary: bool,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    /// Boundary case long side.
    #[arg(long, default_value_t = 40.0)]
    long: f64,
    /// Boundary case short side.
    #[arg(long, default_value_t = 10.0)]
    short: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Voc07,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Table,
}

/// Bad arguments that clap cannot catch.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<polardet::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet {
            log::LevelFilter::Error
        } else {
            log::LevelFilter::Warn
        })
        .parse_env("POLARDET_LOG")
        .init();
    match with_jobs(cli.jobs, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(feature = "parallel")]
fn with_jobs<T: Send>(
    jobs: usize,
    f: impl FnOnce() -> anyhow::Result<T> + Send,
) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_jobs<T: Send>(
    _jobs: usize,
    f: impl FnOnce() -> anyhow::Result<T> + Send,
) -> anyhow::Result<T> {
    f()
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: &OutArg, bytes: &[u8]) -> anyhow::Result<()> {
    match &out.output {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(bytes)?;
            so.flush()?;
            Ok(())
        }
    }
}

fn read_annotations(path: &Path) -> anyhow::Result<Vec<Annotation>> {
    parse_dota_annotation(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// `*.txt` files of a directory, sorted by name.
fn txt_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "txt") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `Task1_<class>.txt` files of a directory as `(class, records)`.
fn read_task1_dir(dir: &Path) -> anyhow::Result<Vec<(String, Vec<ResultRecord>)>> {
    let mut out = Vec::new();
    for p in txt_files(dir)? {
        let stem = file_stem(&p);
        let Some(class) = stem.strip_prefix("Task1_") else {
            log::warn!("ignoring {}", p.display());
            continue;
        };
        let recs =
            parse_dota_results(&read(&p)?).with_context(|| format!("parsing {}", p.display()))?;
        out.push((class.to_string(), recs));
    }
    Ok(out)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let exec = Exec::default();
    match &cli.cmd {
        Command::Encode { input, stride, out } => {
            if *stride == 0 {
                return Err(usage("--stride must be positive"));
            }
            emit(
                out,
                encode_csv(&read_annotations(input)?, *stride)?.as_bytes(),
            )
        }
        Command::Decode { input, out } => emit(
            out,
            format_dota_annotation(&decode_csv(&read(input)?)?).as_bytes(),
        ),
        Command::Iou { coords } => {
            let a = Quad::from_coords(coords[..8].try_into()?);
            let b = Quad::from_coords(coords[8..].try_into()?);
            println!("{:.6}", iou_quad(&a, &b)?);
            Ok(())
        }
        Command::Nms {
            input,
            iou_thresh,
            out,
        } => {
            check_unit("--iou-thresh", *iou_thresh)?;
            let recs = parse_dota_results(&read(input)?)
                .with_context(|| format!("parsing {}", input.display()))?;
            let mut by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
            for r in &recs {
                by_image.entry(&r.image).or_default().push(Detection {
                    class_id: 0,
                    score: r.score,
                    quad: r.quad,
                });
            }
            let mut body = String::new();
            for (image, dets) in &by_image {
                for d in rotated_nms(dets, *iou_thresh) {
                    body.push_str(&format_result_line(image, d.score, &d.quad));
                    body.push('\n');
                }
            }
            emit(out, body.as_bytes())
        }
        Command::Targets {
            input,
            width,
            height,
            classes,
            stride,
            min_overlap,
            out,
        } => {
            let annots = read_annotations(input)?;
            let mut objects = Vec::with_capacity(annots.len());
            for a in &annots {
                let id = classes
                    .iter()
                    .position(|c| c == &a.category)
                    .ok_or_else(|| usage(format!("class '{}' not in --classes", a.category)))?;
                objects.push((a.quad, id));
            }
            let params = TargetParams {
                stride: *stride,
                min_overlap: *min_overlap,
            };
            let maps = build_targets(&objects, *width, *height, classes.len(), &params)?;
            let (rows, cols) = maps.grid_shape();
            let shapes: Vec<serde_json::Value> = maps
                .planes()
                .iter()
                .map(|(name, a)| serde_json::json!({ "name": name, "shape": a.shape() }))
                .collect();
            let header = serde_json::json!({
                "stride": stride,
                "grid": [rows, cols],
                "classes": classes,
                "dtype": "f32le",
                "layout": "row-major",
                "maps": shapes,
                "skipped": maps.skipped,
            });
            let mut bytes = serde_json::to_vec(&header)?;
            bytes.push(b'\n');
            bytes.extend(maps.to_le_f32_bytes());
            emit(out, &bytes)
        }
        Command::Split {
            ann_dir,
            sizes,
            out_dir,
            patch,
            overlap,
            keep_ratio,
        } => {
            if patch <= overlap {
                return Err(usage(format!(
                    "--patch ({patch}) must exceed --overlap ({overlap})"
                )));
            }
            check_unit("--keep-ratio", *keep_ratio)?;
            split(ann_dir, sizes, out_dir, *patch, *overlap, *keep_ratio)
        }
        Command::Merge {
            in_dir,
            out_dir,
            iou_thresh,
        } => {
            check_unit("--iou-thresh", *iou_thresh)?;
            merge(in_dir, out_dir, *iou_thresh)
        }
        Command::Eval {
            gt_dir,
            det_dir,
            metric,
            iou,
            classes,
            format,
            out,
        } => {
            check_unit("--iou", *iou)?;
            let mut gt = BTreeMap::new();
            for p in txt_files(gt_dir)? {
                gt.insert(file_stem(&p), read_annotations(&p)?);
            }
            let mut dets: BTreeMap<String, Vec<ScoredDet>> = BTreeMap::new();
            for (class, recs) in read_task1_dir(det_dir)? {
                dets.entry(class)
                    .or_default()
                    .extend(recs.into_iter().map(|r| ScoredDet {
                        image: r.image,
                        score: r.score,
                        quad: r.quad,
                    }));
            }
            let classes = match classes {
                Some(c) => c.clone(),
                None => {
                    let mut all: Vec<String> = gt
                        .values()
                        .flatten()
                        .map(|a| a.category.clone())
                        .chain(dets.keys().cloned())
                        .collect();
                    all.sort();
                    all.dedup();
                    all
                }
            };
            let cfg = EvalConfig {
                iou_threshold: *iou,
                metric: match metric {
                    Metric::Voc07 => ApMetric::Voc07,
                    Metric::All => ApMetric::AllPoints,
                },
                exec,
                ..Default::default()
            };
            let report = evaluate_obb_map(&gt, &dets, &classes, &cfg);
            let text = match format {
                Format::Csv => report.to_csv(),
                Format::Table => report.to_table(),
            };
            emit(out, text.as_bytes())
        }
        Command::Curves {
            ars,
            bias_max,
            step,
            out,
        } => emit(
            out,
            curve_csv(&iou_angle_curve(ars, *bias_max, *step)?).as_bytes(),
        ),
        Command::Fit(f) => {
            if !(f.lr > 0.0 && f.lr.is_finite()) {
                return Err(usage("--lr must be positive"));
            }
            let fit = FitConfig {
                lr: f.lr,
                max_iter: f.max_iter,
                ..Default::default()
            };
            let text = if f.boundary {
                if !(f.short > 0.0 && f.long >= f.short) {
                    return Err(usage("need 0 < --short <= --long"));
                }
                let b = boundary_case(Point2::new(0.0, 0.0), f.long, f.short, &fit)?;
                trace_csv(&[&b.single_angle, &b.polar])
            } else {
                let sweep = SweepConfig {
                    fit,
                    ..Default::default()
                };
                comparison_csv(&compare_representations(f.samples, &sweep, cli.seed, exec)?)
            };
            emit(&f.out, text.as_bytes())
        }
    }
}

fn check_unit(flag: &str, v: f64) -> anyhow::Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(usage(format!("{flag} must be in [0, 1], got {v}")))
    }
}

const CODE_HEADER: &str =
    "category,difficult,cx,cy,offset_x,offset_y,theta1,theta2,theta3,theta4,shorter,ratio1,ratio2,ratio3,ratio4";

// Ten decimals keep the decoded vertices well inside 1e-4 even for thin boxes,
// where a ratio error is amplified by d/r.
fn encode_csv(annots: &[Annotation], stride: u32) -> anyhow::Result<String> {
    let mut s = format!("{CODE_HEADER}\n");
    for (i, a) in annots.iter().enumerate() {
        if a.category.contains(',') {
            bail!(polardet::Error::Parse {
                line: i + 1,
                msg: format!("category '{}' contains a comma", a.category),
            });
        }
        let c = encode_polar(&a.quad, stride).with_context(|| format!("object {}", i + 1))?;
        let _ = write!(s, "{},{}", a.category, u8::from(a.difficult));
        for v in [c.center.x, c.center.y, c.offset[0], c.offset[1]]
            .into_iter()
            .chain(c.theta)
            .chain([c.s])
            .chain(c.r)
        {
            let _ = write!(s, ",{v:.10}");
        }
        s.push('\n');
    }
    Ok(s)
}

fn decode_csv(text: &str) -> anyhow::Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("category,")) {
            continue;
        }
        let bad = |msg: String| polardet::Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            bail!(bad(format!("expected 15 fields, found {}", f.len())));
        }
        let difficult = match f[1] {
            "0" => false,
            "1" => true,
            other => bail!(bad(format!("bad difficult flag '{other}'"))),
        };
        let mut v = [0.0; 13];
        for (slot, tok) in v.iter_mut().zip(&f[2..]) {
            *slot = tok
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| bad(format!("bad number '{tok}'")))?;
        }
        let code = PolarCode {
            center: Point2::new(v[0], v[1]),
            offset: [v[2], v[3]],
            theta: [v[4], v[5], v[6], v[7]],
            s: v[8],
            r: [v[9], v[10], v[11], v[12]],
        };
        out.push(Annotation {
            quad: decode_polar(&code).with_context(|| format!("line {}", i + 1))?,
            category: f[0].to_string(),
            difficult,
        });
    }
    Ok(out)
}

fn split(
    ann_dir: &Path,
    sizes: &Path,
    out_dir: &Path,
    patch: usize,
    overlap: usize,
    keep: f64,
) -> anyhow::Result<()> {
    let mut images = Vec::new();
    for (i, line) in read(sizes)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let parsed = match f.as_slice() {
            [stem, w, h] => w
                .parse::<usize>()
                .ok()
                .zip(h.parse::<usize>().ok())
                .map(|(w, h)| (stem.to_string(), w, h)),
            _ => None,
        };
        let (stem, w, h) = parsed.ok_or_else(|| polardet::Error::Parse {
            line: i + 1,
            msg: format!("expected 'stem width height' in {}", sizes.display()),
        })?;
        images.push((stem, w, h));
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut index = String::new();
    for (stem, w, h) in &images {
        let annots = read_annotations(&ann_dir.join(format!("{stem}.txt")))?;
        for win in split_windows(*w, *h, patch, overlap)? {
            let name = tile_name(stem, &win);
            let local = remap_annotations_to_window(&annots, &win, keep);
            let path = out_dir.join(format!("{name}.txt"));
            fs::write(&path, format_dota_annotation(&local))
                .with_context(|| format!("writing {}", path.display()))?;
            let _ = writeln!(index, "{name} {} {}", win.w, win.h);
        }
    }
    let path = out_dir.join("tiles.list");
    fs::write(&path, index).with_context(|| format!("writing {}", path.display()))
}

fn merge(in_dir: &Path, out_dir: &Path, iou: f64) -> anyhow::Result<()> {
    let per_class = read_task1_dir(in_dir)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for (class, recs) in per_class {
        // stem -> window -> detections, all ordered
        let mut grouped: BTreeMap<String, BTreeMap<(usize, usize), Vec<Detection>>> =
            BTreeMap::new();
        for r in recs {
            let (stem, x0, y0) = parse_tile_name(&r.image)
                .ok_or_else(|| anyhow!("'{}' is not a patch name (stem__x0__y0)", r.image))?;
            grouped
                .entry(stem.to_string())
                .or_default()
                .entry((x0, y0))
                .or_default()
                .push(Detection {
                    class_id: 0,
                    score: r.score,
                    quad: r.quad,
                });
        }
        let mut body = String::new();
        for (stem, windows) in grouped {
            let per_window: Vec<(Window, Vec<Detection>)> = windows
                .into_iter()
                .map(|((x0, y0), d)| (Window { x0, y0, w: 0, h: 0 }, d))
                .collect();
            for d in merge_patch_detections(&per_window, iou) {
                body.push_str(&format_result_line(&stem, d.score, &d.quad));
                body.push('\n');
            }
        }
        let path = out_dir.join(format!("Task1_{class}.txt"));
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
