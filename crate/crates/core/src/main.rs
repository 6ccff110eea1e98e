use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use hairsplat::codec::{decode_strand, encode_strand, fit_basis_batched, StrandBasis, StrandCoefficients};
use hairsplat::config::Config;
use hairsplat::gabor::{depth_normalize, gabor_orientation};
use hairsplat::hairmap::PcaHairMap;
use hairsplat::io::{self, names, FloatImage};
use hairsplat::losses::angles_to_vectors;
use hairsplat::model::HairModel;
use hairsplat::optim::{chamfer_eval, eval_metrics, fit_hairmap, render_map, FitStatus, View};
use hairsplat::scalp::{CameraModel, HeadModel};
use hairsplat::synth::{gen_scene, gen_strand_corpus, ring_cameras, render_reference, targets_from_render, CoefficientStats};
use hairsplat::{Error, Result};

/// Strand-based hair toolkit: PCA strand codec, splat rendering and hair-map fitting.
#[derive(Parser, Debug)]
#[command(name = "hairsplat", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Key-value config file; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, env = "HAIRSPLAT_THREADS")]
    threads: Option<usize>,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a strand PCA basis to a strand text file.
    PcaFit {
        #[arg(long)]
        strands: PathBuf,
        #[arg(long)]
        components: Option<usize>,
    },
    /// Encode strands into coefficient rows.
    Encode {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        strands: PathBuf,
    },
    /// Decode a hair map into world-space strands.
    Decode {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        /// Decode the upsampled dense strands instead of the guides.
        #[arg(long)]
        dense: bool,
    },
    /// Render a hair map from a camera.
    Render {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
    },
    /// Orientation map of a grayscale PFM image, and optional depth normalization.
    Gabor {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, requires = "mask")]
        depth: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Generate a strand corpus, a basis and a fitting scene.
    Synth {
        /// Reuse an existing basis instead of fitting one to the corpus.
        #[arg(long)]
        basis: Option<PathBuf>,
    },
    /// Fit a hair map to one or more views.
    Fit {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        init: PathBuf,
        /// View directories holding cam.kv and target maps.
        #[arg(long, required = true, num_args = 1..)]
        views: Vec<PathBuf>,
        #[arg(long)]
        head: Option<PathBuf>,
    },
    /// Compare a render with targets, and optionally two strand sets.
    Eval {
        #[arg(long)]
        render: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, requires = "gt_strands")]
        pred_strands: Option<PathBuf>,
        #[arg(long)]
        gt_strands: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut c = match &common.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        c.seed = s;
    }
    Ok(c)
}

fn load_head(path: Option<&Path>) -> Result<HeadModel> {
    path.map_or_else(|| Ok(HeadModel::default()), io::read_head)
}

fn build_model(basis: &StrandBasis, head: &HeadModel, map: &PcaHairMap, cfg: &Config) -> Result<HairModel> {
    HairModel::new(basis.clone(), head.clone(), map, cfg.model.upsample, cfg.model.nearest_weight, cfg.model.bald_threshold)
}

fn metrics_json(m: &hairsplat::optim::Metrics) -> Value {
    json!({ "iou": m.iou, "undir": m.undir, "depth_l1": m.depth_l1 })
}

fn save_render_previews(dir: &Path, r: &hairsplat::render::RenderBuffers) -> Result<()> {
    io::write_render(dir, r)?;
    io::write_direction_png(&dir.join("direction.png"), r.width, r.height, &r.direction)?;
    io::write_gray_png(&dir.join("silhouette.png"), r.width, r.height, &r.silhouette)
}

fn run(cli: Cli) -> Result<Value> {
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out_dir;
    fs::create_dir_all(out)?;
    match cli.command {
        Command::PcaFit { strands, components } => {
            let strands = io::read_strands(&strands)?;
            let c = components.unwrap_or(cfg.pca.components);
            let basis = fit_basis_batched(&strands, c, cfg.pca.batch_size)?;
            let path = out.join("basis.sbas");
            io::write_basis(&path, &basis)?;
            Ok(json!({
                "command": "pca-fit",
                "strands": strands.len(),
                "points": basis.point_count(),
                "components": basis.num_components(),
                "variance": basis.explained_variance().map(|v| v.iter().sum::<f64>()),
                "basis": path,
            }))
        }
        Command::Encode { basis, strands } => {
            let basis = io::read_basis(&basis)?;
            let strands = io::read_strands(&strands)?;
            let mut text = String::new();
            let mut worst: f64 = 0.0;
            for s in &strands {
                let g = encode_strand(s, &basis)?;
                let back = decode_strand(&StrandCoefficients::new(g.gamma.clone())?, &basis)?;
                for (p, q) in s.points().iter().zip(back.points()) {
                    worst = worst.max((p - q).amax());
                }
                let row: Vec<String> = g.gamma.iter().map(|v| v.to_string()).collect();
                text.push_str(&row.join(" "));
                text.push('\n');
            }
            let path = out.join("coeffs.txt");
            fs::write(&path, text)?;
            Ok(json!({ "command": "encode", "strands": strands.len(), "max_reconstruction_error": worst, "coeffs": path }))
        }
        Command::Decode { basis, map, head, dense } => {
            let basis = io::read_basis(&basis)?;
            let map = io::read_hairmap(&map)?;
            let head = load_head(head.as_deref())?;
            let model = build_model(&basis, &head, &map, &cfg)?;
            let hair = if dense { model.forward(&map)? } else { model.guides(&map)? };
            let path = out.join("strands.txt");
            io::write_strands(&path, &hair)?;
            Ok(json!({ "command": "decode", "strands": hair.active_count(), "dense": dense, "output": path }))
        }
        Command::Render { basis, map, camera, head } => {
            let basis = io::read_basis(&basis)?;
            let map = io::read_hairmap(&map)?;
            let cam = io::read_camera(&camera)?;
            let head = load_head(head.as_deref())?;
            let model = build_model(&basis, &head, &map, &cfg)?;
            let r = render_map(&model, &map, &cam, &cfg.render)?;
            let dir = out.join("render");
            save_render_previews(&dir, &r)?;
            let coverage = r.silhouette.iter().filter(|s| **s > 0.5).count();
            Ok(json!({ "command": "render", "width": r.width, "height": r.height, "covered_pixels": coverage, "output": dir }))
        }
        Command::Gabor { image, depth, mask } => {
            let img = io::read_pfm(&image)?.to_image()?;
            let map = gabor_orientation(&img, &cfg.gabor)?;
            let (w, h) = (map.width, map.height);
            io::write_pfm(&out.join("orientation.pfm"), &FloatImage::gray(w, h, &map.angle))?;
            io::write_pfm(&out.join("confidence.pfm"), &FloatImage::gray(w, h, &map.confidence))?;
            io::write_pfm(&out.join("orientation_vectors.pfm"), &FloatImage::vectors(w, h, &angles_to_vectors(&map.angle)))?;
            io::write_mask(&out.join("orientation_mask.pgm"), w, h, &map.mask)?;
            let mut summary = json!({
                "command": "gabor",
                "width": w,
                "height": h,
                "mean_confidence": map.confidence.iter().sum::<f64>() / map.confidence.len() as f64,
            });
            if let (Some(depth), Some(mask)) = (depth, mask) {
                let d = io::read_pfm(&depth)?.to_image()?;
                let (mw, mh, m) = io::read_mask(&mask)?;
                if (mw, mh) != (d.width, d.height) {
                    return Err(Error::Shape("depth and mask sizes differ".into()));
                }
                let n = depth_normalize(&d, &m, cfg.depth_erode)?;
                io::write_pfm(&out.join(names::DEPTH), &FloatImage::gray(n.width, n.height, &n.values))?;
                io::write_mask(&out.join(names::DEPTH_MASK), n.width, n.height, &n.valid)?;
                summary["depth_low"] = json!(n.low);
                summary["depth_high"] = json!(n.high);
            }
            Ok(summary)
        }
        Command::Synth { basis } => synth(&cfg, out, basis.as_deref()),
        Command::Fit { basis, init, views, head } => {
            let basis = io::read_basis(&basis)?;
            let init = io::read_hairmap(&init)?;
            let head = load_head(head.as_deref())?;
            let model = build_model(&basis, &head, &init, &cfg)?;
            let views = views
                .iter()
                .map(|d| Ok(View { camera: io::read_camera(&d.join(names::CAMERA))?, targets: io::read_targets(d)? }))
                .collect::<Result<Vec<_>>>()?;
            let scale = if cfg.fit.normalize { Some(CoefficientStats::from_basis(&basis)?.std) } else { None };
            let schedule = cfg.schedule(scale);
            let res = fit_hairmap(&init, &model, &views, &schedule)?;
            io::write_hairmap(&out.join("fitted.hmap"), &res.map)?;
            io::write_strands(&out.join("strands.txt"), &model.guides(&res.map)?)?;
            fs::write(out.join("report.csv"), res.report.to_csv())?;
            for (k, v) in views.iter().enumerate() {
                let r = render_map(&model, &res.map, &v.camera, &cfg.render)?;
                save_render_previews(&out.join(format!("render{k}")), &r)?;
            }
            let (status, diverged_at) = match res.report.status {
                FitStatus::Completed => ("completed", None),
                FitStatus::Diverged { step } => ("diverged", Some(step)),
            };
            let summary = json!({
                "command": "fit",
                "status": status,
                "diverged_at": diverged_at,
                "steps": res.report.steps.len(),
                "initial_total": res.report.steps.first().map(|s| s.loss.total),
                "final_total": res.report.final_loss.iter().map(|l| l.total).collect::<Vec<_>>(),
                "metrics": res.report.final_metrics.iter().map(metrics_json).collect::<Vec<_>>(),
                "wall_time_s": res.report.wall_time_s,
            });
            if let FitStatus::Diverged { step } = res.report.status {
                println!("{summary}");
                return Err(Error::Diverged { step });
            }
            Ok(summary)
        }
        Command::Eval { render, target, pred_strands, gt_strands } => {
            let r = io::read_render(&render)?;
            let t = io::read_targets(&target)?;
            let m = eval_metrics(&r, &t)?;
            let mut summary = json!({ "command": "eval" });
            summary["iou"] = json!(m.iou);
            summary["undir"] = json!(m.undir);
            summary["depth_l1"] = json!(m.depth_l1);
            if let (Some(p), Some(g)) = (pred_strands, gt_strands) {
                let c = chamfer_eval(&io::read_strands(&p)?, &io::read_strands(&g)?, cfg.chamfer_samples, cfg.seed)?;
                summary["chamfer_points"] = json!(c.points);
                summary["chamfer_angle"] = json!(c.angle);
            }
            Ok(summary)
        }
    }
}

/// Corpus, basis, ground-truth scene with its views, and a noisy initial map.
fn synth(cfg: &Config, out: &Path, basis_path: Option<&Path>) -> Result<Value> {
    let corpus = gen_strand_corpus(cfg.seed, cfg.synth.corpus_size, &cfg.style)?;
    fs::write(out.join("corpus.txt"), io::strands_to_text(&corpus))?;
    let basis = match basis_path {
        Some(p) => io::read_basis(p)?,
        None => fit_basis_batched(&corpus, cfg.pca.components, cfg.pca.batch_size)?,
    };
    io::write_basis(&out.join("basis.sbas"), &basis)?;
    let stats = CoefficientStats::from_corpus(&corpus, &basis)?;
    let head = HeadModel::default();
    io::write_head(&out.join(names::HEAD), &head)?;
    let dims = (cfg.synth.grid_width, cfg.synth.grid_height);
    let scene = gen_scene(cfg.seed, &head, dims, &basis, &stats, &cfg.scene)?;
    io::write_hairmap(&out.join("truth.hmap"), &scene.truth)?;
    // Strands from the map as stored, so decoding truth.hmap reproduces them.
    let stored = io::hairmap_from_bytes(&io::hairmap_to_bytes(&scene.truth)?)?;
    io::write_strands(&out.join("truth_strands.txt"), &scene.model.guides(&stored)?)?;

    let mut cams: Vec<CameraModel> = vec![scene.camera.clone()];
    if cfg.synth.views > 1 {
        let mid = 0.5 * (cfg.scene.elevation.start + cfg.scene.elevation.end);
        cams.extend(ring_cameras(&head, &cfg.scene, cfg.synth.views - 1, mid, 0.0)?);
    }
    for (k, cam) in cams.iter().enumerate() {
        let dir = out.join(format!("view{k}"));
        fs::create_dir_all(&dir)?;
        let targets = if k == 0 {
            scene.targets.clone()
        } else {
            targets_from_render(&render_reference(&scene.model, &scene.truth, cam, &cfg.render)?)?
        };
        io::write_camera(&dir.join(names::CAMERA), cam)?;
        io::write_targets(&dir, &targets)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1417);
    let mut init = scene.truth.clone();
    let c = basis.num_components();
    for (i, g) in init.coeffs_mut().iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *g += cfg.synth.init_noise * stats.std[i % c] * z;
    }
    io::write_hairmap(&out.join("init.hmap"), &init)?;
    Ok(json!({
        "command": "synth",
        "corpus": corpus.len(),
        "components": c,
        "grid": [dims.0, dims.1],
        "views": cams.len(),
        "covered_pixels": scene.targets.silhouette.iter().filter(|s| **s > 0.5).count(),
    }))
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors and 0 for --help/--version.
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
