use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use highlighter_core::apps::{
    apply_edit, multiclass_segment, transfer_localization, EditKind, EditSpec, HighlightResult, PALETTE,
};
use highlighter_core::eval::{evaluate_manifest, evaluate_synthetic, ClipScorer, EvalManifest, OfflineRenderConfig};
use highlighter_core::field::{init_field, load_field_archive, save_field_with, ArchiveMetadata};
use highlighter_core::guidance::{build_prompt, score_views, argmax_first, Guidance, PromptSpec};
use highlighter_core::mesh::{export_mesh, load_mesh, normalize_mesh, write_ply, Mesh, NormalizationTransform};
use highlighter_core::optimize::{Ablation, Optimizer, RunConfig, StepRecord, Variable};
use highlighter_core::render::{blend_colors, candidate_views, rasterize, Camera, RenderConfig};
use highlighter_core::result::Provenance;

use crate::backend;
use crate::config::{load_or_default, BackendKind, HighlightConfig};
use crate::{EditArgs, EditKindArg, EvaluateArgs, HighlightArgs, PromptArgs, SegmentArgs, TransferArgs, Usage};

const CHECKPOINT_DIR: &str = "checkpoint";
const PREVIEW_DIR: &str = "previews";

#[derive(Serialize)]
struct CommandProvenance<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    argv: Vec<String>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    backend_id: Option<String>,
    config: &'a C,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Writes `provenance.json`: the argument vector plus the fully resolved
/// configuration.
fn write_provenance(dir: &Path, command: &str, seed: u64, backend_id: Option<String>, config: &impl Serialize) -> Result<()> {
    write_json(
        &dir.join("provenance.json"),
        &CommandProvenance {
            command,
            version: env!("CARGO_PKG_VERSION"),
            argv: std::env::args().collect(),
            seed,
            backend_id,
            config,
        },
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn resolve(args: &PromptArgs) -> Result<HighlightConfig> {
    let mut cfg: HighlightConfig = load_or_default(args.config.as_deref())?;
    if let Some(m) = &args.mesh {
        cfg.mesh = Some(m.clone());
    }
    if let Some(o) = &args.object {
        cfg.prompt.object = Some(o.clone());
    }
    if let Some(r) = &args.region {
        cfg.prompt.region = Some(r.clone());
    }
    if let Some(t) = &args.template {
        cfg.prompt.template = t.clone();
    }
    if let Some(b) = args.backend {
        cfg.backend.kind = b;
    }
    if let Some(u) = &args.backend_url {
        cfg.backend.url = Some(u.clone());
    }
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.optimization.seed = s;
        cfg.field.init_seed = s;
    }
    if args.no_select_view {
        cfg.select_view = false;
    }
    if let Some(w) = args.field_width {
        cfg.field.width = w;
    }
    if let Some(d) = args.field_depth {
        cfg.field.depth = d;
    }
    if let Some(s) = args.image_size {
        cfg.render.image_size = s;
    }
    Ok(cfg)
}

/// Everything needed before optimizing: the mesh in both frames, the
/// prompt and its guidance.
struct Prepared {
    mesh: Mesh,
    normalized: Mesh,
    transform: NormalizationTransform,
    prompt: String,
    guidance: Box<dyn Guidance>,
}

fn prepare(cfg: &HighlightConfig) -> Result<Prepared> {
    let mesh_path = cfg.mesh.as_ref().ok_or_else(|| Usage("--mesh is required".into()))?;
    let object = cfg.prompt.object.clone().ok_or_else(|| Usage("--object is required".into()))?;
    let region = cfg.prompt.region.clone().ok_or_else(|| Usage("--region is required".into()))?;
    let spec = PromptSpec {
        object_name: object,
        region_name: region,
        template: cfg.prompt.template.clone(),
    };
    let prompt = build_prompt(&spec).map_err(|e| Usage(e.to_string()))?;
    cfg.run_config().validate().map_err(|e| Usage(e.to_string()))?;
    let mesh = load_mesh(mesh_path)?;
    let (normalized, transform) = normalize_mesh(&mesh)?;
    let guidance = backend::guidance(&cfg.backend, &normalized, &spec, &cfg.render, cfg.optimization.seed)?;
    Ok(Prepared {
        mesh,
        normalized,
        transform,
        prompt,
        guidance,
    })
}

#[derive(Serialize)]
struct ViewScore {
    azimuth: f64,
    elevation: f64,
    score: f64,
}

#[derive(Serialize)]
struct ViewReport {
    selected: usize,
    camera: Camera,
    candidates: Vec<ViewScore>,
}

fn pick_view(p: &Prepared, run: &RunConfig) -> Result<ViewReport> {
    let field = init_field(&run.effective_field_config())?;
    let candidates = candidate_views(&run.views.primary);
    let scores = score_views(&p.normalized, &field, &*p.guidance, &candidates, &run.render)?;
    let selected = argmax_first(&scores).context("no candidate views")?;
    Ok(ViewReport {
        selected,
        camera: candidates[selected],
        candidates: candidates
            .iter()
            .zip(&scores)
            .map(|(c, &score)| ViewScore {
                azimuth: c.azimuth,
                elevation: c.elevation,
                score,
            })
            .collect(),
    })
}

pub fn select_view(args: PromptArgs) -> Result<()> {
    let cfg = resolve(&args)?;
    let p = prepare(&cfg)?;
    let report = pick_view(&p, &cfg.run_config())?;
    create_dir(&cfg.output)?;
    write_json(&cfg.output.join("view.json"), &report)?;
    write_provenance(&cfg.output, "select-view", cfg.optimization.seed, Some(p.guidance.id()), &cfg)?;
    println!(
        "selected view {}: azimuth {:.4} rad, elevation {:.4} rad, score {:.6}",
        report.selected, report.camera.azimuth, report.camera.elevation, report.candidates[report.selected].score
    );
    Ok(())
}

fn render_preview(mesh: &Mesh, probabilities: &[f64], camera: &Camera, cfg: &RenderConfig, path: &Path) -> Result<()> {
    let colors = blend_colors(probabilities, cfg);
    let raster = rasterize(mesh, camera, cfg.image_size, &cfg.lighting)?;
    raster.shade_colors(mesh, &colors, cfg.background).save_png(path)?;
    Ok(())
}

/// Keeps only loss records from before `step`, so a resumed run does not
/// repeat lines.
fn truncate_log(path: &Path, step: usize) -> Result<()> {
    let Ok(file) = fs::File::open(path) else {
        return Ok(());
    };
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let record: StepRecord = serde_json::from_str(&line).with_context(|| format!("bad line in {}", path.display()))?;
        if record.step < step {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

pub fn highlight(args: HighlightArgs) -> Result<()> {
    let mut cfg = resolve(&args.prompt)?;
    if let Some(n) = args.iterations {
        cfg.optimization.iterations = n;
    }
    if let Some(lr) = args.learning_rate {
        cfg.optimization.learning_rate = lr;
    }
    if let Some(a) = &args.ablation {
        cfg.optimization.ablation = serde_json::from_value::<Ablation>(serde_json::Value::String(a.clone()))
            .map_err(|_| Usage(format!("unknown ablation {a:?}")))?;
    }
    if let Some(v) = args.views_per_step {
        cfg.views.views_per_step = v;
    }
    if let Some(c) = args.checkpoint_every {
        cfg.optimization.checkpoint_every = c;
    }
    let p = prepare(&cfg)?;
    let out = cfg.output.clone();
    let checkpoint = out.join(CHECKPOINT_DIR);
    let previews = out.join(PREVIEW_DIR);
    create_dir(&previews)?;

    let resuming = args.resume && checkpoint.join("run.json").exists();
    let mut opt = if resuming {
        let opt = Optimizer::resume(&checkpoint, &p.normalized, &*p.guidance)?;
        eprintln!("resuming at step {}", opt.step_index());
        opt
    } else {
        let mut run = cfg.run_config();
        if cfg.select_view {
            let report = pick_view(&p, &run)?;
            run.views.primary = report.camera;
            cfg.views.primary = report.camera;
            cfg.select_view = false;
        }
        Optimizer::new(&p.normalized, &*p.guidance, run)?
    };

    let log_path = out.join("loss.jsonl");
    if resuming {
        truncate_log(&log_path, opt.step_index())?;
    } else {
        let _ = fs::remove_file(&log_path);
    }
    let mut log = BufWriter::new(
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .with_context(|| format!("opening {}", log_path.display()))?,
    );

    let run = opt.config().clone();
    let preview = |opt: &Optimizer| -> Result<()> {
        let path = previews.join(format!("step_{:06}.png", opt.step_index()));
        render_preview(&p.normalized, &opt.probabilities()?, &run.views.primary, &run.render, &path)
    };
    if opt.step_index() == 0 {
        preview(&opt)?;
    }
    // A resumed run keeps its stored config; --iterations can extend it.
    let total = if resuming {
        args.iterations.unwrap_or(run.optimization.iterations)
    } else {
        run.optimization.iterations
    };
    let every = run.optimization.checkpoint_every;
    while opt.step_index() < total {
        let next = opt
            .step_index()
            .checked_div(every)
            .map_or(total, |chunk| ((chunk + 1) * every).min(total));
        let mut io_error = None;
        opt.run(next, Some(&checkpoint), &mut |r| {
            if io_error.is_none() {
                let line = serde_json::to_string(r).expect("records serialize");
                io_error = writeln!(log, "{line}").err();
            }
        })?;
        if let Some(e) = io_error {
            return Err(e).context("writing loss log");
        }
        log.flush()?;
        preview(&opt)?;
        if let Some(last) = opt.loss_history().last() {
            eprintln!("step {}/{}: loss {:.6}", opt.step_index(), total, last);
        }
    }

    let mut result = opt.result(&p.transform, &p.prompt)?;
    match opt.variable() {
        Variable::Field(field) => {
            let meta = ArchiveMetadata {
                normalization: Some(p.transform),
            };
            save_field_with(field, &meta, out.join("field.arch"))?;
            result.field_archive = Some(PathBuf::from("field.arch"));
        }
        Variable::Direct(_) => eprintln!("direct ablation: no field archive written"),
    }
    result.save_json(out.join("probabilities.json"))?;
    export_mesh(&p.mesh, &blend_colors(&result.probabilities, &run.render), out.join("highlight.ply"))?;
    write_provenance(&out, "highlight", run.optimization.seed, Some(p.guidance.id()), &cfg)?;
    let highlighted = result.mask.iter().filter(|&&m| m).count();
    println!(
        "{} of {} vertices highlighted; final loss {}; wrote {}",
        highlighted,
        result.len(),
        result.loss_history.last().map_or("n/a".into(), |l| format!("{l:.6}")),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TransferConfig<'a> {
    field: &'a Path,
    mesh: &'a Path,
    transform: NormalizationTransform,
    renormalized: bool,
}

pub fn transfer(args: TransferArgs) -> Result<()> {
    let (field, meta) = load_field_archive(&args.field)?;
    let mesh = load_mesh(&args.mesh)?;
    let renormalized = args.renormalize || meta.normalization.is_none();
    let transform = match meta.normalization {
        Some(t) if !args.renormalize => t,
        _ => normalize_mesh(&mesh)?.1,
    };
    let config = TransferConfig {
        field: &args.field,
        mesh: &args.mesh,
        transform,
        renormalized,
    };
    let provenance = Provenance::new(String::new(), args.seed, "transfer".into(), serde_json::to_value(&config)?);
    let t = transfer_localization(&field, &mesh, &transform, provenance)?;
    if t.extrapolated {
        eprintln!(
            "warning: target reaches radius {:.3} in the field frame; probabilities there are extrapolated",
            t.max_radius
        );
    }
    create_dir(&args.output)?;
    t.result.save_json(args.output.join("probabilities.json"))?;
    export_mesh(
        &mesh,
        &blend_colors(&t.result.probabilities, &RenderConfig::default()),
        args.output.join("transfer.ply"),
    )?;
    write_provenance(&args.output, "transfer", args.seed, None, &config)?;
    let highlighted = t.result.mask.iter().filter(|&&m| m).count();
    println!("{highlighted} of {} vertices highlighted; wrote {}", t.result.len(), args.output.display());
    Ok(())
}

pub fn edit(args: EditArgs) -> Result<()> {
    let mesh = load_mesh(&args.mesh)?;
    let mask = match &args.probabilities {
        Some(p) => HighlightResult::load_json(p)?.mask,
        None => vec![false; mesh.vertex_count()],
    };
    let kind = match args.kind {
        EditKindArg::Extrude => EditKind::Extrude,
        EditKindArg::Stretch => EditKind::Stretch,
        EditKindArg::Delete => EditKind::Delete,
        EditKindArg::Select => EditKind::Select,
    };
    let mut spec = EditSpec::new(kind, args.magnitude);
    if let Some(d) = &args.direction {
        spec.direction = [d[0], d[1], d[2]];
    }
    spec.validate().map_err(|e| Usage(e.to_string()))?;
    let out = apply_edit(&mesh, &mask, &spec)?;
    create_dir(&args.output)?;
    write_ply(args.output.join("edited.ply"), &out.mesh, out.mesh.colors.as_deref())?;
    write_json(&args.output.join("vertex_map.json"), &out.vertex_map)?;
    write_provenance(&args.output, "edit", args.seed, None, &spec)?;
    println!(
        "{} masked vertices; output has {} vertices and {} faces",
        mask.iter().filter(|&&m| m).count(),
        out.mesh.vertex_count(),
        out.mesh.face_count()
    );
    Ok(())
}

#[derive(Serialize)]
struct SegmentOutput<'a> {
    classes: &'a [String],
    lambda: f64,
    labels: &'a [usize],
    energy: f64,
}

pub fn segment(args: SegmentArgs) -> Result<()> {
    let sources = args.probabilities.len().max(args.fields.len());
    if sources != args.classes.len() {
        bail!(Usage(format!(
            "{} classes but {} probability sources; give one --probabilities or --fields entry per class",
            args.classes.len(),
            sources
        )));
    }
    let mesh = load_mesh(&args.mesh)?;
    let class_probabilities = if !args.probabilities.is_empty() {
        args.probabilities
            .iter()
            .map(|p| Ok(HighlightResult::load_json(p)?.probabilities))
            .collect::<Result<Vec<_>>>()?
    } else {
        args.fields
            .iter()
            .map(|f| {
                let (field, meta) = load_field_archive(f)?;
                let t = match meta.normalization {
                    Some(t) => t,
                    None => normalize_mesh(&mesh)?.1,
                };
                Ok(field.highlight_probabilities(&mesh.transformed(&t).vertices)?)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let seg = multiclass_segment(&mesh, &class_probabilities, args.lambda)?;
    create_dir(&args.output)?;
    write_json(
        &args.output.join("segmentation.json"),
        &SegmentOutput {
            classes: &args.classes,
            lambda: args.lambda,
            labels: &seg.labels,
            energy: seg.energy,
        },
    )?;
    let colors: Vec<_> = seg.labels.iter().map(|&l| PALETTE[l % PALETTE.len()]).collect();
    export_mesh(&mesh, &colors, args.output.join("segmentation.ply"))?;
    #[derive(Serialize)]
    struct Config<'a> {
        mesh: &'a Path,
        classes: &'a [String],
        probabilities: &'a [PathBuf],
        fields: &'a [PathBuf],
        lambda: f64,
    }
    let config = Config {
        mesh: &args.mesh,
        classes: &args.classes,
        probabilities: &args.probabilities,
        fields: &args.fields,
        lambda: args.lambda,
    };
    write_provenance(&args.output, "segment", args.seed, None, &config)?;
    for (k, name) in args.classes.iter().enumerate() {
        println!("{name}: {} vertices", seg.labels.iter().filter(|&&l| l == k).count());
    }
    println!("energy {:.6}", seg.energy);
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut render = OfflineRenderConfig::default();
    if let Some(s) = args.image_size {
        render.image_size = s;
    }
    if let Some(s) = args.supersample {
        render.supersample = s;
    }
    let (report, backend_id) = if args.synthetic {
        (evaluate_synthetic(&render)?, "mock-mask-iou".to_string())
    } else {
        let path = args.manifest.as_ref().expect("clap requires --manifest");
        let manifest = EvalManifest::load(path).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
        let kind = <BackendKind as clap::ValueEnum>::from_str(&manifest.backend, false)
            .map_err(|_| Usage(format!("unknown backend {:?} in manifest", manifest.backend)))?;
        let mut bcfg = crate::config::BackendConfig {
            kind,
            ..Default::default()
        };
        bcfg.url = args.backend_url.clone();
        let scorer = ClipScorer(backend::embedding_backend(&bcfg, args.seed)?);
        let id = scorer.0.id().to_string();
        (evaluate_manifest(&manifest, &scorer, &render)?, id)
    };
    create_dir(&args.output)?;
    write_json(&args.output.join("report.json"), &report)?;
    #[derive(Serialize)]
    struct Config<'a> {
        manifest: Option<&'a Path>,
        synthetic: bool,
        render: &'a OfflineRenderConfig,
    }
    let config = Config {
        manifest: args.manifest.as_deref(),
        synthetic: args.synthetic,
        render: &render,
    };
    write_provenance(&args.output, "evaluate", args.seed, Some(backend_id), &config)?;
    print!("{}", report.table());
    Ok(())
}
