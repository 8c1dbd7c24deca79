use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use derev_core::lstm::{load_model, read_manifest, LstmMaskModel};
use derev_core::metrics::MetricsReport;
use derev_core::pipeline::{evaluate, evaluate_segments, Models, Pipeline, PipelineMode};
use derev_core::scene::{build_scene, DrySource, Scene, SceneSpec};
use derev_core::signal::{AudioBuffer, ListenerProfile, PipelineConfig, HOP_SAMPLES, SAMPLE_RATE};
use derev_core::wav::{read_wav, write_wav, SampleFormat};
use derev_core::Error;
use log::info;

use crate::failure::{Failure, Outcome, EXIT_IO, EXIT_MODEL};
use crate::manifest::{
    read_config, read_json, sha256_file, sha256_hex, write_json, FileRecord, RunManifest, SceneManifest, Throughput,
    SCENE_MANIFEST,
};
use crate::{
    EvalArgs, FormatArg, ModelInfoArgs, ModelInitArgs, PipelineArgs, ReplayArgs, ReportFormat, RunArgs, SynthArgs,
};

fn load_wav(path: &Path) -> Outcome<AudioBuffer> {
    read_wav(path).map_err(|e| Failure::from(e).at(path))
}

fn save_wav(path: &Path, audio: &AudioBuffer, format: SampleFormat) -> Outcome<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    write_wav(path, audio, format).map_err(|e| Failure::from(e).at(path))
}

/// Anything other than a missing or unreadable file is a model error.
fn load_model_path(path: &Path) -> Outcome<LstmMaskModel> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    load_model(&bytes).map_err(|e| Failure { code: EXIT_MODEL, message: format!("{}: {e}", path.display()) })
}

fn load_models(wpe: Option<&Path>, pf: Option<&Path>) -> Outcome<Models> {
    Ok(Models { wpe: wpe.map(load_model_path).transpose()?, pf: pf.map(load_model_path).transpose()? })
}

fn resolve_config(args: &PipelineArgs) -> Outcome<PipelineConfig> {
    let mut config = match &args.config {
        Some(path) => read_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = args.profile {
        config.profile = p.into();
    }
    if args.sequential {
        config.parallel = false;
    }
    args.mode.apply_to(&mut config);
    Ok(config)
}

/// Rebuilds the scene a manifest describes; relative dry-file paths resolve
/// against the manifest directory.
fn load_scene(path: &Path) -> Outcome<(SceneManifest, Scene)> {
    let manifest: SceneManifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let scene = build_scene(&manifest.spec, |p| read_wav(base.join(p)))?;
    if scene.rir.propagation_delay != manifest.propagation_delay_samples
        || scene.dry.audio.len() != manifest.evaluated[1]
    {
        return Err(Failure::config(format!("{}: scene does not match its manifest", path.display())));
    }
    Ok((manifest, scene))
}

fn sample_format(f: FormatArg) -> SampleFormat {
    match f {
        FormatArg::Pcm16 => SampleFormat::Pcm16,
        FormatArg::Float32 => SampleFormat::Float32,
    }
}

struct Processed {
    audio: AudioBuffer,
    frames: usize,
    wall_seconds: f64,
}

fn execute(
    mode: PipelineMode,
    config: &PipelineConfig,
    models: &Models,
    input: &AudioBuffer,
    target: Option<&AudioBuffer>,
    chunk: usize,
) -> Outcome<Processed> {
    if mode.needs_target() && target.is_none() {
        return Err(Failure::config(format!("mode {mode} needs --target or --scene")));
    }
    let start = Instant::now();
    let mut pipeline = Pipeline::new(mode, config, models, input.num_channels())?;
    let audio = pipeline.run(input, target, chunk)?;
    Ok(Processed { audio, frames: pipeline.frames_processed(), wall_seconds: start.elapsed().as_secs_f64() })
}

fn chunk_samples(seconds: Option<f64>) -> Outcome<Option<usize>> {
    match seconds {
        None => Ok(None),
        Some(s) if s.is_finite() && s > 0.0 => Ok(Some(((s * SAMPLE_RATE as f64).round() as usize).max(1))),
        Some(s) => Err(Failure::config(format!("--chunk-seconds must be positive, got {s}"))),
    }
}

pub fn run(args: &RunArgs) -> Outcome<()> {
    let mode = args.pipeline.mode;
    let config = resolve_config(&args.pipeline)?;
    let models = load_models(args.pipeline.model_wpe.as_deref(), args.pipeline.model_pf.as_deref())?;
    let input = load_wav(&args.input)?;
    let scene = args.scene.as_deref().map(load_scene).transpose()?;
    let target = match (&args.target, &scene) {
        (Some(path), _) => Some(load_wav(path)?),
        (None, Some((_, scene))) if mode.needs_target() => Some(scene.target(config.profile).clone()),
        _ => None,
    };
    let chunk = chunk_samples(args.chunk_seconds)?;

    let done = execute(mode, &config, &models, &input, target.as_ref(), chunk.unwrap_or(0))?;
    let format = sample_format(args.format);
    save_wav(&args.output, &done.audio, format)?;

    let metrics = match &scene {
        Some((_, scene)) => {
            let written = load_wav(&args.output)?;
            evaluate_segments(&written, scene, config.profile, &config, mode.label(), true)?
        }
        None => Vec::new(),
    };
    let audio_seconds = input.duration_secs();
    let throughput = Throughput {
        wall_seconds: done.wall_seconds,
        frames: done.frames,
        frames_per_second: done.frames as f64 / done.wall_seconds.max(1e-12),
        audio_seconds,
        real_time_factor: done.wall_seconds / audio_seconds.max(1e-12),
    };
    let record = |p: &Option<PathBuf>| p.as_deref().map(FileRecord::of).transpose();
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode,
        config,
        model_wpe: record(&args.pipeline.model_wpe)?,
        model_pf: record(&args.pipeline.model_pf)?,
        input: FileRecord::of(&args.input)?,
        target: record(&args.target)?,
        scene: record(&args.scene)?,
        output: FileRecord::of(&args.output)?,
        output_format: format,
        chunk_samples: chunk,
        metrics,
        throughput,
    };
    let manifest_path = args.manifest.clone().unwrap_or_else(|| args.output.with_extension("json"));
    write_json(&manifest_path, &manifest)?;
    info!("manifest written to {}", manifest_path.display());

    eprintln!(
        "{}: {} frames in {:.2} s ({:.0} frames/s, RTF {:.3})",
        mode.label(),
        manifest.throughput.frames,
        manifest.throughput.wall_seconds,
        manifest.throughput.frames_per_second,
        manifest.throughput.real_time_factor
    );
    if !manifest.metrics.is_empty() {
        emit_reports(&manifest.metrics, args.report, None, true)?;
    }
    Ok(())
}

pub fn replay(args: &ReplayArgs) -> Outcome<()> {
    let m: RunManifest = read_json(&args.manifest)?;
    for rec in [&m.model_wpe, &m.model_pf, &m.target, &m.scene].into_iter().flatten().chain([&m.input]) {
        rec.verify()?;
    }
    let models = load_models(
        m.model_wpe.as_ref().map(|r| r.path.as_path()),
        m.model_pf.as_ref().map(|r| r.path.as_path()),
    )?;
    let input = load_wav(&m.input.path)?;
    let target = match (&m.target, &m.scene) {
        (Some(t), _) => Some(load_wav(&t.path)?),
        (None, Some(s)) if m.mode.needs_target() => Some(load_scene(&s.path)?.1.target(m.config.profile).clone()),
        _ => None,
    };
    let done = execute(m.mode, &m.config, &models, &input, target.as_ref(), m.chunk_samples.unwrap_or(0))?;
    let out = args.output.clone().unwrap_or_else(|| m.output.path.clone());
    save_wav(&out, &done.audio, m.output_format)?;
    let hash = sha256_file(&out)?;
    if hash != m.output.sha256 {
        return Err(Failure::runtime(format!("{} differs from the recorded output", out.display())));
    }
    println!("{}: bit-identical to the recorded output ({hash})", out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Outcome<()> {
    let (_, scene) = load_scene(&args.scene)?;
    let processed = load_wav(&args.processed)?;
    let config = match &args.config {
        Some(path) => read_config(path)?,
        None => PipelineConfig::default(),
    };
    let profile: ListenerProfile = args.profile.into();
    let oracle = !args.estimate_delay;
    let reports = if args.segments {
        evaluate_segments(&processed, &scene, profile, &config, &args.label, oracle)?
    } else {
        vec![evaluate(&processed, &scene, profile, &config, &args.label, oracle)?]
    };
    emit_reports(&reports, args.report, args.output.as_deref(), args.segments)
}

fn emit_reports(reports: &[MetricsReport], format: ReportFormat, out: Option<&Path>, as_list: bool) -> Outcome<()> {
    let text = match format {
        ReportFormat::Json => {
            let json = if as_list || reports.len() != 1 {
                serde_json::to_string_pretty(reports)
            } else {
                serde_json::to_string_pretty(&reports[0])
            };
            json.map_err(|e| Failure::runtime(e.to_string()))? + "\n"
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in reports {
                w.serialize(r).map_err(|e| Failure::runtime(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Failure::runtime(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Failure::runtime(e.to_string()))?
        }
    };
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::io(path, e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::io(Path::new("<stdout>"), e)),
    }
}

/// A scene spec file may also be a full scene manifest.
fn read_scene_spec(path: &Path) -> Outcome<SceneSpec> {
    let value: serde_json::Value = read_json(path)?;
    let spec = if value.get("spec").is_some() && value.get("files").is_some() {
        serde_json::from_value::<SceneManifest>(value).map(|m| m.spec)
    } else {
        serde_json::from_value::<SceneSpec>(value)
    };
    spec.map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn absolutize_dry_paths(spec: &mut SceneSpec, base: &Path) -> Outcome<()> {
    if let DrySource::Files { paths } = &mut spec.dry {
        for p in paths.iter_mut() {
            let joined = base.join(&*p);
            let abs = fs::canonicalize(&joined).map_err(|e| Failure::io(&joined, e))?;
            *p = abs.to_string_lossy().into_owned();
        }
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Outcome<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let mut spec = read_scene_spec(path)?;
            absolutize_dry_paths(&mut spec, path.parent().unwrap_or(Path::new(".")))?;
            spec
        }
        None => SceneSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.rir.seed = seed;
        spec.sequence_seed = seed;
        spec.noise_seed = seed;
        match &mut spec.dry {
            DrySource::SpeechLike { seed: s, .. } | DrySource::White { seed: s, .. } => *s = seed,
            DrySource::Files { .. } => {}
        }
    }
    if let Some(t60) = args.t60 {
        spec.rir.t60 = t60;
    }
    let scene = build_scene(&spec, |p| read_wav(p))?;

    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::io(&args.out_dir, e))?;
    let rir = AudioBuffer::from_channels(scene.rir.taps().to_vec())?;
    let files: [(&str, &AudioBuffer); 5] = [
        ("dry.wav", &scene.dry.audio),
        ("reverb.wav", &scene.reverberant),
        ("target_ha.wav", &scene.target_ha),
        ("target_ci.wav", &scene.target_ci),
        ("rir.wav", &rir),
    ];
    let mut hashes = BTreeMap::new();
    for (name, audio) in files {
        let path = args.out_dir.join(name);
        save_wav(&path, audio, SampleFormat::Float32)?;
        hashes.insert(name.to_string(), sha256_file(&path)?);
    }
    let evaluated = scene.dry.evaluated();
    let manifest = SceneManifest {
        spec: scene.spec.clone(),
        files: hashes,
        propagation_delay_samples: scene.rir.propagation_delay,
        t60: scene.rir.t60,
        t30: scene.rir.t30,
        rir_length: scene.rir.len(),
        snr_db: scene.snr_db,
        segments: scene.dry.segments.iter().map(|r| [r.start, r.end]).collect(),
        evaluated: [evaluated.start, evaluated.end],
    };
    let path = args.out_dir.join(SCENE_MANIFEST);
    write_json(&path, &manifest)?;
    println!(
        "{}: T60 {:.2} s, delay {} samples ({} frames), {:.1} s of audio",
        path.display(),
        manifest.t60,
        manifest.propagation_delay_samples,
        manifest.propagation_delay_samples / HOP_SAMPLES,
        scene.dry.audio.duration_secs()
    );
    Ok(())
}

pub fn model_info(args: &ModelInfoArgs) -> Outcome<()> {
    let bytes = fs::read(&args.model).map_err(|e| Failure::io(&args.model, e))?;
    let bad = |e: Error| Failure { code: EXIT_MODEL, message: format!("{}: {e}", args.model.display()) };
    let header = read_manifest(&bytes).map_err(bad)?;
    let model = load_model(&bytes).map_err(bad)?;
    let dtype = header.tensors.first().map(|t| t.dtype);
    let total = model.parameter_count();
    if args.json {
        let info = serde_json::json!({
            "file": args.model,
            "sha256": sha256_hex(&bytes),
            "format_version": header.format_version,
            "input_dim": model.input_dim(),
            "hidden_dim": model.hidden_dim(),
            "heads": model.out_masks(),
            "dtype": dtype,
            "lstm_parameters": model.lstm_parameters(),
            "parameters": total,
        });
        println!("{}", serde_json::to_string_pretty(&info).map_err(|e| Failure::runtime(e.to_string()))?);
    } else {
        println!("file:        {}", args.model.display());
        println!("format:      v{}", header.format_version);
        println!("dtype:       {}", dtype.map(|d| format!("{d:?}").to_lowercase()).unwrap_or_default());
        println!("input_dim:   {}", model.input_dim());
        println!("hidden_dim:  {}", model.hidden_dim());
        println!(
            "params ≈ {:.2}M (LSTM {:.2}M), heads={}",
            total as f64 / 1e6,
            model.lstm_parameters() as f64 / 1e6,
            model.out_masks()
        );
    }
    Ok(())
}

pub fn model_init(args: &ModelInitArgs) -> Outcome<()> {
    let model = if args.zeros {
        LstmMaskModel::zeros(args.input_dim, args.hidden, args.heads)
    } else {
        LstmMaskModel::random(args.input_dim, args.hidden, args.heads, args.seed)
    }
    .map_err(|e| Failure { code: EXIT_MODEL, message: e.to_string() })?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    model.save(&args.out, args.dtype.into()).map_err(|e| match e {
        Error::Io(io) => Failure { code: EXIT_IO, message: format!("{}: {io}", args.out.display()) },
        other => Failure::from(other),
    })?;
    println!("{}: {} parameters, heads={}", args.out.display(), model.parameter_count(), model.out_masks());
    Ok(())
}
