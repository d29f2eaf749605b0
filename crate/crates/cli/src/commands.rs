use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use scaleadapt_core::dataio::{self, ClassSet, LoadedSequence};
use scaleadapt_core::detector::{DetectorSpec, SurrogatePrior};
use scaleadapt_core::eval::{evaluate, EvalConfig, Interpolation};
use scaleadapt_core::experiment::{adapt_eval, evaluate_detector, truth_frames, EvalRow};
use scaleadapt_core::pseudolabel::{self, annotate, Adapted, AnnotationConfig, AnnotationMode};
use scaleadapt_core::scalesearch::{build_grid, rank_tracks, score_table_csv, sweep_tracks, top_k_interval, ScaleInterval};
use scaleadapt_core::scoring::{Metric, ScoringConfig};
use scaleadapt_core::sim::{self, WorldConfig};
use scaleadapt_core::tracking::TrackerConfig;
use scaleadapt_core::ScaleTriple;
use serde::Serialize;

use crate::args::*;
use crate::record::*;
use crate::{usage, CliError, CliResult};

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> CliResult<()> {
    use std::io::Write as _;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(anyhow::Error::from(e).context("writing to stdout").into()),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value).context("serializing report")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn snapshot<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Resolves `--detector` into a spec, seeding the surrogate with `--seed`.
pub fn resolve_detector(args: &DetectorArgs) -> CliResult<DetectorSpec> {
    let d = args.detector.as_str();
    let mut spec = if d == "surrogate" {
        DetectorSpec::Surrogate(SurrogatePrior::default())
    } else if let Some(preset) = d.strip_prefix("surrogate:") {
        let world = WorldConfig::preset(preset).map_err(usage)?;
        DetectorSpec::Surrogate(SurrogatePrior::default().with_mean_dims(world.size_mean))
    } else {
        let text = fs::read_to_string(d)
            .map_err(|e| CliError::Usage(format!("detector '{d}' is not a known kind or readable spec file: {e}")))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("detector spec {d}: {e}")))?
    };
    if let DetectorSpec::Surrogate(p) = &mut spec {
        p.rng_seed = args.seed;
        p.validate().map_err(usage)?;
    }
    Ok(spec)
}

/// Loads a manifest with its label files; an empty manifest is a usage error.
pub fn load(manifest: &Path) -> CliResult<Vec<LoadedSequence>> {
    let manifests = dataio::load_manifest(manifest)?;
    if manifests.iter().all(|m| m.frames.is_empty()) {
        return Err(CliError::Usage(format!("manifest {} has no frames", manifest.display())));
    }
    Ok(dataio::load_sequences(&manifests, &ClassSet::default())?)
}

fn replace_truth(sequences: &mut [LoadedSequence], gt_root: &Path) -> CliResult<()> {
    let gt = dataio::read_label_tree(gt_root, sequences)?;
    for (seq, labels) in sequences.iter_mut().zip(gt) {
        for (frame, boxes) in seq.frames.iter_mut().zip(labels) {
            frame.truth = boxes;
        }
    }
    Ok(())
}

fn eval_config(eleven_point: bool) -> EvalConfig {
    EvalConfig {
        interpolation: if eleven_point {
            Interpolation::Eleven
        } else {
            Interpolation::Forty
        },
        ..EvalConfig::default()
    }
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg = match &args.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("scenario {}: {e}", path.display())))?
        }
        None => WorldConfig::preset(&args.preset).map_err(usage)?,
    };
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    if let Some(n) = args.sequences {
        cfg.n_sequences = n;
    }
    if let Some(n) = args.frames {
        cfg.frames_per_sequence = n;
    }
    cfg.validate().map_err(usage)?;
    let (manifests, _) = sim::generate(&cfg, &args.out)?;
    let world = toml::to_string(&cfg).context("serializing world config")?;
    fs::write(args.out.join("world.toml"), world).context("writing world.toml")?;
    let frames: usize = manifests.iter().map(|m| m.frames.len()).sum();
    emit(&format!(
        "wrote {} sequences, {frames} frames to {}\n",
        manifests.len(),
        args.out.display()
    ))?;
    Ok(())
}

pub fn scale_search(args: &ScaleSearchArgs) -> CliResult<()> {
    let metrics = args
        .metrics
        .iter()
        .map(|m| m.parse::<Metric>().map_err(usage))
        .collect::<CliResult<Vec<_>>>()?;
    if args.top_k.contains(&0) {
        return Err(CliError::Usage("--top-k must be >= 1".into()));
    }
    let spec = resolve_detector(&args.detector)?;
    let detector = spec.build()?;
    let grid = build_grid(args.epsilon, args.steps).map_err(usage)?;
    if let Some(k) = args.top_k.iter().find(|k| **k > grid.len()) {
        return Err(CliError::Usage(format!("--top-k {k} exceeds the grid size {}", grid.len())));
    }
    let tracker = TrackerConfig {
        raw_boxes: args.raw_track_boxes,
        ..TrackerConfig::default()
    };
    let sequences = load(&args.manifest)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut timings = Timings::new();
    let t = Instant::now();
    let tracks = sweep_tracks(&sequences, detector.as_ref(), &grid, &tracker)?;
    timings.insert("sweep".into(), secs(t));

    let t = Instant::now();
    let mut summaries = Vec::new();
    for metric in metrics {
        let scoring = ScoringConfig {
            min_track_len: args.min_track_len,
            h_star: args.h_star,
            metric,
        };
        scoring.validate().map_err(usage)?;
        let ranked = rank_tracks(&grid, &tracks, &scoring)?;
        let table = PathBuf::from(format!("scores_{}.csv", metric.as_str()));
        fs::write(args.out.join(&table), score_table_csv(&ranked)).context("writing score table")?;
        let top_k = args
            .top_k
            .iter()
            .map(|&k| Ok(TopK { k, interval: top_k_interval(&ranked, k)? }))
            .collect::<CliResult<Vec<_>>>()?;
        emit(&format!("{metric}: top-1 {} (score {:.6})\n", ranked[0].scale, ranked[0].score))?;
        summaries.push(MetricSummary {
            metric,
            score_table: table,
            top1: ranked[0].scale,
            top1_score: ranked[0].score,
            top_k,
            ranked,
        });
    }
    timings.insert("scoring".into(), secs(t));

    let config = snapshot(args);
    let summary = SearchSummary {
        run_id: run_id("scale-search", &config),
        command: "scale-search".into(),
        config,
        detector: spec,
        grid: GridInfo {
            epsilon: grid.epsilon,
            steps_per_axis: grid.steps_per_axis,
            size: grid.len(),
        },
        metrics: summaries,
        timings_file: "timings.json".into(),
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    write_json(&args.out.join("timings.json"), &timings)?;
    Ok(())
}

fn parse_scale(s: &str, flag: &str) -> CliResult<ScaleTriple> {
    s.parse()
        .map_err(|e| CliError::Usage(format!("{flag}: {e}")))
}

/// Interval, annotation mode, and how they were chosen.
fn resolve_interval(args: &PseudoLabelArgs) -> CliResult<(ScaleInterval, AnnotationMode, &'static str, Option<ScaleTriple>)> {
    let given = [
        args.no_scale,
        args.no_score,
        args.sup_scale.is_some(),
        args.scale.is_some(),
        args.summary.is_some(),
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if given == 0 {
        return Err(CliError::Usage(
            "no scale input: pass --summary, --scale, --sup-scale, --no-scale or --no-score".into(),
        ));
    }
    if given > 1 {
        return Err(CliError::Usage(
            "--summary, --scale, --sup-scale, --no-scale and --no-score are mutually exclusive".into(),
        ));
    }
    if args.no_scale {
        let w = ScaleTriple::IDENTITY;
        return Ok((ScaleInterval::point(w), AnnotationMode::Ss, "identity", Some(w)));
    }
    if args.no_score {
        if !(args.epsilon > 0.0 && args.epsilon < 1.0) {
            return Err(CliError::Usage("--epsilon must lie in (0, 1)".into()));
        }
        return Ok((ScaleInterval::cube(args.epsilon), AnnotationMode::Random, "uniform", None));
    }
    if let Some(s) = &args.sup_scale {
        let w = parse_scale(s, "--sup-scale")?;
        return Ok((ScaleInterval::point(w), AnnotationMode::Ss, "supervised", Some(w)));
    }
    if let Some(s) = &args.scale {
        let w = parse_scale(s, "--scale")?;
        return Ok((ScaleInterval::point(w), AnnotationMode::Ss, "explicit", Some(w)));
    }
    let path = args.summary.as_ref().expect("checked above");
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("summary {}: {e}", path.display())))?;
    let summary: SearchSummary =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("summary {}: {e}", path.display())))?;
    let chosen = match &args.metric {
        Some(m) => {
            let metric: Metric = m.parse().map_err(usage)?;
            summary
                .metrics
                .iter()
                .find(|s| s.metric == metric)
                .ok_or_else(|| CliError::Usage(format!("summary has no {metric} ranking")))?
        }
        None => summary
            .metrics
            .first()
            .ok_or_else(|| CliError::Usage("summary has no rankings".into()))?,
    };
    match args.mode {
        ModeArg::Ss => Ok((ScaleInterval::point(chosen.top1), AnnotationMode::Ss, "summary", Some(chosen.top1))),
        ModeArg::Ms => {
            if args.k == 0 || args.k > chosen.ranked.len() {
                return Err(CliError::Usage(format!(
                    "--k must lie in 1..={}",
                    chosen.ranked.len()
                )));
            }
            let iv = top_k_interval(&chosen.ranked, args.k)?;
            Ok((iv, AnnotationMode::Ms(args.k), "summary", None))
        }
    }
}

fn parse_thresholds(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Usage(format!("--thresholds: '{t}': {e}")))
        })
        .collect()
}

pub fn pseudo_label(args: &PseudoLabelArgs) -> CliResult<()> {
    let (interval, mode, scale_source, selected_scale) = resolve_interval(args)?;
    let annotation = AnnotationConfig {
        mode,
        passes_per_threshold: args.passes,
        thresholds: parse_thresholds(&args.thresholds)?,
        merge_iou: args.merge_iou,
        rng_seed: args.detector.seed,
    };
    annotation.validate().map_err(usage)?;
    let spec = resolve_detector(&args.detector)?;
    let detector = spec.build()?;
    let sequences = load(&args.manifest)?;

    let mut timings = Timings::new();
    let t = Instant::now();
    let labels = annotate(&sequences, detector.as_ref(), &interval, &annotation)?;
    timings.insert("annotate".into(), secs(t));

    let root = args.out.join("labels");
    let files = dataio::write_label_tree(&root, &sequences, &labels.labels)?;
    emit(&format!(
        "{mode}: {} pseudo-labels from {} candidates, written under {}\n",
        labels.box_count(),
        labels.candidates,
        root.display()
    ))?;
    let config = snapshot(args);
    let record = RunRecord {
        run_id: run_id("pseudo-label", &config),
        command: "pseudo-label".into(),
        config,
        detector: spec,
        annotation,
        scale_source: scale_source.into(),
        selected_scale,
        interval,
        summary: args.summary.clone(),
        pseudo_label_root: root,
        label_files: files.len(),
        candidates: labels.candidates,
        boxes: labels.box_count(),
        timings_file: "timings.json".into(),
    };
    write_json(&args.out.join("run_record.json"), &record)?;
    write_json(&args.out.join("timings.json"), &timings)?;
    Ok(())
}

pub fn adapt_eval_cmd(args: &AdaptEvalArgs) -> CliResult<()> {
    let spec = resolve_detector(&args.detector)?;
    let mut sequences = load(&args.manifest)?;
    if let Some(gt) = &args.gt {
        replace_truth(&mut sequences, gt)?;
    }
    let pseudo = dataio::read_label_tree(&args.pseudo_labels, &sequences)?;
    let pseudo_boxes: usize = pseudo.iter().flatten().map(Vec::len).sum();
    let cfg = eval_config(args.eleven_point);
    let seed = args.detector.seed;

    let (rows, gap_closure, handoff) = match &spec {
        DetectorSpec::Surrogate(prior) => {
            let report = adapt_eval(prior, &sequences, &pseudo, &cfg, seed)?;
            let gap = report.gap_closure();
            for row in [&report.source, &report.adapted, &report.oracle] {
                emit(&format!("{:<14} Avg-AP {:.4}\n", row.name, row.avg_ap()))?;
            }
            (vec![report.source, report.adapted, report.oracle], gap, None)
        }
        DetectorSpec::External(_) => {
            let detector = spec.build()?;
            let source = EvalRow {
                name: "source".into(),
                mean_dims: None,
                report: evaluate_detector(detector.as_ref(), &sequences, &cfg, seed)?,
            };
            let handoff_root = args
                .out
                .parent()
                .map(|p| p.join("handoff"))
                .unwrap_or_else(|| PathBuf::from("handoff"));
            let handoff = match pseudolabel::adapt(&spec, &sequences, &pseudo, &handoff_root)? {
                Adapted::Handoff(h) => h,
                Adapted::Surrogate { .. } => unreachable!("external spec adapts by handoff"),
            };
            emit(&format!(
                "external detector: {} pseudo-labels handed off under {}\n",
                handoff.boxes,
                handoff.label_root.display()
            ))?;
            (vec![source], None, Some(handoff))
        }
    };
    let config = snapshot(args);
    let record = AdaptEvalRecord {
        run_id: run_id("adapt-eval", &config),
        command: "adapt-eval".into(),
        config,
        detector: spec,
        pseudo_label_root: args.pseudo_labels.clone(),
        pseudo_label_boxes: pseudo_boxes,
        rows,
        gap_closure,
        handoff,
    };
    write_json(&args.out, &record)
}

pub fn eval_cmd(args: &EvalArgs) -> CliResult<()> {
    let mut sequences = load(&args.manifest)?;
    if let Some(gt) = &args.gt {
        replace_truth(&mut sequences, gt)?;
    }
    let gt = truth_frames(&sequences);
    let det: Vec<Vec<_>> = dataio::read_label_tree(&args.det, &sequences)?
        .into_iter()
        .flatten()
        .collect();
    let report = evaluate(&gt, &det, &eval_config(args.eleven_point))?;
    let record = EvalRecord {
        command: "eval".into(),
        config: snapshot(args),
        report,
    };
    match &args.out {
        Some(p) => write_json(p, &record),
        None => {
            emit(&format!("{}\n", serde_json::to_string_pretty(&record).context("serializing report")?))?;
            Ok(())
        }
    }
}

fn fmt_ap(ap: Option<f64>) -> String {
    ap.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

/// Whitespace-separated columns with `#` header lines.
pub fn render_report(text: &str) -> CliResult<String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("report is not JSON: {e}")))?;
    let mut out = String::new();
    if value.get("metrics").is_some() {
        let summary: SearchSummary = serde_json::from_value(value).context("reading scale-search summary")?;
        for m in &summary.metrics {
            writeln!(out, "# metric {}", m.metric).unwrap();
            writeln!(out, "# rank wx wy wz score eligible_tracks").unwrap();
            for (i, s) in m.ranked.iter().enumerate() {
                writeln!(
                    out,
                    "{} {:.4} {:.4} {:.4} {:.6} {}",
                    i + 1,
                    s.scale.wx,
                    s.scale.wy,
                    s.scale.wz,
                    s.score,
                    s.eligible_tracks()
                )
                .unwrap();
            }
            out.push_str("\n\n");
        }
    } else if value.get("rows").is_some() {
        let record: AdaptEvalRecord = serde_json::from_value(value).context("reading adapt-eval report")?;
        let first = &record.rows[0].report;
        let iou_names: Vec<&str> = first.iou.per_bucket.iter().map(|b| b.name.as_str()).collect();
        let cd_names: Vec<String> = first.center_distance.per_bucket.iter().map(|b| format!("cd_{}", b.name)).collect();
        writeln!(out, "# row {} iou_avg {} cd_avg", iou_names.join(" "), cd_names.join(" ")).unwrap();
        for row in &record.rows {
            let iou: Vec<String> = row.report.iou.per_bucket.iter().map(|b| fmt_ap(b.ap)).collect();
            let cd: Vec<String> = row.report.center_distance.per_bucket.iter().map(|b| fmt_ap(b.ap)).collect();
            writeln!(
                out,
                "{} {} {} {} {}",
                row.name,
                iou.join(" "),
                fmt_ap(row.report.iou.average),
                cd.join(" "),
                fmt_ap(row.report.center_distance.average)
            )
            .unwrap();
        }
    } else if value.get("report").is_some() {
        let record: EvalRecord = serde_json::from_value(value).context("reading eval report")?;
        writeln!(out, "# family bucket ap num_gt matched false_positives").unwrap();
        for (family, result) in [("iou", &record.report.iou), ("center_distance", &record.report.center_distance)] {
            for b in &result.per_bucket {
                writeln!(out, "{family} {} {} {} {} {}", b.name, fmt_ap(b.ap), b.num_gt, b.matched, b.false_positives).unwrap();
            }
        }
    } else {
        return Err(CliError::Usage("input is not a summary or evaluation report".into()));
    }
    Ok(out)
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.input).map_err(|e| CliError::Usage(format!("{}: {e}", args.input.display())))?;
    let out = render_report(&text)?;
    match &args.out {
        Some(p) => fs::write(p, out).with_context(|| format!("writing {}", p.display()))?,
        None => emit(&out)?,
    }
    Ok(())
}
