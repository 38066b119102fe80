use crate::config::{read_input, RunConfig};
use crate::{ActionsArgs, CliError, GenArgs, RecognizeArgs, ReportArgs, ReportFormat, ValidateArgs};
use mimic_core::constraints::{write_truth_stream, EvalContext};
use mimic_core::planner::{parse_plan_str, plan_with_scene, write_plan};
use mimic_core::recognizer::{dump_actions, match_actions_with, parse_timeline_str, write_timeline, MatchOptions};
use mimic_core::report::{evaluate_corpus, load_corpus, render_csv, render_text, ReportOptions};
use mimic_core::scene::analyze_initial;
use mimic_core::synthgen::{batch, builtin_templates, compile, parse_template, CorpusSpec, NoiseParams, SynthError, Template};
use mimic_core::trace::{parse_trace_str, Trace};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("writing {}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| write_err(path, e))
}

fn load_trace(path: &Path) -> Result<Trace, CliError> {
    let trace = parse_trace_str(&read_input(path)?).map_err(|e| input_err(path, e))?;
    for w in trace.lint() {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(trace)
}

/// `dir/run.trace.jsonl` becomes `run`; `dir/run.jsonl` also becomes `run`.
fn trace_stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".jsonl").unwrap_or(&name);
    name.strip_suffix(".trace").unwrap_or(name).to_string()
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_file_name(format!("{}{suffix}", trace_stem(path)))
}

pub fn recognize(cfg: &RunConfig, args: &RecognizeArgs) -> Result<(), CliError> {
    let path = &args.trace;
    let trace = load_trace(path)?;
    let th = cfg.overrides.resolve(trace.image_size).map_err(|e| CliError::Input(e.to_string()))?;
    let mut scene = analyze_initial(&trace, &cfg.ontology, cfg.init_window).map_err(|e| input_err(path, e))?;
    let options = MatchOptions { lenient_scene: cfg.lenient_scene };
    let mut timeline = match_actions_with(&trace, &scene, &cfg.ontology, &th, &cfg.actions, options)
        .map_err(|e| input_err(path, e))?;
    timeline.trace = trace_stem(path);
    scene.check_trace(&trace, &cfg.ontology, cfg.lenient_scene).map_err(|e| input_err(path, e))?;
    let plan = plan_with_scene(&timeline, &cfg.ontology, &scene).map_err(|e| input_err(path, e))?;

    let out_timeline = args.out_timeline.clone().unwrap_or_else(|| sibling(path, ".timeline.jsonl"));
    let out_plan = args.out_plan.clone().unwrap_or_else(|| sibling(path, ".plan.jsonl"));
    write_timeline(&timeline, create(&out_timeline)?).map_err(|e| write_err(&out_timeline, e))?;
    write_plan(&plan, create(&out_plan)?).map_err(|e| write_err(&out_plan, e))?;
    if let Some(out) = &args.trace_constraints {
        let ctx = EvalContext::advanced(&trace, &scene, &cfg.ontology, th);
        write_truth_stream(&ctx, create(out)?).map_err(|e| write_err(out, e))?;
    }

    let mut stdout = std::io::stdout().lock();
    let mut emit = || -> std::io::Result<()> {
        for inst in &timeline.instances {
            writeln!(stdout, "{} {} [{}, {}]", inst.action, inst.bindings, inst.start, inst.end)?;
        }
        for c in &plan.commands {
            writeln!(stdout, "  {c}")?;
        }
        Ok(())
    };
    emit().map_err(|e| CliError::Internal(e.to_string()))
}

pub fn report(cfg: &RunConfig, args: &ReportArgs) -> Result<(), CliError> {
    let items = load_corpus(&args.corpus).map_err(|e| input_err(&args.corpus, e))?;
    let min_overlap = args.min_overlap.or(cfg.min_overlap).unwrap_or(ReportOptions::default().min_overlap);
    if !(0.0..=1.0).contains(&min_overlap) {
        return Err(CliError::Input(format!("min_overlap = {min_overlap} is outside [0, 1]")));
    }
    let format = match (args.format, cfg.report_format.as_deref()) {
        (Some(f), _) => f,
        (None, None | Some("text")) => ReportFormat::Text,
        (None, Some("csv")) => ReportFormat::Csv,
        (None, Some(other)) => return Err(CliError::Input(format!("unknown report format '{other}'"))),
    };
    let options = ReportOptions {
        min_overlap,
        init_window: cfg.init_window,
        lenient_scene: cfg.lenient_scene,
        overrides: cfg.overrides,
    };
    let (report, _) = evaluate_corpus(&items, &cfg.ontology, &cfg.actions, &options)
        .map_err(|e| input_err(&args.corpus, e))?;
    let text = match format {
        ReportFormat::Text => render_text(&report),
        ReportFormat::Csv => render_csv(&report),
    };
    match &args.out {
        Some(out) => std::fs::write(out, text).map_err(|e| write_err(out, e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Internal(e.to_string())),
    }
}

fn load_template(path: &Path) -> Result<Template, CliError> {
    parse_template(&read_input(path)?).map_err(|e| input_err(path, e))
}

pub fn gen(cfg: &RunConfig, args: &GenArgs) -> Result<(), CliError> {
    let mut templates = if args.templates.is_empty() {
        builtin_templates()
    } else {
        args.templates.iter().map(|p| load_template(p)).collect::<Result<_, _>>()?
    };
    for t in &mut templates {
        t.thresholds = t.thresholds.merge(cfg.overrides);
    }
    let mut noise_grid = Vec::new();
    for &centroid_jitter_px in &args.jitter {
        for &dropout_prob in &args.dropout {
            for &grip_offset_px in &args.grip_offset {
                noise_grid.push(NoiseParams { centroid_jitter_px, dropout_prob, grip_offset_px });
            }
        }
    }
    let spec = CorpusSpec { count: args.count, templates, noise_grid, seed: args.seed };
    let manifest = batch(&spec, &cfg.ontology, &args.out).map_err(|e| match e {
        SynthError::Io(io) => write_err(&args.out, io),
        other => CliError::Input(other.to_string()),
    })?;
    println!("wrote {} traces to {}", manifest.entries.len(), args.out.display());
    Ok(())
}

pub fn validate(cfg: &RunConfig, args: &ValidateArgs) -> Result<(), CliError> {
    println!("ontology: {} classes", cfg.ontology.n());
    println!("actions: {} definitions", cfg.actions.len());
    for path in &args.traces {
        let trace = load_trace(path)?;
        if trace.is_empty() {
            return Err(input_err(path, "trace has no frames"));
        }
        cfg.overrides.resolve(trace.image_size).map_err(|e| input_err(path, e))?;
        let mut scene = analyze_initial(&trace, &cfg.ontology, cfg.init_window).map_err(|e| input_err(path, e))?;
        scene.check_trace(&trace, &cfg.ontology, cfg.lenient_scene).map_err(|e| input_err(path, e))?;
        println!("{}: ok, {} frames", path.display(), trace.len());
    }
    for path in &args.timelines {
        let t = parse_timeline_str(&read_input(path)?).map_err(|e| input_err(path, e))?;
        println!("{}: ok, {} instances", path.display(), t.instances.len());
    }
    for path in &args.plans {
        let p = parse_plan_str(&read_input(path)?).map_err(|e| input_err(path, e))?;
        println!("{}: ok, {} commands", path.display(), p.commands.len());
    }
    for path in &args.templates {
        let t = load_template(path)?;
        compile(&t, 0, &cfg.ontology).map_err(|e| input_err(path, e))?;
        println!("{}: ok", path.display());
    }
    Ok(())
}

pub fn actions(cfg: &RunConfig, args: &ActionsArgs) -> Result<(), CliError> {
    if args.dump {
        print!("{}", dump_actions(&cfg.actions));
        return Ok(());
    }
    for def in &cfg.actions {
        let roles: Vec<String> = def.roles.iter().map(|r| format!("{}: {}", r.name, r.kind.keyword())).collect();
        let kind = if def.is_composite() { "composite" } else { "primitive" };
        println!("{}({}) {kind}", def.name, roles.join(", "));
    }
    Ok(())
}
