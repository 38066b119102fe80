//! Run configuration: built-in defaults, then a TOML config file, then flags.

use crate::CliError;
use mimic_core::constraints::ThresholdOverrides;
use mimic_core::ontology::{load_ontology, Ontology};
use mimic_core::recognizer::{builtin_actions, parse_actions, ActionDefinition};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub ontology: Option<PathBuf>,
    pub actions: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modes {
    pub strict_pour: Option<bool>,
    pub lenient_scene: Option<bool>,
    pub init_window: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub format: Option<String>,
    pub min_overlap: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub thresholds: ThresholdOverrides,
    #[serde(default)]
    pub modes: Modes,
    #[serde(default)]
    pub report: ReportSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
        let text = read_input(path)?;
        let mut cfg: ConfigFile =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        // Relative paths in a config file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.ontology, &mut cfg.paths.actions].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Everything a subcommand needs after merging config and flags.
pub struct RunConfig {
    pub ontology: Ontology,
    pub actions: Vec<ActionDefinition>,
    pub overrides: ThresholdOverrides,
    pub lenient_scene: bool,
    pub init_window: usize,
    pub report_format: Option<String>,
    pub min_overlap: Option<f64>,
}

pub fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_ontology_file(path: Option<&Path>) -> Result<Ontology, CliError> {
    match path {
        Some(p) => load_ontology(&read_input(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => Ok(Ontology::builtin()),
    }
}

pub fn load_actions_file(path: Option<&Path>, strict_pour: bool) -> Result<Vec<ActionDefinition>, CliError> {
    match path {
        Some(p) => parse_actions(&read_input(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => Ok(builtin_actions(strict_pour)),
    }
}

pub struct FlagValues<'a> {
    pub config: Option<&'a Path>,
    pub ontology: Option<&'a Path>,
    pub actions: Option<&'a Path>,
    pub overrides: ThresholdOverrides,
    pub strict_pour: bool,
    pub lenient_scene: bool,
    pub init_window: Option<usize>,
}

pub fn resolve(flags: FlagValues<'_>) -> Result<RunConfig, CliError> {
    let file = match flags.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let ontology_path = flags.ontology.map(Path::to_path_buf).or(file.paths.ontology);
    let actions_path = flags.actions.map(Path::to_path_buf).or(file.paths.actions);
    let strict = flags.strict_pour || file.modes.strict_pour.unwrap_or(false);
    let ontology = load_ontology_file(ontology_path.as_deref())?;
    let actions = load_actions_file(actions_path.as_deref(), strict)?;
    let init_window = flags.init_window.or(file.modes.init_window).unwrap_or(mimic_core::scene::DEFAULT_INIT_WINDOW);
    if init_window == 0 {
        return Err(CliError::Input("init_window must be at least 1".into()));
    }
    Ok(RunConfig {
        ontology,
        actions,
        overrides: file.thresholds.merge(flags.overrides),
        lenient_scene: flags.lenient_scene || file.modes.lenient_scene.unwrap_or(false),
        init_window,
        report_format: file.report.format,
        min_overlap: file.report.min_overlap,
    })
}
