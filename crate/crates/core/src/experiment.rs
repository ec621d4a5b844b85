//! Config-driven experiments: TOML recipes, per-seed output directories with a
//! content-hashed manifest, and cross-run comparison tables.
//!
//! ```text
//! <out>/<recipe>/
//!     config.toml            resolved config (all defaults filled in)
//!     manifest.json          sha256 of every artifact below
//!     seed-<s>/
//!         record.csv         one row per step (see trainer::RecordRow)
//!         summary.json
//!         confmap_epoch<E>.csv
//!         weight_hist.csv
//!         generator.ckpt  discriminator.ckpt  [pivot.ckpt]
//!         timing.json        wall-clock; not hashed
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Mode, Tensor};
use crate::constraints::{continuity_probe, mean_var, ConstraintKind, ProbeStats, TcMetric};
use crate::data::{sample_with, SyntheticKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{confidence_map, write_histograms_csv, Bounds, ConfidenceMap};
use crate::nn::{read_checkpoint, write_checkpoint, Discriminator, Generator, InitScheme};
use crate::objectives::{GeneratorForm, ObjectiveKind, ObjectiveSpec};
use crate::par::{self, Execution};
use crate::rng::{self, Stream};
use crate::trainer::{train, RowKind, RunOutcome, RunRecord, RunSummary, TrainConfig};

/// Files excluded from the manifest because their content is not
/// reproducible.
pub const UNHASHED: &[&str] = &["timing.json"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub recipe: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: SyntheticSpec,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// String-valued keys whose spelling is checked before typed parsing, so an
/// unknown name is reported with its full key path.
fn enum_keys() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        ("train.objective", ObjectiveKind::ALL.iter().map(|k| k.name()).collect()),
        ("train.generator_form", vec!["non-saturating", "minimax"]),
        ("train.constraint.kind", ConstraintKind::ALL.iter().map(|k| k.name()).collect()),
        ("train.constraint.tc_metric", TcMetric::ALL.iter().map(|k| k.name()).collect()),
        ("data.kind", SyntheticKind::ALL.iter().map(|k| k.name()).collect()),
    ]
}

fn lookup<'a>(v: &'a toml::Value, path: &str) -> Option<&'a toml::Value> {
    path.split('.').try_fold(v, |node, key| node.get(key))
}

/// Sets `path` (dotted) to `raw`, parsed as a TOML value when possible and as
/// a bare string otherwise.
pub fn apply_override(root: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{path}`")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{key}` is not a table")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override `{path}`: parent is not a table")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses, applies `key=value` overrides and validates. Every problem
    /// found is reported at once.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut root: toml::Value = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut root, k, v)?;
        }
        let mut problems = Vec::new();
        for (key, allowed) in enum_keys() {
            match lookup(&root, key) {
                None => {}
                Some(toml::Value::String(s)) if allowed.contains(&s.as_str()) => {}
                Some(other) => problems.push(format!(
                    "{key}: unknown value {other}; expected one of {}",
                    allowed.join(", ")
                )),
            }
        }
        if lookup(&root, "train.seed").is_some() {
            problems.push("train.seed: set seeds with the top-level `seeds` list".into());
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let cfg: ExperimentConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Validation(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?, overrides)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let ok_name = !self.recipe.is_empty()
            && self.recipe.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok_name {
            out.push(format!("recipe: must be a non-empty [A-Za-z0-9_-] name, got `{}`", self.recipe));
        }
        if self.seeds.is_empty() {
            out.push("seeds: need at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            out.push("seeds: must be distinct".into());
        }
        out.extend(self.train.violations("train."));
        out.extend(self.data.violations("data."));
        if self.data.count < self.train.batch_size {
            out.push(format!(
                "data.count: {} points cannot fill one batch of {}",
                self.data.count, self.train.batch_size
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Canonical TOML form with every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        let err = |e: toml::ser::Error| Error::Parse(e.to_string());
        let mut root = toml::Value::try_from(self).map_err(err)?;
        // the per-run seed comes from `seeds`
        if let Some(train) = root.get_mut("train").and_then(|t| t.as_table_mut()) {
            train.remove("seed");
        }
        toml::to_string(&root).map_err(err)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub recipe: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub files: Vec<ManifestEntry>,
    pub unhashed: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
        }
    }
    Ok(())
}

/// Hashes every file under `dir` except the manifest itself and
/// [`UNHASHED`] names, in sorted path order.
pub fn build_manifest(dir: &Path, recipe: &str, seeds: &[u64]) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut entries = Vec::new();
    for rel in files {
        let name = rel.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name == "manifest.json" || UNHASHED.contains(&name) {
            continue;
        }
        let bytes = fs::read(dir.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    Ok(Manifest {
        recipe: recipe.to_string(),
        seeds: seeds.to_vec(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        files: entries,
        unhashed: UNHASHED.iter().map(|s| s.to_string()).collect(),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes every artifact of one seed into `dir`.
pub fn write_outcome(dir: &Path, out: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    out.record.write_csv(fs::File::create(dir.join("record.csv"))?)?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    write_json(&dir.join("timing.json"), &out.timing)?;
    for (epoch, map) in &out.confmaps {
        map.write_csv(fs::File::create(dir.join(format!("confmap_epoch{epoch}.csv")))?)?;
    }
    write_histograms_csv(&out.histograms, fs::File::create(dir.join("weight_hist.csv"))?)?;
    write_checkpoint(&dir.join("generator.ckpt"), &out.generator.state())?;
    write_checkpoint(&dir.join("discriminator.ckpt"), &out.discriminator.state())?;
    if let Some(p) = out.objective.pivot() {
        write_checkpoint(&dir.join("pivot.ckpt"), &[("pivot".to_string(), p.w.clone())])?;
    }
    Ok(())
}

/// What [`run`] produced.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub summaries: Vec<RunSummary>,
    pub manifest: Manifest,
}

/// Trains every seed (in parallel when enabled) and writes
/// `<out_root>/<recipe>/`. An existing directory of the same name is
/// replaced.
pub fn run(cfg: &ExperimentConfig, out_root: &Path, exec: Execution) -> Result<RunReport> {
    cfg.validate()?;
    let dir = out_root.join(&cfg.recipe);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let results = par::map(exec, &cfg.seeds, |&seed| -> Result<RunSummary> {
        let out = train(&cfg.train_config(seed), &cfg.data)?;
        write_outcome(&dir.join(format!("seed-{seed}")), &out)?;
        Ok(out.summary)
    });
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = build_manifest(&dir, &cfg.recipe, &cfg.seeds)?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunReport { dir, summaries, manifest })
}

/// One recipe directory (or a single seed directory) loaded for comparison.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: Option<ExperimentConfig>,
    pub seeds: Vec<(u64, RunSummary, RunRecord)>,
    pub warnings: Vec<String>,
}

fn load_seed(dir: &Path) -> Result<(RunSummary, RunRecord)> {
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    let record = RunRecord::read_csv(fs::File::open(dir.join("record.csv"))?)?;
    Ok((summary, record))
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("`{}` is not a directory", dir.display())));
    }
    let config = fs::read_to_string(dir.join("config.toml"))
        .ok()
        .map(|t| ExperimentConfig::from_toml(&t, &[]))
        .transpose()?;
    let mut seed_dirs = Vec::new();
    if dir.join("summary.json").exists() {
        seed_dirs.push(dir.to_path_buf());
    } else {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed-")) {
                seed_dirs.push(p);
            }
        }
    }
    seed_dirs.sort();
    let mut seeds = Vec::new();
    let mut warnings = Vec::new();
    for d in seed_dirs {
        match load_seed(&d) {
            Ok((s, r)) if s.is_complete() => seeds.push((s.seed, s, r)),
            Ok((s, _)) => warnings.push(format!("{}: incomplete ({:?}), excluded", d.display(), s.status)),
            Err(e) => warnings.push(format!("{}: unreadable ({e}), excluded", d.display())),
        }
    }
    seeds.sort_by_key(|s| s.0);
    Ok(LoadedRun { dir: dir.to_path_buf(), config, seeds, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub recipe: String,
    pub objective: String,
    pub constraint: String,
    pub seeds: usize,
    pub final_frechet_mean: Option<f64>,
    pub final_frechet_sd: Option<f64>,
    pub best_frechet_mean: Option<f64>,
    pub modes_mean: Option<f64>,
    pub modes_sd: Option<f64>,
    pub probe_mean: Option<f64>,
    pub probe_variance_mean: Option<f64>,
    /// Mismatch or incompleteness notes; empty when clean.
    pub flags: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Per run: epoch → mean Fréchet distance across seeds.
    pub frechet_series: BTreeMap<String, Vec<(usize, f64)>>,
    pub warnings: Vec<String>,
}

/// Population mean and sample standard deviation.
fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let (m, var) = mean_var(v);
    let n = v.len() as f64;
    let sd = if v.len() > 1 { Some((var * n / (n - 1.0)).sqrt()) } else { Some(0.0) };
    (Some(m), sd)
}

/// Aligns final/best metrics and per-epoch series of at least two runs.
pub fn compare(dirs: &[PathBuf]) -> Result<Comparison> {
    if dirs.len() < 2 {
        return Err(Error::Config(format!("compare needs at least 2 runs, got {}", dirs.len())));
    }
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let reference = runs.iter().find_map(|r| r.config.clone());
    let mut rows = Vec::new();
    let mut frechet_series = BTreeMap::new();
    for run in &runs {
        let name = run.dir.display().to_string();
        let mut flags: Vec<String> = run.warnings.clone();
        warnings.extend(run.warnings.iter().cloned());
        if let (Some(cfg), Some(r)) = (&run.config, &reference) {
            if cfg.data != r.data {
                flags.push(format!("data differs from {}", r.recipe));
            }
            if cfg.train.epochs != r.train.epochs {
                flags.push(format!("epochs {} vs {}", cfg.train.epochs, r.train.epochs));
            }
            if cfg.train.generator != r.train.generator || cfg.train.discriminator.hidden != r.train.discriminator.hidden {
                flags.push("network sizes differ".into());
            }
        } else if run.config.is_none() {
            flags.push("no config.toml".into());
        }
        if run.seeds.is_empty() {
            flags.push("no complete seeds".into());
        }
        let collect = |f: &dyn Fn(&RunSummary) -> Option<f64>| -> Vec<f64> {
            run.seeds.iter().filter_map(|(_, s, _)| f(s)).collect()
        };
        let (ff_m, ff_sd) = mean_sd(&collect(&|s| s.final_frechet));
        let (bf_m, _) = mean_sd(&collect(&|s| s.best_frechet));
        let (mo_m, mo_sd) = mean_sd(&collect(&|s| s.final_modes_covered.map(|m| m as f64)));
        let (pm, _) = mean_sd(&collect(&|s| s.probe_mean_overall));
        let (pv, _) = mean_sd(&collect(&|s| s.probe_variance_across_epochs));

        let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (_, _, rec) in &run.seeds {
            for r in rec.of_kind(RowKind::Metrics) {
                if let Some(f) = r.frechet {
                    by_epoch.entry(r.epoch).or_default().push(f);
                }
            }
        }
        frechet_series.insert(
            name.clone(),
            by_epoch
                .into_iter()
                .map(|(e, v)| (e, v.iter().sum::<f64>() / v.len() as f64))
                .collect(),
        );
        rows.push(ComparisonRow {
            run: name,
            recipe: run.config.as_ref().map(|c| c.recipe.clone()).unwrap_or_default(),
            objective: run.config.as_ref().map(|c| c.train.objective.to_string()).unwrap_or_default(),
            constraint: run.config.as_ref().map(|c| c.train.constraint.kind.to_string()).unwrap_or_default(),
            seeds: run.seeds.len(),
            final_frechet_mean: ff_m,
            final_frechet_sd: ff_sd,
            best_frechet_mean: bf_m,
            modes_mean: mo_m,
            modes_sd: mo_sd,
            probe_mean: pm,
            probe_variance_mean: pv,
            flags: flags.join("; "),
        });
    }
    let recipes: Vec<&str> = rows.iter().map(|r| r.recipe.as_str()).collect();
    if recipes.windows(2).any(|w| w[0] == w[1]) {
        warnings.push("the same recipe appears more than once".into());
    }
    Ok(Comparison { rows, frechet_series, warnings })
}

impl Comparison {
    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

impl ExperimentConfig {
    /// Shorthand used by recipes and tests: objective + constraint on a
    /// dataset, everything else at defaults.
    pub fn recipe(name: &str, objective: ObjectiveKind, constraint: ConstraintKind, data: SyntheticKind) -> Self {
        let mut train = TrainConfig {
            objective,
            generator_form: GeneratorForm::NonSaturating,
            ..TrainConfig::default()
        };
        train.constraint.kind = constraint;
        train.discriminator.embed_dim = if objective.requires_scalar() { 1 } else { 16 };
        Self {
            recipe: name.to_string(),
            description: String::new(),
            seeds: vec![0, 1, 2, 3, 4],
            train,
            data: SyntheticSpec::of(data),
        }
    }
}

/// A trained seed directory reloaded for post-hoc analysis.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub objective: ObjectiveSpec,
}

impl Snapshot {
    /// Loads `<recipe>/seed-<s>/` using the recipe's `config.toml`.
    pub fn load(seed_dir: &Path) -> Result<Self> {
        let parent = seed_dir
            .parent()
            .ok_or_else(|| Error::Config(format!("`{}` has no parent recipe directory", seed_dir.display())))?;
        let config = ExperimentConfig::load(&parent.join("config.toml"), &[])?;
        let summary: RunSummary = serde_json::from_str(&fs::read_to_string(seed_dir.join("summary.json"))?)?;
        let cfg = config.train_config(summary.seed);
        let mut generator = Generator::new(cfg.generator, InitScheme::Uniform, &mut rng::stream(cfg.seed, Stream::GeneratorInit));
        generator.load_state(&read_checkpoint(&seed_dir.join("generator.ckpt"))?)?;
        let mut discriminator =
            Discriminator::new(cfg.discriminator, InitScheme::Uniform, &mut rng::stream(cfg.seed, Stream::DiscriminatorInit))?;
        discriminator.load_state(&read_checkpoint(&seed_dir.join("discriminator.ckpt"))?)?;
        let mut objective = ObjectiveSpec::new(cfg.objective, cfg.discriminator.embed_dim)?;
        objective.generator_form = cfg.generator_form;
        if let Some(p) = objective.pivot_mut() {
            let entries = read_checkpoint(&seed_dir.join("pivot.ckpt"))?;
            p.w = entries
                .into_iter()
                .find(|(n, _)| n == "pivot")
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Parse("pivot.ckpt has no `pivot` entry".into()))?;
        }
        Ok(Self { config, seed: summary.seed, generator, discriminator, objective })
    }

    pub fn confidence_map(&self, half_width: f64, resolution: usize, exec: Execution) -> Result<ConfidenceMap> {
        confidence_map(&self.discriminator, &self.objective, Bounds::square(half_width), resolution, exec)
    }

    /// Continuity probe on `batch` fresh real points and generator samples.
    pub fn probe(&self, layer: usize, trials: usize, batch: usize, seed: u64) -> Result<ProbeStats> {
        let mut rng = rng::stream(seed, Stream::Probe);
        let x_r = sample_with(&self.config.data, &mut rng, batch)?;
        let z_dim = self.generator.config.z_dim;
        let z: Vec<f64> = (0..batch * z_dim).map(|_| rng.sample(StandardNormal)).collect();
        let x_g = self.generator.sample(&Tensor::matrix(batch, z_dim, z)?, Mode::Eval)?;
        continuity_probe(&self.discriminator, &x_r, &x_g, layer, trials, &mut rng)
    }
}
