//! Experiment configuration files.
//!
//! Line oriented: `key = value` pairs, `[section name]` headers, `#`
//! comments. Durations are integer microseconds; `_` separators are allowed.
//!
//! ```text
//! duration = 60_000_000   # optional, defaults to 60 s
//! seed = 7
//! profile = C5              # BM, T3, T3U, C5, or a custom name
//! dispatch_granularity = 0  # optional
//! max_miss_probability = 0.01   # optional risk policy
//!
//! [slice s0]
//! capacity = 1.0
//!
//! [task c0]
//! period = 10000
//! deadline = 10000          # optional, defaults to period
//! wcet = 900
//! runtime = 900
//! offset = 0                # optional first release
//!
//! [noise]                   # only for custom profiles
//! firing_mean = 10
//! firing_sd = 3
//! firing_max = 114
//! runtime_offset = 4
//! runtime_sd = 14.81
//! runtime_max = 64
//! spike_probability = 0.0000096   # optional
//! spike_latency = 49000           # optional
//! ```
//!
//! A custom profile without a `[noise]` section is looked up as
//! `<name>.profile` (the same keys, section header optional) in the
//! directory named by [`PROFILE_DIR_ENV`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::admission::{AdmissionError, ResourceSlice, RiskPolicy};
use crate::model::{Micros, ModelError, TaskSet, TaskSpec};
use crate::noise::{
    calibrate_profile, FiringStats, NoiseError, ProfileName, RuntimeStats, Spike, SystemProfile,
};

/// Directory searched for custom profile files.
pub const PROFILE_DIR_ENV: &str = "RTSLICE_PROFILE_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Admission(#[from] AdmissionError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Where a configuration's noise model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSpec {
    Preset(ProfileName),
    Custom {
        name: String,
        firing: FiringStats,
        runtime: RuntimeStats,
        spike: Option<Spike>,
    },
}

impl ProfileSpec {
    pub fn name(&self) -> String {
        match self {
            ProfileSpec::Preset(p) => p.to_string(),
            ProfileSpec::Custom { name, .. } => name.clone(),
        }
    }

    pub fn build(&self) -> Result<SystemProfile, ConfigError> {
        match self {
            ProfileSpec::Preset(name) => SystemProfile::preset(name)
                .ok_or_else(|| NoiseError::UnknownProfile(name.to_string()).into()),
            ProfileSpec::Custom {
                name,
                firing,
                runtime,
                spike,
            } => {
                let mut profile = calibrate_profile(ProfileName::Custom(name.clone()), *firing, *runtime)?;
                if let Some(spike) = spike {
                    profile.noise = profile.noise.with_spike(*spike)?;
                }
                Ok(profile)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tasks: TaskSet,
    pub slices: Vec<ResourceSlice>,
    pub profile: ProfileSpec,
    pub duration: Micros,
    pub seed: u64,
    pub risk: Option<RiskPolicy>,
    pub release_offsets: BTreeMap<String, Micros>,
    pub dispatch_granularity: Micros,
}

/// Parses a configuration, resolving custom profiles via [`PROFILE_DIR_ENV`].
pub fn load_config(source: &str) -> Result<ExperimentConfig, ConfigError> {
    let dir = std::env::var_os(PROFILE_DIR_ENV).map(PathBuf::from);
    load_config_with(source, dir.as_deref())
}

pub fn load_config_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_config(&text)
}

#[derive(Debug, Default)]
struct Section {
    line: usize,
    entries: Vec<(usize, String, String)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        let pos = self.entries.iter().position(|(_, k, _)| k == key)?;
        let (line, _, value) = self.entries.remove(pos);
        Some((line, value))
    }

    fn finish(self, what: &str) -> Result<(), ConfigError> {
        match self.entries.first() {
            Some((line, key, _)) => Err(ConfigError::Parse {
                line: *line,
                message: format!("unknown key `{key}` in {what}"),
            }),
            None => Ok(()),
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError> {
    raw.replace('_', "").parse::<T>().map_err(|_| ConfigError::Parse {
        line,
        message: format!("field `{key}`: cannot parse `{raw}`"),
    })
}

fn required<T: std::str::FromStr>(section: &mut Section, key: &str, what: &str) -> Result<T, ConfigError> {
    match section.take(key) {
        Some((line, raw)) => parse_value(line, key, &raw),
        None if section.line == 0 => Err(ConfigError::Validation(format!("{what}: missing `{key}`"))),
        None => Err(ConfigError::Parse {
            line: section.line,
            message: format!("{what}: missing `{key}`"),
        }),
    }
}

fn optional<T: std::str::FromStr>(section: &mut Section, key: &str) -> Result<Option<T>, ConfigError> {
    section
        .take(key)
        .map(|(line, raw)| parse_value(line, key, &raw))
        .transpose()
}

enum SectionKind {
    Global,
    Slice(String),
    Task(String),
    Noise,
}

fn split_sections(source: &str) -> Result<Vec<(SectionKind, Section)>, ConfigError> {
    let mut sections = vec![(SectionKind::Global, Section::default())];
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some(inner) = text.strip_prefix('[') {
            let inner = inner.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                line,
                message: "unterminated section header".into(),
            })?;
            let mut words = inner.split_whitespace();
            let kind = match (words.next(), words.next(), words.next()) {
                (Some("slice"), Some(id), None) => SectionKind::Slice(id.to_string()),
                (Some("task"), Some(id), None) => SectionKind::Task(id.to_string()),
                (Some("noise"), None, None) => SectionKind::Noise,
                _ => {
                    return Err(ConfigError::Parse {
                        line,
                        message: format!("unknown section `[{inner}]`"),
                    })
                }
            };
            sections.push((kind, Section { line, entries: Vec::new() }));
            continue;
        }
        let (key, value) = text.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected `key = value`, found `{text}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let section = &mut sections.last_mut().expect("global section").1;
        if section.entries.iter().any(|(_, k, _)| k == key) {
            return Err(ConfigError::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        section.entries.push((line, key.to_string(), value.to_string()));
    }
    Ok(sections)
}

fn parse_noise(mut section: Section, name: &str) -> Result<ProfileSpec, ConfigError> {
    let what = "[noise]";
    let firing = FiringStats {
        mean: required(&mut section, "firing_mean", what)?,
        sd: required(&mut section, "firing_sd", what)?,
        max: required(&mut section, "firing_max", what)?,
    };
    let runtime = RuntimeStats {
        mean_offset: required(&mut section, "runtime_offset", what)?,
        sd: required(&mut section, "runtime_sd", what)?,
        max: required(&mut section, "runtime_max", what)?,
    };
    let spike = match (
        optional::<f64>(&mut section, "spike_probability")?,
        optional::<u64>(&mut section, "spike_latency")?,
    ) {
        (Some(probability), Some(latency)) => Some(Spike { probability, latency }),
        (None, None) => None,
        _ => {
            return Err(ConfigError::Parse {
                line: section.line,
                message: "spike_probability and spike_latency go together".into(),
            })
        }
    };
    section.finish(what)?;
    Ok(ProfileSpec::Custom {
        name: name.to_string(),
        firing,
        runtime,
        spike,
    })
}

fn profile_from_dir(dir: &Path, name: &str) -> Result<ProfileSpec, ConfigError> {
    let path = dir.join(format!("{name}.profile"));
    let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path, source })?;
    let mut sections = split_sections(&text)?;
    let mut merged = Section::default();
    for (kind, section) in sections.drain(..) {
        match kind {
            SectionKind::Global | SectionKind::Noise => merged.entries.extend(section.entries),
            _ => {
                return Err(ConfigError::Parse {
                    line: section.line,
                    message: "profile files hold noise keys only".into(),
                })
            }
        }
    }
    parse_noise(merged, name)
}

/// A preset name, or a custom profile read from the directory named by
/// [`PROFILE_DIR_ENV`].
pub fn resolve_profile(name: &str) -> Result<ProfileSpec, ConfigError> {
    match name.parse::<ProfileName>()? {
        ProfileName::Custom(custom) => {
            let dir = std::env::var_os(PROFILE_DIR_ENV).ok_or_else(|| {
                ConfigError::Validation(format!("custom profile `{custom}` needs {PROFILE_DIR_ENV}"))
            })?;
            profile_from_dir(Path::new(&dir), &custom)
        }
        preset => Ok(ProfileSpec::Preset(preset)),
    }
}

/// Parses a configuration; custom profiles are looked up in `profile_dir`.
///
/// `case1` … `case4` name the built-in workloads at full scale.
pub fn load_config_with(source: &str, profile_dir: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    if let Some(builtin) = crate::testcase::builtin_config(source.trim()) {
        return Ok(builtin);
    }
    let mut tasks = Vec::new();
    let mut slices = Vec::new();
    let mut offsets = BTreeMap::new();
    let mut noise: Option<Section> = None;
    let mut global = Section::default();

    for (kind, mut section) in split_sections(source)? {
        match kind {
            SectionKind::Global => global = section,
            SectionKind::Slice(id) => {
                let what = format!("[slice {id}]");
                let capacity: f64 = required(&mut section, "capacity", &what)?;
                section.finish(&what)?;
                if slices.iter().any(|s: &ResourceSlice| s.id == id) {
                    return Err(ConfigError::Validation(format!("duplicate slice `{id}`")));
                }
                slices.push(ResourceSlice::new(id, capacity)?);
            }
            SectionKind::Task(id) => {
                let what = format!("[task {id}]");
                let period: Micros = required(&mut section, "period", &what)?;
                let deadline = optional(&mut section, "deadline")?.unwrap_or(period);
                let wcet = required(&mut section, "wcet", &what)?;
                let runtime = required(&mut section, "runtime", &what)?;
                if let Some(offset) = optional::<Micros>(&mut section, "offset")? {
                    offsets.insert(id.clone(), offset);
                }
                section.finish(&what)?;
                tasks.push(TaskSpec::new(id, period, deadline, wcet, runtime)?);
            }
            SectionKind::Noise => {
                if noise.is_some() {
                    return Err(ConfigError::Validation("more than one [noise] section".into()));
                }
                noise = Some(section);
            }
        }
    }

    let duration: Micros = optional(&mut global, "duration")?.unwrap_or(crate::testcase::DEFAULT_DURATION);
    let seed = optional(&mut global, "seed")?.unwrap_or(0);
    let profile_name: String = optional(&mut global, "profile")?.unwrap_or_else(|| "zero".to_string());
    let risk = optional::<f64>(&mut global, "max_miss_probability")?
        .map(RiskPolicy::new)
        .transpose()?;
    let dispatch_granularity = optional(&mut global, "dispatch_granularity")?.unwrap_or(0);
    global.finish("global section")?;

    if duration == 0 {
        return Err(ConfigError::Validation("duration must be positive".into()));
    }
    if slices.is_empty() {
        slices.push(ResourceSlice::full("s0"));
    }
    let tasks = TaskSet::new(tasks)?;

    let parsed: ProfileName = profile_name.parse()?;
    let profile = match (parsed, noise) {
        (ProfileName::Custom(name), Some(section)) => parse_noise(section, &name)?,
        (ProfileName::Custom(name), None) if name == "zero" => ProfileSpec::Custom {
            name,
            firing: FiringStats { mean: 0.0, sd: 0.0, max: 0 },
            runtime: RuntimeStats { mean_offset: 0.0, sd: 0.0, max: 0 },
            spike: None,
        },
        (ProfileName::Custom(name), None) => match profile_dir {
            Some(dir) => profile_from_dir(dir, &name)?,
            None => return Err(NoiseError::UnknownProfile(name).into()),
        },
        (preset, None) => ProfileSpec::Preset(preset),
        (preset, Some(_)) => {
            return Err(ConfigError::Validation(format!(
                "[noise] given for preset profile `{preset}`"
            )))
        }
    };
    profile.build()?;

    Ok(ExperimentConfig {
        tasks,
        slices,
        profile,
        duration,
        seed,
        risk,
        release_offsets: offsets,
        dispatch_granularity,
    })
}

/// Serializes a configuration in the format [`load_config_with`] reads.
pub fn render_config(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "duration = {}", config.duration);
    let _ = writeln!(out, "seed = {}", config.seed);
    let _ = writeln!(out, "profile = {}", config.profile.name());
    if config.dispatch_granularity != 0 {
        let _ = writeln!(out, "dispatch_granularity = {}", config.dispatch_granularity);
    }
    if let Some(risk) = config.risk {
        let _ = writeln!(out, "max_miss_probability = {}", risk.max_miss_probability());
    }
    for slice in &config.slices {
        let _ = write!(out, "\n[slice {}]\ncapacity = {}\n", slice.id, slice.capacity);
    }
    for t in &config.tasks {
        let _ = write!(
            out,
            "\n[task {}]\nperiod = {}\ndeadline = {}\nwcet = {}\nruntime = {}\n",
            t.id, t.period, t.deadline, t.wcet, t.runtime
        );
        if let Some(offset) = config.release_offsets.get(&t.id) {
            let _ = writeln!(out, "offset = {offset}");
        }
    }
    if let ProfileSpec::Custom {
        name,
        firing,
        runtime,
        spike,
    } = &config.profile
    {
        let implicit_zero = name == "zero"
            && spike.is_none()
            && firing.mean == 0.0
            && firing.sd == 0.0
            && firing.max == 0
            && runtime.mean_offset == 0.0
            && runtime.sd == 0.0
            && runtime.max == 0;
        if !implicit_zero {
            let _ = write!(
                out,
                "\n[noise]\nfiring_mean = {}\nfiring_sd = {}\nfiring_max = {}\nruntime_offset = {}\nruntime_sd = {}\nruntime_max = {}\n",
                firing.mean, firing.sd, firing.max, runtime.mean_offset, runtime.sd, runtime.max
            );
            if let Some(s) = spike {
                let _ = write!(out, "spike_probability = {}\nspike_latency = {}\n", s.probability, s.latency);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two containers
duration = 1_000_000
seed = 3
profile = C5

[slice s0]
capacity = 1.0

[task a]
period = 10000
wcet = 900
runtime = 900

[task b]
period = 9000
deadline = 8000
wcet = 3000
runtime = 2500
offset = 100
";

    #[test]
    fn parses_sample() {
        let c = load_config_with(SAMPLE, None).unwrap();
        assert_eq!(c.tasks.len(), 2);
        assert_eq!(c.tasks.get("a").unwrap().deadline, 10_000);
        assert_eq!(c.tasks.get("b").unwrap().deadline, 8000);
        assert_eq!(c.release_offsets.get("b"), Some(&100));
        assert_eq!(c.profile, ProfileSpec::Preset(ProfileName::C5));
        assert_eq!((c.duration, c.seed), (1_000_000, 3));
        assert!(c.risk.is_none());
    }

    #[test]
    fn validation_error_for_wcet_above_period() {
        let bad = "duration = 10\n[task a]\nperiod = 100\nwcet = 200\nruntime = 10\n";
        let err = load_config_with(bad, None).unwrap_err();
        assert!(matches!(err, ConfigError::Model(ModelError::ConstraintViolation { .. })), "{err}");
    }

    #[test]
    fn parse_errors_name_line_and_field() {
        let bad = "duration = 10\n[task a]\nperiod = ten\nwcet = 2\nruntime = 1\n";
        match load_config_with(bad, None).unwrap_err() {
            ConfigError::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("period"));
            }
            other => panic!("{other}"),
        }
        let unknown = "duration = 10\ncolour = red\n[task a]\nperiod = 10\nwcet = 2\nruntime = 1\n";
        assert!(matches!(load_config_with(unknown, None), Err(ConfigError::Parse { line: 2, .. })));
        assert!(matches!(load_config_with("[task a\n", None), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(load_config_with("[oops]\n", None), Err(ConfigError::Parse { .. })));
        let missing = "[task a]\nperiod = 10\nruntime = 1\n";
        assert!(matches!(load_config_with(missing, None), Err(ConfigError::Parse { line: 1, .. })));
        let no_duration = "[task a]\nperiod = 10\nwcet = 2\nruntime = 1\n";
        assert_eq!(load_config_with(no_duration, None).unwrap().duration, 60_000_000);
    }

    #[test]
    fn unknown_custom_profile() {
        let c = "duration = 10\nprofile = lab\n[task a]\nperiod = 10\nwcet = 2\nruntime = 1\n";
        assert!(matches!(load_config_with(c, None), Err(ConfigError::Noise(NoiseError::UnknownProfile(_)))));
    }

    #[test]
    fn custom_profile_round_trips() {
        let text = SAMPLE.replace("profile = C5", "profile = lab")
            + "\n[noise]\nfiring_mean = 10\nfiring_sd = 3\nfiring_max = 114\nruntime_offset = 4\nruntime_sd = 14.81\nruntime_max = 64\nspike_probability = 0.0000096\nspike_latency = 49000\n";
        let c = load_config_with(&text, None).unwrap();
        assert!(c.profile.build().unwrap().noise.spike.is_some());
        assert_eq!(load_config_with(&render_config(&c), None).unwrap(), c);
    }

    #[test]
    fn profile_directory_lookup() {
        let dir = std::env::temp_dir().join(format!("rtslice-profiles-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(
            dir.join("lab.profile"),
            "firing_mean = 5\nfiring_sd = 1\nfiring_max = 20\nruntime_offset = 2\nruntime_sd = 1\nruntime_max = 6\n",
        )
        .unwrap();
        let c = "duration = 10\nprofile = lab\n[task a]\nperiod = 10\nwcet = 2\nruntime = 1\n";
        let parsed = load_config_with(c, Some(&dir)).unwrap();
        assert_eq!(parsed.profile.name(), "lab");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn sample_round_trips() {
        let c = load_config_with(SAMPLE, None).unwrap();
        assert_eq!(load_config_with(&render_config(&c), None).unwrap(), c);
    }
}
