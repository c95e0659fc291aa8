//! Line-based configuration files.
//!
//! ```text
//! # comment
//! [run]
//! particles = 4096
//! sites = 2
//!
//! [network]
//! lambda_wan = 0.003
//!
//! [site]
//! name = fast
//! tau_tree = 1e-9
//! ```
//!
//! Sections are `run`, `network` and `site`. Every `[site]` section adds
//! one machine to the roster in file order. Keys outside a section, unknown
//! keys and repeated keys are errors.

use super::{ExperimentConfig, InitialConditions};
use crate::nbody::{DtPolicy, ThetaSchedule};
use crate::perf_model::{fixtures, MachineConstants, NetworkConstants, RunSpec};
use crate::transport::{Backend, ChannelConfig};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("[{section}] {key}: {msg}")]
    Value { section: String, key: String, msg: String },
}

const RUN_KEYS: &[&str] = &[
    "particles",
    "mesh",
    "theta",
    "theta_schedule",
    "processes",
    "sites",
    "roster",
    "r_samp",
    "migration_bytes",
    "steps",
    "seed",
    "ic",
    "noise",
    "plummer_a",
    "box",
    "mass",
    "softening",
    "ncrit",
    "n_leaf",
    "cutoff_cells",
    "dt",
    "dt_max",
    "eta",
    "dt_initial",
    "move_limit",
    "snapshot_every",
    "snapshot_dir",
    "backend",
];
const NETWORK_KEYS: &[&str] = &[
    "lambda_lan",
    "lambda_wan",
    "sigma_lan",
    "sigma_wan",
    "star",
    "profile",
    "streams",
    "chunk",
    "recv_chunk",
    "pacing",
    "buffer",
];
const SITE_KEYS: &[&str] = &["name", "tau_tree", "tau_fft", "tau_mesh"];

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    match section {
        "run" => Some(RUN_KEYS),
        "network" => Some(NETWORK_KEYS),
        "site" => Some(SITE_KEYS),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    pub sections: Vec<Section>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ConfigFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| ConfigError::Syntax { line, msg };
            let t = raw.split('#').next().unwrap().trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{t}`")))?
                    .trim();
                if known_keys(name).is_none() {
                    return Err(err(format!("unknown section [{name}]")));
                }
                if name != "site" && cfg.sections.iter().any(|s| s.name == name) {
                    return Err(err(format!("section [{name}] appears twice")));
                }
                cfg.sections.push(Section {
                    name: name.to_string(),
                    entries: Vec::new(),
                });
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{t}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let section = cfg.sections.last_mut().ok_or_else(|| err(format!("`{k}` outside any section")))?;
            if !known_keys(&section.name).unwrap().contains(&k) {
                return Err(err(format!("unknown key `{k}` in [{}]", section.name)));
            }
            if section.get(k).is_some() {
                return Err(err(format!("`{k}` set twice in [{}]", section.name)));
            }
            section.entries.push((k.to_string(), v.to_string()));
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Syntax {
            line: 0,
            msg: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Set `section.key`, replacing a value from the file. Used for command
    /// line overrides; `site` sections cannot be overridden this way.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |msg: &str| ConfigError::Value {
            section: section.into(),
            key: key.into(),
            msg: msg.into(),
        };
        match known_keys(section) {
            Some(keys) if section != "site" => {
                if !keys.contains(&key) {
                    return Err(bad("unknown key"));
                }
            }
            _ => return Err(bad("not an overridable section")),
        }
        let idx = match self.sections.iter().position(|s| s.name == section) {
            Some(i) => i,
            None => {
                self.sections.push(Section {
                    name: section.into(),
                    entries: Vec::new(),
                });
                self.sections.len() - 1
            }
        };
        let s = &mut self.sections[idx];
        match s.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value.to_string(),
            None => s.entries.push((key.to_string(), value.to_string())),
        }
        Ok(())
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let syntax = |msg: String| ConfigError::Syntax { line: 0, msg };
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| syntax(format!("override `{spec}` is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| syntax(format!("override `{spec}` is not section.key=value")))?;
        self.set(section, key, value.trim())
    }

    fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.section(section).and_then(|s| s.get(key))
    }

    fn value<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(section, key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::Value {
                    section: section.into(),
                    key: key.into(),
                    msg: format!("`{v}`: {e}"),
                })
            })
            .transpose()
    }

    fn bad(section: &str, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            section: section.into(),
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Site roster: `[site]` sections if present, else the named preset,
    /// cycled or truncated to `run.sites` entries.
    fn roster(&self) -> Result<Vec<MachineConstants>, ConfigError> {
        let mut roster = Vec::new();
        for (i, s) in self.sections.iter().filter(|s| s.name == "site").enumerate() {
            let num = |k: &str| -> Result<f64, ConfigError> {
                let v = s.get(k).ok_or_else(|| Self::bad("site", k, format!("missing in site {i}")))?;
                v.parse::<f64>().map_err(|e| Self::bad("site", k, format!("`{v}`: {e}")))
            };
            let name = s.get("name").map(str::to_string).unwrap_or_else(|| format!("site{i}"));
            let m = MachineConstants::new(name, num("tau_tree")?, num("tau_fft")?, num("tau_mesh")?)
                .map_err(|e| Self::bad("site", "tau", e.to_string()))?;
            roster.push(m);
        }
        if roster.is_empty() {
            roster = match self.raw("run", "roster").unwrap_or("das3") {
                "das3" => fixtures::das3_sites(),
                "grid" => vec![fixtures::global_grid_site()],
                label if label.starts_with("gbbp:") => {
                    let table = fixtures::gbbp_sites();
                    label[5..]
                        .chars()
                        .map(|c| {
                            table
                                .get(c.to_string().as_str())
                                .cloned()
                                .ok_or_else(|| Self::bad("run", "roster", format!("unknown site letter {c}")))
                        })
                        .collect::<Result<_, _>>()?
                }
                other => return Err(Self::bad("run", "roster", format!("unknown preset `{other}`"))),
            };
            if roster.is_empty() {
                return Err(Self::bad("run", "roster", "empty roster"));
            }
        }
        let s = self.value::<usize>("run", "sites")?.unwrap_or(1);
        if s == 0 {
            return Err(Self::bad("run", "sites", "must be >= 1"));
        }
        Ok(roster.iter().cycle().take(s).cloned().collect())
    }

    fn network(&self, roster_preset: &str) -> Result<NetworkConstants, ConfigError> {
        let mut net = match roster_preset {
            "grid" => fixtures::global_grid_network(),
            p if p.starts_with("gbbp:") => fixtures::gbbp_network(),
            _ => fixtures::das3_network(),
        };
        for (key, slot) in [
            ("lambda_lan", &mut net.lambda_lan),
            ("lambda_wan", &mut net.lambda_wan),
            ("sigma_lan", &mut net.sigma_lan),
            ("sigma_wan", &mut net.sigma_wan),
        ] {
            if let Some(v) = self.value::<f64>("network", key)? {
                *slot = v;
            }
        }
        if let Some(v) = self.value::<bool>("network", "star")? {
            net.star_topology = v;
        }
        Ok(net)
    }

    /// The model inputs described by the file.
    pub fn run_spec(&self) -> Result<RunSpec, ConfigError> {
        let d = ExperimentConfig::default().run;
        let sites = self.roster()?;
        let spec = RunSpec {
            n_particles: self.value("run", "particles")?.unwrap_or(d.n_particles),
            n_mesh: self.value("run", "mesh")?.unwrap_or(d.n_mesh),
            theta: self.value("run", "theta")?.unwrap_or(d.theta),
            p_total: self.value("run", "processes")?.unwrap_or(4 * sites.len() as u64),
            network: self.network(self.raw("run", "roster").unwrap_or("das3"))?,
            sites,
            r_samp: self.value("run", "r_samp")?.unwrap_or(d.r_samp),
            migration_bytes: self.value("run", "migration_bytes")?.unwrap_or(0.0),
        };
        spec.validate().map_err(|e| Self::bad("run", "*", e.to_string()))?;
        Ok(spec)
    }

    pub fn channel(&self) -> Result<ChannelConfig, ConfigError> {
        let mut c = match self.raw("network", "profile") {
            Some(p) => ChannelConfig::profile(p).ok_or_else(|| Self::bad("network", "profile", format!("unknown profile `{p}`")))?,
            None => ExperimentConfig::default().channel,
        };
        if let Some(v) = self.value::<u16>("network", "streams")? {
            c.streams = v;
        }
        if let Some(v) = self.value::<usize>("network", "chunk")? {
            c.send_chunk = v;
            c.recv_chunk = v;
        }
        if let Some(v) = self.value::<usize>("network", "recv_chunk")? {
            c.recv_chunk = v;
        }
        match self.raw("network", "pacing") {
            None => {}
            Some("unlimited") | Some("none") => c.pacing_rate = None,
            Some(_) => c.pacing_rate = self.value::<f64>("network", "pacing")?,
        }
        if let Some(v) = self.value::<usize>("network", "buffer")? {
            c.buffer_size = Some(v);
        }
        c.validate().map_err(|e| Self::bad("network", "*", e.to_string()))?;
        Ok(c)
    }

    /// The full experiment described by the file, with defaults for absent keys.
    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let d = ExperimentConfig::default();
        let mut c = ExperimentConfig {
            run: self.run_spec()?,
            channel: self.channel()?,
            ..d.clone()
        };
        c.backend = match self.raw("run", "backend").unwrap_or("simulated") {
            "simulated" | "sim" => Backend::Simulated,
            "tcp" => Backend::Tcp,
            other => return Err(Self::bad("run", "backend", format!("`{other}` is not simulated or tcp"))),
        };
        c.steps = self.value("run", "steps")?.unwrap_or(d.steps);
        c.seed = self.value("run", "seed")?.unwrap_or(d.seed);
        c.box_len = self.value("run", "box")?.unwrap_or(d.box_len);
        c.total_mass = self.value("run", "mass")?.unwrap_or(d.total_mass);
        c.softening = self.value("run", "softening")?.unwrap_or(d.softening);
        c.ncrit = self.value("run", "ncrit")?.unwrap_or(d.ncrit);
        c.n_leaf = self.value("run", "n_leaf")?.unwrap_or(d.n_leaf);
        c.cutoff_cells = self.value("run", "cutoff_cells")?.unwrap_or(d.cutoff_cells);
        c.move_limit = self.value("run", "move_limit")?.unwrap_or(d.move_limit);
        c.snapshot_every = self.value("run", "snapshot_every")?;
        c.snapshot_dir = self.raw("run", "snapshot_dir").map(PathBuf::from);
        c.dt_initial = self.value("run", "dt_initial")?;
        c.dt = match (self.value::<f64>("run", "dt")?, self.value::<f64>("run", "dt_max")?) {
            (Some(_), Some(_)) => return Err(Self::bad("run", "dt", "give either dt or dt_max, not both")),
            (Some(dt), None) => DtPolicy::Fixed(dt),
            (None, Some(dt_max)) => DtPolicy::Adaptive {
                eta: self.value("run", "eta")?.unwrap_or(crate::nbody::integrate::DEFAULT_ETA),
                dt_max,
            },
            (None, None) => d.dt,
        };
        let noise = self.value("run", "noise")?.unwrap_or(0.1);
        c.initial = match self.raw("run", "ic").unwrap_or("lattice") {
            "lattice" => InitialConditions::Lattice { noise },
            "plummer" => InitialConditions::Plummer {
                a: self.value("run", "plummer_a")?.unwrap_or(0.05),
            },
            path => InitialConditions::File(PathBuf::from(path)),
        };
        if let Some(v) = self.raw("run", "theta_schedule") {
            c.theta_schedule = Some(parse_theta_schedule(v).map_err(|m| Self::bad("run", "theta_schedule", m))?);
        }
        c.validate().map_err(|e| Self::bad("run", "*", e.to_string()))?;
        Ok(c)
    }
}

/// `step:theta` pairs separated by commas, e.g. `0:0.5,50:0.3`.
pub fn parse_theta_schedule(v: &str) -> Result<ThetaSchedule, String> {
    let mut entries = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (s, t) = part.split_once(':').ok_or(format!("`{part}` is not step:theta"))?;
        let s: u64 = s.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
        let t: f64 = t.trim().parse().map_err(|e| format!("`{t}`: {e}"))?;
        if !(t >= 0.0) {
            return Err(format!("theta {t} must be >= 0"));
        }
        entries.push((s, t));
    }
    if entries.is_empty() {
        return Err("empty schedule".into());
    }
    Ok(ThetaSchedule::new(entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# two heterogeneous sites
[run]
particles = 512
mesh = 512   # 8^3
sites = 2
steps = 4
theta_schedule = 0:0.5, 2:0.3

[network]
lambda_wan = 0.01
streams = 8

[site]
name = fast
tau_tree = 1e-9
tau_fft = 1e-9
tau_mesh = 1e-6

[site]
name = slow
tau_tree = 2e-9
tau_fft = 1e-9
tau_mesh = 1e-6
";

    #[test]
    fn parses_sections_and_roster() {
        let f = ConfigFile::parse(SAMPLE).unwrap();
        let e = f.experiment().unwrap();
        assert_eq!(e.run.n_particles, 512.0);
        assert_eq!(e.run.sites.len(), 2);
        assert_eq!(e.run.sites[1].name, "slow");
        assert_eq!(e.run.network.lambda_wan, 0.01);
        assert_eq!(e.channel.streams, 8);
        assert_eq!(e.steps, 4);
        assert_eq!(e.theta_at(3), 0.3);
    }

    #[test]
    fn overrides_win_over_the_file() {
        let mut f = ConfigFile::parse(SAMPLE).unwrap();
        f.apply_override("run.steps=9").unwrap();
        f.set("network", "sigma_wan", "1e9").unwrap();
        let e = f.experiment().unwrap();
        assert_eq!(e.steps, 9);
        assert_eq!(e.run.network.sigma_wan, 1e9);
        assert!(f.set("site", "tau_tree", "1").is_err());
        assert!(f.apply_override("run.nope=1").is_err());
        assert!(f.apply_override("steps=1").is_err());
    }

    #[test]
    fn roster_cycles_to_site_count() {
        let f = ConfigFile::parse("[run]\nsites = 7\nprocesses = 14\n").unwrap();
        let spec = f.run_spec().unwrap();
        assert_eq!(spec.sites.len(), 7);
        assert_eq!(spec.sites[5].name, spec.sites[0].name);
        let f = ConfigFile::parse("[run]\nroster = gbbp:HEA\nsites = 3\nprocesses = 3\n").unwrap();
        let spec = f.run_spec().unwrap();
        let names: Vec<&str> = spec.sites.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["Louhi", "HECToR", "Huygens"]);
        assert_eq!(spec.network.lambda_wan, 0.27);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let cases = [
            ("particles = 1\n", 1),
            ("[run]\nparticles 4\n", 2),
            ("[run]\n[bogus]\n", 2),
            ("[run]\nfoo = 1\n", 2),
            ("[run]\nsteps = 1\nsteps = 2\n", 3),
            ("[run]\n[run]\n", 2),
            ("[run\n", 1),
        ];
        for (text, line) in cases {
            match ConfigFile::parse(text) {
                Err(ConfigError::Syntax { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_values_name_the_key() {
        let f = ConfigFile::parse("[run]\nsteps = many\n").unwrap();
        assert!(matches!(f.experiment(), Err(ConfigError::Value { key, .. }) if key == "steps"));
        let f = ConfigFile::parse("[run]\ndt = 0.1\ndt_max = 0.2\n").unwrap();
        assert!(f.experiment().is_err());
        let f = ConfigFile::parse("[site]\ntau_tree = 1\n").unwrap();
        assert!(matches!(f.run_spec(), Err(ConfigError::Value { key, .. }) if key == "tau_fft"));
    }

    #[test]
    fn theta_schedule_syntax() {
        assert_eq!(parse_theta_schedule("5:0.3,0:0.5").unwrap().entries, vec![(0, 0.5), (5, 0.3)]);
        assert!(parse_theta_schedule("").is_err());
        assert!(parse_theta_schedule("1-0.3").is_err());
        assert!(parse_theta_schedule("1:-1").is_err());
    }

    #[test]
    fn profiles_and_pacing() {
        let f = ConfigFile::parse("[network]\nprofile = lightpath\npacing = unlimited\n").unwrap();
        let c = f.channel().unwrap();
        assert_eq!((c.streams, c.send_chunk, c.pacing_rate), (64, 8192, None));
        let f = ConfigFile::parse("[network]\nstreams = 0\n").unwrap();
        assert!(f.channel().is_err());
    }
}
