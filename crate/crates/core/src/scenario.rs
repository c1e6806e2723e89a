//! Scenario files: a sectioned TOML document naming the constellation,
//! stations, terminals, weather and outputs of one simulation.
//!
//! ```toml
//! [simulation]
//! duration_days = 365
//! step_s = 10.0
//! seed = 7
//! epoch_date = "2020-03-20"
//!
//! [constellation]
//! notation = "SSO 1p/6s"
//! altitude_km = 500.0
//!
//! [stations]
//! file = "../g20.csv"
//!
//! [link]
//! file = "../micius.link"
//!
//! [decoy]
//! file = "../micius.decoy"
//!
//! [cloud]
//! synthetic = "banded"
//! ```
//!
//! Relative paths resolve against the directory holding the scenario file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{read_stations, ConstellationSpec, GroundStation, DEFAULT_STEP_S};
use crate::isl::TransferMode;
use crate::optical_link::LinkParams;
use crate::qkd_rate::DecoyParams;
use crate::weather::{CloudGrid, CloudMode, DEFAULT_BANDS, DEFAULT_RESOLUTION_DEG};

pub const DEFAULT_EPOCH: &str = "2020-03-20";

fn default_step() -> f64 {
    DEFAULT_STEP_S
}

fn default_epoch() -> String {
    DEFAULT_EPOCH.to_string()
}

fn default_output_dir() -> String {
    "out".to_string()
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub duration_days: u32,
    #[serde(default = "default_step")]
    pub step_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epoch")]
    pub epoch_date: String,
}

/// Either a table-style notation (`"SSO 1p/6s"`) or explicit fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_planes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sats_per_plane: Option<usize>,
    pub altitude_km: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inclination_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sun_synchronous: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raan0_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ltan_hours: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j2_precession: Option<bool>,
}

impl ConstellationSection {
    pub fn from_spec(spec: &ConstellationSpec) -> Self {
        ConstellationSection {
            notation: None,
            n_planes: Some(spec.n_planes),
            sats_per_plane: Some(spec.sats_per_plane),
            altitude_km: spec.altitude_km,
            inclination_deg: (!spec.sun_synchronous).then_some(spec.inclination_deg),
            sun_synchronous: spec.sun_synchronous.then_some(true),
            raan0_deg: Some(spec.raan0_deg),
            ltan_hours: Some(spec.ltan_hours),
            j2_precession: Some(spec.j2_precession),
        }
    }

    pub fn resolve(&self) -> Result<ConstellationSpec> {
        let mut spec = if let Some(n) = &self.notation {
            if self.n_planes.is_some() || self.sats_per_plane.is_some() || self.inclination_deg.is_some() || self.sun_synchronous.is_some()
            {
                return Err(Error::invalid(
                    "constellation.notation",
                    "cannot be combined with explicit layout keys",
                ));
            }
            ConstellationSpec::from_notation(n, self.altitude_km).map_err(|e| Error::invalid("constellation.notation", e.to_string()))?
        } else {
            let sun_synchronous = self.sun_synchronous.unwrap_or(false);
            let missing = |k: &str| Error::invalid(format!("constellation.{k}"), "is required without `notation`");
            if !sun_synchronous && self.inclination_deg.is_none() {
                return Err(missing("inclination_deg"));
            }
            ConstellationSpec {
                n_planes: self.n_planes.ok_or_else(|| missing("n_planes"))?,
                sats_per_plane: self.sats_per_plane.ok_or_else(|| missing("sats_per_plane"))?,
                altitude_km: self.altitude_km,
                inclination_deg: self.inclination_deg.unwrap_or(0.0),
                sun_synchronous,
                raan0_deg: 0.0,
                ltan_hours: 0.0,
                j2_precession: true,
            }
        };
        spec.raan0_deg = self.raan0_deg.unwrap_or(spec.raan0_deg);
        spec.ltan_hours = self.ltan_hours.unwrap_or(spec.ltan_hours);
        spec.j2_precession = self.j2_precession.unwrap_or(spec.j2_precession);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationsSection {
    pub file: String,
}

/// Parameters given inline or as `file = "..."` pointing at a key/value file.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamSource<T> {
    File(String),
    Inline(T),
}

impl<T: Serialize> Serialize for ParamSource<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct FileRef<'a> {
            file: &'a str,
        }
        match self {
            ParamSource::File(f) => FileRef { file: f }.serialize(s),
            ParamSource::Inline(v) => v.serialize(s),
        }
    }
}

impl<'de, T: DeserializeOwned> Deserialize<'de> for ParamSource<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let table = toml::Table::deserialize(d)?;
        if let Some(f) = table.get("file") {
            if table.len() > 1 {
                return Err(serde::de::Error::custom("`file` cannot be combined with inline parameters"));
            }
            let f = f.as_str().ok_or_else(|| serde::de::Error::custom("`file` must be a string"))?;
            return Ok(ParamSource::File(f.to_string()));
        }
        T::deserialize(toml::Value::Table(table))
            .map(ParamSource::Inline)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cadence {
    /// Redistribute once after the last pass.
    #[default]
    End,
    /// Redistribute at the end of every simulated day.
    Daily,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IslSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "is_default")]
    pub mode: TransferMode,
    #[serde(default, skip_serializing_if = "is_default")]
    pub cadence: Cadence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoy_file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticCloud {
    Uniform,
    Banded,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudSection {
    #[serde(default, skip_serializing_if = "is_default")]
    pub mode: CloudMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticCloud>,
    /// Probability for the uniform generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_cloud: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_output_dir")]
    pub dir: String,
    /// Ledger snapshot interval in days; 0 writes only the final snapshot.
    #[serde(default)]
    pub ledger_checkpoint_days: u32,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_output_dir(),
            ledger_checkpoint_days: 0,
        }
    }
}

/// The scenario document exactly as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub simulation: SimulationSection,
    pub constellation: ConstellationSection,
    pub stations: StationsSection,
    pub link: ParamSource<LinkParams>,
    pub decoy: ParamSource<DecoyParams>,
    #[serde(default)]
    pub isl: IslSection,
    pub cloud: CloudSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ScenarioFile {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot serialise scenario: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IslSetup {
    pub mode: TransferMode,
    pub cadence: Cadence,
    pub link: LinkParams,
    pub decoy: DecoyParams,
}

/// A loaded, validated scenario with every referenced file read.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub origin: String,
    pub base_dir: PathBuf,
    pub epoch: NaiveDate,
    pub constellation: ConstellationSpec,
    pub stations: Vec<GroundStation>,
    pub link: LinkParams,
    pub decoy: DecoyParams,
    /// Crosslink terminal, present whenever both terminal files are given.
    pub isl: Option<IslSetup>,
    pub isl_enabled: bool,
    pub cloud_mode: CloudMode,
    pub cloud: Arc<CloudGrid>,
    pub output_dir: PathBuf,
}

impl Scenario {
    pub fn duration_days(&self) -> u32 {
        self.file.simulation.duration_days
    }

    pub fn step_s(&self) -> f64 {
        self.file.simulation.step_s
    }

    pub fn seed(&self) -> u64 {
        self.file.simulation.seed
    }

    pub fn station_names(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.name.clone()).collect()
    }
}

/// 1-based line of `key` inside `[section]`, falling back to the section
/// header, then to line 1.
pub fn key_line(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section && !key.is_empty() {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return i + 1;
                }
            }
        }
    }
    header.unwrap_or(1)
}

struct Ctx<'a> {
    text: &'a str,
    origin: &'a str,
    base_dir: &'a Path,
}

impl Ctx<'_> {
    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            path: self.origin.to_string(),
            line: key_line(self.text, section, key),
            message: message.into(),
        }
    }

    /// Wraps an `Error::Invalid { field: "section.key" }` with its line.
    fn locate(&self, e: Error) -> Error {
        match &e {
            Error::Invalid { field, .. } => {
                let (section, key) = field.split_once('.').unwrap_or((field.as_str(), ""));
                self.err(section, key, e.to_string())
            }
            Error::Config { .. } => e,
            _ => self.err("", "", e.to_string()),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn read(&self, section: &str, key: &str, rel: &str) -> Result<(PathBuf, String)> {
        let path = self.path(rel);
        let text = fs::read_to_string(&path).map_err(|e| self.err(section, key, format!("cannot read {}: {e}", path.display())))?;
        Ok((path, text))
    }

    fn link(&self, section: &str, key: &str, src: &ParamSource<LinkParams>) -> Result<LinkParams> {
        match src {
            ParamSource::File(f) => {
                let (path, text) = self.read(section, key, f)?;
                LinkParams::from_kv_str(&text, &path.display().to_string())
            }
            ParamSource::Inline(p) => p.validate().map(|_| *p).map_err(|e| self.locate(e)),
        }
    }

    fn decoy(&self, section: &str, key: &str, src: &ParamSource<DecoyParams>) -> Result<DecoyParams> {
        match src {
            ParamSource::File(f) => {
                let (path, text) = self.read(section, key, f)?;
                DecoyParams::from_kv_str(&text, &path.display().to_string())
            }
            ParamSource::Inline(d) => d.validate().map(|_| *d).map_err(|e| self.locate(e)),
        }
    }
}

fn toml_error(text: &str, origin: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(1);
    Error::Config {
        path: origin.to_string(),
        line,
        message: e.message().trim().to_string(),
    }
}

/// Parses and validates a scenario held in memory. `base_dir` anchors
/// relative paths and `origin` labels error messages.
pub fn parse_scenario(text: &str, base_dir: &Path, origin: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| toml_error(text, origin, e))?;
    let cx = Ctx { text, origin, base_dir };
    let sim = &file.simulation;
    if sim.duration_days < 1 {
        return Err(cx.err("simulation", "duration_days", "duration_days must be >= 1"));
    }
    if !(sim.step_s > 0.0 && sim.step_s.is_finite()) {
        return Err(cx.err("simulation", "step_s", "step_s must be > 0"));
    }
    let epoch = NaiveDate::parse_from_str(&sim.epoch_date, "%Y-%m-%d")
        .map_err(|e| cx.err("simulation", "epoch_date", format!("epoch_date must be YYYY-MM-DD: {e}")))?;
    let constellation = file.constellation.resolve().map_err(|e| cx.locate(e))?;

    let (st_path, st_text) = cx.read("stations", "file", &file.stations.file)?;
    let stations = read_stations(st_text.as_bytes()).map_err(|e| cx.err("stations", "file", format!("{}: {e}", st_path.display())))?;
    if stations.is_empty() {
        return Err(cx.err("stations", "file", format!("{} lists no stations", st_path.display())));
    }

    let link = cx.link("link", "file", &file.link)?;
    let decoy = cx.decoy("decoy", "file", &file.decoy)?;

    let isl = match (&file.isl.link_file, &file.isl.decoy_file) {
        (Some(lf), Some(df)) => Some(IslSetup {
            mode: file.isl.mode,
            cadence: file.isl.cadence,
            link: cx.link("isl", "link_file", &ParamSource::File(lf.clone()))?,
            decoy: cx.decoy("isl", "decoy_file", &ParamSource::File(df.clone()))?,
        }),
        (None, _) if file.isl.enabled => return Err(cx.err("isl", "enabled", "enabled crosslinks need `link_file`")),
        (_, None) if file.isl.enabled => return Err(cx.err("isl", "enabled", "enabled crosslinks need `decoy_file`")),
        _ => None,
    };

    let cloud = load_cloud(&cx, &file.cloud)?;
    for st in &stations {
        cloud.station_cloud_prob(st, 1).map_err(|e| cx.err("cloud", "", e.to_string()))?;
    }

    Ok(Scenario {
        origin: origin.to_string(),
        base_dir: base_dir.to_path_buf(),
        epoch,
        constellation,
        stations,
        link,
        decoy,
        isl,
        isl_enabled: file.isl.enabled,
        cloud_mode: file.cloud.mode,
        cloud: Arc::new(cloud),
        output_dir: cx.path(&file.output.dir),
        file,
    })
}

fn load_cloud(cx: &Ctx<'_>, c: &CloudSection) -> Result<CloudGrid> {
    let res = c.resolution_deg.unwrap_or(DEFAULT_RESOLUTION_DEG);
    match (&c.grid_file, c.synthetic) {
        (Some(_), Some(_)) => Err(cx.err("cloud", "synthetic", "give either `grid_file` or `synthetic`, not both")),
        (None, None) => Err(cx.err("cloud", "", "needs `grid_file` or `synthetic`")),
        (Some(f), None) => {
            let path = cx.path(f);
            let handle = fs::File::open(&path).map_err(|e| cx.err("cloud", "grid_file", format!("cannot read {}: {e}", path.display())))?;
            CloudGrid::read_csv(std::io::BufReader::new(handle))
                .map_err(|e| cx.err("cloud", "grid_file", format!("{}: {e}", path.display())))
        }
        (None, Some(SyntheticCloud::Uniform)) => {
            let p = c
                .p_cloud
                .ok_or_else(|| cx.err("cloud", "synthetic", "uniform clouds need `p_cloud`"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(cx.err("cloud", "p_cloud", "p_cloud must lie in [0, 1]"));
            }
            CloudGrid::uniform(p, res).map_err(|e| cx.err("cloud", "resolution_deg", e.to_string()))
        }
        (None, Some(SyntheticCloud::Banded)) => {
            if c.p_cloud.is_some() {
                return Err(cx.err("cloud", "p_cloud", "p_cloud only applies to uniform clouds"));
            }
            CloudGrid::banded(&DEFAULT_BANDS, res).map_err(|e| cx.err("cloud", "resolution_deg", e.to_string()))
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_scenario(&text, &base, &path.display().to_string())
}

pub fn save_scenario(file: &ScenarioFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, file.to_toml_string()?).map_err(|e| Error::file(path, e))
}
