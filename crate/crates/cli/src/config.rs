//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! Unknown sections and keys are errors, so a typo never silently falls back
//! to a default. Every error carries the line it came from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use resfeat::NormKind;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.origin, self.message),
            None => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw `(section, key) -> value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    origin: String,
    entries: BTreeMap<(String, String), Entry>,
}

const KNOWN: &[(&str, &[&str])] = &[
    ("space", &["image", "step"]),
    ("color", &["tau", "background", "background_anchor"]),
    ("shape", &["tau"]),
    ("catalog", &["path"]),
    ("budget", &["norm", "lambda"]),
    ("verifier", &["cap", "seed", "restarts", "steps", "probes"]),
    ("campaign", &["pipelines", "max_points", "broken"]),
    ("demo", &["noise", "beta"]),
];

impl Ini {
    pub fn parse(text: &str, origin: &str) -> Result<Ini, ConfigError> {
        let err = |line: usize, message: String| ConfigError {
            origin: origin.to_string(),
            line: Some(line),
            message,
        };
        let mut ini = Ini {
            origin: origin.to_string(),
            entries: BTreeMap::new(),
        };
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split_once(" #").map_or(raw, |(a, _)| a).trim();
            if content.is_empty() || content.starts_with('#') || content.starts_with(';') {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, format!("unterminated section header `{content}`")))?
                    .trim();
                if !KNOWN.iter().any(|(s, _)| *s == name) && name != "palette" {
                    return Err(err(line, format!("unknown section `[{name}]`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected `key = value`, found `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(err(line, "empty key".into()));
            }
            let sec = section
                .clone()
                .ok_or_else(|| err(line, format!("key `{key}` appears before any [section]")))?;
            let known = KNOWN.iter().find(|(s, _)| *s == sec).map(|(_, keys)| *keys);
            if known.is_some_and(|keys| !keys.contains(&key)) {
                return Err(err(line, format!("unknown key `{key}` in [{sec}]")));
            }
            let slot = (sec.clone(), key.to_string());
            if let Some(prev) = ini.entries.get(&slot) {
                return Err(err(line, format!("duplicate key `{key}` in [{sec}] (first set on line {})", prev.line)));
            }
            ini.entries.insert(slot, Entry {
                value: value.to_string(),
                line,
            });
        }
        Ok(ini)
    }

    pub fn load(path: &Path) -> Result<Ini, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            origin: origin.clone(),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        Ini::parse(&text, &origin)
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn error(&self, entry: &Entry, message: String) -> ConfigError {
        ConfigError {
            origin: self.origin.clone(),
            line: Some(entry.line),
            message,
        }
    }

    fn parsed<V: std::str::FromStr>(&self, section: &str, key: &str, what: &str) -> Result<Option<V>, ConfigError> {
        self.get(section, key)
            .map(|e| {
                e.value
                    .parse()
                    .map_err(|_| self.error(e, format!("[{section}] {key}: expected {what}, found `{}`", e.value)))
            })
            .transpose()
    }

    /// Palette entries in file order.
    fn palette(&self) -> Result<Option<Vec<(String, [f64; 3])>>, ConfigError> {
        let mut rows: Vec<(&String, &Entry)> = self
            .entries
            .iter()
            .filter(|((s, _), _)| s == "palette")
            .map(|((_, k), e)| (k, e))
            .collect();
        if rows.is_empty() {
            return Ok(None);
        }
        rows.sort_by_key(|(_, e)| e.line);
        rows.into_iter()
            .map(|(k, e)| Ok((k.clone(), self.rgb(e, &format!("[palette] {k}"))?)))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn rgb(&self, e: &Entry, what: &str) -> Result<[f64; 3], ConfigError> {
        let parts: Vec<f64> = e
            .value
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| self.error(e, format!("{what}: expected `r, g, b`, found `{}`", e.value)))?;
        match parts[..] {
            [r, g, b] if parts.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
            _ => Err(self.error(e, format!("{what}: expected three channels in [0, 1], found `{}`", e.value))),
        }
    }

    /// SHA-256 over the sorted `section.key=value` lines; independent of the
    /// order entries appear in the file.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for ((s, k), e) in &self.entries {
            h.update(format!("{s}.{k}={}\n", e.value));
        }
        format!("{:x}", h.finalize())
    }

    pub fn set(&mut self, section: &str, key: &str, value: String) {
        self.entries.insert((section.into(), key.into()), Entry { value, line: 0 });
    }
}

/// Fully resolved settings with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub image: usize,
    pub step: Option<f64>,
    pub color_tau: f64,
    pub background: [f64; 3],
    pub palette: Option<Vec<(String, [f64; 3])>>,
    pub background_anchor: Option<String>,
    pub shape_tau: f64,
    pub catalog: Option<PathBuf>,
    pub norm: NormKind,
    pub lambda: f64,
    pub cap: u128,
    pub seed: u64,
    pub restarts: usize,
    pub steps: usize,
    pub probes: usize,
    pub pipelines: usize,
    pub max_points: usize,
    pub broken: bool,
    pub noise: f64,
    pub beta: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            image: 32,
            step: None,
            color_tau: 0.15,
            background: [0.5; 3],
            palette: None,
            background_anchor: None,
            shape_tau: 0.3,
            catalog: None,
            norm: NormKind::Linf,
            lambda: 0.05,
            cap: 100_000_000,
            seed: 0,
            restarts: 10,
            steps: 200,
            probes: 16,
            pipelines: 500,
            max_points: 10_000,
            broken: false,
            noise: 0.02,
            beta: 0.05,
        }
    }
}

pub fn parse_norm(s: &str) -> Option<NormKind> {
    match s.to_ascii_lowercase().as_str() {
        "l1" => Some(NormKind::L1),
        "l2" => Some(NormKind::L2),
        "linf" => Some(NormKind::Linf),
        _ => None,
    }
}

impl Settings {
    /// Resolves `ini` over the defaults. `base` is the directory relative
    /// paths are taken from.
    pub fn from_ini(ini: &Ini, base: &Path) -> Result<Settings, ConfigError> {
        let mut s = Settings::default();
        if let Some(e) = ini.get("space", "image") {
            let (w, h) = e
                .value
                .split_once(['x', 'X'])
                .and_then(|(w, h)| Some((w.trim().parse::<usize>().ok()?, h.trim().parse::<usize>().ok()?)))
                .ok_or_else(|| ini.error(e, format!("[space] image: expected `WIDTHxHEIGHT`, found `{}`", e.value)))?;
            if w != h || w < resfeat::signs::MIN_SIGN_SIZE {
                return Err(ini.error(e, format!("[space] image: expected a square size of at least 16, found {w}x{h}")));
            }
            s.image = w;
        }
        s.step = ini.parsed("space", "step", "a positive number")?;
        if let Some(step) = s.step {
            if !(step > 0.0 && step <= 1.0) {
                return Err(ini.error(ini.get("space", "step").unwrap(), format!("[space] step must lie in (0, 1], found {step}")));
            }
        }
        s.color_tau = ini.parsed("color", "tau", "a number")?.unwrap_or(s.color_tau);
        if let Some(e) = ini.get("color", "background") {
            s.background = ini.rgb(e, "[color] background")?;
        }
        s.palette = ini.palette()?;
        s.background_anchor = ini.get("color", "background_anchor").map(|e| e.value.clone());
        s.shape_tau = ini.parsed("shape", "tau", "a number")?.unwrap_or(s.shape_tau);
        for (key, tau) in [("color", s.color_tau), ("shape", s.shape_tau)] {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(ini.error(ini.get(key, "tau").unwrap(), format!("[{key}] tau must be positive, found {tau}")));
            }
        }
        if let Some(e) = ini.get("catalog", "path") {
            let path = base.join(&e.value);
            if !path.is_file() {
                return Err(ini.error(e, format!("[catalog] path: no such file `{}`", path.display())));
            }
            s.catalog = Some(path);
        }
        if let Some(e) = ini.get("budget", "norm") {
            s.norm = parse_norm(&e.value).ok_or_else(|| ini.error(e, format!("[budget] norm: expected l1, l2 or linf, found `{}`", e.value)))?;
        }
        s.lambda = ini.parsed("budget", "lambda", "a number")?.unwrap_or(s.lambda);
        if !(s.lambda >= 0.0 && s.lambda.is_finite()) {
            return Err(ini.error(ini.get("budget", "lambda").unwrap(), format!("[budget] lambda must be non-negative, found {}", s.lambda)));
        }
        s.cap = ini.parsed("verifier", "cap", "a positive integer")?.unwrap_or(s.cap);
        s.seed = ini.parsed("verifier", "seed", "an unsigned integer")?.unwrap_or(s.seed);
        s.restarts = ini.parsed("verifier", "restarts", "an unsigned integer")?.unwrap_or(s.restarts);
        s.steps = ini.parsed("verifier", "steps", "an unsigned integer")?.unwrap_or(s.steps);
        s.probes = ini.parsed("verifier", "probes", "an unsigned integer")?.unwrap_or(s.probes);
        s.pipelines = ini.parsed("campaign", "pipelines", "an unsigned integer")?.unwrap_or(s.pipelines);
        s.max_points = ini.parsed("campaign", "max_points", "an unsigned integer")?.unwrap_or(s.max_points);
        s.broken = ini.parsed("campaign", "broken", "true or false")?.unwrap_or(s.broken);
        s.noise = ini.parsed("demo", "noise", "a number")?.unwrap_or(s.noise);
        s.beta = ini.parsed("demo", "beta", "a number")?.unwrap_or(s.beta);
        Ok(s)
    }
}
