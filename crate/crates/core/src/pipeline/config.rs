//! Plain-text `key = value` pipeline configuration.
//!
//! Every tunable constant has a default; a file only lists overrides. The
//! special key `profile` selects the default set (`full` or `desk`) and is
//! applied before any other key regardless of where it appears.

use std::fmt;

use crate::correct::CanmOptions;
use crate::precision::PrecisionConfig;
use crate::scan::GridSpec;
use crate::topology::SyzygyOptions;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Full,
    Desk,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        }
    }
}

/// `(key, full default, desk default, description)`.
const KEYS: &[(&str, &str, &str, &str)] = &[
    ("window.vx_lo", "0", "0.30", "scan window, lower vx"),
    ("window.vx_hi", "0.8", "0.40", "scan window, upper vx"),
    ("window.vy_lo", "0", "0.50", "scan window, lower vy"),
    ("window.vy_hi", "0.8", "0.60", "scan window, upper vy"),
    ("grid.step", "0.00048828125", "0.00390625", "grid spacing"),
    ("scan.t0", "70", "10", "scan integration time"),
    ("scan.threshold", "0.7", "0.7", "candidate threshold on min return proximity"),
    ("scan.samples_per_step", "8", "8", "dense samples per Taylor step"),
    ("scan.digits", "134", "32", "scan decimal digits"),
    ("scan.order", "154", "40", "scan Taylor order"),
    ("scan.tol", "1e-60", "1e-20", "scan residual tolerance (unused by the scan itself)"),
    ("correct.digits", "134", "64", "damped Newton decimal digits"),
    ("correct.order", "154", "80", "damped Newton Taylor order"),
    ("correct.tol", "1e-60", "1e-30", "damped Newton convergence tolerance"),
    ("correct.tau0", "0.1", "0.1", "initial damping factor"),
    ("correct.tau_min", "1e-6", "1e-6", "damping floor"),
    ("correct.max_iter", "100", "100", "damped Newton iteration cap"),
    ("correct.growth_limit", "5", "5", "consecutive residual increases allowed"),
    ("refine.digits", "192", "96", "refinement decimal digits"),
    ("refine.order", "220", "110", "refinement Taylor order"),
    ("refine.tol", "1e-160", "1e-85", "refinement target residual"),
    ("refine.max_iter", "50", "50", "refinement iteration cap"),
    ("verify.digits", "231", "128", "verification decimal digits"),
    ("verify.order", "264", "150", "verification Taylor order"),
    ("verify.tol", "1e-200", "1e-110", "verification target residual"),
    ("verify.min_agreed", "150", "80", "digits required to count as verified"),
    ("classify.samples_per_step", "16", "16", "dense samples per step for syzygy search"),
    ("classify.with_reversal", "true", "true", "identify orbits with their time reversal"),
    ("catalog.digits", "150", "80", "significant digits written to the catalog"),
    ("dedup.tstar_tol_log10", "-40", "-40", "relative T* tolerance, as a power of ten"),
    ("integrator.step_safety", "0.5", "0.5", "fraction of the estimated step taken"),
    ("integrator.h_min", "1e-8", "1e-8", "smallest step before underflow"),
    ("integrator.h_max", "1", "1", "largest step"),
    ("integrator.collision_distance", "1e-6", "1e-6", "pair distance treated as collision"),
    ("render.orbit_samples", "2000", "2000", "points per body in orbit figures"),
    ("workers", "1", "1", "concurrent tasks per shard"),
];

/// Ordered key/value settings with their defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    profile: Profile,
    values: Vec<(String, String)>,
}

impl PipelineConfig {
    pub fn defaults(profile: Profile) -> Self {
        let values = KEYS
            .iter()
            .map(|(k, full, desk, _)| {
                let v = if profile == Profile::Full { full } else { desk };
                (k.to_string(), v.to_string())
            })
            .collect();
        Self { profile, values }
    }

    pub fn full() -> Self {
        Self::defaults(Profile::Full)
    }

    pub fn desk() -> Self {
        Self::defaults(Profile::Desk)
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut pairs = Vec::new();
        let mut profile = Profile::Full;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected key = value", i + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "profile" {
                profile = match v {
                    "full" => Profile::Full,
                    "desk" => Profile::Desk,
                    other => {
                        return Err(PipelineError::Config(format!(
                            "line {}: unknown profile '{other}'",
                            i + 1
                        )))
                    }
                };
            } else {
                pairs.push((i + 1, k.to_string(), v.to_string()));
            }
        }
        let mut cfg = Self::defaults(profile);
        for (line, k, v) in pairs {
            cfg.set(&k, &v)
                .map_err(|e| PipelineError::Config(format!("line {line}: {e}")))?;
        }
        cfg.settings()?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        match self.values.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => {
                slot.1 = value.to_string();
                Ok(())
            }
            None => Err(PipelineError::Config(format!("unknown key '{key}'"))),
        }
    }

    /// Full listing, one `key = value` per line.
    pub fn dump(&self) -> String {
        let mut out = format!("profile = {}\n", self.profile.name());
        for ((k, v), (_, _, _, doc)) in self.values.iter().zip(KEYS) {
            out.push_str(&format!("{k} = {v}  # {doc}\n"));
        }
        out
    }

    /// Typed, validated view.
    pub fn settings(&self) -> Result<Settings, PipelineError> {
        let s = |k: &str| self.get(k).expect("known key").to_string();
        let num = |k: &str| -> Result<f64, PipelineError> {
            s(k).parse::<f64>()
                .map_err(|_| PipelineError::Config(format!("{k}: not a number")))
        };
        let int = |k: &str| -> Result<usize, PipelineError> {
            s(k).parse::<usize>()
                .map_err(|_| PipelineError::Config(format!("{k}: not a non-negative integer")))
        };
        let stage = |name: &str| -> Result<PrecisionConfig, PipelineError> {
            let digits = int(&format!("{name}.digits"))? as u32;
            let order = int(&format!("{name}.order"))?;
            let mut cfg = PrecisionConfig::new(digits, order)
                .map_err(|e| PipelineError::Config(format!("{name}: {e}")))?;
            cfg.convergence_tol = s(&format!("{name}.tol"));
            cfg.step_safety = num("integrator.step_safety")?;
            cfg.h_min = num("integrator.h_min")?;
            cfg.h_max = num("integrator.h_max")?;
            cfg.collision_distance = num("integrator.collision_distance")?;
            cfg.validate()
                .map_err(|e| PipelineError::Config(format!("{name}: {e}")))?;
            Ok(cfg)
        };
        let grid = GridSpec::new(
            &s("window.vx_lo"),
            &s("window.vx_hi"),
            &s("window.vy_lo"),
            &s("window.vy_hi"),
            &s("grid.step"),
        )
        .map_err(|e| PipelineError::Config(e.to_string()))?;
        let with_reversal = match s("classify.with_reversal").as_str() {
            "true" => true,
            "false" => false,
            _ => {
                return Err(PipelineError::Config(
                    "classify.with_reversal: expected true or false".into(),
                ))
            }
        };
        let scan = stage("scan")?;
        let sctx = scan.context();
        let t0 = sctx
            .parse(&s("scan.t0"))
            .map_err(|e| PipelineError::Config(format!("scan.t0: {e}")))?;
        if t0 <= 1 {
            return Err(PipelineError::Config("scan.t0 must exceed 1".into()));
        }
        sctx.parse(&s("scan.threshold"))
            .map_err(|e| PipelineError::Config(format!("scan.threshold: {e}")))?;
        let tstar: i32 = s("dedup.tstar_tol_log10")
            .parse()
            .map_err(|_| PipelineError::Config("dedup.tstar_tol_log10: not an integer".into()))?;
        let workers = int("workers")?;
        if workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        Ok(Settings {
            grid,
            t0: s("scan.t0"),
            threshold: s("scan.threshold"),
            scan_samples: int("scan.samples_per_step")?.max(1),
            scan,
            correct: stage("correct")?,
            canm: CanmOptions {
                tau0: num("correct.tau0")?,
                tau_min: num("correct.tau_min")?,
                max_iter: int("correct.max_iter")?,
                growth_limit: int("correct.growth_limit")?.max(1),
            },
            refine: stage("refine")?,
            refine_max_iter: int("refine.max_iter")?,
            verify: stage("verify")?,
            min_agreed: int("verify.min_agreed")? as u32,
            syzygy: SyzygyOptions {
                samples_per_step: int("classify.samples_per_step")?.max(2),
                with_reversal,
            },
            catalog_digits: int("catalog.digits")?.max(1),
            tstar_tol_log10: tstar,
            orbit_samples: int("render.orbit_samples")?.max(2),
            workers,
        })
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump())
    }
}

/// Typed configuration consumed by the stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub grid: GridSpec,
    pub t0: String,
    pub threshold: String,
    pub scan_samples: usize,
    pub scan: PrecisionConfig,
    pub correct: PrecisionConfig,
    pub canm: CanmOptions,
    pub refine: PrecisionConfig,
    pub refine_max_iter: usize,
    pub verify: PrecisionConfig,
    pub min_agreed: u32,
    pub syzygy: SyzygyOptions,
    pub catalog_digits: usize,
    pub tstar_tol_log10: i32,
    pub orbit_samples: usize,
    pub workers: usize,
}
