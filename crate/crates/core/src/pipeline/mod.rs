//! Stage orchestration: each stage maps a per-record operation over a file
//! (or a shard of one) with bounded concurrency, keeping input order.
//!
//! ```text
//! scan -> cells -> candidates -> correct -> refine -> verify -> classify -> dedup -> report
//! ```
//!
//! Record-level failures become failure lines with a reason code; only
//! unreadable input or configuration aborts a job.

pub mod config;
pub mod files;
pub mod render;

use std::fs;
use std::path::PathBuf;

use thiserror::Error;

use crate::catalog::{
    catalog_to_string, dedup_solutions, group_families, parse_catalog, validate_catalog,
    CatalogError, DedupConflict, Provenance, SolutionRecord,
};
use crate::correct::{
    canm_correct, newton_refine, verify, CorrectionStatus, RefineOptions, Triplet,
};
use crate::dynamics::VelocityPair;
use crate::precision::format_trimmed;
use crate::scan::{find_candidates, scan_indices, CandidateTriplet, ScanCell, ScanGrid};
use crate::sweep::map_ordered;
use crate::topology::{classify, TopologyError};

pub use config::{PipelineConfig, Profile, Settings};
pub use files::{merge, shard, Header, RecordLine, StageFile};
pub use render::Window;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Job(String),
}

impl PipelineError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Job(_) => 1,
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Job(e.to_string())
    }
}

impl From<CatalogError> for PipelineError {
    fn from(e: CatalogError) -> Self {
        PipelineError::Job(e.to_string())
    }
}

fn job<E: std::fmt::Display>(e: E) -> PipelineError {
    PipelineError::Job(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Scan,
    Candidates,
    Correct,
    Refine,
    Verify,
    Classify,
    Dedup,
    Report,
    RenderScatter,
    RenderOrbit,
    Shard,
    Merge,
    ConfigDump,
}

impl Stage {
    /// Config prefix whose `digits`/`order` the command-line overrides touch.
    pub fn precision_prefix(self) -> Option<&'static str> {
        match self {
            Stage::Scan | Stage::Candidates => Some("scan"),
            Stage::Correct => Some("correct"),
            Stage::Refine | Stage::Classify | Stage::RenderOrbit => Some("refine"),
            Stage::Verify => Some("verify"),
            _ => None,
        }
    }
}

/// One invocation of a stage.
#[derive(Debug, Clone)]
pub struct StageJob {
    pub stage: Stage,
    pub config: PipelineConfig,
    pub shard_index: usize,
    pub shard_count: usize,
    pub workers: Option<usize>,
    pub digits: Option<u32>,
    pub order: Option<usize>,
    pub inputs: Vec<PathBuf>,
    /// Catalog line used by `render-orbit`.
    pub record: usize,
}

impl StageJob {
    pub fn new(stage: Stage, config: PipelineConfig) -> Self {
        Self {
            stage,
            config,
            shard_index: 0,
            shard_count: 1,
            workers: None,
            digits: None,
            order: None,
            inputs: Vec::new(),
            record: 0,
        }
    }

    fn settings(&self) -> Result<Settings, PipelineError> {
        let mut cfg = self.config.clone();
        if let Some(prefix) = self.stage.precision_prefix() {
            if let Some(d) = self.digits {
                cfg.set(&format!("{prefix}.digits"), &d.to_string())?;
            }
            if let Some(o) = self.order {
                cfg.set(&format!("{prefix}.order"), &o.to_string())?;
            }
        }
        if let Some(w) = self.workers {
            cfg.set("workers", &w.to_string())?;
        }
        cfg.settings()
    }

    fn read_input(&self) -> Result<String, PipelineError> {
        let path = self
            .inputs
            .first()
            .ok_or_else(|| PipelineError::Job("missing --in".into()))?;
        fs::read_to_string(path).map_err(|e| job(format!("{}: {e}", path.display())))
    }

    /// Input file, restricted to this job's shard when the flags ask for one.
    fn stage_input(&self) -> Result<StageFile, PipelineError> {
        let file = StageFile::parse(&self.read_input()?)?;
        if self.shard_count <= 1 {
            return Ok(file);
        }
        if file.header.shard()? == (0, 1) {
            shard(&file, self.shard_count, self.shard_index)
        } else if file.header.shard()? == (self.shard_index, self.shard_count) {
            Ok(file)
        } else {
            Err(job(format!(
                "input is shard {} but --shard-index/--shard-count ask for {}/{}",
                file.header.get("shard").unwrap_or("?"),
                self.shard_index,
                self.shard_count
            )))
        }
    }
}

/// Result of a stage: the bytes to write and notes for the operator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageOutput {
    pub text: String,
    pub notes: Vec<String>,
}

impl StageOutput {
    fn new(text: String) -> Self {
        Self {
            text,
            notes: Vec::new(),
        }
    }
}

pub fn run_stage(job_spec: &StageJob) -> Result<StageOutput, PipelineError> {
    let j = job_spec;
    if j.shard_count == 0 || j.shard_index >= j.shard_count {
        return Err(PipelineError::Config(format!(
            "shard index {} out of range for {} shards",
            j.shard_index, j.shard_count
        )));
    }
    let s = j.settings()?;
    match j.stage {
        Stage::ConfigDump => Ok(StageOutput::new(j.config.dump())),
        Stage::Scan => Ok(StageOutput::new(
            scan_stage(&s, j.shard_index, j.shard_count)?.to_text(),
        )),
        Stage::Candidates => {
            let cells = StageFile::parse(&j.read_input()?)?;
            Ok(StageOutput::new(candidates_stage(&s, &cells)?.to_text()))
        }
        Stage::Correct => Ok(StageOutput::new(correct_stage(&s, &j.stage_input()?)?.to_text())),
        Stage::Refine => Ok(StageOutput::new(refine_stage(&s, &j.stage_input()?)?.to_text())),
        Stage::Verify => Ok(StageOutput::new(verify_stage(&s, &j.stage_input()?)?.to_text())),
        Stage::Classify => Ok(StageOutput::new(
            classify_stage(&s, &j.stage_input()?)?.to_text(),
        )),
        Stage::Dedup => {
            let mut files = Vec::new();
            for p in &j.inputs {
                files.push(StageFile::parse(&fs::read_to_string(p)?)?);
            }
            if files.is_empty() {
                return Err(job("missing --in"));
            }
            let (records, conflicts) = dedup_stage(&s, &files)?;
            let mut out = StageOutput::new(catalog_to_string(&records));
            for c in conflicts {
                out.notes.push(format!(
                    "conflict: T*={} shared by signatures {}",
                    c.t_star,
                    c.signatures.join(", ")
                ));
            }
            Ok(out)
        }
        Stage::Report => {
            let records = parse_catalog(&j.read_input()?)?;
            Ok(StageOutput::new(report_stage(&records)?))
        }
        Stage::RenderScatter => {
            let records = parse_catalog(&j.read_input()?)?;
            Ok(StageOutput::new(render::render_scatter(&records, &window(&s))))
        }
        Stage::RenderOrbit => {
            let records = parse_catalog(&j.read_input()?)?;
            let rec = records
                .get(j.record)
                .ok_or_else(|| job(format!("catalog has no record {}", j.record)))?;
            Ok(StageOutput::new(render::render_orbit(
                rec,
                &s.refine,
                s.orbit_samples,
            )?))
        }
        Stage::Shard => {
            let file = StageFile::parse(&j.read_input()?)?;
            Ok(StageOutput::new(
                shard(&file, j.shard_count, j.shard_index)?.to_text(),
            ))
        }
        Stage::Merge => {
            let mut parts = Vec::new();
            for p in &j.inputs {
                parts.push(StageFile::parse(&fs::read_to_string(p)?)?);
            }
            let count = if j.shard_count > 1 {
                j.shard_count
            } else {
                parts.len()
            };
            Ok(StageOutput::new(merge(&parts, count)?.to_text()))
        }
    }
}

/// The scatter window configured for the scan.
pub fn window(s: &Settings) -> Window {
    let f = |t: &str| t.parse::<f64>().unwrap_or(0.0);
    Window {
        x_lo: f(&s.grid.vx_lo),
        x_hi: f(&s.grid.vx_hi),
        y_lo: f(&s.grid.vy_lo),
        y_hi: f(&s.grid.vy_hi),
    }
}

fn grid_header(kind: &str, s: &Settings) -> Header {
    let g = &s.grid;
    Header::new(kind)
        .with("window", format!("{},{},{},{}", g.vx_lo, g.vx_hi, g.vy_lo, g.vy_hi))
        .with("step", &g.step)
        .with("t0", &s.t0)
        .with("digits", s.scan.decimal_digits)
        .with("order", s.scan.taylor_order)
}

/// Scans the grid cells `shard_index, shard_index + shard_count, ...`.
pub fn scan_stage(
    s: &Settings,
    shard_index: usize,
    shard_count: usize,
) -> Result<StageFile, PipelineError> {
    let (nx, ny) = s.grid.dims();
    let ctx = s.scan.context();
    let t0 = ctx.parse(&s.t0).map_err(job)?;
    let indices: Vec<usize> = (shard_index..nx * ny).step_by(shard_count).collect();
    let cells = scan_indices(&s.grid, &indices, &t0, &s.scan, s.scan_samples, s.workers);
    let digits = s.scan.decimal_digits as usize;
    let mut header = grid_header("cells", s)
        .with("nx", nx)
        .with("ny", ny)
        .with("samples", s.scan_samples);
    header.set_shard(shard_index, shard_count);
    Ok(StageFile::new(
        header,
        cells.iter().map(|c| c.to_line(digits)).collect(),
    ))
}

/// Strict local minima below the threshold on a complete cell file.
pub fn candidates_stage(s: &Settings, cells: &StageFile) -> Result<StageFile, PipelineError> {
    cells.expect_kind(&["cells"])?;
    if cells.header.shard()? != (0, 1) {
        return Err(job("candidates need the merged cell file, not a shard"));
    }
    let num = |k: &str| -> Result<usize, PipelineError> {
        cells.header.require(k)?.parse().map_err(|_| job(format!("bad header '{k}'")))
    };
    let (nx, ny) = (num("nx")?, num("ny")?);
    let digits = num("digits")? as u32;
    let ctx = crate::precision::make_context(digits).map_err(job)?;
    let parsed: Result<Vec<ScanCell>, _> = cells
        .lines
        .iter()
        .enumerate()
        .map(|(i, l)| ScanCell::parse_line(l, &ctx).map_err(|e| job(format!("cell {}: {e}", i + 1))))
        .collect();
    let grid = ScanGrid::new(nx, ny, parsed?).map_err(job)?;
    let threshold = ctx.parse(&s.threshold).map_err(job)?;
    let found = find_candidates(&grid, &threshold);
    let mut header = Header::new("candidates");
    for key in ["window", "step", "t0", "digits"] {
        header.set(key, cells.header.require(key)?);
    }
    header.set("threshold", &s.threshold);
    header.set_shard(0, 1);
    Ok(StageFile::new(
        header,
        found.iter().map(|c| c.to_line(digits as usize)).collect(),
    ))
}

fn stage_header(kind: &str, cfg: &crate::precision::PrecisionConfig, input: &Header) -> Header {
    let mut h = Header::new(kind)
        .with("digits", cfg.decimal_digits)
        .with("order", cfg.taylor_order)
        .with("tol", &cfg.convergence_tol);
    h.set("shard", input.get("shard").unwrap_or("0/1"));
    h
}

fn parse_lines(file: &StageFile, min_fields: usize) -> Result<Vec<RecordLine>, PipelineError> {
    file.lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let r = RecordLine::parse(l);
            if r.fields.len() < min_fields {
                Err(job(format!(
                    "line {}: expected {min_fields} fields, got {}",
                    i + 1,
                    r.fields.len()
                )))
            } else {
                Ok(r)
            }
        })
        .collect()
}

/// Damped Newton correction of every candidate.
pub fn correct_stage(s: &Settings, input: &StageFile) -> Result<StageFile, PipelineError> {
    input.expect_kind(&["candidates"])?;
    let ctx = s.correct.context();
    let records = parse_lines(input, 4)?;
    let mut triplets = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let c = CandidateTriplet::parse_line(&r.fields.join(" "), &ctx)
            .map_err(|e| job(format!("line {}: {e}", i + 1)))?;
        triplets.push((Triplet::from(&c), format!("{},{}", r.fields[0], r.fields[1])));
    }
    let digits = s.correct.decimal_digits as usize;
    let lines = map_ordered(&triplets, s.workers, |(t, origin)| {
        let res = canm_correct(t, &s.correct, &s.canm);
        let mut line = RecordLine::parse(&res.to_line(digits));
        line.set_tag("origin", origin);
        line.push_trail(&format!("correct:{}", res.iterations));
        line.render()
    });
    Ok(StageFile::new(
        stage_header("correct", &s.correct, &input.header),
        lines,
    ))
}

/// Classical Newton refinement of converged lines; other lines pass through.
pub fn refine_stage(s: &Settings, input: &StageFile) -> Result<StageFile, PipelineError> {
    input.expect_kind(&["correct"])?;
    let ctx = s.refine.context();
    let records = parse_lines(input, 6)?;
    for (i, r) in records.iter().enumerate() {
        Triplet::parse(&r.fields[1], &r.fields[2], &r.fields[3], &ctx)
            .map_err(|e| job(format!("line {}: {e}", i + 1)))?;
    }
    let digits = s.refine.decimal_digits as usize;
    let opts = RefineOptions {
        target_norm: None,
        max_iter: s.refine_max_iter,
        ..RefineOptions::default()
    };
    let lines = map_ordered(&records, s.workers, |r| {
        if r.fields[0] != CorrectionStatus::Converged.code() {
            return r.render();
        }
        let t = Triplet::parse(&r.fields[1], &r.fields[2], &r.fields[3], &ctx).expect("checked");
        let res = newton_refine(&t, &s.refine, &opts);
        let mut line = RecordLine::parse(&res.to_line(digits));
        line.tags = r.tags.clone();
        line.push_trail(&format!("refine:{}", res.iterations));
        line.render()
    });
    Ok(StageFile::new(
        stage_header("refine", &s.refine, &input.header),
        lines,
    ))
}

/// Re-refines converged lines at the verification precision and appends the
/// number of agreeing digits.
pub fn verify_stage(s: &Settings, input: &StageFile) -> Result<StageFile, PipelineError> {
    input.expect_kind(&["refine"])?;
    let ctx = s.refine.context();
    let records = parse_lines(input, 6)?;
    for (i, r) in records.iter().enumerate() {
        Triplet::parse(&r.fields[1], &r.fields[2], &r.fields[3], &ctx)
            .map_err(|e| job(format!("line {}: {e}", i + 1)))?;
    }
    let lines = map_ordered(&records, s.workers, |r| {
        let mut line = r.clone();
        line.fields.truncate(6);
        if r.fields[0] != CorrectionStatus::Converged.code() {
            line.fields.push("0".into());
            return line.render();
        }
        let t = Triplet::parse(&r.fields[1], &r.fields[2], &r.fields[3], &ctx).expect("checked");
        let (status, agreed) = match verify(&t, &s.refine, &s.verify) {
            Ok(v) if v.agreed_digits >= s.min_agreed => ("verified", v.agreed_digits),
            Ok(v) => ("unverified", v.agreed_digits),
            Err(_) => ("verify_failed", 0),
        };
        line.fields[0] = status.into();
        line.fields.push(agreed.to_string());
        line.push_trail(&format!("verify:{agreed}"));
        line.render()
    });
    let mut header = stage_header("verify", &s.verify, &input.header);
    header.set("min_agreed", s.min_agreed);
    Ok(StageFile::new(header, lines))
}

fn topology_reason(e: &TopologyError) -> String {
    match e {
        TopologyError::Ambiguous { .. } => "ambiguous-topology".into(),
        TopologyError::Integration(code) => code.clone(),
        TopologyError::InvalidWord(_) => "invalid-word".into(),
    }
}

/// Builds catalog records for verified lines (or converged lines of a refine
/// file); everything else becomes `<reason> vx vy T`.
pub fn classify_stage(s: &Settings, input: &StageFile) -> Result<StageFile, PipelineError> {
    input.expect_kind(&["verify", "refine"])?;
    let from_verify = input.header.kind == "verify";
    let accept = if from_verify { "verified" } else { "converged" };
    let ctx = s.refine.context();
    let records = parse_lines(input, if from_verify { 7 } else { 6 })?;
    let lines = map_ordered(&records, s.workers, |r| {
        let failure = |reason: &str| {
            format!("{} {} {} {}", reason, r.fields[1], r.fields[2], r.fields[3])
        };
        if r.fields[0] != accept {
            return failure(&r.fields[0]);
        }
        let t = match Triplet::parse(&r.fields[1], &r.fields[2], &r.fields[3], &ctx) {
            Ok(t) => t,
            Err(_) => return failure("malformed"),
        };
        let v = match VelocityPair::new(t.vx.clone(), t.vy.clone()) {
            Ok(v) => v,
            Err(_) => return failure("out_of_range"),
        };
        let sig = match classify(&v, &t.t, &s.refine, &s.syzygy) {
            Ok(sig) => sig,
            Err(e) => return failure(&topology_reason(&e)),
        };
        let agreed = if from_verify {
            r.fields[6].parse().unwrap_or(0)
        } else {
            0
        };
        let mut prov = Provenance::new("new");
        prov.grid_point = r
            .tag("origin")
            .and_then(|o| o.split_once(','))
            .map(|(a, b)| [a.to_string(), b.to_string()]);
        prov.stages = r
            .tag("trail")
            .map(|t| t.split(';').map(str::to_string).collect())
            .unwrap_or_default();
        match SolutionRecord::build(&t, &r.fields[4], agreed, &sig, s.catalog_digits, prov) {
            Ok(rec) => format!("ok {}", serde_json::to_string(&rec).expect("serializable")),
            Err(CatalogError::ZeroEnergy) => failure("zero-energy"),
            Err(e) => failure(&e.to_string().replace(' ', "_")),
        }
    });
    let mut header = Header::new("classify")
        .with("digits", s.refine.decimal_digits)
        .with("catalog_digits", s.catalog_digits);
    header.set("shard", input.header.get("shard").unwrap_or("0/1"));
    Ok(StageFile::new(header, lines))
}

/// Catalog records found in classify files, validated on load.
pub fn classified_records(files: &[StageFile]) -> Result<Vec<SolutionRecord>, PipelineError> {
    let mut out = Vec::new();
    for f in files {
        f.expect_kind(&["classify"])?;
        for (i, l) in f.lines.iter().enumerate() {
            if let Some(json) = l.strip_prefix("ok ") {
                let rec: SolutionRecord = serde_json::from_str(json)
                    .map_err(|e| job(format!("classify line {}: {e}", i + 1)))?;
                out.push(rec);
            }
        }
    }
    validate_catalog(&out)?;
    Ok(out)
}

/// One representative per distinct solution.
pub fn dedup_stage(
    s: &Settings,
    files: &[StageFile],
) -> Result<(Vec<SolutionRecord>, Vec<DedupConflict>), PipelineError> {
    let records = classified_records(files)?;
    let out = dedup_solutions(&records, s.tstar_tol_log10)?;
    Ok((out.representatives(), out.conflicts))
}

/// Family table with a summary footer.
pub fn report_stage(records: &[SolutionRecord]) -> Result<String, PipelineError> {
    validate_catalog(records)?;
    let table = group_families(records);
    let mut text = table.to_text();
    text.push_str(&format!(
        "# solutions={} families={} root_families={}\n",
        records.len(),
        table.rows.len(),
        table.root_family_count()
    ));
    Ok(text)
}

/// Formats a number the way stage files do, for callers assembling inputs.
pub fn format_field(x: &crate::precision::Real, digits: usize) -> String {
    format_trimmed(x, digits)
}
