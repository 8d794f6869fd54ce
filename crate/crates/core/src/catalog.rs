//! Solution records, scale-invariant periods, deduplication and the
//! line-delimited catalog file.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;

use rug::Float;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::correct::Triplet;
use crate::precision::{format_trimmed, log10_abs, make_context, Context, Real};
use crate::topology::{canonical_signature, format_word, Signature};

pub const CATALOG_VERSION: u32 = 1;

/// Default relative tolerance on `T*` when grouping representations.
pub const DEFAULT_TSTAR_TOL_LOG10: i32 = -40;

/// Energies closer to zero than this make `T*` meaningless.
const MIN_ABS_ENERGY_LOG10: i32 = -10;

/// Precision used to compare stored decimal strings.
const COMPARE_DIGITS: u32 = 320;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("|E| below 1e-10; scale-invariant period undefined")]
    ZeroEnergy,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: catalog version {found}, expected {CATALOG_VERSION}")]
    Version { line: usize, found: u32 },
    #[error("record ({vx}, {vy}): stored {field} disagrees with recomputed value")]
    Inconsistent {
        vx: String,
        vy: String,
        field: &'static str,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a solution came from and what each stage reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_point: Option<[String; 2]>,
    #[serde(default)]
    pub stages: Vec<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Provenance {
    pub fn new(source: &str) -> Self {
        Self {
            source: source.to_string(),
            grid_point: None,
            stages: Vec::new(),
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub version: u32,
    pub vx: String,
    pub vy: String,
    #[serde(rename = "T")]
    pub t: String,
    #[serde(rename = "T_star")]
    pub t_star: String,
    pub energy: String,
    pub residual_norm: String,
    pub agreed_digits: u32,
    pub signature: String,
    pub f2_word: String,
    pub word_length: usize,
    pub satellite_of: Option<String>,
    pub provenance: Provenance,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// `-2.5 + 3 (vx² + vy²)`.
pub fn energy_of(vx: &Real, vy: &Real) -> Real {
    let prec = vx.prec().max(vy.prec());
    let s = Float::with_val(prec, vx * vx) + Float::with_val(prec, vy * vy);
    s * 3u32 - Float::with_val(prec, 2.5)
}

/// `T |E|^(3/2)`.
pub fn scale_invariant_period(vx: &Real, vy: &Real, t: &Real) -> Result<Real, CatalogError> {
    let prec = vx.prec().max(vy.prec()).max(t.prec());
    let e = energy_of(vx, vy).abs();
    if e.is_zero() || log10_abs(&e) < f64::from(MIN_ABS_ENERGY_LOG10) {
        return Err(CatalogError::ZeroEnergy);
    }
    let root = Float::with_val(prec, e.sqrt_ref());
    Ok(Float::with_val(prec, t * &e) * root)
}

fn compare_ctx() -> Context {
    make_context(COMPARE_DIGITS).expect("valid digits")
}

fn num(text: &str, ctx: &Context) -> Option<Real> {
    ctx.parse(text).ok()
}

impl SolutionRecord {
    /// Builds a record, deriving energy, `T*` and the topology fields.
    pub fn build(
        triplet: &Triplet,
        residual_norm: &str,
        agreed_digits: u32,
        signature: &Signature,
        digits: usize,
        provenance: Provenance,
    ) -> Result<Self, CatalogError> {
        let energy = energy_of(&triplet.vx, &triplet.vy);
        let t_star = scale_invariant_period(&triplet.vx, &triplet.vy, &triplet.t)?;
        let satellite_of = signature
            .satellite_of()
            .map(|(root, _)| format_word(&canonical_signature(&root)));
        Ok(Self {
            version: CATALOG_VERSION,
            vx: format_trimmed(&triplet.vx, digits),
            vy: format_trimmed(&triplet.vy, digits),
            t: format_trimmed(&triplet.t, digits),
            t_star: format_trimmed(&t_star, digits),
            energy: format_trimmed(&energy, digits),
            residual_norm: residual_norm.to_string(),
            agreed_digits,
            signature: signature.canonical_text(),
            f2_word: signature.f2_word(),
            word_length: signature.word_length,
            satellite_of,
            provenance,
            extra: Map::new(),
        })
    }

    fn parsed(&self, ctx: &Context) -> Option<(Real, Real, Real, Real)> {
        Some((
            num(&self.vx, ctx)?,
            num(&self.vy, ctx)?,
            num(&self.t, ctx)?,
            num(&self.t_star, ctx)?,
        ))
    }

    /// Recomputes energy and `T*` from the stored `vx, vy, T` and checks them
    /// against the stored strings to their own precision.
    pub fn validate(&self) -> Result<(), CatalogError> {
        let ctx = compare_ctx();
        let bad = |field| CatalogError::Inconsistent {
            vx: self.vx.clone(),
            vy: self.vy.clone(),
            field,
        };
        let (vx, vy, t, t_star) = self.parsed(&ctx).ok_or_else(|| bad("numeric field"))?;
        let e = energy_of(&vx, &vy);
        let stored_e = num(&self.energy, &ctx).ok_or_else(|| bad("energy"))?;
        if !close(&e, &stored_e, significant_digits(&self.energy)) {
            return Err(bad("energy"));
        }
        let ts = scale_invariant_period(&vx, &vy, &t)?;
        if !close(&ts, &t_star, significant_digits(&self.t_star)) {
            return Err(bad("T_star"));
        }
        Ok(())
    }
}

fn significant_digits(text: &str) -> usize {
    let mantissa = text.split(['e', 'E']).next().unwrap_or("");
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    digits.trim_start_matches('0').len().max(1)
}

/// Agreement to all but the last three of `digits` significant digits; the
/// slack covers rounding of stored inputs.
fn close(a: &Real, b: &Real, digits: usize) -> bool {
    let prec = a.prec().max(b.prec());
    let diff = Float::with_val(prec, a - b).abs();
    if diff.is_zero() {
        return true;
    }
    let scale = Float::with_val(prec, a.abs_ref()).max(&Float::with_val(prec, b.abs_ref()));
    let rel = if scale.is_zero() { diff } else { diff / scale };
    log10_abs(&rel) < -(digits as f64) + 3.0
}

pub fn validate_catalog(records: &[SolutionRecord]) -> Result<(), CatalogError> {
    records.iter().try_for_each(SolutionRecord::validate)
}

/// One line per record, field order fixed.
pub fn catalog_to_string(records: &[SolutionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_catalog(text: &str) -> Result<Vec<SolutionRecord>, CatalogError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| CatalogError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let version = value.get("version").and_then(Value::as_u64);
        match version {
            Some(v) if v == u64::from(CATALOG_VERSION) => {}
            Some(v) => {
                return Err(CatalogError::Version {
                    line: line_no,
                    found: v as u32,
                })
            }
            None => {
                return Err(CatalogError::Malformed {
                    line: line_no,
                    message: "missing version".into(),
                })
            }
        }
        let rec: SolutionRecord =
            serde_json::from_value(value).map_err(|e| CatalogError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_catalog(records: &[SolutionRecord], path: &Path) -> Result<(), CatalogError> {
    let mut f = fs::File::create(path)?;
    f.write_all(catalog_to_string(records).as_bytes())?;
    Ok(())
}

pub fn read_catalog(path: &Path) -> Result<Vec<SolutionRecord>, CatalogError> {
    parse_catalog(&fs::read_to_string(path)?)
}

/// Records judged to be representations of one solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionGroup {
    pub representative: SolutionRecord,
    pub members: Vec<SolutionRecord>,
}

/// Records whose `T*` agree but whose signatures differ.
#[derive(Debug, Clone, PartialEq)]
pub struct DedupConflict {
    pub t_star: String,
    pub signatures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DedupOutcome {
    pub solutions: Vec<SolutionGroup>,
    pub conflicts: Vec<DedupConflict>,
}

impl DedupOutcome {
    /// Representatives with the member count recorded in their provenance.
    pub fn representatives(&self) -> Vec<SolutionRecord> {
        self.solutions
            .iter()
            .map(|g| {
                let mut r = g.representative.clone();
                let count: u64 = g
                    .members
                    .iter()
                    .map(|m| {
                        m.provenance
                            .extra
                            .get("representations")
                            .and_then(Value::as_u64)
                            .unwrap_or(1)
                    })
                    .sum();
                r.provenance
                    .extra
                    .insert("representations".into(), Value::from(count));
                r
            })
            .collect()
    }
}

fn cmp_num(a: &Real, b: &Real) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Groups records with relative `T*` difference below `10^tol_log10` and
/// equal signatures. Output is ordered by `T*` and does not depend on input
/// order.
pub fn dedup_solutions(
    records: &[SolutionRecord],
    tol_log10: i32,
) -> Result<DedupOutcome, CatalogError> {
    let ctx = compare_ctx();
    let mut keyed = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let (vx, vy, _, ts) = r.parsed(&ctx).ok_or(CatalogError::Malformed {
            line: i + 1,
            message: "non-numeric field".into(),
        })?;
        keyed.push((ts, vx, vy, r));
    }
    keyed.sort_by(|a, b| {
        cmp_num(&a.0, &b.0)
            .then_with(|| cmp_num(&a.1, &b.1))
            .then_with(|| cmp_num(&a.2, &b.2))
            .then_with(|| a.3.signature.cmp(&b.3.signature))
    });
    let tol = ctx.pow10(tol_log10);
    let near = |a: &Real, b: &Real| {
        let d = Float::with_val(ctx.bits(), a - b).abs();
        d <= Float::with_val(ctx.bits(), b.abs_ref()) * &tol
    };

    let mut out = DedupOutcome::default();
    let mut i = 0;
    while i < keyed.len() {
        let mut j = i + 1;
        while j < keyed.len() && near(&keyed[j].0, &keyed[j - 1].0) {
            j += 1;
        }
        let cluster = &keyed[i..j];
        let mut sigs: Vec<&str> = cluster.iter().map(|k| k.3.signature.as_str()).collect();
        sigs.sort_unstable();
        sigs.dedup();
        if sigs.len() > 1 {
            out.conflicts.push(DedupConflict {
                t_star: cluster[0].3.t_star.clone(),
                signatures: sigs.iter().map(|s| s.to_string()).collect(),
            });
        }
        for sig in sigs {
            let mut members: Vec<&(Real, Real, Real, &SolutionRecord)> =
                cluster.iter().filter(|k| k.3.signature == sig).collect();
            members.sort_by(|a, b| cmp_num(&a.1, &b.1).then_with(|| cmp_num(&a.2, &b.2)));
            out.solutions.push(SolutionGroup {
                representative: members[0].3.clone(),
                members: members.iter().map(|k| k.3.clone()).collect(),
            });
        }
        i = j;
    }
    Ok(out)
}

/// One row of the family table.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyRow {
    pub signature: String,
    pub f2_word: String,
    pub word_length: usize,
    pub members: usize,
    /// Member with the smallest `T*`.
    pub representative: SolutionRecord,
    pub satellite_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FamilyTable {
    pub rows: Vec<FamilyRow>,
}

impl FamilyTable {
    /// Families that are not powers of a shorter word.
    pub fn root_family_count(&self) -> usize {
        self.rows.iter().filter(|r| r.satellite_of.is_none()).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "# signature f2_word word_length members T_star vx vy T satellite_of\n",
        );
        for r in &self.rows {
            let sig = if r.signature.is_empty() { "-" } else { &r.signature };
            let f2 = if r.f2_word.is_empty() { "-" } else { &r.f2_word };
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {}\n",
                sig,
                f2,
                r.word_length,
                r.members,
                r.representative.t_star,
                r.representative.vx,
                r.representative.vy,
                r.representative.t,
                r.satellite_of.as_deref().unwrap_or("-"),
            ));
        }
        out
    }
}

/// Partitions records by canonical signature; rows are ordered by word
/// length, then signature text.
pub fn group_families(records: &[SolutionRecord]) -> FamilyTable {
    let ctx = compare_ctx();
    let mut by_sig: std::collections::BTreeMap<&str, Vec<&SolutionRecord>> = Default::default();
    for r in records {
        by_sig.entry(r.signature.as_str()).or_default().push(r);
    }
    let mut rows: Vec<FamilyRow> = by_sig
        .into_values()
        .map(|members| {
            let rep = members
                .iter()
                .min_by(|a, b| {
                    let ka = (num(&a.t_star, &ctx), num(&a.vx, &ctx), num(&a.vy, &ctx));
                    let kb = (num(&b.t_star, &ctx), num(&b.vx, &ctx), num(&b.vy, &ctx));
                    ka.partial_cmp(&kb).unwrap_or(Ordering::Equal)
                })
                .expect("non-empty group");
            FamilyRow {
                signature: rep.signature.clone(),
                f2_word: rep.f2_word.clone(),
                word_length: rep.word_length,
                members: members.len(),
                representative: (*rep).clone(),
                satellite_of: rep.satellite_of.clone(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.word_length
            .cmp(&b.word_length)
            .then_with(|| a.signature.cmp(&b.signature))
    });
    FamilyTable { rows }
}
