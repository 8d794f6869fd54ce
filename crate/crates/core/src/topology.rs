//! Topological classification of periodic orbits.
//!
//! Along one period the three bodies become collinear at isolated instants
//! (syzygies). Each one is labelled by the body in the middle and the
//! direction in which the oriented area crosses zero. The resulting cyclic
//! word, reduced and canonicalised under body relabelling, rotation and
//! orientation reversal, identifies the family.

use std::fmt;
use std::str::FromStr;

use rug::{Assign, Float};
use thiserror::Error;

use crate::dynamics::{
    initial_state, oriented_area, oriented_area_rate, x_index, y_index, State, VelocityPair, DIM,
};
use crate::precision::{Context, PrecisionConfig, Real};
use crate::taylor::{integrate, IntegrationStatus, Observer, TaylorStep};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("classification ambiguous at t = {t}: {reason}")]
    Ambiguous { t: String, reason: String },
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("invalid word '{0}'")]
    InvalidWord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// A syzygy symbol: middle body (1..=3) and crossing sign. The derived order
/// is `(1,+) < (1,-) < (2,+) < ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter {
    pub middle: u8,
    pub sign: Sign,
}

impl Letter {
    pub fn new(middle: u8, sign: Sign) -> Self {
        debug_assert!((1..=3).contains(&middle));
        Self { middle, sign }
    }

    pub fn plus(middle: u8) -> Self {
        Self::new(middle, Sign::Plus)
    }

    pub fn minus(middle: u8) -> Self {
        Self::new(middle, Sign::Minus)
    }

    pub fn inverse(self) -> Self {
        Self::new(self.middle, self.sign.flip())
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.sign == Sign::Plus { '+' } else { '-' };
        write!(f, "{}{}", self.middle, s)
    }
}

/// `1+2+1-` style text.
pub fn format_word(word: &[Letter]) -> String {
    word.iter().map(Letter::to_string).collect()
}

pub fn parse_word(text: &str) -> Result<Vec<Letter>, TopologyError> {
    let bytes = text.trim().as_bytes();
    if !bytes.len().is_multiple_of(2) {
        return Err(TopologyError::InvalidWord(text.to_string()));
    }
    bytes
        .chunks(2)
        .map(|c| {
            let middle = match c[0] {
                b'1'..=b'3' => c[0] - b'0',
                _ => return Err(TopologyError::InvalidWord(text.to_string())),
            };
            let sign = match c[1] {
                b'+' => Sign::Plus,
                b'-' => Sign::Minus,
                _ => return Err(TopologyError::InvalidWord(text.to_string())),
            };
            Ok(Letter::new(middle, sign))
        })
        .collect()
}

/// Deletes adjacent inverse pairs until none remain.
pub fn free_reduce(seq: &[Letter]) -> Vec<Letter> {
    let mut out: Vec<Letter> = Vec::with_capacity(seq.len());
    for &l in seq {
        if out.last() == Some(&l.inverse()) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    out
}

/// Strips cancelling first/last pairs of a freely reduced word.
pub fn cyclic_reduce(seq: &[Letter]) -> Vec<Letter> {
    let mut lo = 0;
    let mut hi = seq.len();
    while hi - lo >= 2 && seq[lo] == seq[hi - 1].inverse() {
        lo += 1;
        hi -= 1;
    }
    seq[lo..hi].to_vec()
}

/// The six permutations of body labels, as images of 1, 2, 3.
const RELABELINGS: [[u8; 3]; 6] = [
    [1, 2, 3],
    [1, 3, 2],
    [2, 1, 3],
    [2, 3, 1],
    [3, 1, 2],
    [3, 2, 1],
];

/// Lexicographically least word equivalent to `word` under relabelling and
/// rotation, and also reversal when `with_reversal` is set.
pub fn canonical_signature_with(word: &[Letter], with_reversal: bool) -> Vec<Letter> {
    if word.is_empty() {
        return Vec::new();
    }
    let n = word.len();
    let reversed: Vec<Letter> = word.iter().rev().map(|l| l.inverse()).collect();
    let bases: Vec<&[Letter]> = if with_reversal {
        vec![word, &reversed]
    } else {
        vec![word]
    };
    let mut best: Option<Vec<Letter>> = None;
    let mut cand = Vec::with_capacity(n);
    for base in bases {
        for perm in RELABELINGS {
            for r in 0..n {
                cand.clear();
                cand.extend((0..n).map(|k| {
                    let l = base[(r + k) % n];
                    Letter::new(perm[(l.middle - 1) as usize], l.sign)
                }));
                if best.as_ref().is_none_or(|b| cand < *b) {
                    best = Some(cand.clone());
                }
            }
        }
    }
    best.unwrap_or_default()
}

/// Canonical form including orientation reversal.
pub fn canonical_signature(word: &[Letter]) -> Vec<Letter> {
    canonical_signature_with(word, true)
}

fn f2_reduce(word: &mut Vec<char>) {
    let inv = |c: char| {
        if c.is_ascii_lowercase() {
            c.to_ascii_uppercase()
        } else {
            c.to_ascii_lowercase()
        }
    };
    let mut out: Vec<char> = Vec::with_capacity(word.len());
    for &c in word.iter() {
        if out.last() == Some(&inv(c)) {
            out.pop();
        } else {
            out.push(c);
        }
    }
    let (mut lo, mut hi) = (0, out.len());
    while hi - lo >= 2 && out[lo] == inv(out[hi - 1]) {
        lo += 1;
        hi -= 1;
    }
    *word = out[lo..hi].to_vec();
}

/// Word over `a, b` (uppercase = inverse) with `1 → a^s`, `2 → b^s`,
/// `3 → (ab)^(-s)`, freely and cyclically reduced.
pub fn to_f2_word(word: &[Letter]) -> String {
    let mut chars = Vec::with_capacity(word.len() * 2);
    for l in word {
        match (l.middle, l.sign) {
            (1, Sign::Plus) => chars.push('a'),
            (1, Sign::Minus) => chars.push('A'),
            (2, Sign::Plus) => chars.push('b'),
            (2, Sign::Minus) => chars.push('B'),
            (_, Sign::Plus) => chars.extend(['B', 'A']),
            (_, Sign::Minus) => chars.extend(['a', 'b']),
        }
    }
    f2_reduce(&mut chars);
    chars.into_iter().collect()
}

/// Whether the cyclic word is a proper power `w^k`, `k >= 2`; returns the
/// shortest root and the exponent.
pub fn is_satellite(word: &[Letter]) -> Option<(Vec<Letter>, usize)> {
    let n = word.len();
    (1..n)
        .filter(|&d| n.is_multiple_of(d))
        .find(|&d| (0..n).all(|i| word[i] == word[(i + d) % n]))
        .map(|d| (word[..d].to_vec(), n / d))
}

/// One collinear instant along the orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct SyzygyEvent {
    pub t: Real,
    pub middle: u8,
    pub sign: Sign,
}

impl SyzygyEvent {
    pub fn letter(&self) -> Letter {
        Letter::new(self.middle, self.sign)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyzygyOptions {
    pub samples_per_step: usize,
    pub with_reversal: bool,
}

impl Default for SyzygyOptions {
    fn default() -> Self {
        Self {
            samples_per_step: 16,
            with_reversal: true,
        }
    }
}

/// Middle body (1..=3) of a collinear configuration: the one outside the
/// farthest pair.
fn middle_body(u: &[Real], merge_tol: &Real) -> Result<u8, String> {
    let prec = u[0].prec();
    let dist = |i: usize, j: usize| {
        let dx = Float::with_val(prec, &u[x_index(i)] - &u[x_index(j)]);
        let dy = Float::with_val(prec, &u[y_index(i)] - &u[y_index(j)]);
        (dx.square() + dy.square()).sqrt()
    };
    let mut d = [(dist(1, 2), 1u8), (dist(0, 2), 2u8), (dist(0, 1), 3u8)];
    d.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite distances"));
    if Float::with_val(prec, &d[0].0 - &d[1].0) < *merge_tol {
        return Err("no body strictly between the others".into());
    }
    Ok(d[0].1)
}

struct SyzygyObserver {
    samples: usize,
    root_tol: Real,
    merge_tol: Real,
    buf: Vec<Real>,
    events: Vec<SyzygyEvent>,
    error: Option<TopologyError>,
}

impl SyzygyObserver {
    fn area_at(&mut self, step: &TaylorStep, tau: &Real) -> Real {
        step.eval_into(tau, &mut self.buf);
        oriented_area(&self.buf)
    }

    fn bisect(&mut self, step: &TaylorStep, lo: &Real, hi: &Real, s_lo: &Real) -> Real {
        let prec = step.precision();
        let (mut lo, mut hi) = (lo.clone(), hi.clone());
        let lo_positive = s_lo.is_sign_positive();
        let mut mid = Float::new(prec);
        for _ in 0..(2 * prec + 16) {
            mid.assign(&lo + &hi);
            mid /= 2u32;
            let s = self.area_at(step, &mid);
            if Float::with_val(prec, s.abs_ref()) < self.root_tol || mid == lo || mid == hi {
                break;
            }
            if s.is_sign_positive() == lo_positive {
                lo.assign(&mid);
            } else {
                hi.assign(&mid);
            }
        }
        mid
    }

    fn record(&mut self, step: &TaylorStep, tau: &Real) {
        step.eval_into(tau, &mut self.buf);
        let t = Float::with_val(step.precision(), &step.t0 + tau);
        let rate = oriented_area_rate(&self.buf);
        let middle = match middle_body(&self.buf, &self.merge_tol) {
            Ok(m) => m,
            Err(reason) => {
                self.error.get_or_insert(TopologyError::Ambiguous {
                    t: t.to_string_radix(10, Some(20)),
                    reason,
                });
                return;
            }
        };
        let sign = if rate.is_sign_positive() {
            Sign::Plus
        } else {
            Sign::Minus
        };
        self.events.push(SyzygyEvent { t, middle, sign });
    }
}

impl Observer for SyzygyObserver {
    fn observe(&mut self, step: &TaylorStep) {
        let prec = step.precision();
        let at_origin = step.t0.is_zero();
        let mut prev_tau = Float::new(prec);
        let mut prev_s = self.area_at(step, &prev_tau);
        let mut tau = Float::new(prec);
        for q in 1..=self.samples {
            if q == self.samples {
                tau.assign(&step.h);
            } else {
                tau.assign(&step.h * q as u32);
                tau /= self.samples as u32;
            }
            let s = self.area_at(step, &tau);
            let skip = at_origin && q == 1;
            if !skip && !s.is_zero() && s.is_sign_positive() != prev_s.is_sign_positive() {
                let root = self.bisect(step, &prev_tau, &tau, &prev_s);
                self.record(step, &root);
            }
            prev_tau.assign(&tau);
            prev_s = s;
        }
    }
}

/// Syzygies over `[0, period]` of the orbit starting at `start` (whose time
/// is taken as zero). A collinear start counts as an event at `t = 0`;
/// crossings within the merge tolerance of `period` are the same event seen
/// again and are dropped.
pub fn detect_syzygies_from(
    start: &State,
    period: &Real,
    cfg: &PrecisionConfig,
    opts: &SyzygyOptions,
) -> Result<Vec<SyzygyEvent>, TopologyError> {
    let ctx = cfg.context();
    let d = cfg.decimal_digits as i32;
    let root_tol = ctx.pow10(-d / 2);
    let merge_tol = ctx.pow10(-d / 4);
    let start = State {
        t: ctx.zero(),
        u: start.u.iter().map(|x| ctx.convert(x)).collect(),
    };
    let mut events = Vec::new();
    let s0 = oriented_area(&start.u);
    if Float::with_val(ctx.bits(), s0.abs_ref()) <= root_tol {
        let rate = oriented_area_rate(&start.u);
        if rate.is_zero() {
            return Err(TopologyError::Ambiguous {
                t: "0".into(),
                reason: "tangential collinearity".into(),
            });
        }
        let middle = middle_body(&start.u, &merge_tol)
            .map_err(|reason| TopologyError::Ambiguous { t: "0".into(), reason })?;
        let sign = if rate.is_sign_positive() {
            Sign::Plus
        } else {
            Sign::Minus
        };
        events.push(SyzygyEvent {
            t: ctx.zero(),
            middle,
            sign,
        });
    }
    let mut obs = SyzygyObserver {
        samples: opts.samples_per_step.max(2),
        root_tol,
        merge_tol: merge_tol.clone(),
        buf: (0..DIM).map(|_| ctx.zero()).collect(),
        events: Vec::new(),
        error: None,
    };
    let out = integrate(&start, period, cfg, &mut [&mut obs])
        .map_err(|e| TopologyError::Integration(e.to_string()))?;
    if out.status != IntegrationStatus::ReachedEnd {
        return Err(TopologyError::Integration(out.status.code().into()));
    }
    if let Some(e) = obs.error {
        return Err(e);
    }
    events.extend(obs.events);
    merge_events(events, period, &merge_tol, &ctx)
}

fn merge_events(
    events: Vec<SyzygyEvent>,
    period: &Real,
    merge_tol: &Real,
    ctx: &Context,
) -> Result<Vec<SyzygyEvent>, TopologyError> {
    let gap = |a: &Real, b: &Real| Float::with_val(ctx.bits(), a - b).abs();
    let mut kept: Vec<SyzygyEvent> = Vec::with_capacity(events.len());
    let mut i = 0;
    while i < events.len() {
        let e = &events[i];
        if !e.t.is_zero() && gap(period, &e.t) < *merge_tol {
            i += 1;
            continue;
        }
        if let Some(next) = events.get(i + 1) {
            if gap(&next.t, &e.t) < *merge_tol {
                if next.middle != e.middle {
                    return Err(TopologyError::Ambiguous {
                        t: e.t.to_string_radix(10, Some(20)),
                        reason: "near-coincident syzygies with different middles".into(),
                    });
                }
                i += 2;
                continue;
            }
        }
        kept.push(e.clone());
        i += 1;
    }
    Ok(kept)
}

/// Syzygies along one period of the symmetric orbit with parameters `v`.
pub fn detect_syzygies(
    v: &VelocityPair,
    period: &Real,
    cfg: &PrecisionConfig,
    opts: &SyzygyOptions,
) -> Result<Vec<SyzygyEvent>, TopologyError> {
    let start = initial_state(v, &cfg.context());
    detect_syzygies_from(&start, period, cfg, opts)
}

/// The classification of one orbit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub raw: Vec<Letter>,
    /// Freely and cyclically reduced.
    pub reduced: Vec<Letter>,
    pub canonical: Vec<Letter>,
    pub word_length: usize,
}

impl Signature {
    pub fn from_raw(raw: Vec<Letter>, with_reversal: bool) -> Self {
        let reduced = cyclic_reduce(&free_reduce(&raw));
        let canonical = canonical_signature_with(&reduced, with_reversal);
        Self {
            word_length: reduced.len(),
            raw,
            reduced,
            canonical,
        }
    }

    pub fn canonical_text(&self) -> String {
        format_word(&self.canonical)
    }

    pub fn f2_word(&self) -> String {
        to_f2_word(&self.canonical)
    }

    /// Root of the canonical word when it is a proper power.
    pub fn satellite_of(&self) -> Option<(Vec<Letter>, usize)> {
        is_satellite(&self.canonical)
    }
}

impl FromStr for Signature {
    type Err = TopologyError;
    /// Rebuilds a signature from its canonical text.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Self::from_raw(parse_word(s)?, true))
    }
}

pub fn classify(
    v: &VelocityPair,
    period: &Real,
    cfg: &PrecisionConfig,
    opts: &SyzygyOptions,
) -> Result<Signature, TopologyError> {
    let events = detect_syzygies(v, period, cfg, opts)?;
    Ok(Signature::from_raw(
        events.iter().map(SyzygyEvent::letter).collect(),
        opts.with_reversal,
    ))
}
