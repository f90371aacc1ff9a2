//! Turing machines compiled into exact piecewise-affine maps of the 4-torus.
//!
//! A configuration (state, tape) is sent to a point `(z, w)` of
//! `(R/Z)^2 x (R/Z)^2`: `z` lies in a square `B_q` reserved for the state and
//! `w = f(tape)` is the two-sided base-`b` digit expansion of the tape. One
//! machine step is one application of the compiled map. All coordinates are
//! exact rationals.
//!
//! Head movement follows the tape-shift convention: a rule with shift `e`
//! replaces the tape `t` by `(t_{n-e})`, so `e = -1` brings the right
//! neighbour under the head and `e = +1` the left one.

use std::collections::HashMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::flows::TorusFlow;
use crate::forms::OneForm;
use crate::rational::{self, int, ratio, Q};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TuringError {
    #[error("machine is halted")]
    Halted,
    #[error("point lies outside every affine piece")]
    OutsidePieces,
    #[error("symbol {symbol} is out of range for base {base}")]
    SymbolOutOfRange { symbol: u8, base: u64 },
    #[error("base {b} is too small for alphabet size {k} (need b >= 10k)")]
    BaseTooSmall { b: u64, k: u8 },
    #[error("invalid machine: {0}")]
    InvalidMachine(String),
    #[error("invalid tape: {0}")]
    InvalidTape(String),
    #[error("layout check failed: {0}")]
    Layout(String),
}

type TResult<T> = std::result::Result<T, TuringError>;

pub type Symbol = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub next: usize,
    pub write: Symbol,
    pub shift: i8,
}

/// On-disk form: `{states, start, halt, k, delta: [[q, t, q', t', e], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    pub states: Vec<String>,
    pub start: String,
    pub halt: String,
    pub k: Symbol,
    pub delta: Vec<(String, Symbol, String, Symbol, i8)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuringMachine {
    states: Vec<String>,
    start: usize,
    halt: usize,
    k: Symbol,
    table: Vec<Option<Rule>>,
}

impl TuringMachine {
    pub fn from_spec(spec: &MachineSpec) -> TResult<Self> {
        let bad = |m: String| TuringError::InvalidMachine(m);
        if spec.k < 1 {
            return Err(bad("field 'k' must be at least 1".into()));
        }
        if spec.k > 25 {
            return Err(bad("field 'k' must be at most 25".into()));
        }
        let mut index = HashMap::new();
        for (i, name) in spec.states.iter().enumerate() {
            if index.insert(name.as_str(), i).is_some() {
                return Err(bad(format!("states[{i}]: duplicate state '{name}'")));
            }
        }
        let lookup = |name: &str, field: &str| {
            index.get(name).copied().ok_or_else(|| bad(format!("{field}: unknown state '{name}'")))
        };
        let start = lookup(&spec.start, "start")?;
        let halt = lookup(&spec.halt, "halt")?;
        let width = spec.k as usize + 1;
        let mut table = vec![None; spec.states.len() * width];
        for (r, (q, t, q2, t2, e)) in spec.delta.iter().enumerate() {
            let field = format!("delta[{r}]");
            let qi = lookup(q, &field)?;
            let next = lookup(q2, &field)?;
            if qi == halt {
                return Err(bad(format!("{field}: HALT has no transitions")));
            }
            if *t > spec.k || *t2 > spec.k {
                return Err(bad(format!("{field}: symbol out of range 0..={}", spec.k)));
            }
            if !(-1..=1).contains(e) {
                return Err(bad(format!("{field}: shift must be -1, 0 or 1")));
            }
            let slot = &mut table[qi * width + *t as usize];
            if slot.is_some() {
                return Err(bad(format!("{field}: duplicate entry for ({q}, {t})")));
            }
            *slot = Some(Rule { next, write: *t2, shift: *e });
        }
        for (qi, name) in spec.states.iter().enumerate() {
            if qi == halt {
                continue;
            }
            for t in 0..width {
                if table[qi * width + t].is_none() {
                    return Err(bad(format!("delta: missing entry for ({name}, {t})")));
                }
            }
        }
        Ok(Self { states: spec.states.clone(), start, halt, k: spec.k, table })
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        let spec: MachineSpec = serde_json::from_str(text)?;
        Ok(Self::from_spec(&spec)?)
    }

    pub fn to_spec(&self) -> MachineSpec {
        let mut delta = Vec::new();
        for q in 0..self.states.len() {
            for t in 0..=self.k {
                if let Some(r) = self.rule(q, t) {
                    delta.push((self.states[q].clone(), t, self.states[r.next].clone(), r.write, r.shift));
                }
            }
        }
        MachineSpec {
            states: self.states.clone(),
            start: self.states[self.start].clone(),
            halt: self.states[self.halt].clone(),
            k: self.k,
            delta,
        }
    }

    fn build(states: &[&str], k: Symbol, delta: &[(&str, Symbol, &str, Symbol, i8)]) -> Self {
        let spec = MachineSpec {
            states: states.iter().map(|s| s.to_string()).collect(),
            start: states[0].to_string(),
            halt: "HALT".into(),
            k,
            delta: delta.iter().map(|&(a, b, c, d, e)| (a.into(), b, c.into(), d, e)).collect(),
        };
        Self::from_spec(&spec).expect("built-in machine is well formed")
    }

    /// Writes 1 under the head and halts.
    pub fn writer() -> Self {
        Self::build(&["START", "HALT"], 1, &[("START", 0, "HALT", 1, 0), ("START", 1, "HALT", 1, 0)])
    }

    /// Appends a 1 to the unary block starting under the head, then returns
    /// the head to the first cell of the block.
    pub fn incrementer() -> Self {
        Self::build(
            &["START", "BACK", "HALT"],
            1,
            &[
                ("START", 1, "START", 1, -1),
                ("START", 0, "BACK", 1, 1),
                ("BACK", 1, "BACK", 1, 1),
                ("BACK", 0, "HALT", 0, -1),
            ],
        )
    }

    /// Never halts: keeps moving without writing.
    pub fn self_loop() -> Self {
        Self::build(&["START", "HALT"], 1, &[("START", 0, "START", 0, 1), ("START", 1, "START", 1, 1)])
    }

    /// Copies a unary block `1^n` to `1^n 0 1^n` over the alphabet {0, 1}.
    pub fn copier() -> Self {
        Self::build(
            &["S1", "S2", "S3", "S4", "S5", "HALT"],
            1,
            &[
                ("S1", 0, "HALT", 0, 0),
                ("S1", 1, "S2", 0, -1),
                ("S2", 0, "S3", 0, -1),
                ("S2", 1, "S2", 1, -1),
                ("S3", 0, "S4", 1, 1),
                ("S3", 1, "S3", 1, -1),
                ("S4", 0, "S5", 0, 1),
                ("S4", 1, "S4", 1, 1),
                ("S5", 0, "S1", 1, -1),
                ("S5", 1, "S5", 1, 1),
            ],
        )
    }

    /// Binary counter between two `2` delimiters, head on the least
    /// significant bit. Counts up until the register overflows, then halts
    /// with the register cleared.
    pub fn bounded_counter() -> Self {
        Self::build(
            &["INC", "RET", "HALT"],
            2,
            &[
                ("INC", 0, "RET", 1, -1),
                ("INC", 1, "INC", 0, 1),
                ("INC", 2, "HALT", 2, 0),
                ("RET", 0, "RET", 0, -1),
                ("RET", 1, "RET", 1, -1),
                ("RET", 2, "INC", 2, 1),
            ],
        )
    }

    /// Uniformly random total transition table on `n_states` working states
    /// plus HALT.
    pub fn random<R: Rng>(rng: &mut R, n_states: usize, k: Symbol) -> Self {
        let mut states: Vec<String> = (0..n_states).map(|i| format!("q{i}")).collect();
        states.push("HALT".into());
        let mut delta = Vec::new();
        for q in 0..n_states {
            for t in 0..=k {
                let next = rng.gen_range(0..=n_states);
                delta.push((states[q].clone(), t, states[next].clone(), rng.gen_range(0..=k), rng.gen_range(-1..=1)));
            }
        }
        let spec = MachineSpec { start: states[0].clone(), halt: "HALT".into(), states, k, delta };
        Self::from_spec(&spec).expect("random machine is well formed")
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn halt(&self) -> usize {
        self.halt
    }

    pub fn k(&self) -> Symbol {
        self.k
    }

    pub fn rule(&self, q: usize, t: Symbol) -> Option<Rule> {
        self.table.get(q * (self.k as usize + 1) + t as usize).copied().flatten()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }
}

/// Eventually constant two-sided tape. Cell `n` is `left` for
/// `n < offset`, `right` for `n >= offset + cells.len()`, and
/// `cells[n - offset]` otherwise. The head always reads cell 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tape {
    left: Symbol,
    right: Symbol,
    offset: i64,
    cells: Vec<Symbol>,
}

impl Tape {
    pub fn new(left: Symbol, cells: Vec<Symbol>, offset: i64, right: Symbol) -> Self {
        let mut t = Self { left, right, offset, cells };
        t.normalize();
        t
    }

    pub fn blank() -> Self {
        Self::new(0, Vec::new(), 0, 0)
    }

    /// Cells starting at the head, zeros on both sides.
    pub fn from_cells(cells: &[Symbol]) -> Self {
        Self::new(0, cells.to_vec(), 0, 0)
    }

    /// Parses `[l*]cells[*r]` where `cells` are digits with an optional `^`
    /// before the head cell (default: the first cell). `"1*^01*0"` has ones
    /// to the left, zeros to the right and reads 0.
    pub fn parse(text: &str) -> TResult<Self> {
        let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || TuringError::InvalidTape(format!("cannot parse tape '{text}'"));
        let digit = |c: u8| if c.is_ascii_digit() { Ok(c - b'0') } else { Err(bad()) };
        let bytes = s.as_bytes();
        let mut lo = 0;
        let mut hi = bytes.len();
        let mut left = 0;
        let mut right = 0;
        if hi >= 2 && bytes[1] == b'*' {
            left = digit(bytes[0])?;
            lo = 2;
        }
        if hi >= lo + 2 && bytes[hi - 2] == b'*' {
            right = digit(bytes[hi - 1])?;
            hi -= 2;
        }
        let mut cells = Vec::new();
        let mut head = None;
        for &c in &bytes[lo..hi] {
            if c == b'^' {
                if head.is_some() {
                    return Err(bad());
                }
                head = Some(cells.len());
            } else {
                cells.push(digit(c)?);
            }
        }
        let head = head.unwrap_or(0) as i64;
        Ok(Self::new(left, cells, -head, right))
    }

    /// Random tape with up to `max_window` explicit cells near the head.
    pub fn random<R: Rng>(rng: &mut R, k: Symbol, max_window: usize) -> Self {
        let len = rng.gen_range(0..=max_window);
        let cells = (0..len).map(|_| rng.gen_range(0..=k)).collect();
        let offset = rng.gen_range(-(max_window as i64)..=1);
        Self::new(rng.gen_range(0..=k), cells, offset, rng.gen_range(0..=k))
    }

    fn normalize(&mut self) {
        let lead = self.cells.iter().take_while(|&&c| c == self.left).count();
        self.cells.drain(..lead);
        self.offset += lead as i64;
        while self.cells.last() == Some(&self.right) {
            self.cells.pop();
        }
        if self.cells.is_empty() && self.left == self.right {
            self.offset = 0;
        }
    }

    pub fn get(&self, n: i64) -> Symbol {
        if n < self.offset {
            self.left
        } else if n >= self.offset + self.cells.len() as i64 {
            self.right
        } else {
            self.cells[(n - self.offset) as usize]
        }
    }

    pub fn set(&mut self, n: i64, s: Symbol) {
        if self.get(n) == s {
            return;
        }
        if self.cells.is_empty() && self.left == self.right {
            self.offset = n;
        }
        let end = self.offset + self.cells.len() as i64;
        if n < self.offset {
            let pad = (self.offset - n) as usize;
            self.cells.splice(0..0, std::iter::repeat_n(self.left, pad));
            self.offset = n;
        } else if n >= end {
            self.cells.extend(std::iter::repeat_n(self.right, (n - end + 1) as usize));
        }
        self.cells[(n - self.offset) as usize] = s;
        self.normalize();
    }

    /// The tape `(t_{n-e})`.
    pub fn shifted(&self, e: i64) -> Self {
        let mut t = self.clone();
        if !t.cells.is_empty() || t.left != t.right {
            t.offset += e;
        }
        t
    }

    pub fn left(&self) -> Symbol {
        self.left
    }

    pub fn right(&self) -> Symbol {
        self.right
    }

    /// First and one-past-last explicitly stored positions.
    pub fn support(&self) -> (i64, i64) {
        (self.offset, self.offset + self.cells.len() as i64)
    }

    pub fn max_symbol(&self) -> Symbol {
        self.cells.iter().copied().chain([self.left, self.right]).max().unwrap_or(0)
    }

    /// `t_{-n}, ..., t_n`.
    pub fn window(&self, n: usize) -> Vec<Symbol> {
        let n = n as i64;
        (-n..=n).map(|i| self.get(i)).collect()
    }
}

impl fmt::Display for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.support();
        let lo = lo.min(0);
        let hi = hi.max(1);
        write!(f, "{}*", self.left)?;
        for n in lo..hi {
            if n == 0 {
                write!(f, "^")?;
            }
            write!(f, "{}", self.get(n))?;
        }
        write!(f, "*{}", self.right)
    }
}

pub fn symbolic_step(tm: &TuringMachine, q: usize, tape: &Tape) -> TResult<(usize, Tape)> {
    if q == tm.halt {
        return Err(TuringError::Halted);
    }
    let t0 = tape.get(0);
    let rule = tm.rule(q, t0).ok_or_else(|| TuringError::InvalidTape(format!("symbol {t0} exceeds k = {}", tm.k)))?;
    let mut next = tape.clone();
    next.set(0, rule.write);
    Ok((rule.next, next.shifted(rule.shift as i64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunVerdict {
    Halted,
    /// The budget ran out. This is not a claim that the machine never halts.
    NotHaltedWithinBudget,
}

impl RunVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Halted => "halted",
            Self::NotHaltedWithinBudget => "not-halted-within-budget",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub verdict: RunVerdict,
    pub steps: usize,
    pub state: usize,
    pub tape: Tape,
}

impl RunResult {
    pub fn halted(&self) -> bool {
        self.verdict == RunVerdict::Halted
    }
}

pub fn symbolic_run(tm: &TuringMachine, tape: &Tape, max_steps: usize) -> TResult<RunResult> {
    let mut q = tm.start;
    let mut t = tape.clone();
    let mut steps = 0;
    while q != tm.halt {
        if steps == max_steps {
            return Ok(RunResult { verdict: RunVerdict::NotHaltedWithinBudget, steps, state: q, tape: t });
        }
        (q, t) = symbolic_step(tm, q, &t)?;
        steps += 1;
    }
    Ok(RunResult { verdict: RunVerdict::Halted, steps, state: q, tape: t })
}

/// Image of a tape in `[0,1)^2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TapePoint {
    pub u: Q,
    pub v: Q,
}

fn pow(b: u64, n: i64) -> Q {
    let p = num_traits::pow(BigInt::from(b), n.unsigned_abs() as usize);
    if n >= 0 { Q::from_integer(p) } else { Q::new(BigInt::one(), p) }
}

/// `sum_{n>=1} digit(n) b^-n`, where `digit` is constant `tail` from
/// `n = explicit + 1` on.
fn expansion(b: u64, explicit: i64, digit: impl Fn(i64) -> Symbol, tail: Symbol) -> Q {
    let base = BigInt::from(b);
    let mut num = BigInt::zero();
    for n in 1..=explicit {
        num = num * &base + BigInt::from(digit(n));
    }
    let scale = num_traits::pow(base, explicit.max(0) as usize) * BigInt::from(b - 1);
    Q::new(num * BigInt::from(b - 1) + BigInt::from(tail), scale)
}

pub fn encode_tape(tape: &Tape, b: u64) -> TResult<TapePoint> {
    let top = tape.max_symbol();
    if 10 * top as u64 > b || b < 3 {
        return Err(TuringError::SymbolOutOfRange { symbol: top, base: b });
    }
    let (lo, hi) = tape.support();
    let u = expansion(b, (hi - 1).max(0), |n| tape.get(n), tape.right);
    let v = expansion(b, (1 - lo).max(0), |n| tape.get(1 - n), tape.left);
    Ok(TapePoint { u, v })
}

/// First `count` base-`b` digits of `x` in `[0,1)`.
pub fn digits(x: &Q, b: u64, count: usize) -> Vec<u64> {
    let base = int(b as i64);
    let mut x = x.clone();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        x *= &base;
        let d = x.floor();
        x -= &d;
        out.push(d.to_integer().to_u64().unwrap_or(0));
    }
    out
}

/// Closed axis-aligned rectangle `[x0,x1] x [y0,y1]` in `[0,1)^2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    #[serde(with = "rational::as_string")]
    pub x0: Q,
    #[serde(with = "rational::as_string")]
    pub x1: Q,
    #[serde(with = "rational::as_string")]
    pub y0: Q,
    #[serde(with = "rational::as_string")]
    pub y1: Q,
}

impl Rect {
    pub fn new(x0: Q, x1: Q, y0: Q, y1: Q) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn contains(&self, x: &Q, y: &Q) -> bool {
        &self.x0 <= x && x <= &self.x1 && &self.y0 <= y && y <= &self.y1
    }

    pub fn disjoint(&self, o: &Rect) -> bool {
        self.x1 < o.x0 || o.x1 < self.x0 || self.y1 < o.y0 || o.y1 < self.y0
    }

    pub fn within(&self, o: &Rect) -> bool {
        o.x0 <= self.x0 && self.x1 <= o.x1 && o.y0 <= self.y0 && self.y1 <= o.y1
    }

    pub fn center(&self) -> [Q; 2] {
        let two = int(2);
        [(&self.x0 + &self.x1) / &two, (&self.y0 + &self.y1) / &two]
    }

    fn grown(&self, by: &Q) -> Rect {
        Rect::new(&self.x0 - by, &self.x1 + by, &self.y0 - by, &self.y1 + by)
    }
}

fn frac(x: &Q) -> Q {
    x - x.floor()
}

/// Distance on `R/Z` from `x` to the arc `[a, c]` (length below 1).
fn circle_distance(x: &Q, a: &Q, c: &Q) -> Q {
    let y = frac(&(x - a));
    let len = c - a;
    if y <= len {
        return Q::zero();
    }
    let one = Q::one();
    (&y - &len).min(one - y)
}

/// Distance in the max norm on the torus from a point to a rectangle
/// (taken modulo 1).
pub fn torus_distance_to_rect(x: &Q, y: &Q, r: &Rect) -> Q {
    circle_distance(x, &r.x0, &r.x1).max(circle_distance(y, &r.y0, &r.y1))
}

/// Whether the point lies in the open rectangle, modulo 1.
pub fn in_open_rect(x: &Q, y: &Q, r: &Rect) -> bool {
    let inside = |p: &Q, a: &Q, c: &Q| {
        let t = frac(&(p - a));
        t > Q::zero() && t < c - a
    };
    inside(x, &r.x0, &r.x1) && inside(y, &r.y0, &r.y1)
}

/// `R_j = [0, k/(b-1)] x [j/b, j/b + k/(b(b-1))]`.
pub fn r_rect(j: Symbol, b: u64, k: Symbol) -> Rect {
    let bq = int(b as i64);
    let width = ratio(k as i64, b as i64 - 1);
    let lo = int(j as i64) / &bq;
    Rect::new(Q::zero(), width.clone(), lo.clone(), lo + width / bq)
}

/// `S_j`, the transpose of `R_j`.
pub fn s_rect(j: Symbol, b: u64, k: Symbol) -> Rect {
    let r = r_rect(j, b, k);
    Rect::new(r.y0, r.y1, r.x0, r.x1)
}

fn find_rect(rects: &[Rect], p: &TapePoint) -> Option<usize> {
    rects.iter().position(|r| r.contains(&p.u, &p.v))
}

/// `phi(a, j/b + beta/b) = (j/b + a/b, beta)` on `R_j`.
fn shift_right(p: &TapePoint, j: usize, b: u64) -> TapePoint {
    let bq = int(b as i64);
    let jq = int(j as i64);
    TapePoint { u: (&jq + &p.u) / &bq, v: &p.v * &bq - jq }
}

/// Inverse of [`shift_right`], affine on `S_j`.
fn shift_left(p: &TapePoint, j: usize, b: u64) -> TapePoint {
    let bq = int(b as i64);
    let jq = int(j as i64);
    TapePoint { u: &p.u * &bq - &jq, v: (jq + &p.v) / bq }
}

/// The shift map `phi` on `R_0 .. R_k`. `None` off the rectangles, where
/// only a smooth filler would be defined.
pub fn phi(p: &TapePoint, b: u64, k: Symbol) -> Option<TapePoint> {
    let rects: Vec<Rect> = (0..=k).map(|j| r_rect(j, b, k)).collect();
    find_rect(&rects, p).map(|j| shift_right(p, j, b))
}

pub fn phi_inverse(p: &TapePoint, b: u64, k: Symbol) -> Option<TapePoint> {
    let rects: Vec<Rect> = (0..=k).map(|j| s_rect(j, b, k)).collect();
    find_rect(&rects, p).map(|j| shift_left(p, j, b))
}

/// Checks `f(t_{n-1}) = phi(f(t_n))` and `f(t_{n+1}) = phi^-1(f(t_n))`
/// exactly.
pub fn shift_check(tape: &Tape, b: u64) -> TResult<bool> {
    let k = tape.max_symbol().max(1);
    let w = encode_tape(tape, b)?;
    let fwd = phi(&w, b, k).ok_or(TuringError::OutsidePieces)?;
    let back = phi_inverse(&w, b, k).ok_or(TuringError::OutsidePieces)?;
    Ok(fwd == encode_tape(&tape.shifted(1), b)? && back == encode_tape(&tape.shifted(-1), b)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Piece {
    pub state: usize,
    pub symbol: Symbol,
    pub rule_next: usize,
    pub rule_write: Symbol,
    pub rule_shift: i8,
    /// `B_q`; the piece domain is `B_q x R_symbol`.
    pub source: Rect,
    /// `B'_{q,symbol}`, the image of `B_q` under the homothety.
    pub image: Rect,
}

/// A point of the 4-torus `(z, w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Point4 {
    pub z: [Q; 2],
    pub w: TapePoint,
}

impl Point4 {
    pub fn to_f64(&self) -> [f64; 4] {
        let f = |q: &Q| q.to_f64().unwrap_or(f64::NAN);
        [f(&self.z[0]), f(&self.z[1]), f(&self.w.u), f(&self.w.v)]
    }
}

/// Exact piecewise-affine part of the compiled diffeomorphism.
///
/// Layout: with `|Q|` states and `s = 1/(2|Q|)`, state `i` owns
/// `B_i = [i/|Q|, i/|Q| + s] x [0, s]`. Each `B_q'` is cut into an `M x M`
/// grid, `M = max(|Q|, k+1)`, and the source `(q, t)` owns the square of
/// side `s/(2M)` centred in cell `(q, t)`. The homotheties have ratio
/// `1/(2M)`.
#[derive(Debug, Clone, Serialize)]
pub struct CompiledDiffeo {
    #[serde(skip)]
    machine: TuringMachine,
    pub base: u64,
    pub k: Symbol,
    #[serde(with = "rational::as_string")]
    pub side: Q,
    pub grid: usize,
    #[serde(with = "rational::as_string")]
    pub ratio: Q,
    pub boxes: Vec<Rect>,
    pub r_rects: Vec<Rect>,
    pub s_rects: Vec<Rect>,
    pub pieces: Vec<Piece>,
}

pub fn compile(tm: &TuringMachine, b: u64) -> TResult<CompiledDiffeo> {
    if b < 10 * tm.k as u64 {
        return Err(TuringError::BaseTooSmall { b, k: tm.k });
    }
    let nq = tm.num_states();
    let side = ratio(1, 2 * nq as i64);
    let boxes: Vec<Rect> = (0..nq)
        .map(|i| {
            let x0 = ratio(i as i64, nq as i64);
            Rect::new(x0.clone(), x0 + &side, Q::zero(), side.clone())
        })
        .collect();
    let grid = nq.max(tm.k as usize + 1);
    let cell = &side / int(grid as i64);
    let ratio_q = ratio(1, 2 * grid as i64);
    let sub = &side * &ratio_q;
    let quarter = &cell / int(4);
    let mut pieces = Vec::new();
    for q in 0..nq {
        if q == tm.halt {
            continue;
        }
        for t in 0..=tm.k {
            let rule = tm.rule(q, t).expect("table is total");
            let target = &boxes[rule.next];
            let x0 = &target.x0 + int(q as i64) * &cell + &quarter;
            let y0 = &target.y0 + int(t as i64) * &cell + &quarter;
            pieces.push(Piece {
                state: q,
                symbol: t,
                rule_next: rule.next,
                rule_write: rule.write,
                rule_shift: rule.shift,
                source: boxes[q].clone(),
                image: Rect::new(x0.clone(), x0 + &sub, y0.clone(), y0 + &sub),
            });
        }
    }
    let d = CompiledDiffeo {
        machine: tm.clone(),
        base: b,
        k: tm.k,
        side,
        grid,
        ratio: ratio_q,
        boxes,
        r_rects: (0..=tm.k).map(|j| r_rect(j, b, tm.k)).collect(),
        s_rects: (0..=tm.k).map(|j| s_rect(j, b, tm.k)).collect(),
        pieces,
    };
    d.check_layout()?;
    Ok(d)
}

fn pairwise_disjoint(rects: &[&Rect]) -> bool {
    rects.iter().enumerate().all(|(i, a)| rects[i + 1..].iter().all(|b| a.disjoint(b)))
}

impl CompiledDiffeo {
    pub fn machine(&self) -> &TuringMachine {
        &self.machine
    }

    /// Exact checks of every disjointness and containment claim of the
    /// layout.
    pub fn check_layout(&self) -> TResult<()> {
        let fail = |m: &str| Err(TuringError::Layout(m.into()));
        let unit = Rect::new(Q::zero(), ratio(1, 1) - ratio(1, 1 << 20), Q::zero(), Q::one() - ratio(1, 1 << 20));
        if !pairwise_disjoint(&self.boxes.iter().collect::<Vec<_>>()) {
            return fail("state squares overlap");
        }
        if !self.boxes.iter().all(|r| r.within(&unit)) {
            return fail("state square leaves the fundamental domain");
        }
        if !pairwise_disjoint(&self.r_rects.iter().collect::<Vec<_>>()) {
            return fail("R rectangles overlap");
        }
        if !pairwise_disjoint(&self.s_rects.iter().collect::<Vec<_>>()) {
            return fail("S rectangles overlap");
        }
        let images: Vec<&Rect> = self.pieces.iter().map(|p| &p.image).collect();
        if !pairwise_disjoint(&images) {
            return fail("piece images overlap");
        }
        for p in &self.pieces {
            if !p.image.within(&self.boxes[p.rule_next]) {
                return fail("sub-square not inside its target square");
            }
            let lower = self.homothety(p, &[p.source.x0.clone(), p.source.y0.clone()]);
            let upper = self.homothety(p, &[p.source.x1.clone(), p.source.y1.clone()]);
            if lower != [p.image.x0.clone(), p.image.y0.clone()] || upper != [p.image.x1.clone(), p.image.y1.clone()] {
                return fail("homothety does not map the square onto its sub-square");
            }
        }
        Ok(())
    }

    fn homothety(&self, p: &Piece, z: &[Q; 2]) -> [Q; 2] {
        [
            &p.image.x0 + (&z[0] - &p.source.x0) * &self.ratio,
            &p.image.y0 + (&z[1] - &p.source.y0) * &self.ratio,
        ]
    }

    fn homothety_inverse(&self, p: &Piece, z: &[Q; 2]) -> [Q; 2] {
        [
            &p.source.x0 + (&z[0] - &p.image.x0) / &self.ratio,
            &p.source.y0 + (&z[1] - &p.image.y0) / &self.ratio,
        ]
    }

    pub fn piece(&self, q: usize, t: Symbol) -> Option<&Piece> {
        self.pieces.iter().find(|p| p.state == q && p.symbol == t)
    }

    pub fn state_at(&self, z: &[Q; 2]) -> Option<usize> {
        self.boxes.iter().position(|r| r.contains(&z[0], &z[1]))
    }

    /// `y_s = (centre of B_START, f(s))`.
    pub fn start_point(&self, tape: &Tape) -> TResult<Point4> {
        Ok(Point4 { z: self.boxes[self.machine.start].center(), w: encode_tape(tape, self.base)? })
    }

    /// Point for an arbitrary configuration: centre of `B_q` and `f(tape)`.
    pub fn encode(&self, q: usize, tape: &Tape) -> TResult<Point4> {
        Ok(Point4 { z: self.boxes[q].center(), w: encode_tape(tape, self.base)? })
    }

    fn locate(&self, p: &Point4) -> TResult<(&Piece, usize)> {
        let q = self.state_at(&p.z).ok_or(TuringError::OutsidePieces)?;
        if q == self.machine.halt {
            return Err(TuringError::Halted);
        }
        let t = find_rect(&self.r_rects, &p.w).ok_or(TuringError::OutsidePieces)?;
        Ok((self.piece(q, t as Symbol).expect("piece exists for every working state"), t))
    }

    /// `Phi(z, w) = (L(z), phi^e(w - t/b + t'/b))` on `B_q x R_t`.
    pub fn step_point(&self, p: &Point4) -> TResult<Point4> {
        let (piece, _) = self.locate(p)?;
        Ok(self.apply_piece(piece, p)?.0)
    }

    /// Returns the image and the rectangle index used by the shift, which the
    /// float shadow replays.
    fn apply_piece(&self, piece: &Piece, p: &Point4) -> TResult<(Point4, Option<usize>)> {
        let b = self.base;
        let z = self.homothety(piece, &p.z);
        let mut w = p.w.clone();
        w.v += (int(piece.rule_write as i64) - int(piece.symbol as i64)) / int(b as i64);
        let (w, j) = match piece.rule_shift {
            0 => (w, None),
            1 => {
                let j = find_rect(&self.r_rects, &w).ok_or(TuringError::OutsidePieces)?;
                (shift_right(&w, j, b), Some(j))
            }
            _ => {
                let j = find_rect(&self.s_rects, &w).ok_or(TuringError::OutsidePieces)?;
                (shift_left(&w, j, b), Some(j))
            }
        };
        Ok((Point4 { z, w }, j))
    }

    /// Inverse of [`step_point`](Self::step_point) on the piece images.
    pub fn step_back(&self, p: &Point4) -> TResult<Point4> {
        let piece = self
            .pieces
            .iter()
            .find(|pc| pc.image.contains(&p.z[0], &p.z[1]))
            .ok_or(TuringError::OutsidePieces)?;
        let b = self.base;
        let w = match piece.rule_shift {
            0 => p.w.clone(),
            1 => {
                let j = find_rect(&self.s_rects, &p.w).ok_or(TuringError::OutsidePieces)?;
                shift_left(&p.w, j, b)
            }
            _ => {
                let j = find_rect(&self.r_rects, &p.w).ok_or(TuringError::OutsidePieces)?;
                shift_right(&p.w, j, b)
            }
        };
        if !self.r_rects[piece.rule_write as usize].contains(&w.u, &w.v) {
            return Err(TuringError::OutsidePieces);
        }
        let mut w = w;
        w.v += (int(piece.symbol as i64) - int(piece.rule_write as i64)) / int(b as i64);
        Ok(Point4 { z: self.homothety_inverse(piece, &p.z), w })
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }
}

/// `U = V x W`: `V` an open neighbourhood of `B_HALT` missing the other
/// squares, `W` an open neighbourhood of the Cantor cylinder of a tape
/// window missing every other cylinder point (or the whole torus when no
/// window is given).
#[derive(Debug, Clone, Serialize)]
pub struct HaltingSet {
    pub v: Rect,
    pub w: Option<Rect>,
    pub window: Option<Vec<Symbol>>,
}

impl HaltingSet {
    pub fn contains(&self, p: &Point4) -> bool {
        in_open_rect(&p.z[0], &p.z[1], &self.v) && self.w.as_ref().is_none_or(|w| in_open_rect(&p.w.u, &p.w.v, w))
    }

    /// Max-norm distance on the 4-torus to the closure of `U`.
    pub fn distance(&self, p: &Point4) -> Q {
        let dz = torus_distance_to_rect(&p.z[0], &p.z[1], &self.v);
        match &self.w {
            Some(w) => dz.max(torus_distance_to_rect(&p.w.u, &p.w.v, w)),
            None => dz,
        }
    }
}

/// Builds `U` for the window `t_{-n}, ..., t_n` (length `2n+1`), or only
/// `V x (R/Z)^2` when `window` is `None`.
pub fn halting_set(d: &CompiledDiffeo, window: Option<&[Symbol]>) -> TResult<HaltingSet> {
    let v = d.boxes[d.machine.halt].grown(&(&d.side / int(4)));
    let Some(window) = window else {
        return Ok(HaltingSet { v, w: None, window: None });
    };
    if window.len() % 2 == 0 {
        return Err(TuringError::InvalidTape("window length must be odd".into()));
    }
    if let Some(&s) = window.iter().find(|&&s| s > d.k) {
        return Err(TuringError::SymbolOutOfRange { symbol: s, base: d.base });
    }
    let n = (window.len() / 2) as i64;
    let b = d.base;
    let at = |i: i64| window[(i + n) as usize];
    let u_lo = expansion(b, n, at, 0);
    let v_lo = expansion(b, n + 1, |m| at(1 - m), 0);
    let k = int(d.k as i64);
    let bm1 = int(b as i64 - 1);
    let gap = (&bm1 - &k) / &bm1 / int(2);
    let u_w = &k * pow(b, -n) / &bm1;
    let v_w = &k * pow(b, -(n + 1)) / &bm1;
    let eta_u = &gap * pow(b, -n);
    let eta_v = &gap * pow(b, -(n + 1));
    let w = Rect::new(&u_lo - &eta_u, &u_lo + u_w + &eta_u, &v_lo - &eta_v, &v_lo + v_w + &eta_v);
    Ok(HaltingSet { v, w: Some(w), window: Some(window.to_vec()) })
}

/// Digit test equivalent to membership of a Cantor point in the window
/// cylinder.
pub fn window_matches(w: &TapePoint, b: u64, window: &[Symbol]) -> bool {
    let n = window.len() / 2;
    let du = digits(&w.u, b, n);
    let dv = digits(&w.v, b, n + 1);
    (1..=n).all(|i| du[i - 1] == window[n + i] as u64) && (0..=n).all(|i| dv[i] == window[n - i] as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrbitVerdict {
    EnteredU,
    HaltedOutsideU,
    NoEntryWithinBudget,
}

impl OrbitVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EnteredU => "entered-U",
            Self::HaltedOutsideU => "halted-outside-U",
            Self::NoEntryWithinBudget => "no-entry-within-budget",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrbitRecord {
    pub step: usize,
    pub state: usize,
    pub point: Point4,
    pub distance_to_u: Q,
    /// Symbolic configuration encodes to this point exactly.
    pub conjugate: bool,
    /// Max-norm gap between the float replay and the exact point.
    pub shadow_error: f64,
}

#[derive(Debug, Clone)]
pub struct OrbitRun {
    pub verdict: OrbitVerdict,
    pub entry_step: Option<usize>,
    pub steps: usize,
    pub log: Vec<OrbitRecord>,
    pub min_distance: Q,
    pub conjugacy_holds: bool,
    pub symbolic: RunResult,
}

impl OrbitRun {
    pub fn entered_u(&self) -> bool {
        self.verdict == OrbitVerdict::EnteredU
    }

    pub fn to_csv(&self, machine: &TuringMachine) -> String {
        let mut out = String::from("step,state,z1,z2,u,v,distance_to_u,conjugate,shadow_error\n");
        for r in &self.log {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:e}\n",
                r.step,
                machine.states()[r.state],
                rational::to_string(&r.point.z[0]),
                rational::to_string(&r.point.z[1]),
                rational::to_string(&r.point.w.u),
                rational::to_string(&r.point.w.v),
                rational::to_string(&r.distance_to_u),
                r.conjugate,
                r.shadow_error
            ));
        }
        out
    }
}

fn replay_f64(d: &CompiledDiffeo, piece: &Piece, j: Option<usize>, y: [f64; 4]) -> [f64; 4] {
    let r = d.ratio.to_f64().unwrap_or(0.0);
    let f = |q: &Q| q.to_f64().unwrap_or(f64::NAN);
    let b = d.base as f64;
    let z0 = f(&piece.image.x0) + (y[0] - f(&piece.source.x0)) * r;
    let z1 = f(&piece.image.y0) + (y[1] - f(&piece.source.y0)) * r;
    let (mut u, mut v) = (y[2], y[3] + (piece.rule_write as f64 - piece.symbol as f64) / b);
    if let Some(j) = j {
        let j = j as f64;
        if piece.rule_shift > 0 {
            (u, v) = ((j + u) / b, v * b - j);
        } else {
            (u, v) = (u * b - j, (j + v) / b);
        }
    }
    [z0, z1, u, v]
}

/// Iterates `Phi` from `y_s`, checking each iterate against the symbolic
/// machine and recording entry into `set`.
pub fn run_orbit(d: &CompiledDiffeo, tape: &Tape, max_steps: usize, set: &HaltingSet) -> TResult<OrbitRun> {
    let tm = &d.machine;
    let mut p = d.start_point(tape)?;
    let mut shadow = p.to_f64();
    let mut q = tm.start;
    let mut t = tape.clone();
    let mut log = Vec::new();
    let mut conjugacy = true;
    let mut record = |step: usize, q: usize, t: &Tape, p: &Point4, shadow: [f64; 4]| -> TResult<(bool, Q)> {
        let w = encode_tape(t, d.base)?;
        let conjugate = w == p.w && d.state_at(&p.z) == Some(q);
        let exact = p.to_f64();
        let err = (0..4).map(|i| (exact[i] - shadow[i]).abs()).fold(0.0, f64::max);
        let dist = set.distance(p);
        log.push(OrbitRecord { step, state: q, point: p.clone(), distance_to_u: dist.clone(), conjugate, shadow_error: err });
        Ok((conjugate, dist))
    };
    let (ok, mut min_distance) = record(0, q, &t, &p, shadow)?;
    conjugacy &= ok;
    let mut step = 0;
    let finish = |verdict, entry_step, steps, log, min_distance, conjugacy_holds, q, t: Tape| -> TResult<OrbitRun> {
        let symbolic = RunResult {
            verdict: if q == tm.halt { RunVerdict::Halted } else { RunVerdict::NotHaltedWithinBudget },
            steps,
            state: q,
            tape: t,
        };
        Ok(OrbitRun { verdict, entry_step, steps, log, min_distance, conjugacy_holds, symbolic })
    };
    loop {
        if set.contains(&p) {
            return finish(OrbitVerdict::EnteredU, Some(step), step, log, min_distance, conjugacy, q, t);
        }
        if q == tm.halt {
            return finish(OrbitVerdict::HaltedOutsideU, None, step, log, min_distance, conjugacy, q, t);
        }
        if step == max_steps {
            return finish(OrbitVerdict::NoEntryWithinBudget, None, step, log, min_distance, conjugacy, q, t);
        }
        let (piece, _) = d.locate(&p)?;
        let (next, j) = d.apply_piece(piece, &p)?;
        shadow = replay_f64(d, piece, j, shadow);
        p = next;
        (q, t) = symbolic_step(tm, q, &t)?;
        step += 1;
        let (ok, dist) = record(step, q, &t, &p, shadow)?;
        conjugacy &= ok;
        if dist < min_distance {
            min_distance = dist;
        }
    }
}

/// Invertible map whose mapping torus is formed by [`Suspension`].
pub trait InvertibleMap {
    type Point: Clone;
    fn forward(&self, p: &Self::Point) -> TResult<Self::Point>;
    fn backward(&self, p: &Self::Point) -> TResult<Self::Point>;
}

impl InvertibleMap for CompiledDiffeo {
    type Point = Point4;

    fn forward(&self, p: &Point4) -> TResult<Point4> {
        self.step_point(p)
    }

    fn backward(&self, p: &Point4) -> TResult<Point4> {
        self.step_back(p)
    }
}

/// Rotation `x -> x + alpha` of `(R/Z)^n` with rational angles.
#[derive(Debug, Clone)]
pub struct RationalRotation {
    pub alpha: Vec<Q>,
}

impl InvertibleMap for RationalRotation {
    type Point = Vec<Q>;

    fn forward(&self, p: &Vec<Q>) -> TResult<Vec<Q>> {
        Ok(p.iter().zip(&self.alpha).map(|(x, a)| frac(&(x + a))).collect())
    }

    fn backward(&self, p: &Vec<Q>) -> TResult<Vec<Q>> {
        Ok(p.iter().zip(&self.alpha).map(|(x, a)| frac(&(x - a))).collect())
    }
}

/// Mapping torus `M x [0,1) / (y,1) ~ (Phi(y),0)` with vertical field
/// `d/ds`. The form `ds` has `ds(Y) = 1` and is closed, so it is strongly
/// adapted.
#[derive(Debug, Clone)]
pub struct Suspension<M> {
    pub map: M,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuspendedPoint<P> {
    pub y: P,
    pub s: Q,
}

pub fn suspend<M: InvertibleMap>(map: M) -> Suspension<M> {
    Suspension { map }
}

impl<M: InvertibleMap> Suspension<M> {
    /// Flow by time `t` (either sign); crosses the gluing once per integer
    /// of `s + t`.
    pub fn eval(&self, p: &SuspendedPoint<M::Point>, t: &Q) -> TResult<SuspendedPoint<M::Point>> {
        let total = &p.s + t;
        let n = total.floor();
        let s = &total - &n;
        let mut y = p.y.clone();
        let mut count = n.to_integer();
        while count.is_positive() {
            y = self.map.forward(&y)?;
            count -= 1;
        }
        while count.is_negative() {
            y = self.map.backward(&y)?;
            count += 1;
        }
        Ok(SuspendedPoint { y, s })
    }

    /// Vertical component of the field, which is also `ds(Y)`.
    pub fn form_on_field(&self) -> Q {
        Q::one()
    }

    /// First integer time `n <= horizon` with the slice point `Phi^n(y)`
    /// in `set`; the flow then stays in `set x [0,1)` for `t` in `[n, n+1)`.
    pub fn first_entry(
        &self,
        y: &M::Point,
        horizon: usize,
        set: impl Fn(&M::Point) -> bool,
    ) -> TResult<Option<usize>> {
        let mut p = SuspendedPoint { y: y.clone(), s: Q::zero() };
        for n in 0..=horizon {
            if set(&p.y) {
                return Ok(Some(n));
            }
            if n == horizon {
                break;
            }
            match self.eval(&p, &Q::one()) {
                Ok(next) => p = next,
                Err(TuringError::Halted) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }
}

/// Smooth model of the suspension of `x -> x + alpha` on `T^n`: the linear
/// flow `(alpha, 1)` on `T^{n+1}` together with `dt`.
pub fn suspension_of_rotation(alpha: &[f64]) -> (TorusFlow, OneForm) {
    let mut field = alpha.to_vec();
    field.push(1.0);
    let mut theta = vec![0.0; alpha.len()];
    theta.push(1.0);
    (TorusFlow::rotation(&field), OneForm::constant(&theta))
}

/// The built-in machine corpus, by name.
pub fn corpus() -> Vec<(&'static str, TuringMachine)> {
    vec![
        ("writer", TuringMachine::writer()),
        ("incrementer", TuringMachine::incrementer()),
        ("self-loop", TuringMachine::self_loop()),
        ("copier", TuringMachine::copier()),
        ("bounded-counter", TuringMachine::bounded_counter()),
    ]
}
