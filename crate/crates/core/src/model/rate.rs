//! Piecewise-analytic rate and staffing functions.
//!
//! A [`RateFunction`] is a contiguous list of pieces, each either a constant
//! or a sinusoid `a + b sin(t) + c cos(t)`. Evaluation is right-continuous:
//! at a breakpoint the later piece applies.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Times closer than this to a breakpoint are snapped onto it, so grid times
/// such as `20000.0 * 0.001` land on the breakpoint at 20.
pub const BREAK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PieceKind {
    Constant(f64),
    /// `a + b sin(t) + c cos(t)`
    Sinusoid {
        a: f64,
        b: f64,
        c: f64,
    },
}

impl PieceKind {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            PieceKind::Constant(a) => a,
            PieceKind::Sinusoid { a, b, c } => a + b * t.sin() + c * t.cos(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            PieceKind::Constant(_) => 0.0,
            PieceKind::Sinusoid { b, c, .. } => b * t.cos() - c * t.sin(),
        }
    }

    /// Upper bound `a + |b| + |c|` used for thinning.
    pub fn majorant(&self) -> f64 {
        match *self {
            PieceKind::Constant(a) => a,
            PieceKind::Sinusoid { a, b, c } => a + b.abs() + c.abs(),
        }
    }

    /// Minimum of the piece over `[start, end]`.
    fn min_on(&self, start: f64, end: f64) -> f64 {
        match *self {
            PieceKind::Constant(a) => a,
            PieceKind::Sinusoid { a, b, c } => {
                let amp = b.hypot(c);
                if end - start >= 2.0 * PI {
                    return a - amp;
                }
                let mut min = self.value(start).min(self.value(end));
                // critical points of b sin t + c cos t: t = atan2(b, c) + k pi
                let base = b.atan2(c);
                let k0 = ((start - base) / PI).floor() as i64;
                let k1 = ((end - base) / PI).ceil() as i64;
                for k in k0..=k1 {
                    let t = base + k as f64 * PI;
                    if t >= start && t <= end {
                        min = min.min(self.value(t));
                    }
                }
                min
            }
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            PieceKind::Constant(a) => a.is_finite(),
            PieceKind::Sinusoid { a, b, c } => a.is_finite() && b.is_finite() && c.is_finite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub kind: PieceKind,
}

impl Piece {
    pub fn constant(start: f64, end: f64, a: f64) -> Self {
        Piece {
            start,
            end,
            kind: PieceKind::Constant(a),
        }
    }

    pub fn sinusoid(start: f64, end: f64, a: f64, b: f64, c: f64) -> Self {
        Piece {
            start,
            end,
            kind: PieceKind::Sinusoid { a, b, c },
        }
    }
}

impl fmt::Display for Piece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PieceKind::Constant(a) => write!(f, "{} {} constant {}", self.start, self.end, a),
            PieceKind::Sinusoid { a, b, c } => {
                write!(f, "{} {} sinusoid {} {} {}", self.start, self.end, a, b, c)
            }
        }
    }
}

impl FromStr for Piece {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<f64> {
            let raw = fields
                .get(i)
                .ok_or_else(|| Error::Parse(format!("piece `{s}`: missing field {}", i + 1)))?;
            raw.parse::<f64>()
                .map_err(|_| Error::Parse(format!("piece `{s}`: `{raw}` is not a number")))
        };
        let kind = fields
            .get(2)
            .ok_or_else(|| Error::Parse(format!("piece `{s}`: expected `start end kind ...`")))?;
        let (piece, arity) = match *kind {
            "constant" => (Piece::constant(num(0)?, num(1)?, num(3)?), 4),
            "sinusoid" => (
                Piece::sinusoid(num(0)?, num(1)?, num(3)?, num(4)?, num(5)?),
                6,
            ),
            other => return Err(Error::Parse(format!("piece `{s}`: unknown kind `{other}`"))),
        };
        if fields.len() != arity {
            return Err(Error::Parse(format!(
                "piece `{s}`: expected {arity} fields, found {}",
                fields.len()
            )));
        }
        Ok(piece)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    pieces: Vec<Piece>,
}

impl RateFunction {
    pub fn new(pieces: Vec<Piece>) -> Self {
        RateFunction { pieces }
    }

    /// A single constant piece on `[0, end)`.
    pub fn constant(value: f64, end: f64) -> Self {
        RateFunction::new(vec![Piece::constant(0.0, end, value)])
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn domain(&self) -> Option<(f64, f64)> {
        Some((self.pieces.first()?.start, self.pieces.last()?.end))
    }

    /// Interior breakpoints (piece starts after the first).
    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces.iter().skip(1).map(|p| p.start)
    }

    /// Index of the piece active at `t` (right-continuous).
    pub fn piece_index(&self, t: f64) -> Result<usize> {
        let last = self
            .pieces
            .len()
            .checked_sub(1)
            .ok_or(Error::OutOfDomain { t })?;
        for (i, p) in self.pieces.iter().enumerate() {
            let upper_ok = if i == last {
                t <= p.end + BREAK_TOL
            } else {
                t < p.end - BREAK_TOL
            };
            if t >= p.start - BREAK_TOL && upper_ok {
                return Ok(i);
            }
        }
        Err(Error::OutOfDomain { t })
    }

    /// Index of the piece whose closure contains `t` from the left.
    fn piece_index_left(&self, t: f64) -> Result<usize> {
        for (i, p) in self.pieces.iter().enumerate() {
            let lower_ok = if i == 0 {
                t >= p.start - BREAK_TOL
            } else {
                t > p.start + BREAK_TOL
            };
            if lower_ok && t <= p.end + BREAK_TOL {
                return Ok(i);
            }
        }
        Err(Error::OutOfDomain { t })
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let p = &self.pieces[self.piece_index(t)?];
        Ok(p.kind.value(t))
    }

    /// Left limit at `t`; equals `eval` away from breakpoints.
    pub fn eval_left(&self, t: f64) -> Result<f64> {
        let p = &self.pieces[self.piece_index_left(t)?];
        Ok(p.kind.value(t))
    }

    /// Right derivative at `t`.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        let p = &self.pieces[self.piece_index(t)?];
        Ok(p.kind.derivative(t))
    }

    /// Thinning bound of the piece active at `t` and the end of that piece.
    pub fn majorant_at(&self, t: f64) -> Result<(f64, f64)> {
        let p = &self.pieces[self.piece_index(t)?];
        Ok((p.kind.majorant().max(0.0), p.end))
    }

    /// Largest majorant over all pieces.
    pub fn sup(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.kind.majorant())
            .fold(0.0, f64::max)
    }

    /// First breakpoint strictly after `t`, if any.
    pub fn next_breakpoint_after(&self, t: f64) -> Option<f64> {
        self.breakpoints().find(|&b| b > t + BREAK_TOL)
    }

    /// Replaces every piece by its value at `t` held constant over the whole domain.
    pub fn frozen_at(&self, t: f64) -> Result<RateFunction> {
        let v = self.eval(t)?;
        let (start, end) = self.domain().ok_or(Error::OutOfDomain { t })?;
        Ok(RateFunction::new(vec![Piece::constant(start, end, v)]))
    }

    /// Structural problems, described for humans. `name` prefixes each message.
    pub fn problems(&self, name: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.pieces.is_empty() {
            out.push(format!("{name}: no pieces"));
            return out;
        }
        for (i, p) in self.pieces.iter().enumerate() {
            if !(p.start.is_finite() && p.end.is_finite()) || p.start >= p.end {
                out.push(format!(
                    "{name}: piece {} has empty or invalid interval [{}, {})",
                    i + 1,
                    p.start,
                    p.end
                ));
                continue;
            }
            if !p.kind.is_finite() {
                out.push(format!("{name}: piece {} has non-finite parameters", i + 1));
                continue;
            }
            let min = p.kind.min_on(p.start, p.end);
            if min < -1e-12 {
                out.push(format!(
                    "{name}: piece {} takes negative value {min}",
                    i + 1
                ));
            }
        }
        for w in self.pieces.windows(2) {
            if (w[0].end - w[1].start).abs() > BREAK_TOL {
                out.push(format!(
                    "{name}: pieces not contiguous ({} then {})",
                    w[0].end, w[1].start
                ));
            }
        }
        out
    }
}
