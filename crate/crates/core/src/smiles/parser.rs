use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;

use super::{Atom, Bond, BondOrder, BondStereo, Element, Molecule};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    /// A ring-closure label was opened and never closed.
    UnmatchedRingClosure(u16),
    UnbalancedParenthesis,
    UnknownToken(char),
    EmptyBranch,
    InvalidBracketAtom(&'static str),
    /// A bond symbol with no atom on one side.
    DanglingBond,
    /// A ring closure that would duplicate an existing bond or join an atom to itself.
    InvalidRingBond,
    /// Both ends of a ring closure carry different bond orders.
    RingBondConflict(u16),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the trimmed input.
    pub position: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::Empty => f.write_str("empty SMILES"),
            ParseErrorKind::UnmatchedRingClosure(d) => {
                write!(f, "ring closure {d} opened but never closed")
            }
            ParseErrorKind::UnbalancedParenthesis => {
                write!(f, "unbalanced parenthesis at {}", self.position)
            }
            ParseErrorKind::UnknownToken(c) => {
                write!(f, "unknown token {c:?} at {}", self.position)
            }
            ParseErrorKind::EmptyBranch => write!(f, "empty branch at {}", self.position),
            ParseErrorKind::InvalidBracketAtom(why) => {
                write!(f, "invalid bracket atom at {}: {why}", self.position)
            }
            ParseErrorKind::DanglingBond => write!(f, "dangling bond at {}", self.position),
            ParseErrorKind::InvalidRingBond => {
                write!(f, "ring closure at {} duplicates a bond", self.position)
            }
            ParseErrorKind::RingBondConflict(d) => {
                write!(f, "ring closure {d} has conflicting bond orders")
            }
        }
    }
}

impl core::error::Error for ParseError {}

impl ParseError {
    fn at(position: usize, kind: ParseErrorKind) -> ParseError {
        ParseError { position, kind }
    }
}

type BondSpec = (BondOrder, Option<BondStereo>);

struct RingOpening {
    atom: usize,
    bond: Option<BondSpec>,
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    pending: Option<(BondSpec, usize)>,
    // (atom the branch hangs off, atom count when the branch opened, position)
    branches: Vec<(usize, usize, usize)>,
    rings: BTreeMap<u16, RingOpening>,
}

/// Parses a SMILES string into a [`Molecule`].
///
/// Surrounding whitespace is ignored. Any input yields either a molecule or a
/// typed error; the parser never panics.
pub fn parse_smiles(text: &str) -> Result<Molecule, ParseError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(ParseError::at(0, ParseErrorKind::Empty));
    }
    let mut p = Parser {
        input: trimmed.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        rings: BTreeMap::new(),
    };
    p.run()?;
    let Parser { atoms, bonds, .. } = p;
    // the parser enforces every invariant from_parts checks
    Molecule::from_parts(atoms, bonds, trimmed.to_string())
        .map_err(|_| ParseError::at(0, ParseErrorKind::InvalidRingBond))
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<u8> {
        self.input.get(self.pos + offset).copied()
    }

    fn unknown(&self) -> ParseError {
        // report the full char at pos (input may be non-ASCII)
        let rest = core::str::from_utf8(&self.input[self.pos..]).unwrap_or("");
        let c = rest.chars().next().unwrap_or('\u{fffd}');
        ParseError::at(self.pos, ParseErrorKind::UnknownToken(c))
    }

    fn run(&mut self) -> Result<(), ParseError> {
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    let anchor = self.prev.ok_or_else(|| {
                        ParseError::at(self.pos, ParseErrorKind::UnbalancedParenthesis)
                    })?;
                    if let Some((_, at)) = self.pending {
                        return Err(ParseError::at(at, ParseErrorKind::DanglingBond));
                    }
                    self.branches.push((anchor, self.atoms.len(), self.pos));
                    self.pos += 1;
                }
                b')' => {
                    let (anchor, count, _) = self.branches.pop().ok_or_else(|| {
                        ParseError::at(self.pos, ParseErrorKind::UnbalancedParenthesis)
                    })?;
                    if let Some((_, at)) = self.pending {
                        return Err(ParseError::at(at, ParseErrorKind::DanglingBond));
                    }
                    if self.atoms.len() == count {
                        return Err(ParseError::at(self.pos, ParseErrorKind::EmptyBranch));
                    }
                    self.prev = Some(anchor);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b'$' | b':' | b'/' | b'\\' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(ParseError::at(self.pos, ParseErrorKind::DanglingBond));
                    }
                    let spec = match c {
                        b'-' => (BondOrder::Single, None),
                        b'=' => (BondOrder::Double, None),
                        b'#' => (BondOrder::Triple, None),
                        b'$' => (BondOrder::Quadruple, None),
                        b':' => (BondOrder::Aromatic, None),
                        b'/' => (BondOrder::Single, Some(BondStereo::Up)),
                        _ => (BondOrder::Single, Some(BondStereo::Down)),
                    };
                    self.pending = Some((spec, self.pos));
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    let start = self.pos;
                    self.pos += 1;
                    self.ring_closure((c - b'0') as u16, start)?;
                }
                b'%' => {
                    let start = self.pos;
                    let (d1, d2) = (self.peek_at(1), self.peek_at(2));
                    match (d1, d2) {
                        (Some(a @ b'0'..=b'9'), Some(b @ b'0'..=b'9')) => {
                            self.pos += 3;
                            self.ring_closure(((a - b'0') * 10 + (b - b'0')) as u16, start)?;
                        }
                        _ => return Err(self.unknown()),
                    }
                }
                b'.' => {
                    if let Some((_, at)) = self.pending {
                        return Err(ParseError::at(at, ParseErrorKind::DanglingBond));
                    }
                    if self.prev.is_none() {
                        return Err(ParseError::at(self.pos, ParseErrorKind::UnknownToken('.')));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom);
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom);
                }
            }
        }
        if let Some((_, at)) = self.pending {
            return Err(ParseError::at(at, ParseErrorKind::DanglingBond));
        }
        if let Some(&(_, _, at)) = self.branches.last() {
            return Err(ParseError::at(at, ParseErrorKind::UnbalancedParenthesis));
        }
        if let Some((&digit, _)) = self.rings.iter().next() {
            return Err(ParseError::at(
                self.input.len(),
                ParseErrorKind::UnmatchedRingClosure(digit),
            ));
        }
        if self.atoms.is_empty() {
            return Err(ParseError::at(0, ParseErrorKind::Empty));
        }
        Ok(())
    }

    fn implicit_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_atom(&mut self, atom: Atom) {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let (order, stereo) = match self.pending.take() {
                Some((spec, _)) => spec,
                None => (self.implicit_order(prev, idx), None),
            };
            self.bonds.push(Bond {
                begin: prev,
                end: idx,
                order,
                stereo,
            });
        }
        self.prev = Some(idx);
    }

    fn ring_closure(&mut self, digit: u16, start: usize) -> Result<(), ParseError> {
        let current = self
            .prev
            .ok_or_else(|| ParseError::at(start, ParseErrorKind::DanglingBond))?;
        let pending = self.pending.take().map(|(spec, _)| spec);
        match self.rings.remove(&digit) {
            None => {
                self.rings.insert(
                    digit,
                    RingOpening {
                        atom: current,
                        bond: pending,
                    },
                );
            }
            Some(open) => {
                if open.atom == current
                    || self.bonds.iter().any(|b| {
                        (b.begin == open.atom && b.end == current)
                            || (b.begin == current && b.end == open.atom)
                    })
                {
                    return Err(ParseError::at(start, ParseErrorKind::InvalidRingBond));
                }
                let (order, stereo) = match (open.bond, pending) {
                    (Some(a), Some(b)) => {
                        if a.0 != b.0 {
                            return Err(ParseError::at(
                                start,
                                ParseErrorKind::RingBondConflict(digit),
                            ));
                        }
                        (a.0, a.1.or(b.1))
                    }
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => (self.implicit_order(open.atom, current), None),
                };
                self.bonds.push(Bond {
                    begin: open.atom,
                    end: current,
                    order,
                    stereo,
                });
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, ParseError> {
        let c = self.peek().unwrap_or(0);
        let next = self.peek_at(1);
        let (element, aromatic, len) = match c {
            b'C' if next == Some(b'l') => (Element::CL, false, 2),
            b'B' if next == Some(b'r') => (Element::BR, false, 2),
            b'B' => (Element::B, false, 1),
            b'C' => (Element::C, false, 1),
            b'N' => (Element::N, false, 1),
            b'O' => (Element::O, false, 1),
            b'P' => (Element::P, false, 1),
            b'S' => (Element::S, false, 1),
            b'F' => (Element::F, false, 1),
            b'I' => (Element::I, false, 1),
            b'b' => (Element::B, true, 1),
            b'c' => (Element::C, true, 1),
            b'n' => (Element::N, true, 1),
            b'o' => (Element::O, true, 1),
            b'p' => (Element::P, true, 1),
            b's' => (Element::S, true, 1),
            b'*' => (Element::WILDCARD, false, 1),
            _ => return Err(self.unknown()),
        };
        self.pos += len;
        Ok(Atom::organic(element, aromatic))
    }

    fn read_number(&mut self) -> Option<u32> {
        let start = self.pos;
        let mut value: u32 = 0;
        while let Some(d @ b'0'..=b'9') = self.peek() {
            value = value.saturating_mul(10).saturating_add((d - b'0') as u32);
            self.pos += 1;
        }
        (self.pos > start).then_some(value)
    }

    fn bracket_atom(&mut self) -> Result<Atom, ParseError> {
        let open = self.pos;
        let bad = |why| ParseError::at(open, ParseErrorKind::InvalidBracketAtom(why));
        self.pos += 1;

        let isotope = match self.read_number() {
            Some(n) if n > u16::MAX as u32 => return Err(bad("isotope out of range")),
            Some(n) => Some(n as u16),
            None => None,
        };

        let (element, aromatic) = self.bracket_symbol().ok_or_else(|| bad("unknown element"))?;

        // chirality: @, @@, @TH1, @AL2, @SP3, @TB12, @OH25
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
            } else if let (Some(a), Some(b)) = (self.peek(), self.peek_at(1)) {
                if matches!(&[a, b], b"TH" | b"AL" | b"SP" | b"TB" | b"OH") {
                    self.pos += 2;
                    if self.read_number().is_none() {
                        return Err(bad("chirality class without a number"));
                    }
                }
            }
        }

        let explicit_h_count = if self.peek() == Some(b'H') {
            self.pos += 1;
            match self.read_number() {
                Some(n) if n > 9 => return Err(bad("hydrogen count out of range")),
                Some(n) => Some(n as u8),
                None => Some(1),
            }
        } else {
            Some(0)
        };

        let mut formal_charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.read_number() {
                formal_charge = unit * n.min(99) as i32;
            } else {
                formal_charge = unit;
                while self.peek() == Some(sign) {
                    formal_charge += unit;
                    self.pos += 1;
                }
            }
            if !(-15..=15).contains(&formal_charge) {
                return Err(bad("charge out of range"));
            }
        }

        if self.peek() == Some(b':') {
            self.pos += 1;
            if self.read_number().is_none() {
                return Err(bad("atom class without a number"));
            }
        }

        if self.peek() != Some(b']') {
            return Err(bad("expected ']'"));
        }
        self.pos += 1;

        Ok(Atom {
            element,
            aromatic,
            formal_charge: formal_charge as i8,
            isotope,
            explicit_h_count,
            bracket: true,
        })
    }

    fn bracket_symbol(&mut self) -> Option<(Element, bool)> {
        let c = self.peek()?;
        if c == b'*' {
            self.pos += 1;
            return Some((Element::WILDCARD, false));
        }
        if c.is_ascii_uppercase() {
            if let Some(n @ b'a'..=b'z') = self.peek_at(1) {
                let two = [c, n];
                let sym = core::str::from_utf8(&two).ok()?;
                if let Some(e) = Element::from_symbol(sym) {
                    self.pos += 2;
                    return Some((e, false));
                }
            }
            let one = [c];
            let e = Element::from_symbol(core::str::from_utf8(&one).ok()?)?;
            self.pos += 1;
            return Some((e, false));
        }
        // aromatic forms
        let two = (c, self.peek_at(1));
        let (e, len) = match two {
            (b's', Some(b'e')) => (Element::SE, 2),
            (b'a', Some(b's')) => (Element::AS, 2),
            (b'b', _) => (Element::B, 1),
            (b'c', _) => (Element::C, 1),
            (b'n', _) => (Element::N, 1),
            (b'o', _) => (Element::O, 1),
            (b'p', _) => (Element::P, 1),
            (b's', _) => (Element::S, 1),
            _ => return None,
        };
        self.pos += len;
        Some((e, true))
    }
}
