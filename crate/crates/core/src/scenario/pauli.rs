//! Pauli-string Hamiltonians such as `0.5*X0 + 0.25*Z0Z1`.
//!
//! Site 0 is the most significant tensor factor. Coefficients are real;
//! terms are joined with `+` and a negative coefficient is written as a
//! signed number (`1*X0 + -0.5*Z1`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{pauli, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Letter {
    X,
    Y,
    Z,
}

impl Letter {
    fn matrix(self) -> DMatrix<C64> {
        match self {
            Letter::X => pauli::x(),
            Letter::Y => pauli::y(),
            Letter::Z => pauli::z(),
        }
    }

    fn as_char(self) -> char {
        match self {
            Letter::X => 'X',
            Letter::Y => 'Y',
            Letter::Z => 'Z',
        }
    }
}

/// Non-identity letters keyed by site; the empty word is the identity.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliWord(BTreeMap<usize, Letter>);

impl PauliWord {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_letters(letters: impl IntoIterator<Item = (usize, Letter)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (site, l) in letters {
            if map.insert(site, l).is_some() {
                return Err(Error::Parse {
                    offset: 0,
                    message: format!("site {site} repeated in one word"),
                });
            }
        }
        Ok(Self(map))
    }

    pub fn letters(&self) -> impl Iterator<Item = (usize, Letter)> + '_ {
        self.0.iter().map(|(&s, &l)| (s, l))
    }

    pub fn max_site(&self) -> Option<usize> {
        self.0.keys().next_back().copied()
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_empty()
    }

    pub fn matrix(&self, qubits: usize) -> Result<DMatrix<C64>> {
        if let Some(s) = self.max_site().filter(|&s| s >= qubits) {
            return Err(Error::IndexOutOfRange {
                label: "qubit site".into(),
                index: s,
                dim: qubits,
            });
        }
        let mut m = DMatrix::from_element(1, 1, C64::from(1.0));
        for site in 0..qubits {
            let factor = self.0.get(&site).map_or_else(pauli::i2, |l| l.matrix());
            m = m.kronecker(&factor);
        }
        Ok(m)
    }
}

impl fmt::Display for PauliWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "I");
        }
        for (site, l) in &self.0 {
            write!(f, "{}{}", l.as_char(), site)?;
        }
        Ok(())
    }
}

/// Canonical real combination of Pauli words: sorted, duplicates merged,
/// zero coefficients dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PauliExpression {
    terms: BTreeMap<PauliWord, f64>,
}

impl PauliExpression {
    pub fn new(terms: impl IntoIterator<Item = (f64, PauliWord)>) -> Self {
        let mut map: BTreeMap<PauliWord, f64> = BTreeMap::new();
        for (c, w) in terms {
            *map.entry(w).or_insert(0.0) += c;
        }
        map.retain(|_, c| *c != 0.0);
        Self { terms: map }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).expression()
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, &PauliWord)> + '_ {
        self.terms.iter().map(|(w, &c)| (c, w))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Smallest qubit count the expression fits on.
    pub fn min_qubits(&self) -> usize {
        self.terms
            .keys()
            .filter_map(PauliWord::max_site)
            .max()
            .map_or(1, |s| s + 1)
    }

    pub fn matrix(&self, qubits: usize) -> Result<DMatrix<C64>> {
        let d = 1usize
            .checked_shl(qubits as u32)
            .filter(|_| qubits < 16)
            .ok_or_else(|| Error::InvalidHamiltonian(format!("{qubits} qubits is too many")))?;
        let mut m = DMatrix::<C64>::zeros(d, d);
        for (w, &c) in &self.terms {
            m += w.matrix(qubits)? * C64::from(c);
        }
        Ok(m)
    }
}

impl fmt::Display for PauliExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0*I");
        }
        for (i, (w, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}*{w}")?;
        }
        Ok(())
    }
}

impl FromStr for PauliExpression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

pub fn parse_pauli(text: &str) -> Result<PauliExpression> {
    PauliExpression::parse(text)
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn expression(mut self) -> Result<PauliExpression> {
        self.skip_ws();
        if self.peek().is_none() {
            return self.fail("empty expression");
        }
        let mut terms = vec![self.term()?];
        loop {
            self.skip_ws();
            match self.peek() {
                None => break,
                Some('+') => {
                    self.pos += 1;
                    terms.push(self.term()?);
                }
                Some(c) => return self.fail(format!("expected '+' or end of input, found '{c}'")),
            }
        }
        Ok(PauliExpression::new(terms))
    }

    fn term(&mut self) -> Result<(f64, PauliWord)> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c.is_ascii_digit() || matches!(c, '-' | '+' | '.') => {
                let c = self.number()?;
                self.skip_ws();
                if self.peek() != Some('*') {
                    return self.fail("expected '*' after coefficient");
                }
                self.pos += 1;
                self.skip_ws();
                Ok((c, self.word()?))
            }
            Some(_) => Ok((1.0, self.word()?)),
            None => self.fail("expected a term"),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let bytes = self.text.as_bytes();
        let mut end = start;
        if end < bytes.len() && matches!(bytes[end], b'-' | b'+') {
            end += 1;
        }
        while end < bytes.len() {
            let b = bytes[end];
            let exponent_sign =
                matches!(b, b'-' | b'+') && matches!(bytes[end - 1], b'e' | b'E');
            if b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E') || exponent_sign {
                end += 1;
            } else {
                break;
            }
        }
        match self.text[start..end].parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.pos = end;
                Ok(v)
            }
            _ => self.fail(format!("invalid number '{}'", &self.text[start..end])),
        }
    }

    fn word(&mut self) -> Result<PauliWord> {
        let start = self.pos;
        let mut letters = Vec::new();
        let mut bare_identity = false;
        while let Some(c) = self.peek() {
            let letter = match c {
                'X' => Some(Letter::X),
                'Y' => Some(Letter::Y),
                'Z' => Some(Letter::Z),
                'I' => None,
                _ => break,
            };
            let letter_pos = self.pos;
            self.pos += 1;
            let digits_start = self.pos;
            while self.peek().is_some_and(|d| d.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == digits_start {
                if c == 'I' && letters.is_empty() && !bare_identity && letter_pos == start {
                    bare_identity = true;
                    break;
                }
                return self.fail(format!("letter '{c}' needs a site index"));
            }
            let site: usize = self.text[digits_start..self.pos]
                .parse()
                .or_else(|_| self.fail("site index too large"))?;
            if letters.iter().any(|&(s, _)| s == site) {
                self.pos = letter_pos;
                return self.fail(format!("site {site} repeated in one word"));
            }
            letters.push((site, letter));
        }
        if self.pos == start {
            return self.fail("expected a Pauli word");
        }
        if bare_identity {
            if self.peek().is_some_and(|c| matches!(c, 'X' | 'Y' | 'Z' | 'I')) {
                return self.fail("bare 'I' cannot be combined with other letters");
            }
            return Ok(PauliWord::identity());
        }
        PauliWord::from_letters(letters.into_iter().filter_map(|(s, l)| l.map(|l| (s, l))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{kron, Operator, SpaceLabel};

    #[test]
    fn single_term_matrix() {
        let e = parse_pauli("0.5*X0").unwrap();
        let m = e.matrix(1).unwrap();
        assert_eq!(m, pauli::x() * C64::from(0.5));
    }

    #[test]
    fn duplicates_merge() {
        assert_eq!(parse_pauli("Z0 + Z0").unwrap().to_string(), "2*Z0");
        assert_eq!(parse_pauli("Z0 + -1*Z0").unwrap().to_string(), "0*I");
        assert_eq!(parse_pauli("0.5 * Z1X0 +X0Z1").unwrap().to_string(), "1.5*X0Z1");
    }

    #[test]
    fn two_site_against_kron() {
        let m = parse_pauli("0.5*X0X1").unwrap().matrix(2).unwrap();
        let x_q = Operator::new(vec![SpaceLabel::system(2).unwrap()], pauli::x()).unwrap();
        let x_m = Operator::new(vec![SpaceLabel::memory(1, 2).unwrap()], pauli::x()).unwrap();
        let reference = kron(&x_q, &x_m).unwrap().matrix() * C64::from(0.5);
        assert_eq!(m, reference);

        let zi = parse_pauli("Z0").unwrap().matrix(2).unwrap();
        assert_eq!(zi, pauli::z().kronecker(&pauli::i2()));
    }

    #[test]
    fn identity_forms() {
        let e = parse_pauli("3*I + I0 + -1*I").unwrap();
        assert_eq!(e.to_string(), "3*I");
        assert_eq!(e.matrix(2).unwrap(), DMatrix::identity(4, 4) * C64::from(3.0));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let err = |s: &str| match parse_pauli(s) {
            Err(Error::Parse { offset, .. }) => offset,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(err(""), 0);
        assert_eq!(err("0.5*X"), 5);
        assert_eq!(err("0.5 X0"), 4);
        assert_eq!(err("X0 - Z1"), 3);
        assert_eq!(err("X0X0"), 2);
        assert_eq!(err("X0 +"), 4);
        assert_eq!(err("abc"), 0);
    }

    #[test]
    fn out_of_range_site() {
        let e = parse_pauli("Z3").unwrap();
        assert!(matches!(e.matrix(2), Err(Error::IndexOutOfRange { index: 3, .. })));
        assert_eq!(e.min_qubits(), 4);
    }

    #[test]
    fn scientific_coefficients() {
        let e = parse_pauli("-1.5e-1*Y0 + 2E+0*X1").unwrap();
        assert_eq!(e.to_string(), "-0.15*Y0 + 2*X1");
    }
}
