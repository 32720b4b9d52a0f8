//! Plain-text tensor serialization.
//!
//! Every object starts with a header line `<TAG> <dims…>` followed by
//! whitespace-separated values in storage order:
//!
//! | tag  | header            | body                                   |
//! |------|-------------------|----------------------------------------|
//! | `PM` | `PM <M> <H> <W>`  | probabilities, class-major             |
//! | `SM` | `SM <M> <H> <W>`  | labels, row-major                      |
//! | `RM` | `RM <n> <H> <W>`  | `n` masks as 0/1 grids, in list order  |
//! | `IM` | `IM 3 <H> <W>`    | intensities, channel-major             |
//! | `EW` | `EW <M>`          | edge-model weights                     |
//! | `GW` | `GW <hidden>`     | gate weights                           |
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `parse(write(x)) == x` bit for bit.

use std::fmt::Write as _;
use std::str::{FromStr, SplitWhitespace};

use crate::error::{Error, Result};
use crate::tensor::{Image, ProbMap, RegionMask, RegionMaskSet, SemanticMask, CHANNELS};

/// Objects with a text tensor representation.
pub trait TextTensor: Sized {
    fn to_text(&self) -> String;
    fn from_text(text: &str) -> Result<Self>;
}

/// Sequential reader over the header and body tokens of one object.
pub(crate) struct TokenReader<'a> {
    header: Vec<&'a str>,
    body: SplitWhitespace<'a>,
}

impl<'a> TokenReader<'a> {
    /// Splits off the header line and checks its tag and arity.
    pub(crate) fn open(text: &'a str, tag: &str, dims: usize) -> Result<Self> {
        let (first, rest) = match text.find('\n') {
            Some(i) => (&text[..i], &text[i + 1..]),
            None => (text, ""),
        };
        let header: Vec<&str> = first.split_whitespace().collect();
        match header.first() {
            Some(t) if *t == tag => {}
            Some(t) => return Err(Error::Parse(format!("expected tag {tag}, found {t}"))),
            None => return Err(Error::Parse("missing header line".into())),
        }
        if header.len() != dims + 1 {
            return Err(Error::Parse(format!(
                "{tag} header needs {dims} dimensions, found {}",
                header.len() - 1
            )));
        }
        Ok(Self {
            header,
            body: rest.split_whitespace(),
        })
    }

    pub(crate) fn dim(&self, i: usize) -> Result<usize> {
        let raw = self.header[i + 1];
        raw.parse()
            .map_err(|_| Error::Parse(format!("bad dimension {raw:?}")))
    }

    pub(crate) fn next<T: FromStr>(&mut self) -> Result<T> {
        let tok = self
            .body
            .next()
            .ok_or_else(|| Error::Parse("unexpected end of data".into()))?;
        tok.parse()
            .map_err(|_| Error::Parse(format!("bad value {tok:?}")))
    }

    pub(crate) fn take<T: FromStr>(&mut self, n: usize) -> Result<Vec<T>> {
        (0..n).map(|_| self.next()).collect()
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        match self.body.next() {
            None => Ok(()),
            Some(tok) => Err(Error::Parse(format!("trailing data starting at {tok:?}"))),
        }
    }
}

/// Caps header-declared sizes so a malformed header cannot force a huge
/// allocation before the body is read.
pub(crate) fn checked_count(dims: &[usize]) -> Result<usize> {
    const LIMIT: usize = 1 << 28;
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= LIMIT)
        .ok_or_else(|| Error::Parse(format!("declared size {dims:?} is too large")))
}

/// Writes `values` as `rows` lines of `cols` entries.
pub(crate) fn write_grid<T: std::fmt::Display>(out: &mut String, values: &[T], cols: usize) {
    for row in values.chunks(cols.max(1)) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
}

impl TextTensor for ProbMap {
    fn to_text(&self) -> String {
        let mut out = format!(
            "PM {} {} {}\n",
            self.class_count(),
            self.height(),
            self.width()
        );
        write_grid(&mut out, self.probs(), self.width());
        out
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TokenReader::open(text, "PM", 3)?;
        let (m, h, w) = (r.dim(0)?, r.dim(1)?, r.dim(2)?);
        let probs = r.take(checked_count(&[m, h, w])?)?;
        r.finish()?;
        ProbMap::new(m, h, w, probs)
    }
}

impl TextTensor for SemanticMask {
    fn to_text(&self) -> String {
        let mut out = format!(
            "SM {} {} {}\n",
            self.class_count(),
            self.height(),
            self.width()
        );
        write_grid(&mut out, self.labels(), self.width());
        out
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TokenReader::open(text, "SM", 3)?;
        let (m, h, w) = (r.dim(0)?, r.dim(1)?, r.dim(2)?);
        let labels = r.take(checked_count(&[h, w])?)?;
        r.finish()?;
        SemanticMask::new(m, h, w, labels)
    }
}

impl TextTensor for RegionMaskSet {
    fn to_text(&self) -> String {
        let mut out = format!("RM {} {} {}\n", self.len(), self.height(), self.width());
        for mask in self.masks() {
            let bits: Vec<u8> = mask.pixels().iter().map(|&b| u8::from(b)).collect();
            write_grid(&mut out, &bits, self.width());
        }
        out
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TokenReader::open(text, "RM", 3)?;
        let (n, h, w) = (r.dim(0)?, r.dim(1)?, r.dim(2)?);
        checked_count(&[n, h, w])?;
        let mut masks = Vec::with_capacity(n);
        for _ in 0..n {
            let bits: Vec<u8> = r.take(h * w)?;
            let pixels = bits
                .into_iter()
                .map(|b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Parse(format!("mask value {other} is not 0/1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            masks.push(RegionMask::new(pixels));
        }
        r.finish()?;
        RegionMaskSet::new(h, w, masks)
    }
}

impl TextTensor for Image {
    fn to_text(&self) -> String {
        let mut out = format!("IM {CHANNELS} {} {}\n", self.height(), self.width());
        write_grid(&mut out, self.data(), self.width());
        out
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TokenReader::open(text, "IM", 3)?;
        let (c, h, w) = (r.dim(0)?, r.dim(1)?, r.dim(2)?);
        if c != CHANNELS {
            return Err(Error::Parse(format!(
                "image must have {CHANNELS} channels, found {c}"
            )));
        }
        let data = r.take(checked_count(&[c, h, w])?)?;
        r.finish()?;
        Image::new(h, w, data)
    }
}
