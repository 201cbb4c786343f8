//! Multi-frame XYZ trajectories.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// One trajectory step: element symbols and Cartesian positions in Å.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub elements: Vec<String>,
    pub positions: Vec<[f64; 3]>,
    pub index: usize,
}

impl Frame {
    pub fn atom_count(&self) -> usize {
        self.positions.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.positions[i], self.positions[j]);
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

/// Parses every frame of an XYZ stream.
///
/// Each frame is an atom-count line, a free-form comment line and one
/// `symbol x y z` line per atom. Trailing columns (extended XYZ properties) are
/// ignored. Blank lines between frames are skipped. Line numbers in errors are
/// 1-based.
pub fn parse_trajectory<R: BufRead>(reader: R) -> Result<Vec<Frame>> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut frames: Vec<Frame> = Vec::new();

    let read_err = |line: usize, e: std::io::Error| Error::Parse {
        line,
        msg: format!("read error: {e}"),
    };

    loop {
        // Atom-count line; blank lines between frames are tolerated.
        let (start, count_line) = loop {
            match lines.next() {
                None => return finish(frames),
                Some((n, l)) => {
                    let l = l.map_err(|e| read_err(n, e))?;
                    if !l.trim().is_empty() {
                        break (n, l);
                    }
                }
            }
        };
        let count: usize = count_line.trim().parse().map_err(|_| Error::Parse {
            line: start,
            msg: format!("expected atom count, found {:?}", count_line.trim()),
        })?;
        if count < 2 {
            return Err(Error::Parse {
                line: start,
                msg: format!("frame needs at least 2 atoms, declares {count}"),
            });
        }

        let short = |got: usize| Error::Parse {
            line: start,
            msg: format!("frame starting here declares {count} atoms but only {got} atom lines follow"),
        };

        match lines.next() {
            Some((n, l)) => {
                l.map_err(|e| read_err(n, e))?;
            }
            None => return Err(short(0)),
        }

        let mut elements = Vec::with_capacity(count);
        let mut positions = Vec::with_capacity(count);
        for got in 0..count {
            let (n, l) = lines.next().ok_or_else(|| short(got))?;
            let l = l.map_err(|e| read_err(n, e))?;
            let mut fields = l.split_whitespace();
            let symbol = match fields.next() {
                Some(s) => s,
                None => return Err(short(got)),
            };
            if symbol.parse::<usize>().is_ok() {
                // Looks like the next frame's count line.
                return Err(short(got));
            }
            let mut xyz = [0.0f64; 3];
            for (axis, slot) in xyz.iter_mut().enumerate() {
                let field = fields.next().ok_or_else(|| Error::Parse {
                    line: n,
                    msg: format!("missing coordinate {} for atom {symbol}", ["x", "y", "z"][axis]),
                })?;
                *slot = field.parse().map_err(|_| Error::Parse {
                    line: n,
                    msg: format!("non-numeric coordinate {field:?}"),
                })?;
                if !slot.is_finite() {
                    return Err(Error::Parse {
                        line: n,
                        msg: format!("non-finite coordinate {field:?}"),
                    });
                }
            }
            elements.push(symbol.to_string());
            positions.push(xyz);
        }

        if let Some(first) = frames.first() {
            if first.elements.len() != count {
                return Err(Error::Parse {
                    line: start,
                    msg: format!(
                        "inconsistent atom count: frame {} has {count}, first frame has {}",
                        frames.len(),
                        first.elements.len()
                    ),
                });
            }
            if first.elements != elements {
                return Err(Error::Parse {
                    line: start,
                    msg: format!("element order of frame {} differs from the first frame", frames.len()),
                });
            }
        }

        frames.push(Frame {
            elements,
            positions,
            index: frames.len(),
        });
    }
}

fn finish(frames: Vec<Frame>) -> Result<Vec<Frame>> {
    if frames.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no frames found".into(),
        });
    }
    Ok(frames)
}

/// Writes frames in plain XYZ with the given number of decimals.
pub fn write_trajectory<W: Write>(mut out: W, frames: &[Frame], decimals: usize) -> std::io::Result<()> {
    for f in frames {
        writeln!(out, "{}", f.atom_count())?;
        writeln!(out, "frame {}", f.index)?;
        for (sym, p) in f.elements.iter().zip(&f.positions) {
            writeln!(
                out,
                "{sym} {:.d$} {:.d$} {:.d$}",
                p[0],
                p[1],
                p[2],
                d = decimals
            )?;
        }
    }
    Ok(())
}
