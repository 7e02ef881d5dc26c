//! SDPA sparse format.
//!
//! The problem maps onto the SDPA dual form `max <F0, Y> s.t. <Fi, Y> = ci`:
//! `Y` is the primal block variable, `ci = b_i`, `Fi = A_i` and `F0 = -C`, so
//! the SDPA objective is the negated objective of [`SdpProblem`]. Free
//! variables are written as one trailing diagonal block with negative size;
//! a leading `*free-block k` comment marks that block as unconstrained in sign.

use std::fmt::Write;

use thiserror::Error;

use super::{LinearForm, MatEntry, SdpError, SdpProblem};

const FREE_MARKER: &str = "*free-block";

#[derive(Debug, Error)]
pub enum SdpaError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Problem(#[from] SdpError),
}

/// Renders `problem` in SDPA sparse format.
pub fn export_sdpa(problem: &SdpProblem) -> String {
    let mut out = String::new();
    let nblocks = problem.block_sizes.len();
    let has_free = problem.num_free > 0;
    if has_free {
        writeln!(out, "{FREE_MARKER} {}", nblocks + 1).unwrap();
    }
    writeln!(out, "{}", problem.constraints.len()).unwrap();
    writeln!(out, "{}", nblocks + has_free as usize).unwrap();
    let mut sizes: Vec<String> = problem.block_sizes.iter().map(|s| s.to_string()).collect();
    if has_free {
        sizes.push(format!("-{}", problem.num_free));
    }
    writeln!(out, "{}", sizes.join(" ")).unwrap();
    let rhs: Vec<String> = problem.rhs.iter().map(|v| format!("{v:?}")).collect();
    writeln!(out, "{}", rhs.join(" ")).unwrap();

    let free_block = nblocks + 1;
    let write_form = |out: &mut String, k: usize, form: &LinearForm, sign: f64| {
        for e in &form.mat {
            writeln!(
                out,
                "{} {} {} {} {:?}",
                k,
                e.block + 1,
                e.row + 1,
                e.col + 1,
                sign * e.value
            )
            .unwrap();
        }
        for &(j, v) in &form.free {
            writeln!(out, "{} {} {} {} {:?}", k, free_block, j + 1, j + 1, sign * v).unwrap();
        }
    };
    write_form(&mut out, 0, &problem.objective, -1.0);
    for (i, c) in problem.constraints.iter().enumerate() {
        write_form(&mut out, i + 1, c, 1.0);
    }
    out
}

/// Parses SDPA sparse format as written by [`export_sdpa`] (or any SDPA file
/// without free variables).
pub fn parse_sdpa(text: &str) -> Result<SdpProblem, SdpaError> {
    let mut free_block: Option<usize> = None;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    while let Some(&(ln, l)) = lines.peek() {
        if let Some(rest) = l.strip_prefix(FREE_MARKER) {
            free_block = Some(rest.trim().parse().map_err(|_| SdpaError::Syntax {
                line: ln,
                msg: "bad free-block marker".into(),
            })?);
        } else if !(l.starts_with('*') || l.starts_with('"')) {
            break;
        }
        lines.next();
    }
    let syntax = |line: usize, msg: &str| SdpaError::Syntax {
        line,
        msg: msg.to_string(),
    };
    let clean = |l: &str| l.replace([',', '{', '}', '(', ')'], " ");
    let mut next_line = |what: &str| lines.next().ok_or_else(|| syntax(0, &format!("missing {what}")));

    let (ln, l) = next_line("constraint count")?;
    let m: usize = first_token(&clean(l))
        .parse()
        .map_err(|_| syntax(ln, "bad constraint count"))?;
    let (ln, l) = next_line("block count")?;
    let nblocks: usize = first_token(&clean(l))
        .parse()
        .map_err(|_| syntax(ln, "bad block count"))?;
    // with no blocks the structure line is blank and was filtered out
    let sizes: Vec<i64> = if nblocks == 0 {
        Vec::new()
    } else {
        let (ln, l) = next_line("block structure")?;
        let sizes: Vec<i64> = clean(l)
            .split_whitespace()
            .take(nblocks)
            .map(|t| t.parse::<i64>())
            .collect::<Result<_, _>>()
            .map_err(|_| syntax(ln, "bad block structure"))?;
        if sizes.len() != nblocks {
            return Err(syntax(ln, "block structure shorter than block count"));
        }
        sizes
    };
    let mut rhs: Vec<f64> = Vec::with_capacity(m);
    while rhs.len() < m {
        let (ln, l) = next_line("objective vector")?;
        for t in clean(l).split_whitespace() {
            rhs.push(t.parse().map_err(|_| syntax(ln, "bad objective vector"))?);
        }
    }
    rhs.truncate(m);

    // block index (1-based) -> (is_free, index into block_sizes)
    let mut block_sizes = Vec::new();
    let mut kinds = Vec::with_capacity(nblocks);
    let mut num_free = 0usize;
    for (k, &s) in sizes.iter().enumerate() {
        if Some(k + 1) == free_block {
            num_free = s.unsigned_abs() as usize;
            kinds.push(None);
        } else if s < 0 {
            // an LP block: diagonal entries of a PSD block
            kinds.push(Some(block_sizes.len()));
            block_sizes.push(s.unsigned_abs() as usize);
        } else {
            kinds.push(Some(block_sizes.len()));
            block_sizes.push(s as usize);
        }
    }

    let mut forms: Vec<LinearForm> = vec![LinearForm::default(); m + 1];
    for (ln, l) in lines {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 5 {
            return Err(syntax(ln, "entry needs 5 fields"));
        }
        let parse_idx = |t: &str| t.parse::<usize>().map_err(|_| syntax(ln, "bad index"));
        let k = parse_idx(toks[0])?;
        let blk = parse_idx(toks[1])?;
        let i = parse_idx(toks[2])?;
        let j = parse_idx(toks[3])?;
        let v: f64 = toks[4].parse().map_err(|_| syntax(ln, "bad value"))?;
        if k > m || blk == 0 || blk > nblocks || i == 0 || j == 0 {
            return Err(syntax(ln, "index out of range"));
        }
        let v = if k == 0 { -v } else { v };
        match kinds[blk - 1] {
            None => {
                if i != j {
                    return Err(syntax(ln, "off-diagonal entry in free block"));
                }
                forms[k].free.push((i - 1, v));
            }
            Some(b) => forms[k].mat.push(MatEntry {
                block: b,
                row: i - 1,
                col: j - 1,
                value: v,
            }),
        }
    }
    let objective = forms.remove(0);
    Ok(SdpProblem::new(block_sizes, num_free, objective, forms, rhs)?)
}

fn first_token(s: &str) -> &str {
    s.split_whitespace().next().unwrap_or("")
}
