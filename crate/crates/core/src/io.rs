//! Text formats: kernel table cache, subproblem instances, PGM images and
//! CSV grids.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{ControlField, Grid};
use crate::kernel::{BaseRule, KernelTable, QuadratureSpec};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from {tok:?}")))
}

fn end_of_line<'a>(mut toks: impl Iterator<Item = &'a str>, line: usize) -> Result<()> {
    match toks.next() {
        Some(extra) => Err(parse_err(line, format!("unexpected token {extra:?}"))),
        None => Ok(()),
    }
}

/// Serializes a kernel table. The header is
/// `d n alpha truncation quad_order near_levels rel_tol` (`inf` for an
/// untruncated table, quad order 0 for centers-only weights), followed by
/// one `i j kappa` line per stored offset and one `i beta` line per cell.
pub fn kernel_table_to_string(table: &KernelTable) -> String {
    let g = table.grid();
    let q = table.quad();
    let order = if q.centers_only { 0 } else { q.base_rule.order() };
    let trunc = match table.truncation_radius() {
        Some(r) => format!("{r:e}"),
        None => "inf".to_string(),
    };
    let mut out = String::new();
    writeln!(
        out,
        "{} {} {:e} {} {} {} {:e}",
        g.dim(),
        g.n(),
        table.alpha(),
        trunc,
        order,
        q.near_field_levels,
        q.rel_tol
    )
    .expect("writing to a string");
    let n = g.n() as i64;
    for &(o, w) in table.offsets() {
        // One representative pair per offset pair {o, -o}.
        if (o[1], o[0]) < (0, 0) {
            continue;
        }
        let i0 = (-o[0]).max(0);
        let j0 = (-o[1]).max(0);
        let a = (j0 * n + i0) as usize;
        let b = ((j0 + o[1]) * n + i0 + o[0]) as usize;
        writeln!(out, "{a} {b} {w:e}").expect("writing to a string");
    }
    for (i, b) in table.beta().iter().enumerate() {
        writeln!(out, "{i} {b:e}").expect("writing to a string");
    }
    out
}

/// Parses [`kernel_table_to_string`] output; the reloaded table is
/// bit-identical. `exterior_band` is attached to the rebuilt grid.
pub fn kernel_table_from_str(text: &str, exterior_band: usize) -> Result<KernelTable> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty kernel file"))?;
    let mut toks = header.split_whitespace();
    let dim: usize = field(toks.next(), ln, "dimension")?;
    let n: usize = field(toks.next(), ln, "n")?;
    let alpha: f64 = field(toks.next(), ln, "alpha")?;
    let trunc_tok = toks.next();
    let truncation = match trunc_tok {
        Some("inf") => None,
        other => Some(field::<f64>(other, ln, "truncation")?),
    };
    let order: usize = field(toks.next(), ln, "quad_order")?;
    let near_levels: usize = field(toks.next(), ln, "near_levels")?;
    let rel_tol: f64 = field(toks.next(), ln, "rel_tol")?;
    end_of_line(toks, ln)?;
    let grid = match dim {
        1 => Grid::new_1d(n, exterior_band),
        2 => Grid::new(n, exterior_band),
        _ => return Err(parse_err(ln, format!("dimension must be 1 or 2, got {dim}"))),
    }
    .map_err(|e| parse_err(ln, e.to_string()))?;
    let quad = QuadratureSpec {
        base_rule: match order {
            0 | 1 => BaseRule::Midpoint,
            q => BaseRule::Gauss(q),
        },
        near_field_levels: near_levels,
        rel_tol,
        centers_only: order == 0,
        ..QuadratureSpec::default()
    };
    let mut pairs = Vec::new();
    let mut beta = Vec::with_capacity(grid.num_cells());
    for (ln, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.len() {
            0 => continue,
            3 => {
                if !beta.is_empty() {
                    return Err(parse_err(ln, "pair line after exterior weights"));
                }
                let i: usize = field(Some(toks[0]), ln, "i")?;
                let j: usize = field(Some(toks[1]), ln, "j")?;
                let w: f64 = field(Some(toks[2]), ln, "kappa")?;
                pairs.push((i, j, w));
            }
            2 => {
                let i: usize = field(Some(toks[0]), ln, "i")?;
                if i != beta.len() {
                    return Err(parse_err(ln, format!("expected exterior weight of cell {}", beta.len())));
                }
                beta.push(field(Some(toks[1]), ln, "beta")?);
            }
            _ => return Err(parse_err(ln, "expected `i j kappa` or `i beta`")),
        }
    }
    KernelTable::from_parts(grid, alpha, truncation, quad, &pairs, beta)
        .map_err(|e| parse_err(0, e.to_string()))
}

/// A stored trust-region subproblem for `W = {0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub n: usize,
    pub alpha: f64,
    pub eta: f64,
    pub delta: f64,
    /// Per-cell linear coefficients `c_i`.
    pub linear_cost: Vec<f64>,
    /// Label index per cell of the center `w_bar`.
    pub center: Vec<usize>,
    /// Kernel table file, relative to the instance file.
    pub kernel_path: String,
}

impl Instance {
    /// Header `n alpha eta Delta`, one `c_i` per line, the center labels on
    /// one line, then `kernel PATH`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {:e} {:e} {:e}", self.n, self.alpha, self.eta, self.delta).expect("writing to a string");
        for c in &self.linear_cost {
            writeln!(out, "{c:e}").expect("writing to a string");
        }
        let labels: Vec<String> = self.center.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", labels.join(" ")).expect("writing to a string");
        writeln!(out, "kernel {}", self.kernel_path).expect("writing to a string");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty instance file"))?;
        let mut toks = header.split_whitespace();
        let n: usize = field(toks.next(), ln, "n")?;
        let alpha: f64 = field(toks.next(), ln, "alpha")?;
        let eta: f64 = field(toks.next(), ln, "eta")?;
        let delta: f64 = field(toks.next(), ln, "Delta")?;
        end_of_line(toks, ln)?;
        if n < 2 {
            return Err(parse_err(ln, format!("n must be at least 2, got {n}")));
        }
        let cells = n * n;
        let mut linear_cost = Vec::with_capacity(cells);
        for _ in 0..cells {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(ln, format!("expected {cells} coefficients")))?;
            let mut toks = line.split_whitespace();
            linear_cost.push(field(toks.next(), ln, "c_i")?);
            end_of_line(toks, ln)?;
        }
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(ln, "missing center assignment"))?;
        let center = line
            .split_whitespace()
            .map(|t| field::<usize>(Some(t), ln, "center label"))
            .collect::<Result<Vec<_>>>()?;
        if center.len() != cells || center.iter().any(|&x| x > 1) {
            return Err(parse_err(ln, format!("center must list {cells} labels in {{0, 1}}")));
        }
        let (ln, line) = lines.next().ok_or_else(|| parse_err(ln, "missing kernel reference"))?;
        let kernel_path = line
            .strip_prefix("kernel ")
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .ok_or_else(|| parse_err(ln, "expected `kernel PATH`"))?;
        if let Some((ln, _)) = lines.next() {
            return Err(parse_err(ln, "trailing content"));
        }
        Ok(Self {
            n,
            alpha,
            eta,
            delta,
            linear_cost,
            center,
            kernel_path,
        })
    }
}

/// Plain PGM (P2) of the label indices, scaled to `0..=255`; rows in grid
/// row order.
pub fn control_to_pgm(w: &ControlField) -> String {
    let g = w.grid();
    let n = g.n();
    let rows = if g.dim() == 1 { 1 } else { n };
    let top = (w.labels().len() - 1).max(1);
    let mut out = format!("P2\n{n} {rows}\n255\n");
    for j in 0..rows {
        let row: Vec<String> = (0..n)
            .map(|i| (w.assignment()[g.index(i, j)] * 255 / top).to_string())
            .collect();
        writeln!(out, "{}", row.join(" ")).expect("writing to a string");
    }
    out
}

/// Per-row comma separated values of a grid field.
pub fn grid_to_csv(n: usize, values: &[f64]) -> Result<String> {
    if n == 0 || values.len() % n != 0 {
        return Err(Error::Incompatible(format!("{} values do not fill rows of {n}", values.len())));
    }
    let mut out = String::new();
    for row in values.chunks(n) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join(",")).expect("writing to a string");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LabelSet;
    use crate::kernel::tabulate_kernel;

    #[test]
    fn kernel_table_round_trips_bit_exactly() {
        let cases = [
            (Grid::new(6, 3).unwrap(), Some(0.5), QuadratureSpec::default()),
            (Grid::new(5, 0).unwrap(), None, QuadratureSpec::default()),
            (
                Grid::new(6, 2).unwrap(),
                Some(2.0 / 6.0),
                QuadratureSpec {
                    centers_only: true,
                    ..QuadratureSpec::default()
                },
            ),
            (Grid::new_1d(8, 4).unwrap(), Some(0.5), QuadratureSpec::default()),
        ];
        for (g, r, q) in cases {
            let t = tabulate_kernel(&g, 0.37, r, &q).unwrap();
            let text = kernel_table_to_string(&t);
            let back = kernel_table_from_str(&text, g.exterior_band()).unwrap();
            assert_eq!(back.beta(), t.beta());
            assert_eq!(back.offsets(), t.offsets());
            assert_eq!(back.truncation_radius(), t.truncation_radius());
            assert_eq!(back.quad().centers_only, q.centers_only);
            for i in 0..g.num_cells() {
                for j in 0..g.num_cells() {
                    assert_eq!(back.kappa(i, j).to_bits(), t.kappa(i, j).to_bits());
                }
            }
            assert_eq!(kernel_table_to_string(&back), text);
        }
    }

    #[test]
    fn kernel_parse_errors_carry_line_numbers() {
        let g = Grid::new(4, 1).unwrap();
        let t = tabulate_kernel(&g, 0.5, Some(0.25), &QuadratureSpec::default()).unwrap();
        let mut text = kernel_table_to_string(&t);
        text.push_str("x y z w\n");
        let lines = text.lines().count();
        match kernel_table_from_str(&text, 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, lines),
            other => panic!("{other:?}"),
        }
        assert!(matches!(kernel_table_from_str("2 4 0.5\n", 1), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn instance_round_trip_and_errors() {
        let inst = Instance {
            n: 2,
            alpha: 0.5,
            eta: 1e-4,
            delta: 0.5,
            linear_cost: vec![0.1, -0.2, 1.0 / 3.0, -7e-17],
            center: vec![0, 1, 1, 0],
            kernel_path: "table.txt".into(),
        };
        let text = inst.to_text();
        assert_eq!(Instance::from_text(&text).unwrap(), inst);
        let broken = text.replace("-2e-1", "oops");
        assert!(matches!(Instance::from_text(&broken), Err(Error::Parse { line: 3, .. })));
        let short = "2 0.5 1e-4 0.5\n1\n2\n";
        assert!(matches!(Instance::from_text(short), Err(Error::Parse { .. })));
    }

    #[test]
    fn pgm_layout() {
        let g = Grid::new(3, 0).unwrap();
        let w = ControlField::new(g, LabelSet::binary(), vec![1, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
        assert_eq!(control_to_pgm(&w), "P2\n3 3\n255\n255 0 0\n0 255 0\n0 0 255\n");
    }

    #[test]
    fn csv_rows() {
        assert_eq!(grid_to_csv(2, &[1.0, 0.5, -2.0, 0.0]).unwrap(), "1e0,5e-1\n-2e0,0e0\n");
        assert!(grid_to_csv(3, &[1.0, 2.0]).is_err());
    }
}
