//! Static SVG scatter plots of 3-D point sets, one file per coordinate plane.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Parsed points plus the number of rows that could not be read.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointTable {
    pub points: Vec<[f64; 3]>,
    /// Optional per-point group (e.g. chart id) used for colouring.
    pub groups: Option<Vec<usize>>,
    pub skipped: usize,
}

/// Reads a CSV whose header names `x`, `y` and `z` columns (other columns are
/// ignored, except `chart` which is kept for colouring). Rows with the wrong
/// field count or unparsable numbers are skipped and counted.
pub fn read_points(text: &str) -> Result<PointTable> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(header) = lines.next() else {
        return Ok(PointTable::default());
    };
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |n: &str| names.iter().position(|h| *h == n);
    let (Some(ix), Some(iy), Some(iz)) = (col("x"), col("y"), col("z")) else {
        return Err(Error::InvalidConfig(format!("CSV header `{header}` lacks x,y,z columns")));
    };
    let ic = col("chart");
    let mut table = PointTable { groups: ic.map(|_| Vec::new()), ..Default::default() };
    for line in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != names.len() {
            table.skipped += 1;
            continue;
        }
        let parse = |i: usize| f[i].parse::<f64>().ok().filter(|v| v.is_finite());
        let group = match ic {
            Some(i) => match f[i].parse::<usize>() {
                Ok(g) => Some(g),
                Err(_) => {
                    table.skipped += 1;
                    continue;
                }
            },
            None => None,
        };
        match (parse(ix), parse(iy), parse(iz)) {
            (Some(x), Some(y), Some(z)) => {
                table.points.push([x, y, z]);
                if let (Some(gs), Some(g)) = (table.groups.as_mut(), group) {
                    gs.push(g);
                }
            }
            _ => table.skipped += 1,
        }
    }
    Ok(table)
}

pub const PLANES: [(&str, usize, usize); 3] = [("xy", 0, 1), ("xz", 0, 2), ("yz", 1, 2)];

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if lo > hi {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Scatter of coordinates `(a, b)` of every point.
pub fn scatter_svg(table: &PointTable, a: usize, b: usize, title: &str) -> String {
    let axes = ["x", "y", "z"];
    let (xlo, xhi) = range(table.points.iter().map(|p| p[a]));
    let (ylo, yhi) = range(table.points.iter().map(|p| p[b]));
    let inner = SIZE - 2.0 * MARGIN;
    let sx = |v: f64| MARGIN + (v - xlo) / (xhi - xlo) * inner;
    let sy = |v: f64| SIZE - MARGIN - (v - ylo) / (yhi - ylo) * inner;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{inner}" height="{inner}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{title}</text>"#, SIZE / 2.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        SIZE - 8.0,
        axes[a]
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        axes[b]
    );
    for (v, x, y, anchor) in [
        (xlo, MARGIN, SIZE - MARGIN + 14.0, "start"),
        (xhi, SIZE - MARGIN, SIZE - MARGIN + 14.0, "end"),
    ] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" font-size="10" text-anchor="{anchor}">{v:.2}</text>"#);
    }
    for (v, y) in [(ylo, SIZE - MARGIN), (yhi, MARGIN + 10.0)] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="10" text-anchor="end">{v:.2}</text>"#, MARGIN - 3.0);
    }
    let _ = writeln!(s, r#"<g fill-opacity="0.5" stroke="none">"#);
    for (i, p) in table.points.iter().enumerate() {
        let color = table.groups.as_ref().map_or(PALETTE[0], |g| PALETTE[g[i] % PALETTE.len()]);
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="{color}"/>"#, sx(p[a]), sy(p[b]));
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// The three projections as `(plane, svg)`.
pub fn projections(table: &PointTable, title: &str) -> Vec<(&'static str, String)> {
    PLANES.iter().map(|&(name, a, b)| (name, scatter_svg(table, a, b, &format!("{title} ({name})")))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_malformed_rows() {
        let t = read_points("x,y,z,split\n1,2,3,train\nbad,2,3,train\n1,2\n4,5,6,test\n1,nan,2,val\n").unwrap();
        assert_eq!(t.points, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(t.skipped, 3);
        assert!(t.groups.is_none());
    }

    #[test]
    fn header_only_gives_empty_axes() {
        let t = read_points("x,y,z\n").unwrap();
        assert!(t.points.is_empty());
        let svg = scatter_svg(&t, 0, 1, "empty");
        assert!(svg.contains("<rect") && !svg.contains("<circle"));
        assert!(read_points("a,b\n1,2\n").is_err());
    }

    #[test]
    fn chart_column_colours_points() {
        let t = read_points("x,y,z,chart\n0,0,0,1\n1,1,1,2\n").unwrap();
        assert_eq!(t.groups, Some(vec![1, 2]));
        let svg = scatter_svg(&t, 0, 2, "c");
        assert!(svg.contains(PALETTE[1]) && svg.contains(PALETTE[2]));
    }
}
