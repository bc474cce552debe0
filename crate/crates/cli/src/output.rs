//! Atomic file output, RFC 4180 CSV and static SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rigidlab::{Manifold, SurfaceMesh};

use crate::error::{CliError, CliResult};

/// Writes `bytes` next to `path` under a temporary name and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

/// Fixed-width scientific notation with enough digits to round-trip.
pub fn num(x: f64) -> String {
    format!("{x:.17e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// CSV table with CRLF line endings and quoting where needed.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

pub struct OutDir {
    pub root: PathBuf,
    pub written: Vec<PathBuf>,
}

impl OutDir {
    pub fn new(root: PathBuf) -> Self {
        Self { root, written: Vec::new() }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }
}

/// Piecewise linear approximation of the viridis colour map.
fn colour(t: f64) -> String {
    const STOPS: [[f64; 3]; 5] =
        [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [94.0, 201.0, 98.0], [253.0, 231.0, 37.0]];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let s = x - i as f64;
    let c: Vec<u8> = (0..3).map(|k| (STOPS[i][k] * (1.0 - s) + STOPS[i + 1][k] * s).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Chart coordinates of a vertex: (longitude, latitude) on the sphere,
/// (θ, φ) on the torus.
fn chart(m: Manifold, mesh: &SurfaceMesh, v: usize) -> [f64; 2] {
    let p = &mesh.vertices[v];
    match m {
        Manifold::Sphere => {
            let x = &p.ambient;
            [x[1].atan2(x[0]), x[2].clamp(-1.0, 1.0).asin()]
        }
        Manifold::FlatTorus => [p.params[0], p.params[1]],
    }
}

/// Face values painted over a chart of the surface. Faces straddling the
/// chart seam are unwrapped to the side of their first vertex and clipped.
pub fn face_map_svg(mesh: &SurfaceMesh, values: &[f64], title: &str) -> String {
    use std::f64::consts::{PI, TAU};
    let m = mesh.manifold;
    let (w, h, pad, bar) = (720.0, 360.0, 40.0, 60.0);
    let (x0, x1, y0, y1) = match m {
        Manifold::Sphere => (-PI, PI, -PI / 2.0, PI / 2.0),
        Manifold::FlatTorus => (0.0, TAU, 0.0, TAU),
    };
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| pad + h - (y - y0) / (y1 - y0) * h;
    let vmax = values.iter().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"##,
        w + 2.0 * pad + bar,
        h + 2.0 * pad,
        w + 2.0 * pad + bar,
        h + 2.0 * pad
    );
    let _ = writeln!(s, r##"<defs><clipPath id="chart"><rect x="{pad}" y="{pad}" width="{w}" height="{h}"/></clipPath></defs>"##);
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(s, r##"<text x="{pad}" y="{:.1}" font-family="sans-serif" font-size="14">{}</text>"##, pad - 12.0, escape(title));
    let _ = writeln!(s, r##"<g clip-path="url(#chart)" stroke-width="0.3">"##);
    for (f, tri) in mesh.faces.iter().enumerate() {
        let mut pts: Vec<[f64; 2]> = tri.iter().map(|&v| chart(m, mesh, v)).collect();
        let period = match m {
            Manifold::Sphere => [TAU, f64::INFINITY],
            Manifold::FlatTorus => [TAU, TAU],
        };
        for k in 0..2 {
            if !period[k].is_finite() {
                continue;
            }
            let r = pts[0][k];
            for q in pts.iter_mut().skip(1) {
                while q[k] - r > period[k] / 2.0 {
                    q[k] -= period[k];
                }
                while r - q[k] > period[k] / 2.0 {
                    q[k] += period[k];
                }
            }
        }
        let c = colour(if vmax > 0.0 { values[f] / vmax } else { 0.0 });
        let coords: Vec<String> = pts.iter().map(|q| format!("{:.2},{:.2}", sx(q[0]), sy(q[1]))).collect();
        let _ = writeln!(s, r##"<polygon points="{}" fill="{c}" stroke="{c}"/>"##, coords.join(" "));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<rect x="{pad}" y="{pad}" width="{w}" height="{h}" fill="none" stroke="black"/>"##);
    let bx = pad + w + 15.0;
    for i in 0..50 {
        let t = i as f64 / 49.0;
        let y = pad + h - (i as f64 + 1.0) * h / 50.0;
        let _ = writeln!(s, r##"<rect x="{bx}" y="{y:.2}" width="15" height="{:.2}" fill="{}"/>"##, h / 50.0 + 0.5, colour(t));
    }
    let _ = writeln!(s, r##"<text x="{bx}" y="{:.1}" font-family="sans-serif" font-size="10">{:.2e}</text>"##, pad - 2.0, vmax);
    let _ = writeln!(s, r##"<text x="{bx}" y="{:.1}" font-family="sans-serif" font-size="10">0</text>"##, pad + h + 12.0);
    s.push_str("</svg>\n");
    s
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Log-log scatter of the series with the fitted line `log y = slope·log x + c`
/// drawn over the data range.
pub fn loglog_svg(series: &[Series], fit: Option<(f64, f64)>, title: &str, xlabel: &str, ylabel: &str) -> String {
    const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let (w, h, pad) = (520.0, 400.0, 70.0);
    let logs: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let (mut lx0, mut lx1, mut ly0, mut ly1) = logs.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), (x, y)| (a.min(*x), b.max(*x), c.min(*y), d.max(*y)),
    );
    if !lx0.is_finite() {
        (lx0, lx1, ly0, ly1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (lx0, lx1) = (lx0.floor(), lx1.ceil().max(lx0.floor() + 1.0));
    let (ly0, ly1) = (ly0.floor(), ly1.ceil().max(ly0.floor() + 1.0));
    let sx = |x: f64| pad + (x - lx0) / (lx1 - lx0) * w;
    let sy = |y: f64| pad + h - (y - ly0) / (ly1 - ly0) * h;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{1}" viewBox="0 0 {0} {1}">"##,
        w + 2.0 * pad + 120.0,
        h + 2.0 * pad
    );
    let _ = writeln!(s, r##"<defs><clipPath id="plot"><rect x="{pad}" y="{pad}" width="{w}" height="{h}"/></clipPath></defs>"##);
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(s, r##"<text x="{pad}" y="30" font-family="sans-serif" font-size="14">{}</text>"##, escape(title));
    let _ = writeln!(s, r##"<g font-family="sans-serif" font-size="10" stroke="#ccc">"##);
    for d in (lx0 as i32)..=(lx1 as i32) {
        let x = sx(d as f64);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{pad}" x2="{x:.2}" y2="{:.2}"/>"##, pad + h);
        let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" stroke="none" text-anchor="middle">1e{d}</text>"##, x, pad + h + 15.0);
    }
    for d in (ly0 as i32)..=(ly1 as i32) {
        let y = sy(d as f64);
        let _ = writeln!(s, r##"<line x1="{pad}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"##, pad + w);
        let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" stroke="none" text-anchor="end">1e{d}</text>"##, pad - 6.0, y + 3.0);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<rect x="{pad}" y="{pad}" width="{w}" height="{h}" fill="none" stroke="black"/>"##);
    let _ = writeln!(
        s,
        r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"##,
        pad + w / 2.0,
        pad + h + 35.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r##"<text x="20" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"##,
        pad + h / 2.0,
        pad + h / 2.0,
        escape(ylabel)
    );
    if let Some((slope, intercept)) = fit {
        let (ya, yb) = (slope * lx0 + intercept, slope * lx1 + intercept);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="5,3" clip-path="url(#plot)"/>"##,
            sx(lx0),
            sy(ya),
            sx(lx1),
            sy(yb)
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">fitted slope {slope:.3}</text>"##,
            pad + w + 10.0,
            pad + 10.0
        );
    }
    for (k, ser) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        for (x, y) in ser.points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0) {
            let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"##, sx(x.log10()), sy(y.log10()));
        }
        let ly = pad + 30.0 + 16.0 * k as f64;
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"##, pad + w + 14.0, ly - 4.0);
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{ly:.2}" font-family="sans-serif" font-size="11">{}</text>"##,
            pad + w + 22.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn csv_uses_crlf_and_quotes() {
        let mut t = Table::new(&["a", "b"]);
        t.row(["1", "x,y"]);
        assert_eq!(t.into_bytes(), b"a,b\r\n1,\"x,y\"\r\n");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn colour_map_endpoints() {
        assert_eq!(colour(0.0), "#440154");
        assert_eq!(colour(1.0), "#fde725");
        assert_eq!(colour(f64::NAN), "#440154");
    }

    #[test]
    fn plots_are_well_formed() {
        let mesh = SurfaceMesh::build(Manifold::FlatTorus, 4).unwrap();
        let values: Vec<f64> = (0..mesh.num_faces()).map(|f| f as f64).collect();
        let svg = face_map_svg(&mesh, &values, "a < b");
        assert_eq!(svg.matches("<polygon").count(), mesh.num_faces());
        assert!(svg.contains("a &lt; b") && svg.trim_end().ends_with("</svg>"));

        let series = [Series { label: "x".into(), points: vec![(1e-3, 2e-3), (1e-1, 2e-1)] }];
        let svg = loglog_svg(&series, Some((1.0, 2f64.log10())), "t", "e", "d");
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("fitted slope 1.000"));
    }
}
