//! Quantitative tables and SVG diagnostics: sample scatters, final-latent
//! (Gaussianization) plots, and per-layer folding visualizations.
//!
//! Every figure is written twice: an SVG 1.1 file and a CSV twin holding
//! exactly the plotted coordinates and color keys, so any external plotter
//! can reproduce it. Both outputs are deterministic byte for byte given
//! identical inputs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::data::{generate, DatasetSpec, Problem, ALL_PROBLEMS};
use crate::model::{FlowModel, Layer, ModelKind};
use crate::Error;

/// Branch colors: red/green/blue for branches 1-3, black outside the band.
pub fn branch_color(branch: u8, in_band: bool) -> &'static str {
    if !in_band {
        return "black";
    }
    match branch {
        1 => "red",
        2 => "green",
        3 => "blue",
        _ => panic!("branch label {branch} not in 1..=3"),
    }
}

/// Pure position-to-color map over a reference box: the horizontal
/// coordinate drives red, the vertical drives blue.
pub fn position_color(x: f64, y: f64, bounds: &Bounds) -> String {
    let u = ((x - bounds.x_min) / (bounds.x_max - bounds.x_min)).clamp(0.0, 1.0);
    let v = ((y - bounds.y_min) / (bounds.y_max - bounds.y_min)).clamp(0.0, 1.0);
    let r = (40.0 + 175.0 * u).round() as u8;
    let b = (40.0 + 175.0 * v).round() as u8;
    format!("#{r:02x}64{b:02x}")
}

/// Default palette for mixture-component labels in data plots.
const LABEL_COLORS: [&str; 8] = [
    "#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    /// Smallest box containing all points, padded by 8%, with a minimum
    /// extent so degenerate inputs stay drawable.
    pub fn around(points: &[(f64, f64, String)]) -> Bounds {
        let mut b = Bounds {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for (x, y, _) in points {
            b.x_min = b.x_min.min(*x);
            b.x_max = b.x_max.max(*x);
            b.y_min = b.y_min.min(*y);
            b.y_max = b.y_max.max(*y);
        }
        if points.is_empty() {
            return Bounds {
                x_min: -1.0,
                x_max: 1.0,
                y_min: -1.0,
                y_max: 1.0,
            };
        }
        let dx = (b.x_max - b.x_min).max(1e-6);
        let dy = (b.y_max - b.y_min).max(1e-6);
        Bounds {
            x_min: b.x_min - 0.08 * dx,
            x_max: b.x_max + 0.08 * dx,
            y_min: b.y_min - 0.08 * dy,
            y_max: b.y_max + 0.08 * dy,
        }
    }

    fn include(&mut self, x: f64, y: f64) {
        self.x_min = self.x_min.min(x);
        self.x_max = self.x_max.max(x);
        self.y_min = self.y_min.min(y);
        self.y_max = self.y_max.max(y);
    }
}

/// Dashed guide elements drawn behind the points.
#[derive(Clone, Copy, Debug)]
pub enum Guide {
    VLine(f64),
    HLine(f64),
    /// Circle of the given radius centered on the origin.
    Circle(f64),
}

/// A scatter figure: points with color keys plus optional guides.
#[derive(Clone, Debug)]
pub struct Figure {
    pub points: Vec<(f64, f64, String)>,
    pub guides: Vec<Guide>,
    pub bounds: Bounds,
}

impl Figure {
    pub fn new(points: Vec<(f64, f64, String)>, guides: Vec<Guide>) -> Figure {
        let mut bounds = Bounds::around(&points);
        for g in &guides {
            match *g {
                Guide::VLine(x) => bounds.include(x, 0.0),
                Guide::HLine(y) => bounds.include(0.0, y),
                Guide::Circle(r) => {
                    bounds.include(-r, -r);
                    bounds.include(r, r);
                }
            }
        }
        Figure {
            points,
            guides,
            bounds,
        }
    }
}

const SVG_SIZE: f64 = 640.0;
const SVG_MARGIN: f64 = 32.0;
const POINT_RADIUS: f64 = 2.0;

fn to_px(v: f64, lo: f64, hi: f64, flip: bool) -> f64 {
    let t = (v - lo) / (hi - lo);
    let t = if flip { 1.0 - t } else { t };
    SVG_MARGIN + t * (SVG_SIZE - 2.0 * SVG_MARGIN)
}

fn render_svg(fig: &Figure) -> String {
    let b = &fig.bounds;
    let mut s = String::with_capacity(fig.points.len() * 64 + 512);
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\">\n"
    ));
    s.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" fill=\"white\"/>\n"
    ));
    s.push_str(&format!(
        "<rect x=\"{SVG_MARGIN}\" y=\"{SVG_MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999999\" stroke-width=\"1\"/>\n",
        SVG_SIZE - 2.0 * SVG_MARGIN,
        SVG_SIZE - 2.0 * SVG_MARGIN
    ));
    for g in &fig.guides {
        match *g {
            Guide::VLine(x) => {
                let px = to_px(x, b.x_min, b.x_max, false);
                s.push_str(&format!(
                    "<line x1=\"{px}\" y1=\"{SVG_MARGIN}\" x2=\"{px}\" y2=\"{}\" stroke=\"#777777\" stroke-dasharray=\"5 4\" stroke-width=\"1\"/>\n",
                    SVG_SIZE - SVG_MARGIN
                ));
            }
            Guide::HLine(y) => {
                let py = to_px(y, b.y_min, b.y_max, true);
                s.push_str(&format!(
                    "<line x1=\"{SVG_MARGIN}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#777777\" stroke-dasharray=\"5 4\" stroke-width=\"1\"/>\n",
                    SVG_SIZE - SVG_MARGIN
                ));
            }
            Guide::Circle(r) => {
                let cx = to_px(0.0, b.x_min, b.x_max, false);
                let cy = to_px(0.0, b.y_min, b.y_max, true);
                let rx = to_px(r, b.x_min, b.x_max, false) - cx;
                let ry = cy - to_px(r, b.y_min, b.y_max, true);
                s.push_str(&format!(
                    "<ellipse cx=\"{cx}\" cy=\"{cy}\" rx=\"{rx}\" ry=\"{ry}\" fill=\"none\" stroke=\"#777777\" stroke-dasharray=\"5 4\" stroke-width=\"1\"/>\n"
                ));
            }
        }
    }
    for (x, y, color) in &fig.points {
        let px = to_px(*x, b.x_min, b.x_max, false);
        let py = to_px(*y, b.y_min, b.y_max, true);
        s.push_str(&format!(
            "<circle cx=\"{px}\" cy=\"{py}\" r=\"{POINT_RADIUS}\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n"
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn csv_twin(fig: &Figure) -> String {
    let mut s = String::from("x,y,color\n");
    for (x, y, c) in &fig.points {
        s.push_str(&format!("{x},{y},{c}\n"));
    }
    s
}

/// Writes `<stem>.svg` and its `<stem>.csv` twin; returns both paths.
pub fn write_figure(fig: &Figure, stem: &Path) -> Result<(PathBuf, PathBuf), Error> {
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir)?;
    }
    let svg_path = stem.with_extension("svg");
    let csv_path = stem.with_extension("csv");
    fs::write(&svg_path, render_svg(fig))?;
    fs::write(&csv_path, csv_twin(fig))?;
    Ok((svg_path, csv_path))
}

/// One table cell: mean test log-likelihood of a model kind on a problem.
#[derive(Clone, Debug)]
pub struct TableCell {
    pub problem: Problem,
    pub kind: ModelKind,
    pub ll: Option<f64>,
}

fn cell_for(cells: &[TableCell], problem: Problem, kind: ModelKind) -> Option<f64> {
    cells
        .iter()
        .find(|c| c.problem == problem && c.kind == kind)
        .and_then(|c| c.ll)
}

/// Aligned text table of mean test log-likelihood in nats per problem and
/// model, with the rad-minus-realnvp gap. Missing cells render as a dash.
pub fn ll_table(cells: &[TableCell]) -> String {
    let fmt = |v: Option<f64>| match v {
        Some(v) => format!("{v:+.2}"),
        None => "—".to_string(),
    };
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>9} {:>9} {:>7}\n",
        "problem", "rad", "realnvp", "gap"
    ));
    for problem in ALL_PROBLEMS {
        let rad = cell_for(cells, problem, ModelKind::Rad);
        let nvp = cell_for(cells, problem, ModelKind::RealNvp);
        let gap = match (rad, nvp) {
            (Some(r), Some(n)) => Some(r - n),
            _ => None,
        };
        out.push_str(&format!(
            "{:<22} {:>9} {:>9} {:>7}\n",
            problem.name(),
            fmt(rad),
            fmt(nvp),
            fmt(gap)
        ));
    }
    out
}

/// CSV form of [`ll_table`].
pub fn ll_table_csv(cells: &[TableCell]) -> String {
    let fmt = |v: Option<f64>| match v {
        Some(v) => format!("{v}"),
        None => String::new(),
    };
    let mut out = String::from("problem,rad,realnvp,gap\n");
    for problem in ALL_PROBLEMS {
        let rad = cell_for(cells, problem, ModelKind::Rad);
        let nvp = cell_for(cells, problem, ModelKind::RealNvp);
        let gap = match (rad, nvp) {
            (Some(r), Some(n)) => Some(r - n),
            _ => None,
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            problem.name(),
            fmt(rad),
            fmt(nvp),
            fmt(gap)
        ));
    }
    out
}

/// Scatter of `n` model samples (seeded draw). Returns the figure paths.
pub fn export_samples(
    model: &FlowModel,
    n: usize,
    seed: u64,
    stem: &Path,
) -> Result<(PathBuf, PathBuf), Error> {
    let points = if n == 0 {
        Vec::new()
    } else {
        let mut rng = StdRng::seed_from_u64(seed);
        model
            .sample(n, &mut rng)
            .into_iter()
            .map(|s| (s.x[0], s.x[1], "black".to_string()))
            .collect()
    };
    write_figure(&Figure::new(points, vec![]), stem)
}

/// Final-latent scatter of data points, colored by their input-space
/// position, with standard-normal level-set circles at radii 1, 2, 3.
pub fn export_gaussianization(
    model: &FlowModel,
    data: &[[f64; 2]],
    stem: &Path,
) -> Result<(PathBuf, PathBuf), Error> {
    let input_points: Vec<(f64, f64, String)> =
        data.iter().map(|p| (p[0], p[1], String::new())).collect();
    let input_bounds = Bounds::around(&input_points);
    let points: Vec<(f64, f64, String)> = data
        .iter()
        .map(|p| {
            let (_, trace) = model.log_prob(p);
            let z = &trace.final_z;
            (z[0], z[1], position_color(p[0], p[1], &input_bounds))
        })
        .collect();
    let guides = vec![Guide::Circle(1.0), Guide::Circle(2.0), Guide::Circle(3.0)];
    write_figure(&Figure::new(points, guides), stem)
}

/// Folding visualization of one RAD layer: an input-side scatter colored by
/// branch label (black outside the band) and an output-side scatter with the
/// same colors plus dashed band-edge guides. Requesting an affine layer is
/// an error.
pub fn export_folding(
    model: &FlowModel,
    data: &[[f64; 2]],
    layer_idx: usize,
    stem: &Path,
) -> Result<Vec<PathBuf>, Error> {
    let Some(layer) = model.layers.get(layer_idx) else {
        return Err(Error::Config(format!(
            "layer {layer_idx} out of range (model has {})",
            model.layers.len()
        )));
    };
    let Layer::Rad(rad) = layer else {
        return Err(Error::Config(format!(
            "layer {layer_idx} is an affine coupling; folding figures need a RAD layer"
        )));
    };
    let coord = rad.split.xform[0];
    let mut input_pts = Vec::with_capacity(data.len());
    let mut output_pts = Vec::with_capacity(data.len());
    let mut bands = Vec::with_capacity(data.len());
    for p in data {
        let (_, trace) = model.log_prob(p);
        let input = if layer_idx == 0 {
            p.to_vec()
        } else {
            trace.layers[layer_idx - 1].z.clone()
        };
        let lt = &trace.layers[layer_idx];
        let color = branch_color(lt.k[0], lt.in_band[0]).to_string();
        input_pts.push((input[0], input[1], color.clone()));
        output_pts.push((lt.z[0], lt.z[1], color));
        let pass: Vec<f64> = rad.split.pass.iter().map(|&i| input[i]).collect();
        bands.push(rad.fold_params(&model.params, &pass)[0].band);
    }
    // dashed guides mark the non-invertible band in output space; the band
    // edge varies with the conditioner, so draw its median over the data
    bands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let band_med = if bands.is_empty() {
        0.0
    } else {
        bands[bands.len() / 2]
    };
    let guides = if coord == 0 {
        vec![Guide::VLine(-band_med), Guide::VLine(band_med)]
    } else {
        vec![Guide::HLine(-band_med), Guide::HLine(band_med)]
    };
    let in_stem = stem.with_file_name(format!(
        "{}_input",
        stem.file_name().unwrap_or_default().to_string_lossy()
    ));
    let out_stem = stem.with_file_name(format!(
        "{}_output",
        stem.file_name().unwrap_or_default().to_string_lossy()
    ));
    let (a, b) = write_figure(&Figure::new(input_pts, vec![]), &in_stem)?;
    let (c, d) = write_figure(&Figure::new(output_pts, guides), &out_stem)?;
    Ok(vec![a, b, c, d])
}

/// Scatter of a generated dataset, colored by mixture-component label.
pub fn export_data(spec: &DatasetSpec, stem: &Path) -> Result<(PathBuf, PathBuf), Error> {
    let batch = generate(spec);
    let labels = batch.labels.unwrap_or_default();
    let points = batch
        .points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| (p[0], p[1], LABEL_COLORS[l % LABEL_COLORS.len()].to_string()))
        .collect();
    write_figure(&Figure::new(points, vec![]), stem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fold::fold_inverse;
    use rand::Rng;

    fn tmp(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("radflow-report-{tag}"));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn table_renders_reference_cells() {
        let cells = vec![
            TableCell {
                problem: Problem::GridGmm,
                kind: ModelKind::Rad,
                ll: Some(-1.20),
            },
            TableCell {
                problem: Problem::GridGmm,
                kind: ModelKind::RealNvp,
                ll: Some(-2.26),
            },
            TableCell {
                problem: Problem::RingGmm,
                kind: ModelKind::Rad,
                ll: Some(3.57),
            },
            TableCell {
                problem: Problem::RingGmm,
                kind: ModelKind::RealNvp,
                ll: Some(1.85),
            },
            TableCell {
                problem: Problem::Spiral,
                kind: ModelKind::Rad,
                ll: Some(0.29),
            },
            TableCell {
                problem: Problem::Spiral,
                kind: ModelKind::RealNvp,
                ll: Some(-0.36),
            },
        ];
        let table = ll_table(&cells);
        assert!(table.contains("grid-gmm"));
        assert!(table.contains("-1.20"));
        assert!(table.contains("-2.26"));
        assert!(table.contains("+1.06")); // grid gap
        assert!(table.contains("+1.72")); // ring gap
        assert!(table.contains("+0.65")); // spiral gap
                                          // problems without results render as dashes, not dropped rows
        assert!(table.contains("two-moons"));
        assert!(table.contains("—"));
    }

    #[test]
    fn table_gap_zero_for_equal_inputs() {
        let cells = vec![
            TableCell {
                problem: Problem::TwoMoons,
                kind: ModelKind::Rad,
                ll: Some(-1.5),
            },
            TableCell {
                problem: Problem::TwoMoons,
                kind: ModelKind::RealNvp,
                ll: Some(-1.5),
            },
        ];
        assert!(ll_table(&cells).contains("+0.00"));
        let csv = ll_table_csv(&cells);
        assert!(csv.contains("two-moons,-1.5,-1.5,0"));
    }

    #[test]
    fn empty_sample_plot_is_valid_svg() {
        let dir = tmp("empty");
        let m = FlowModel::new_rad(2, 1, 4, 0);
        let (svg, csv) = export_samples(&m, 0, 0, &dir.join("s")).unwrap();
        let text = fs::read_to_string(svg).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(!text.contains("circle cx"));
        assert_eq!(fs::read_to_string(csv).unwrap(), "x,y,color\n");
    }

    #[test]
    fn figures_are_byte_deterministic() {
        let dir = tmp("det");
        let m = FlowModel::new_rad(2, 3, 8, 9);
        let (s1, c1) = export_samples(&m, 500, 7, &dir.join("a")).unwrap();
        let (s2, c2) = export_samples(&m, 500, 7, &dir.join("b")).unwrap();
        assert_eq!(fs::read(s1).unwrap(), fs::read(s2).unwrap());
        assert_eq!(fs::read(c1).unwrap(), fs::read(c2).unwrap());
    }

    #[test]
    fn csv_twin_matches_plotted_points() {
        let dir = tmp("twin");
        let m = FlowModel::new_rad(2, 2, 4, 3);
        let (svg, csv) = export_samples(&m, 50, 1, &dir.join("s")).unwrap();
        let svg_text = fs::read_to_string(svg).unwrap();
        let csv_text = fs::read_to_string(csv).unwrap();
        assert_eq!(csv_text.lines().count(), 51); // header + 50 points
        assert_eq!(svg_text.matches("<circle").count(), 50);
    }

    #[test]
    fn identity_model_gaussianization_equals_input() {
        let m = FlowModel::new_realnvp(2, 2, 4, 5); // exact identity at init
        let data = [[0.5, -0.25], [1.5, 2.0], [-3.0, 0.1]];
        let dir = tmp("gauss");
        let (_, csv) = export_gaussianization(&m, &data, &dir.join("g")).unwrap();
        let text = fs::read_to_string(csv).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        for (row, p) in rows.iter().zip(&data) {
            let mut f = row.split(',');
            let x: f64 = f.next().unwrap().parse().unwrap();
            let y: f64 = f.next().unwrap().parse().unwrap();
            assert_eq!(x, p[0]);
            assert_eq!(y, p[1]);
        }
    }

    #[test]
    fn gaussianization_coloring_is_pure_in_input() {
        let b = Bounds {
            x_min: -1.0,
            x_max: 1.0,
            y_min: -1.0,
            y_max: 1.0,
        };
        assert_eq!(position_color(0.3, -0.2, &b), position_color(0.3, -0.2, &b));
        assert_ne!(position_color(-0.9, 0.0, &b), position_color(0.9, 0.0, &b));
    }

    #[test]
    fn folding_rejects_affine_layer() {
        let m = FlowModel::new_realnvp(2, 2, 4, 5);
        let dir = tmp("fold-affine");
        let err = export_folding(&m, &[[0.0, 0.0]], 0, &dir.join("f")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn folding_far_points_are_all_black() {
        let mut m = FlowModel::new_rad(2, 1, 4, 2);
        let mut rng = StdRng::seed_from_u64(3);
        for p in m.params.iter_mut() {
            *p += rng.gen_range(-0.2..0.2);
        }
        let data = [[0.1, 500.0], [0.2, -400.0], [-0.1, 900.0]];
        let dir = tmp("fold-black");
        let paths = export_folding(&m, &data, 0, &dir.join("f")).unwrap();
        let csv = fs::read_to_string(&paths[1]).unwrap();
        for line in csv.lines().skip(1) {
            assert!(line.ends_with(",black"), "line {line}");
        }
        // input point and its fold image carry identical colors
        let out_csv = fs::read_to_string(&paths[3]).unwrap();
        for (a, b) in csv.lines().skip(1).zip(out_csv.lines().skip(1)) {
            assert_eq!(a.split(',').nth(2), b.split(',').nth(2));
        }
    }

    #[test]
    fn three_preimages_fold_to_same_output() {
        let mut m = FlowModel::new_rad(2, 1, 8, 11);
        let mut rng = StdRng::seed_from_u64(4);
        for p in m.params.iter_mut() {
            *p += rng.gen_range(-0.3..0.3);
        }
        let Layer::Rad(rad) = &m.layers[0] else {
            unreachable!()
        };
        let x1 = 0.2;
        let fp = &rad.fold_params(&m.params, &[x1])[0];
        let z_target = 0.5 * fp.band;
        let preimages: Vec<[f64; 2]> = (1..=3u8)
            .map(|k| [x1, fold_inverse(z_target, k, fp)])
            .collect();
        let dir = tmp("fold-overlap");
        let paths = export_folding(&m, &preimages, 0, &dir.join("f")).unwrap();
        let out_csv = fs::read_to_string(&paths[3]).unwrap();
        let ys: Vec<f64> = out_csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(ys.len(), 3);
        for y in &ys {
            assert!((y - ys[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn data_figure_writes_both_outputs() {
        let dir = tmp("data");
        let spec = DatasetSpec::new(Problem::RingGmm, 200, 0);
        let (svg, csv) = export_data(&spec, &dir.join("d")).unwrap();
        assert!(svg.exists());
        assert!(fs::read_to_string(csv).unwrap().lines().count() == 201);
    }
}
