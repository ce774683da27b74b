//! Lesion-level FROC and slide-level ROC scoring.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_json, write_json, Error, Result};
use crate::postproc::{write_text, Detection};

/// False-positive rates (per slide) at which sensitivity is averaged.
pub const FROC_RATES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlideLabel {
    Normal,
    Tumor,
}

/// Closed polygon, vertices `[x, y]` in level-0 pixels.
pub type Polygon = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionAnnotation {
    pub slide_id: String,
    #[serde(default)]
    pub polygons: Vec<Polygon>,
    /// Derived from `polygons` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<SlideLabel>,
}

impl LesionAnnotation {
    pub fn new(slide_id: impl Into<String>, polygons: Vec<Polygon>) -> Self {
        let label = if polygons.is_empty() {
            SlideLabel::Normal
        } else {
            SlideLabel::Tumor
        };
        LesionAnnotation {
            slide_id: slide_id.into(),
            polygons,
            label: Some(label),
        }
    }

    pub fn slide_label(&self) -> SlideLabel {
        self.label.unwrap_or(if self.polygons.is_empty() {
            SlideLabel::Normal
        } else {
            SlideLabel::Tumor
        })
    }

    /// Index of the first polygon containing the point.
    pub fn lesion_at(&self, x: f64, y: f64) -> Option<usize> {
        self.polygons.iter().position(|p| point_in_polygon(p, x, y))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: LesionAnnotation = read_json(path)?;
        if a.label == Some(SlideLabel::Normal) && !a.polygons.is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "normal slide carries lesion polygons".into(),
            });
        }
        if a.label == Some(SlideLabel::Tumor) && a.polygons.is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "tumor slide has no lesion polygons".into(),
            });
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn on_segment(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> bool {
    let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    if cross != 0.0 {
        return false;
    }
    x >= a[0].min(b[0]) && x <= a[0].max(b[0]) && y >= a[1].min(b[1]) && y <= a[1].max(b[1])
}

/// Even-odd containment; points on an edge count as inside.
pub fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if on_segment(a, b, x, y) {
            return true;
        }
        if (a[1] > y) != (b[1] > y) {
            let xi = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if x < xi {
                inside = !inside;
            }
        }
    }
    inside
}

/// Shoelace area.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    s.abs() / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub threshold: f32,
    pub avg_fp: f64,
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocResult {
    /// One point per distinct detection score, threshold descending.
    pub points: Vec<FrocPoint>,
    /// Sensitivity at each of [`FROC_RATES`].
    pub rate_sensitivities: Vec<f64>,
    pub score: f64,
    pub lesions: usize,
    pub slides: usize,
}

/// Mean sensitivity at the fixed FP rates, taking for each rate the best
/// sensitivity among points with `avg_fp <= rate` (0 if none).
pub fn froc_score(points: &[FrocPoint]) -> (Vec<f64>, f64) {
    let per_rate: Vec<f64> = FROC_RATES
        .iter()
        .map(|&rate| {
            points
                .iter()
                .filter(|p| p.avg_fp <= rate)
                .map(|p| p.sensitivity)
                .fold(0.0, f64::max)
        })
        .collect();
    let score = per_rate.iter().sum::<f64>() / per_rate.len() as f64;
    (per_rate, score)
}

/// FROC over all annotated slides.
///
/// At threshold `t` a lesion is hit when some detection with score `>= t`
/// lies in its polygon; detections `>= t` inside no polygon are false
/// positives. Extra detections in an already-hit lesion are neither.
pub fn froc(
    detections: &BTreeMap<String, Vec<Detection>>,
    annotations: &[LesionAnnotation],
) -> Result<FrocResult> {
    let by_id: HashMap<&str, (usize, &LesionAnnotation)> = annotations
        .iter()
        .enumerate()
        .map(|(k, a)| (a.slide_id.as_str(), (k, a)))
        .collect();
    // (score, Some(lesion key) | None for FP)
    let mut events: Vec<(f32, Option<(usize, usize)>)> = Vec::new();
    for (id, dets) in detections {
        let &(slide_idx, ann) = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::UnknownSlide(id.clone()))?;
        for d in dets {
            let hit = ann
                .lesion_at(d.x as f64, d.y as f64)
                .map(|lesion| (slide_idx, lesion));
            events.push((d.score, hit));
        }
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));

    let lesions: usize = annotations.iter().map(|a| a.polygons.len()).sum();
    let slides = annotations.len().max(1);
    let mut hit: HashSet<(usize, usize)> = HashSet::new();
    let mut fps = 0usize;
    let mut points = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            match events[i].1 {
                Some(key) => {
                    hit.insert(key);
                }
                None => fps += 1,
            }
            i += 1;
        }
        points.push(FrocPoint {
            threshold: t,
            avg_fp: fps as f64 / slides as f64,
            sensitivity: if lesions == 0 {
                0.0
            } else {
                hit.len() as f64 / lesions as f64
            },
        });
    }
    let (rate_sensitivities, score) = froc_score(&points);
    Ok(FrocResult {
        points,
        rate_sensitivities,
        score,
        lesions,
        slides: annotations.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<[f64; 2]>,
    pub auc: f64,
}

/// Trapezoidal ROC AUC; tied scores move along the diagonal, which equals
/// the Mann-Whitney statistic with ties counted as one half.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![[0.0, 0.0]];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push([fp as f64 / neg as f64, tp as f64 / pos as f64]);
    }
    Ok(RocResult {
        points,
        auc: auc / (pos as f64 * neg as f64),
    })
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(roc(scores, labels)?.auc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub froc: f64,
    pub auc: Option<f64>,
    pub per_rate_sensitivities: Vec<f64>,
    pub lesions: usize,
    pub slides: usize,
}

fn svg_polyline(points: &[[f64; 2]], x_max: f64, x_label: &str, y_label: &str) -> String {
    let (w, h, m) = (480.0, 360.0, 48.0);
    let sx = |x: f64| m + (x / x_max).clamp(0.0, 1.0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - y.clamp(0.0, 1.0) * (h - 2.0 * m);
    let path: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
        .collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"12\">{x_label} (max {x_max})</text>\n\
         <text x=\"12\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 12 {cy})\">{y_label}</text>\n\
         <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{pts}\"/>\n\
         </svg>\n",
        b = h - m,
        r = w - m,
        cx = w / 2.0,
        ty = h - 12.0,
        cy = h / 2.0,
        pts = path.join(" ")
    )
}

/// Writes `{stem}.csv` (`avg_fp,sensitivity`) and `{stem}.svg`.
pub fn export_froc(result: &FrocResult, dir: &Path, stem: &str) -> Result<()> {
    let mut csv = String::from("avg_fp,sensitivity\n");
    let mut pts = vec![[0.0, 0.0]];
    for p in &result.points {
        csv.push_str(&format!("{},{}\n", p.avg_fp, p.sensitivity));
        pts.push([p.avg_fp, p.sensitivity]);
    }
    write_text(&dir.join(format!("{stem}.csv")), &csv)?;
    let x_max = FROC_RATES[FROC_RATES.len() - 1];
    write_text(
        &dir.join(format!("{stem}.svg")),
        &svg_polyline(&pts, x_max, "average FPs per slide", "sensitivity"),
    )
}

/// Writes `{stem}.csv` (`fpr,tpr`) and `{stem}.svg`.
pub fn export_roc(result: &RocResult, dir: &Path, stem: &str) -> Result<()> {
    let mut csv = String::from("fpr,tpr\n");
    for p in &result.points {
        csv.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    write_text(&dir.join(format!("{stem}.csv")), &csv)?;
    write_text(
        &dir.join(format!("{stem}.svg")),
        &svg_polyline(&result.points, 1.0, "false positive rate", "true positive rate"),
    )
}
