//! DOTA text formats and the large-image tiling protocol.
//!
//! Annotation lines are `x1 y1 x2 y2 x3 y3 x4 y4 category difficult`;
//! Task1 result lines are `image score x1 y1 x2 y2 x3 y3 x4 y4`, one file
//! per class named `Task1_<class>.txt`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{intersection_area, Quad, EPS_AREA};
use crate::postprocess::{rotated_nms, Detection};

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub quad: Quad,
    pub category: String,
    pub difficult: bool,
}

fn parse_coords(tokens: &[&str], line: usize) -> Result<[f64; 8]> {
    let mut c = [0.0; 8];
    for (slot, tok) in c.iter_mut().zip(tokens) {
        *slot = tok.parse::<f64>().map_err(|_| Error::Parse {
            line,
            msg: format!("bad coordinate '{tok}'"),
        })?;
        if !slot.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("non-finite coordinate '{tok}'"),
            });
        }
    }
    Ok(c)
}

/// Parses a DOTA v1.0 label file. `imagesource`/`gsd` header lines and blank
/// lines are skipped. Line numbers in errors are 1-based.
pub fn parse_dota_annotation(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with("imagesource") || line.starts_with("gsd") {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 10 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 10 fields, found {}", toks.len()),
            });
        }
        let coords = parse_coords(&toks[..8], i + 1)?;
        let difficult = match toks[9] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("difficulty flag must be 0 or 1, got '{other}'"),
                })
            }
        };
        out.push(Annotation {
            quad: Quad::from_coords(coords),
            category: toks[8].to_string(),
            difficult,
        });
    }
    Ok(out)
}

/// Writes annotations back in DOTA form, coordinates with 6 decimals.
pub fn format_dota_annotation(annots: &[Annotation]) -> String {
    let mut s = String::new();
    for a in annots {
        for c in a.quad.coords() {
            let _ = write!(s, "{c:.6} ");
        }
        let _ = writeln!(s, "{} {}", a.category, u8::from(a.difficult));
    }
    s
}

/// One line of a Task1 result file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub image: String,
    pub score: f64,
    pub quad: Quad,
}

pub fn format_result_line(image: &str, score: f64, q: &Quad) -> String {
    let mut s = format!("{image} {score:.4}");
    for c in q.coords() {
        let _ = write!(s, " {c:.2}");
    }
    s
}

pub fn parse_dota_results(text: &str) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 10 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 10 fields, found {}", toks.len()),
            });
        }
        let score = toks[1].parse::<f64>().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("bad score '{}'", toks[1]),
        })?;
        out.push(ResultRecord {
            image: toks[0].to_string(),
            score,
            quad: Quad::from_coords(parse_coords(&toks[2..], i + 1)?),
        });
    }
    Ok(out)
}

/// Task1 result files, one per class in `class_names` order, as
/// `(file name, contents)`. Images keep the given order. Detections with an
/// out-of-range class id are dropped.
pub fn write_dota_results(
    per_image: &[(String, Vec<Detection>)],
    class_names: &[String],
) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = class_names
        .iter()
        .map(|c| (format!("Task1_{c}.txt"), String::new()))
        .collect();
    for (image, dets) in per_image {
        for d in dets {
            match files.get_mut(d.class_id) {
                Some((_, body)) => {
                    body.push_str(&format_result_line(image, d.score, &d.quad));
                    body.push('\n');
                }
                None => log::warn!("detection with unknown class id {} dropped", d.class_id),
            }
        }
    }
    files
}

/// A patch of a larger image, in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Window {
    pub fn quad(&self) -> Quad {
        let (x0, y0) = (self.x0 as f64, self.y0 as f64);
        let (x1, y1) = (x0 + self.w as f64, y0 + self.h as f64);
        Quad::from_coords([x0, y0, x1, y0, x1, y1, x0, y1])
    }
}

fn axis_positions(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    if dim <= patch {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut pos = 0;
    loop {
        if pos + patch >= dim {
            let last = dim - patch;
            if out.last() != Some(&last) {
                out.push(last);
            }
            break;
        }
        out.push(pos);
        pos += stride;
    }
    out
}

/// Sliding windows of `patch` pixels stepping by `patch - overlap`; the last
/// window on each axis is pulled back inside the image. Row-major order.
pub fn split_windows(
    width: usize,
    height: usize,
    patch: usize,
    overlap: usize,
) -> Result<Vec<Window>> {
    if patch <= overlap {
        return Err(Error::invalid(format!(
            "patch ({patch}) must exceed overlap ({overlap})"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("image has zero size"));
    }
    let stride = patch - overlap;
    let xs = axis_positions(width, patch, stride);
    let ys = axis_positions(height, patch, stride);
    let (w, h) = (patch.min(width), patch.min(height));
    Ok(ys
        .iter()
        .flat_map(|&y0| xs.iter().map(move |&x0| Window { x0, y0, w, h }))
        .collect())
}

/// Annotations seen by one window, translated into window coordinates.
/// Objects are kept whole (coordinates may leave the window); those with
/// less than `keep_ratio` of their area inside are marked difficult, and
/// those with nothing inside are dropped.
pub fn remap_annotations_to_window(
    annots: &[Annotation],
    win: &Window,
    keep_ratio: f64,
) -> Vec<Annotation> {
    let wq = win.quad();
    let mut out = Vec::new();
    for a in annots {
        let area = a.quad.area();
        if area <= EPS_AREA {
            log::warn!("zero-area {} annotation ignored", a.category);
            continue;
        }
        let inside = match intersection_area(&a.quad, &wq) {
            Ok(v) => v / area,
            Err(e) => {
                log::warn!("{} annotation ignored: {e}", a.category);
                continue;
            }
        };
        if inside <= 0.0 {
            continue;
        }
        out.push(Annotation {
            quad: a.quad.translate(-(win.x0 as f64), -(win.y0 as f64)),
            category: a.category.clone(),
            difficult: a.difficult || inside < keep_ratio,
        });
    }
    out
}

/// Moves per-window detections back to image coordinates and removes
/// cross-window duplicates with class-wise rotated NMS.
pub fn merge_patch_detections(
    per_window: &[(Window, Vec<Detection>)],
    iou_threshold: f64,
) -> Vec<Detection> {
    let all: Vec<Detection> = per_window
        .iter()
        .flat_map(|(w, dets)| {
            dets.iter().map(move |d| Detection {
                quad: d.quad.translate(w.x0 as f64, w.y0 as f64),
                ..*d
            })
        })
        .collect();
    rotated_nms(&all, iou_threshold)
}

/// Name of a patch cut from `stem` at `win`.
pub fn tile_name(stem: &str, win: &Window) -> String {
    format!("{stem}__{}__{}", win.x0, win.y0)
}

/// Inverse of [`tile_name`].
pub fn parse_tile_name(name: &str) -> Option<(&str, usize, usize)> {
    let mut it = name.rsplitn(3, "__");
    let y0 = it.next()?.parse().ok()?;
    let x0 = it.next()?.parse().ok()?;
    let stem = it.next()?;
    Some((stem, x0, y0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_record() {
        let a = parse_dota_annotation("0 0 2 0 2 1 0 1 plane 0\n").unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(
            a[0].quad,
            Quad::from_coords([0.0, 0.0, 2.0, 0.0, 2.0, 1.0, 0.0, 1.0])
        );
        assert_eq!(a[0].category, "plane");
        assert!(!a[0].difficult);
    }

    #[test]
    fn parse_skips_headers() {
        let t = "imagesource:GoogleEarth\ngsd:0.5\n1 1 3 1 3 2 1 2 ship 1\n";
        let a = parse_dota_annotation(t).unwrap();
        assert_eq!(a.len(), 1);
        assert!(a[0].difficult);
    }

    #[test]
    fn parse_errors_carry_line() {
        let e = parse_dota_annotation("gsd:1\n0 0 2 0 2 1 0 plane 0\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e:?}");
        let e = parse_dota_annotation("0 0 x 0 2 1 0 1 plane 0").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn results_round_trip() {
        let q = Quad::from_coords([10.123, 20.456, 30.0, 20.0, 30.0, 40.0, 10.0, 40.0]);
        let dets = vec![Detection {
            class_id: 1,
            score: 0.87654,
            quad: q,
        }];
        let files = write_dota_results(
            &[("P0001".to_string(), dets)],
            &["plane".into(), "ship".into()],
        );
        assert_eq!(files[0], ("Task1_plane.txt".to_string(), String::new()));
        assert_eq!(
            files[1].1,
            "P0001 0.8765 10.12 20.46 30.00 20.00 30.00 40.00 10.00 40.00\n"
        );
        let back = parse_dota_results(&files[1].1).unwrap();
        assert_eq!(back[0].image, "P0001");
        assert!((back[0].score - 0.87654).abs() < 5e-5);
        assert!(back[0].quad.max_vertex_dist(&q) < 0.01);

        let empty = write_dota_results(&[], &["plane".into()]);
        assert_eq!(empty, vec![("Task1_plane.txt".to_string(), String::new())]);
    }

    #[test]
    fn windows() {
        assert_eq!(split_windows(1024, 1024, 1024, 200).unwrap().len(), 1);
        let w = split_windows(2048, 2048, 1024, 200).unwrap();
        assert_eq!(w.len(), 9);
        let mut xs: Vec<usize> = w.iter().map(|w| w.x0).collect();
        xs.sort();
        xs.dedup();
        assert_eq!(xs, vec![0, 824, 1024]);
        assert!(w.iter().all(|w| w.w == 1024 && w.h == 1024));
        let small = split_windows(500, 500, 1024, 200).unwrap();
        assert_eq!(
            small,
            vec![Window {
                x0: 0,
                y0: 0,
                w: 500,
                h: 500
            }]
        );
        assert!(matches!(
            split_windows(100, 100, 200, 200),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn remap_rules() {
        let win = Window {
            x0: 100,
            y0: 100,
            w: 100,
            h: 100,
        };
        let mk = |x: f64, y: f64| Annotation {
            quad: Quad::from_coords([x, y, x + 10.0, y, x + 10.0, y + 10.0, x, y + 10.0]),
            category: "car".into(),
            difficult: false,
        };
        let inside = remap_annotations_to_window(&[mk(120.0, 130.0)], &win, 0.7);
        assert_eq!(inside.len(), 1);
        assert_eq!(inside[0].quad.v[0].x, 20.0);
        assert!(!inside[0].difficult);
        assert!(remap_annotations_to_window(&[mk(0.0, 0.0)], &win, 0.7).is_empty());
        let half = remap_annotations_to_window(&[mk(195.0, 150.0)], &win, 0.7);
        assert_eq!(half.len(), 1);
        assert!(half[0].difficult);
        assert_eq!(half[0].quad.v[1].x, 105.0);
    }

    #[test]
    fn merge_rules() {
        let q = Quad::from_coords([0.0, 0.0, 10.0, 0.0, 10.0, 10.0, 0.0, 10.0]);
        let d = Detection {
            class_id: 0,
            score: 1.0,
            quad: q,
        };
        let w0 = Window {
            x0: 0,
            y0: 0,
            w: 100,
            h: 100,
        };
        let w1 = Window {
            x0: 50,
            y0: 0,
            w: 100,
            h: 100,
        };
        let one = merge_patch_detections(&[(w1, vec![d])], 0.3);
        assert_eq!(one[0].quad, q.translate(50.0, 0.0));
        // the same object seen from both windows
        let dup = merge_patch_detections(
            &[
                (w0, vec![d]),
                (
                    w1,
                    vec![Detection {
                        quad: q.translate(-50.0, 0.0),
                        ..d
                    }],
                ),
            ],
            0.3,
        );
        assert_eq!(dup.len(), 1);
        let two = merge_patch_detections(&[(w0, vec![d]), (w1, vec![d])], 0.3);
        assert_eq!(two.len(), 2);
    }

    #[test]
    fn tile_names() {
        let w = Window {
            x0: 824,
            y0: 0,
            w: 1024,
            h: 1024,
        };
        let n = tile_name("P00__12", &w);
        assert_eq!(n, "P00__12__824__0");
        assert_eq!(parse_tile_name(&n), Some(("P00__12", 824, 0)));
        assert_eq!(parse_tile_name("P0001"), None);
    }
}
