use rayon::prelude::*;
use serde::Serialize;

use super::svm::{average_scores, svm_predict, Prediction, SvmModel};
use crate::error::{MopError, Result};
use crate::imaging::{apply_transform, crop, resize_bilinear, ten_crop, ImageTensor, TransformKind, TransformSpec, NORMALIZED_SIDE};
use crate::patchgrid::{sliding_windows, PatchSpec};

/// Side lengths searched by [`best_window`] by default.
pub const DEFAULT_WINDOW_SIDES: [usize; 4] = [224, 192, 160, 128];
pub const DEFAULT_WINDOW_STRIDE: usize = 16;

/// Scale 1.0 to 2.0 in steps of 0.2, horizontal and vertical translation
/// from -40 to 40 pixels in steps of 10, one flip, and rotation from -20 to
/// 20 degrees in steps of 5.
pub fn default_sweep() -> Vec<TransformSpec> {
    let mut out = Vec::new();
    for i in 0..=5 {
        out.push(TransformSpec { kind: TransformKind::Scale, parameter: (10 + 2 * i) as f64 / 10.0 });
    }
    for kind in [TransformKind::TranslateH, TransformKind::TranslateV] {
        for t in (-40..=40).step_by(10) {
            out.push(TransformSpec { kind, parameter: t as f64 });
        }
    }
    out.push(TransformSpec::flip());
    for r in (-20..=20).step_by(5) {
        out.push(TransformSpec { kind: TransformKind::Rotate, parameter: r as f64 });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvarianceRow {
    pub kind: TransformKind,
    pub parameter: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceTable {
    /// Accuracy on the untransformed test images.
    pub baseline: f64,
    pub rows: Vec<InvarianceRow>,
}

/// Classification accuracy of `model` on `images` after each transform.
///
/// `featurize` maps a normalized frame to the classifier's feature vector.
pub fn invariance_sweep<F, S>(
    model: &SvmModel,
    images: &[ImageTensor],
    labels: &[S],
    sweep: &[TransformSpec],
    featurize: F,
) -> Result<InvarianceTable>
where
    F: Fn(&ImageTensor) -> Result<Vec<f64>> + Sync,
    S: AsRef<str> + Sync,
{
    if images.len() != labels.len() || images.is_empty() {
        return Err(MopError::invalid(format!(
            "{} test images for {} labels",
            images.len(),
            labels.len()
        )));
    }
    for t in sweep {
        t.validate()?;
    }
    let accuracy_under = |t: Option<&TransformSpec>| -> Result<f64> {
        let hits = images
            .par_iter()
            .zip(labels.par_iter())
            .map(|(img, label)| {
                let f = match t {
                    Some(t) => featurize(&apply_transform(img, t)?)?,
                    None => featurize(img)?,
                };
                let p = svm_predict(model, &f)?;
                Ok(usize::from(model.classes[p.class_index] == label.as_ref()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(hits.iter().sum::<usize>() as f64 / images.len() as f64)
    };
    let baseline = accuracy_under(None)?;
    let rows = sweep
        .iter()
        .map(|t| {
            Ok(InvarianceRow {
                kind: t.kind,
                parameter: t.parameter,
                accuracy: accuracy_under(Some(t))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InvarianceTable { baseline, rows })
}

/// Scores the ten crops of `img`, each resampled to the normalized frame,
/// and averages them.
pub fn ten_crop_classify<F>(model: &SvmModel, img: &ImageTensor, crop_side: usize, featurize: F) -> Result<Prediction>
where
    F: Fn(&ImageTensor) -> Result<Vec<f64>>,
{
    let per_crop = ten_crop(img, crop_side)?
        .iter()
        .map(|c| {
            let frame = resize_bilinear(c, NORMALIZED_SIDE, NORMALIZED_SIDE)?;
            model.scores(&featurize(&frame)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(average_scores(&per_crop))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowHit {
    pub window: PatchSpec,
    pub score: f64,
    pub windows_scored: usize,
}

/// Sliding window with the highest score for `target_class`.
///
/// Windows are enumerated by side (largest first) then row-major; each is
/// cropped, resampled to the normalized frame and featurized. Ties go to the
/// earliest window.
pub fn best_window<F>(
    model: &SvmModel,
    img: &ImageTensor,
    sides: &[usize],
    stride: usize,
    target_class: usize,
    featurize: F,
) -> Result<WindowHit>
where
    F: Fn(&ImageTensor) -> Result<Vec<f64>> + Sync,
{
    if img.width() != img.height() {
        return Err(MopError::invalid(format!(
            "window search expects a square frame, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    if target_class >= model.num_classes() {
        return Err(MopError::invalid(format!(
            "target class {target_class} out of range for {} classes",
            model.num_classes()
        )));
    }
    let windows = sliding_windows(img.width(), sides, stride)?;
    let scores = windows
        .par_iter()
        .map(|w| {
            let patch = crop(img, w.x, w.y, w.side, w.side)?;
            let frame = resize_bilinear(&patch, NORMALIZED_SIDE, NORMALIZED_SIDE)?;
            Ok(model.scores(&featurize(&frame)?)?[target_class])
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(WindowHit {
        window: windows[best],
        score: scores[best],
        windows_scored: windows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sweep_shape() {
        let s = default_sweep();
        let count = |k| s.iter().filter(|t| t.kind == k).count();
        assert_eq!(count(TransformKind::Scale), 6);
        assert_eq!(count(TransformKind::TranslateH), 9);
        assert_eq!(count(TransformKind::TranslateV), 9);
        assert_eq!(count(TransformKind::Flip), 1);
        assert_eq!(count(TransformKind::Rotate), 9);
        assert!(s.iter().all(|t| t.validate().is_ok()));
        assert!((s[5].parameter - 2.0).abs() < 1e-12);
    }

    fn mean_model() -> SvmModel {
        SvmModel {
            classes: vec!["dark".into(), "light".into()],
            weights: vec![vec![-1.0], vec![1.0]],
            biases: vec![0.5, -0.5],
        }
    }

    fn mean_feature(img: &ImageTensor) -> Result<Vec<f64>> {
        let g = img.to_gray_unit();
        Ok(vec![g.iter().sum::<f64>() / g.len() as f64])
    }

    #[test]
    fn identity_cells_match_baseline() {
        let imgs: Vec<_> = (0..6)
            .map(|i| ImageTensor::from_fn(32, 32, 1, |x, y, _| ((x + y) * 4 + i * 30) as u8).unwrap())
            .collect();
        let labels: Vec<&str> = imgs
            .iter()
            .map(|im| if mean_feature(im).unwrap()[0] > 0.5 { "light" } else { "dark" })
            .collect();
        let sweep = vec![
            TransformSpec { kind: TransformKind::Scale, parameter: 1.0 },
            TransformSpec { kind: TransformKind::Rotate, parameter: 0.0 },
            TransformSpec::flip(),
        ];
        let t = invariance_sweep(&mean_model(), &imgs, &labels, &sweep, mean_feature).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0].accuracy, t.baseline);
        assert_eq!(t.rows[1].accuracy, t.baseline);
        assert_eq!(t.baseline, 1.0);
    }

    #[test]
    fn single_window_is_global() {
        let img = ImageTensor::filled(256, 256, 1, 200).unwrap();
        let hit = best_window(&mean_model(), &img, &[256], 16, 1, mean_feature).unwrap();
        assert_eq!(hit.windows_scored, 1);
        assert_eq!((hit.window.x, hit.window.y, hit.window.side), (0, 0, 256));
        let expected = 200.0 / 255.0 - 0.5;
        assert!((hit.score - expected).abs() < 1e-12);
    }

    #[test]
    fn brightest_quadrant_wins() {
        let img = ImageTensor::from_fn(256, 256, 1, |x, y, _| if x >= 128 && y >= 128 { 255 } else { 0 }).unwrap();
        let hit = best_window(&mean_model(), &img, &DEFAULT_WINDOW_SIDES, DEFAULT_WINDOW_STRIDE, 1, mean_feature).unwrap();
        assert_eq!(hit.windows_scored, 164);
        assert_eq!((hit.window.x, hit.window.y, hit.window.side), (128, 128, 128));
    }
}
