//! Browser demo: augmentation preview, label-noise audit and schedule plot.
//!
//! Build with `wasm-pack build crates/demo --target web --out-dir www/pkg`
//! and serve `crates/demo/www/`.

use wasm_bindgen::prelude::*;

use comatch::augment::{rand_augment_traced, weak_augment, AugmentationPolicy, TransformKind};
use comatch::cotrain::{lr_schedule, rate_schedule, Algorithm, TrainConfig};
use comatch::datanoise::{
    build_transition_matrix, corrupt_labels, noise_audit, LabeledDataset, NoiseModel, Split, SynthSpec,
};
use comatch::lab::{render_curves, Panel, Series};
use comatch::ndgrad::Tensor;
use comatch::seed;
use comatch::Error;

pub const PREVIEW_SIDE: usize = 16;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_bytes(t: &Tensor<f32>) -> impl Iterator<Item = u8> + '_ {
    t.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Original, weak and strong views of one synthetic sample.
pub struct Preview {
    /// Three `PREVIEW_SIDE²` grayscale images, one after the other.
    pub pixels: Vec<u8>,
    /// One line per applied transform.
    pub trace: Vec<String>,
}

pub fn preview(class: usize, sample: u64, pad: usize, transforms: &str, m: usize) -> comatch::Result<Preview> {
    let set = transforms
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| TransformKind::from_name(s).ok_or_else(|| Error::Validation(format!("unknown transform {s:?}"))))
        .collect::<comatch::Result<Vec<_>>>()?;
    let spec = SynthSpec::new(4, 1, PREVIEW_SIDE, sample);
    if class >= spec.class_count {
        return Err(Error::Validation(format!("class must be < {}", spec.class_count)));
    }
    let data = spec.generate()?;
    let image = data.image(class);
    let mut rng = seed::stream(sample, &[class as u64]);
    let weak = weak_augment(&image, pad, &mut rng)?;
    let policy = AugmentationPolicy::strong(pad, set, m);
    let (strong, trace) = rand_augment_traced(&image, &policy, &mut rng)?;
    let pixels = to_bytes(&image).chain(to_bytes(&weak)).chain(to_bytes(&strong)).collect();
    let trace = trace
        .steps
        .iter()
        .map(|s| match s.center {
            Some((cy, cx)) => format!("{} at ({cy:.1}, {cx:.1})", s.kind),
            None => format!("{} {:.3}", s.kind, s.magnitude),
        })
        .collect();
    Ok(Preview { pixels, trace })
}

/// Flattened theoretical `Q`, then the empirical `Q` of `n` corrupted
/// labels, then the realized flip rate.
pub fn noise_table(asymmetric: bool, epsilon: f64, classes: usize, n: usize, seed: u64) -> comatch::Result<Vec<f64>> {
    let model = if asymmetric {
        NoiseModel::Asymmetric
    } else {
        NoiseModel::Symmetric
    };
    let pairs: Vec<(usize, usize)> = (0..classes).map(|c| (c, (c + 1) % classes)).collect();
    let q = build_transition_matrix(model, epsilon, classes, asymmetric.then_some(pairs.as_slice()))?;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let data = LabeledDataset::new(Tensor::zeros([n, 1, 1, 1]), labels, classes, Split::Train)?;
    let audit = noise_audit(&corrupt_labels(&data, &q, seed)?)?;
    let mut out: Vec<f64> = q.rows().iter().flatten().copied().collect();
    out.extend(audit.empirical_q.iter().flatten());
    out.push(audit.realized_flip_rate);
    Ok(out)
}

/// Keep ratio and learning rate over training, as an SVG document.
pub fn schedule_plot(epochs: usize, t_k: usize, tau: f64, lr: f64, decay_start: usize) -> comatch::Result<String> {
    let cfg = TrainConfig {
        epochs,
        t_k,
        lr,
        lr_decay_start: decay_start,
        ..TrainConfig::recipe(Algorithm::CoMatching, tau)
    };
    cfg.validate()?;
    let series = |name: &str, f: &dyn Fn(usize) -> f64| Series {
        name: name.into(),
        points: (1..=epochs).map(|t| (t as f64, f(t))).collect(),
    };
    let panels = [
        Panel {
            title: "Keep ratio R(t)".into(),
            x_label: "epoch".into(),
            y_label: "R".into(),
            y_range: Some([0.0, 1.0]),
            series: vec![series("R", &|t| rate_schedule(t - 1, t_k, tau))],
        },
        Panel {
            title: "Learning rate".into(),
            x_label: "epoch".into(),
            y_label: "lr".into(),
            y_range: Some([0.0, lr]),
            series: vec![series("lr", &|t| lr_schedule(t - 1, &cfg))],
        },
    ];
    Ok(render_curves(&panels))
}

#[wasm_bindgen]
pub struct AugmentPreview {
    inner: Preview,
}

#[wasm_bindgen]
impl AugmentPreview {
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        PREVIEW_SIDE
    }

    /// Original, weak and strong images as consecutive grayscale planes.
    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.inner.pixels.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn trace(&self) -> String {
        self.inner.trace.join("\n")
    }
}

#[wasm_bindgen]
pub fn augment_preview(
    class: usize,
    sample: u32,
    pad: usize,
    transforms: &str,
    m: usize,
) -> Result<AugmentPreview, JsError> {
    preview(class, sample as u64, pad, transforms, m)
        .map(|inner| AugmentPreview { inner })
        .map_err(js)
}

#[wasm_bindgen]
pub fn transition_audit(asymmetric: bool, epsilon: f64, classes: usize, n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    noise_table(asymmetric, epsilon, classes, n, seed as u64).map_err(js)
}

#[wasm_bindgen]
pub fn schedule_svg(epochs: usize, t_k: usize, tau: f64, lr: f64, decay_start: usize) -> Result<String, JsError> {
    schedule_plot(epochs, t_k, tau, lr, decay_start).map_err(js)
}

#[wasm_bindgen]
pub fn transform_names() -> String {
    TransformKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_has_three_planes_and_a_trace() {
        let p = preview(2, 7, 2, "Rotate, Solarize", 2).unwrap();
        assert_eq!(p.pixels.len(), 3 * PREVIEW_SIDE * PREVIEW_SIDE);
        assert_eq!(p.trace.len(), 2);
        assert_eq!(preview(2, 7, 2, "Rotate, Solarize", 2).unwrap().pixels, p.pixels);
        assert!(preview(9, 7, 2, "Rotate", 1).is_err());
        assert!(preview(0, 7, 2, "Warp", 1).is_err());
    }

    #[test]
    fn noise_table_layout() {
        let t = noise_table(false, 0.4, 5, 5000, 1).unwrap();
        assert_eq!(t.len(), 2 * 25 + 1);
        assert_eq!(t[0], 0.6);
        assert!((t[1] - 0.1).abs() < 1e-12);
        assert!((t[50] - 0.4).abs() < 0.03);
        let a = noise_table(true, 0.3, 4, 400, 1).unwrap();
        assert_eq!(a[2], 0.0);
        assert_eq!(a[16 + 2], 0.0);
    }

    #[test]
    fn schedule_plot_draws_two_lines() {
        let svg = schedule_plot(200, 10, 0.5, 0.001, 80).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(schedule_plot(10, 0, 0.5, 0.001, 5).is_err());
    }
}
