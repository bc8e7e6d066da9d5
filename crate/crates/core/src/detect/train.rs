use rand::seq::SliceRandom;

use super::anchors::{assign, encode, Assignment};
use super::{DetectorEpochLoss, DetectorModel};
use crate::dataset::Annotation;
use crate::degrade::{affine_augment_annotated, AffineSampler, Image};
use crate::error::{Error, Result};
use crate::nn::{Adam, Shape, Tape, Tensor};
use crate::seed::rng_for;

const SMOOTH_L1_BETA: f32 = 1.0 / 9.0;

struct Targets {
    cls: Vec<u32>,
    cls_weight: Vec<f32>,
    reg: Tensor,
    reg_weight: Vec<f32>,
}

/// Dense targets for a batch. Positives and negatives are each averaged
/// over the batch, so both sets carry equal total weight.
fn build_targets(model: &DetectorModel, batch: &[&[Annotation]], fh: usize, fw: usize) -> Targets {
    let a_count = model.config.anchors_per_cell();
    let n = batch.len();
    let plane = n * fh * fw;
    let mut cls = vec![0u32; a_count * plane];
    let mut role = vec![Assignment::Ignore; a_count * plane];
    let mut reg = Tensor::zeros(Shape::new(a_count * 4, n, fh, fw));
    let mut positives = Vec::new();
    for (b, anns) in batch.iter().enumerate() {
        let truth: Vec<_> = anns.iter().map(|a| a.bbox).collect();
        let assigned = assign(&model.anchors, &truth, model.config.positive_iou, model.config.negative_iou);
        for a in 0..a_count {
            for y in 0..fh {
                for x in 0..fw {
                    let anchor_idx = (a * fh + y) * fw + x;
                    let t = a * plane + (b * fh + y) * fw + x;
                    role[t] = assigned[anchor_idx];
                    if let Assignment::Positive(j) = assigned[anchor_idx] {
                        cls[t] = anns[j].label.index() as u32 + 1;
                        let d = encode(&model.anchors[anchor_idx], &truth[j]);
                        for (k, v) in d.iter().enumerate() {
                            let i = reg.index(a * 4 + k, b, y, x);
                            reg.data_mut()[i] = *v as f32;
                            positives.push(i);
                        }
                    }
                }
            }
        }
    }
    let n_pos = role.iter().filter(|r| matches!(r, Assignment::Positive(_))).count();
    let n_neg = role.iter().filter(|r| matches!(r, Assignment::Negative)).count();
    let cls_weight = role
        .iter()
        .map(|r| match r {
            Assignment::Positive(_) => 1.0 / n_pos as f32,
            Assignment::Negative => 1.0 / n_neg as f32,
            Assignment::Ignore => 0.0,
        })
        .collect();
    let mut reg_weight = vec![0.0; reg.len()];
    for i in positives {
        reg_weight[i] = 1.0 / n_pos as f32;
    }
    Targets {
        cls,
        cls_weight,
        reg,
        reg_weight,
    }
}

/// Trains on `(image, annotations)` pairs. Images are resized to the
/// network input; when `augment` is given, each sample gets a fresh
/// flip/rotation drawn from a stream keyed on `(seed, epoch, index)`,
/// applied to the image and its boxes together. Images without boxes
/// train as background.
pub fn train_detector(
    model: &DetectorModel,
    data: &[(Image, Vec<Annotation>)],
    epochs: usize,
    augment: Option<&AffineSampler>,
    seed: u64,
) -> Result<DetectorModel> {
    if epochs == 0 {
        return Ok(model.clone());
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("detector training set"));
    }
    for (i, (img, anns)) in data.iter().enumerate() {
        for a in anns {
            a.check_bounds(img.width() as u32, img.height() as u32)
                .map_err(|reason| Error::InvalidRecord {
                    id: format!("training item {i}"),
                    reason,
                })?;
        }
    }
    let s = model.config.input_size;
    let base: Vec<(Image, Vec<Annotation>)> = data
        .iter()
        .map(|(img, anns)| {
            let (sx, sy) = (s as f64 / img.width() as f64, s as f64 / img.height() as f64);
            let anns = anns
                .iter()
                .filter_map(|a| a.bbox.scale(sx, sy).clip(s as f64, s as f64).map(|b| Annotation::new(a.label, b)))
                .collect();
            (img.resize_bilinear(s, s), anns)
        })
        .collect();

    let mut model = model.clone();
    let mut opt = Adam::new(model.config.optimizer, &model.params);
    let f = s / super::STRIDE;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..base.len()).collect();
        order.shuffle(&mut rng_for(seed, &["detector-epoch", &epoch.to_string()]));
        let (mut cls_sum, mut reg_sum, mut steps) = (0.0, 0.0, 0usize);
        for idx in order.chunks(model.config.batch_size) {
            let samples: Vec<(Image, Vec<Annotation>)> = idx
                .iter()
                .map(|&i| match augment {
                    Some(sampler) => {
                        let mut rng = rng_for(seed, &["detector-augment", &epoch.to_string(), &i.to_string()]);
                        affine_augment_annotated(&base[i].0, &base[i].1, &sampler.sample(&mut rng))
                    }
                    None => base[i].clone(),
                })
                .collect();
            let images: Vec<&Image> = samples.iter().map(|(img, _)| img).collect();
            let anns: Vec<&[Annotation]> = samples.iter().map(|(_, a)| a.as_slice()).collect();
            let t = build_targets(&model, &anns, f, f);

            let mut tape = Tape::new();
            let (cls, reg) = model.forward(&mut tape, DetectorModel::input_tensor(&images));
            let lc = tape.softmax_ce(cls, model.config.head_classes(), t.cls, t.cls_weight);
            let lr = tape.smooth_l1(reg, t.reg, t.reg_weight, SMOOTH_L1_BETA);
            let loss = tape.add(lc, lr);
            tape.backward(loss);
            let grads = tape.param_grads(&model.params);
            opt.step(&mut model.params, &grads);
            cls_sum += tape.value(lc).item() as f64;
            reg_sum += tape.value(lr).item() as f64;
            steps += 1;
        }
        history.push(DetectorEpochLoss {
            classification: cls_sum / steps as f64,
            regression: reg_sum / steps as f64,
        });
    }
    model.meta.epochs += epochs;
    model.meta.seed = seed;
    model.meta.history.extend(history);
    Ok(model)
}
