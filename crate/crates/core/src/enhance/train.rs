use rand::seq::SliceRandom;

use super::net::{stack, Discriminator};
use super::{EnhancerMode, EnhancerModel, EpochLoss, LossWeights, TrainOptions};
use crate::degrade::{images_to_tensor, Image};
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamStore, Tape, Tensor};
use crate::seed::rng_for;

fn epoch_order(n: usize, seed: u64, stream: &str, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[stream, &epoch.to_string()]));
    idx
}

fn validate(model: &EnhancerModel, weights: &LossWeights, opts: &TrainOptions) -> Result<()> {
    weights.validate()?;
    if opts.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    if opts.discriminator_depth == 0 || model.config.input_size >> opts.discriminator_depth == 0 {
        return Err(Error::InvalidConfig("discriminator depth does not fit the input size".into()));
    }
    Ok(())
}

fn resized(img: &Image, size: usize) -> Image {
    img.resize_bilinear(size, size)
}

fn batch(images: &[Image], idx: &[usize]) -> Tensor {
    images_to_tensor(&idx.iter().map(|&i| &images[i]).collect::<Vec<_>>(), |v| v)
}

fn finish(mut model: EnhancerModel, mode: EnhancerMode, epochs: usize, seed: u64, history: Vec<EpochLoss>) -> EnhancerModel {
    model.meta.mode = Some(mode);
    model.meta.epochs += epochs;
    model.meta.seed = seed;
    model.meta.history.extend(history);
    model
}

/// Paired training: the generator maps degraded to clean under a
/// conditional patch discriminator plus a weighted L1 term. Pairs are
/// resized to the generator window. Returns the trained model with one
/// history entry per epoch appended.
pub fn train_paired(
    model: &EnhancerModel,
    pairs: &[(Image, Image)],
    epochs: usize,
    weights: &LossWeights,
    opts: &TrainOptions,
    seed: u64,
) -> Result<EnhancerModel> {
    if epochs == 0 {
        return Ok(model.clone());
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("paired training set"));
    }
    validate(model, weights, opts)?;
    for (i, (d, c)) in pairs.iter().enumerate() {
        if d.dims() != c.dims() {
            return Err(Error::DimensionMismatch(format!(
                "pair {i}: degraded {:?} vs clean {:?}",
                d.dims(),
                c.dims()
            )));
        }
    }
    let s = model.config.input_size;
    let degraded: Vec<Image> = pairs.iter().map(|(d, _)| resized(d, s)).collect();
    let clean: Vec<Image> = pairs.iter().map(|(_, c)| resized(c, s)).collect();

    let mut model = model.clone();
    let mut d_params = ParamStore::new();
    let disc = Discriminator::new(
        6,
        opts.discriminator_channels,
        opts.discriminator_depth,
        "d",
        &mut d_params,
        &mut rng_for(seed, &["enhancer-disc"]),
    );
    let mut g_opt = Adam::new(opts.optimizer, &model.params);
    let mut d_opt = Adam::new(opts.optimizer, &d_params);
    let mut history = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let order = epoch_order(pairs.len(), seed, "enhancer-epoch", epoch);
        let (mut g_sum, mut d_sum, mut l1_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(opts.batch_size) {
            let x = batch(&degraded, idx);
            let y = batch(&clean, idx);

            let mut tape = Tape::new();
            let fake = model.net.forward(&mut tape, &model.params, &x);
            let cond = tape.input(x.clone());
            let pair = tape.concat(cond, fake);
            let logits = disc.forward(&mut tape, &d_params, pair);
            let adv = tape.bce_with_logits(logits, 1.0);
            let l1 = tape.l1_loss(fake, &y);
            let adv_w = tape.scale(adv, weights.adversarial_weight);
            let l1_w = tape.scale(l1, weights.reconstruction_weight);
            let g_loss = tape.add(adv_w, l1_w);
            tape.backward(g_loss);
            let grads = tape.param_grads(&model.params);
            g_opt.step(&mut model.params, &grads);
            g_sum += tape.value(adv).item() as f64;
            l1_sum += tape.value(l1).item() as f64;
            let fake_val = tape.value(fake).clone();
            drop(tape);

            let mut tape = Tape::new();
            let real_in = tape.input(stack(&x, &y));
            let fake_in = tape.input(stack(&x, &fake_val));
            let real = disc.forward(&mut tape, &d_params, real_in);
            let fake = disc.forward(&mut tape, &d_params, fake_in);
            let lr = tape.bce_with_logits(real, 1.0);
            let lf = tape.bce_with_logits(fake, 0.0);
            let sum = tape.add(lr, lf);
            let d_loss = tape.scale(sum, 0.5);
            tape.backward(d_loss);
            let grads = tape.param_grads(&d_params);
            d_opt.step(&mut d_params, &grads);
            d_sum += tape.value(d_loss).item() as f64;
            steps += 1;
        }
        let n = steps as f64;
        history.push(EpochLoss {
            generator: g_sum / n,
            discriminator: d_sum / n,
            reconstruction: l1_sum / n,
        });
    }
    Ok(finish(model, EnhancerMode::Paired, epochs, seed, history))
}

/// Unpaired training of `ab: A -> B` and `ba: B -> A` with one patch
/// discriminator per domain and an L1 cycle-consistency term in both
/// directions. Each epoch walks the larger domain once, cycling through
/// a shuffled order of the smaller one.
pub fn train_unpaired(
    ab: &EnhancerModel,
    ba: &EnhancerModel,
    domain_a: &[Image],
    domain_b: &[Image],
    epochs: usize,
    weights: &LossWeights,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(EnhancerModel, EnhancerModel)> {
    if epochs == 0 {
        return Ok((ab.clone(), ba.clone()));
    }
    if domain_a.is_empty() {
        return Err(Error::EmptyInput("domain A"));
    }
    if domain_b.is_empty() {
        return Err(Error::EmptyInput("domain B"));
    }
    validate(ab, weights, opts)?;
    validate(ba, weights, opts)?;
    if ab.config.input_size != ba.config.input_size {
        return Err(Error::DimensionMismatch("both generators must share input_size".into()));
    }
    let s = ab.config.input_size;
    let a_imgs: Vec<Image> = domain_a.iter().map(|i| resized(i, s)).collect();
    let b_imgs: Vec<Image> = domain_b.iter().map(|i| resized(i, s)).collect();

    let (mut ab, mut ba) = (ab.clone(), ba.clone());
    let (mut da_params, mut db_params) = (ParamStore::new(), ParamStore::new());
    let (c, depth) = (opts.discriminator_channels, opts.discriminator_depth);
    let disc_a = Discriminator::new(3, c, depth, "da", &mut da_params, &mut rng_for(seed, &["enhancer-disc", "a"]));
    let disc_b = Discriminator::new(3, c, depth, "db", &mut db_params, &mut rng_for(seed, &["enhancer-disc", "b"]));
    let mut ab_opt = Adam::new(opts.optimizer, &ab.params);
    let mut ba_opt = Adam::new(opts.optimizer, &ba.params);
    let mut da_opt = Adam::new(opts.optimizer, &da_params);
    let mut db_opt = Adam::new(opts.optimizer, &db_params);
    let mut history = Vec::with_capacity(epochs);
    let n = a_imgs.len().max(b_imgs.len());

    for epoch in 0..epochs {
        let oa = epoch_order(a_imgs.len(), seed, "enhancer-epoch-a", epoch);
        let ob = epoch_order(b_imgs.len(), seed, "enhancer-epoch-b", epoch);
        let (mut g_sum, mut d_sum, mut cyc_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for start in (0..n).step_by(opts.batch_size) {
            let end = (start + opts.batch_size).min(n);
            let ia: Vec<usize> = (start..end).map(|i| oa[i % oa.len()]).collect();
            let ib: Vec<usize> = (start..end).map(|i| ob[i % ob.len()]).collect();
            let a = batch(&a_imgs, &ia);
            let b = batch(&b_imgs, &ib);

            let mut tape = Tape::new();
            let fake_b = ab.net.forward(&mut tape, &ab.params, &a);
            let fake_a = ba.net.forward(&mut tape, &ba.params, &b);
            let fb_val = tape.value(fake_b).clone();
            let fa_val = tape.value(fake_a).clone();
            let rec_a = ba.net.forward_var(&mut tape, &ba.params, fake_b);
            let rec_b = ab.net.forward_var(&mut tape, &ab.params, fake_a);
            let cyc_a = tape.l1_loss(rec_a, &a);
            let cyc_b = tape.l1_loss(rec_b, &b);
            let lb = disc_b.forward(&mut tape, &db_params, fake_b);
            let la = disc_a.forward(&mut tape, &da_params, fake_a);
            let adv_b = tape.bce_with_logits(lb, 1.0);
            let adv_a = tape.bce_with_logits(la, 1.0);
            let adv = tape.add(adv_a, adv_b);
            let cyc = tape.add(cyc_a, cyc_b);
            let adv_w = tape.scale(adv, weights.adversarial_weight);
            let cyc_w = tape.scale(cyc, weights.cycle_weight);
            let g_loss = tape.add(adv_w, cyc_w);
            tape.backward(g_loss);
            let grads = tape.param_grads(&ab.params);
            ab_opt.step(&mut ab.params, &grads);
            let grads = tape.param_grads(&ba.params);
            ba_opt.step(&mut ba.params, &grads);
            g_sum += tape.value(adv).item() as f64;
            cyc_sum += tape.value(cyc).item() as f64;
            drop(tape);

            let mut d_total = 0.0;
            for (disc, params, opt, real, fake) in [
                (&disc_a, &mut da_params, &mut da_opt, &a, &fa_val),
                (&disc_b, &mut db_params, &mut db_opt, &b, &fb_val),
            ] {
                let mut tape = Tape::new();
                let r_in = tape.input(real.clone());
                let f_in = tape.input(fake.clone());
                let r = disc.forward(&mut tape, params, r_in);
                let f = disc.forward(&mut tape, params, f_in);
                let lr = tape.bce_with_logits(r, 1.0);
                let lf = tape.bce_with_logits(f, 0.0);
                let sum = tape.add(lr, lf);
                let loss = tape.scale(sum, 0.5);
                tape.backward(loss);
                let grads = tape.param_grads(params);
                opt.step(params, &grads);
                d_total += tape.value(loss).item() as f64;
            }
            d_sum += d_total;
            steps += 1;
        }
        let k = steps as f64;
        history.push(EpochLoss {
            generator: g_sum / k,
            discriminator: d_sum / k,
            reconstruction: cyc_sum / k,
        });
    }
    Ok((
        finish(ab, EnhancerMode::Unpaired, epochs, seed, history.clone()),
        finish(ba, EnhancerMode::Unpaired, epochs, seed, history),
    ))
}
