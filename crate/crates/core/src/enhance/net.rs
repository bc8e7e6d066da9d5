use rand::Rng;

use crate::nn::{Conv, ParamStore, Shape, Tape, Tensor, Var};

use super::GeneratorConfig;

const LEAK: f32 = 0.2;

fn channels(base: usize, level: usize) -> usize {
    base << level.min(3)
}

/// Encoder-decoder generator. The final layer predicts a correction in
/// logit space that is added to the input's logit, so an untrained
/// network stays close to the identity.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Generator {
    skip: bool,
    enc: Vec<Conv>,
    dec: Vec<Conv>,
    out: Conv,
}

impl Generator {
    pub(crate) fn new<R: Rng>(cfg: &GeneratorConfig, prefix: &str, store: &mut ParamStore, rng: &mut R) -> Self {
        let b = cfg.base_channels;
        let mut enc = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let cin = if i == 0 { 3 } else { channels(b, i - 1) };
            let name = format!("{prefix}.enc{i}");
            enc.push(Conv::new(store, &name, cin, channels(b, i), 4, 2, 1, 1.0, rng));
        }
        let mut dec = Vec::with_capacity(cfg.depth);
        for i in (0..cfg.depth).rev() {
            let cin = channels(b, i) + if cfg.skip_connections && i > 0 { channels(b, i - 1) } else { 0 };
            let cout = if i > 0 { channels(b, i - 1) } else { b };
            dec.push(Conv::new(store, &format!("{prefix}.dec{i}"), cin, cout, 3, 1, 1, 1.0, rng));
        }
        let cin = b + if cfg.skip_connections { 3 } else { 0 };
        let out = Conv::new(store, &format!("{prefix}.out"), cin, 3, 3, 1, 1, 0.1, rng);
        Self {
            skip: cfg.skip_connections,
            enc,
            dec,
            out,
        }
    }

    /// `x` holds images in `[0, 1]`; returns enhanced images in `(0, 1)`.
    pub(crate) fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &Tensor) -> Var {
        let x = tape.input(x.clone());
        self.forward_var(tape, store, x)
    }

    /// Like [`Generator::forward`] but differentiable with respect to `x`.
    pub(crate) fn forward_var(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let centred = tape.affine(x, 2.0, -1.0);
        let logit = tape.logit(x, 1e-3);
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut h = centred;
        for conv in &self.enc {
            skips.push(h);
            let z = conv.forward(tape, store, h);
            h = tape.leaky_relu(z, LEAK);
        }
        // skips[i] is the input of encoder level i
        for (j, conv) in self.dec.iter().enumerate() {
            let level = self.enc.len() - 1 - j;
            h = tape.upsample2(h);
            if self.skip && level > 0 {
                h = tape.concat(h, skips[level]);
            }
            let z = conv.forward(tape, store, h);
            h = tape.relu(z);
        }
        if self.skip {
            h = tape.concat(h, centred);
        }
        let delta = self.out.forward(tape, store, h);
        let z = tape.add(logit, delta);
        tape.sigmoid(z)
    }
}

/// Patch discriminator: strided 4x4 convolutions down to a map of
/// real/fake logits, one per receptive-field patch.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Discriminator {
    layers: Vec<Conv>,
    head: Conv,
}

impl Discriminator {
    pub(crate) fn new<R: Rng>(
        in_ch: usize,
        base: usize,
        depth: usize,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut cin = in_ch;
        for i in 0..depth {
            let cout = channels(base, i);
            layers.push(Conv::new(store, &format!("{prefix}.conv{i}"), cin, cout, 4, 2, 1, 1.0, rng));
            cin = cout;
        }
        let head = Conv::new(store, &format!("{prefix}.head"), cin, 1, 3, 1, 1, 1.0, rng);
        Self { layers, head }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for conv in &self.layers {
            let z = conv.forward(tape, store, h);
            h = tape.leaky_relu(z, LEAK);
        }
        self.head.forward(tape, store, h)
    }
}

/// Stacks two image batches along channels.
pub(crate) fn stack(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!((sa.n, sa.h, sa.w), (sb.n, sb.h, sb.w));
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(Shape::new(sa.c + sb.c, sa.n, sa.h, sa.w), data)
}
